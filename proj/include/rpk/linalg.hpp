#pragma once
#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <string>

#include "rpk/tensor.hpp"

namespace rpk {

// Relative singular-value cutoff used for rank decisions and pseudo-inverses.
inline constexpr double kRankRelTol = 1e-10;

struct RankReport {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t numerical_rank = 0;
    double tolerance_used = 0.0; // absolute cutoff the singular values were compared against
    bool full_row_rank = false;
    bool full_col_rank = false;
};

class RankError : public Error {
public:
    RankError(const std::string& msg, RankReport r) : Error(msg), report(r) {}
    RankReport report;
};

namespace detail {

template <class S>
Eigen::MatrixXd to_double_matrix(const Tensor<S>& w) {
    return w.mat().template cast<double>();
}

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& m) {
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
}

} // namespace detail

// Rank = number of singular values above rel_tol * sigma_max.
template <class S>
RankReport numerical_rank(const Tensor<S>& w, double rel_tol = kRankRelTol) {
    if (w.rank() != 2)
        throw ShapeError("numerical_rank expects a rank-2 tensor, got " +
                         shape_str(w.shape()));
    if (!all_finite(w)) throw NumericError("numerical_rank: non-finite input");

    RankReport r;
    r.rows = w.dim(0);
    r.cols = w.dim(1);
    Eigen::VectorXd sv = detail::singular_values(detail::to_double_matrix(w));
    const double cutoff = sv.size() > 0 ? rel_tol * sv(0) : 0.0;
    r.tolerance_used = cutoff;
    r.numerical_rank = static_cast<std::size_t>((sv.array() > cutoff).count());
    r.full_row_rank = r.numerical_rank == r.rows;
    r.full_col_rank = r.numerical_rank == r.cols;
    return r;
}

namespace detail {

// Pseudo-inverse through a column-pivoting complete orthogonal decomposition.
// All inversion work happens in double; callers cast the result back.
inline Eigen::MatrixXd pinv(const Eigen::MatrixXd& m) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(m);
    return cod.pseudoInverse();
}

template <class S>
Tensor<S> from_double_matrix(const Eigen::MatrixXd& m) {
    Tensor<S> t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.mat() = m.cast<S>();
    return t;
}

} // namespace detail

// L with L * w == I for a full-column-rank w (rows >= cols).
template <class S>
Tensor<S> left_inverse(const Tensor<S>& w, double rel_tol = kRankRelTol) {
    if (w.rank() != 2)
        throw ShapeError("left_inverse expects a rank-2 tensor, got " + shape_str(w.shape()));
    const std::size_t p = w.dim(0), m = w.dim(1);
    if (p < m)
        throw ShapeError("left_inverse: need rows >= cols, got " + shape_str(w.shape()));
    RankReport r = numerical_rank(w, rel_tol);
    if (!r.full_col_rank)
        throw RankError("left_inverse: rank-deficient input, rank " +
                            std::to_string(r.numerical_rank) + " < " + std::to_string(m),
                        r);
    Tensor<S> out = detail::from_double_matrix<S>(detail::pinv(detail::to_double_matrix(w)));
    ensure_finite(out, "left_inverse");
    return out;
}

// R with w * R == I for a full-row-rank w (cols >= rows).
template <class S>
Tensor<S> right_inverse(const Tensor<S>& w, double rel_tol = kRankRelTol) {
    if (w.rank() != 2)
        throw ShapeError("right_inverse expects a rank-2 tensor, got " + shape_str(w.shape()));
    const std::size_t n = w.dim(0), q = w.dim(1);
    if (q < n)
        throw ShapeError("right_inverse: need cols >= rows, got " + shape_str(w.shape()));
    RankReport r = numerical_rank(w, rel_tol);
    if (!r.full_row_rank)
        throw RankError("right_inverse: rank-deficient input, rank " +
                            std::to_string(r.numerical_rank) + " < " + std::to_string(n),
                        r);
    Tensor<S> out = detail::from_double_matrix<S>(detail::pinv(detail::to_double_matrix(w)));
    ensure_finite(out, "right_inverse");
    return out;
}

// ============================================================================
// im2col and friends
// ============================================================================

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride,
                                std::size_t pad) {
    if (in + 2 * pad < k)
        throw ShapeError("kernel " + std::to_string(k) + " larger than padded input " +
                         std::to_string(in + 2 * pad));
    return (in + 2 * pad - k) / stride + 1;
}

// Unroll x [c,h,w] into a [c*k*k, oh*ow] matrix: column j holds the flattened
// receptive field of output position j, rows ordered (channel, ky, kx).
template <class S>
Tensor<S> im2col(const Tensor<S>& x, std::size_t k, std::size_t stride, std::size_t pad) {
    if (x.rank() != 3)
        throw ShapeError("im2col expects [c,h,w], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t oh = conv_out_dim(h, k, stride, pad);
    const std::size_t ow = conv_out_dim(w, k, stride, pad);

    Tensor<S> cols({c * k * k, oh * ow});
    S* dst = cols.data();
    const S* src = x.data();
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        S v = 0;
                        if (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                            ix < static_cast<long>(w))
                            v = src[(ci * h + static_cast<std::size_t>(iy)) * w +
                                    static_cast<std::size_t>(ix)];
                        *dst++ = v;
                    }
                }
            }
        }
    }
    return cols;
}

// Adjoint of im2col: scatter-add columns back onto a [c,h,w] image.
template <class S>
Tensor<S> col2im_add(const Tensor<S>& cols, std::size_t c, std::size_t h, std::size_t w,
                     std::size_t k, std::size_t stride, std::size_t pad) {
    const std::size_t oh = conv_out_dim(h, k, stride, pad);
    const std::size_t ow = conv_out_dim(w, k, stride, pad);
    if (cols.rank() != 2 || cols.dim(0) != c * k * k || cols.dim(1) != oh * ow)
        throw ShapeError("col2im_add: got " + shape_str(cols.shape()) + ", expected [" +
                         std::to_string(c * k * k) + "," + std::to_string(oh * ow) + "]");

    Tensor<S> x({c, h, w});
    const S* src = cols.data();
    S* dst = x.data();
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                            ix < static_cast<long>(w))
                            dst[(ci * h + static_cast<std::size_t>(iy)) * w +
                                static_cast<std::size_t>(ix)] += *src;
                        ++src;
                    }
                }
            }
        }
    }
    return x;
}

} // namespace rpk
