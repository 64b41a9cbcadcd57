#pragma once
#include <Eigen/Core>

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "rpk/error.hpp"

namespace rpk {

// ============================================================================
// Scalars and shapes
// ============================================================================

enum class DType { Float32, Float64 };

inline const char* dtype_name(DType d) {
    return d == DType::Float32 ? "float32" : "float64";
}

inline std::size_t dtype_size(DType d) {
    return d == DType::Float32 ? 4 : 8;
}

template <class Scalar>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>,
                  "only float and double tensors are supported");
    return std::is_same_v<Scalar, float> ? DType::Float32 : DType::Float64;
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ============================================================================
// Tensor: dense row-major n-d array over float or double
// ============================================================================

template <class Scalar>
class Tensor {
    static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);

public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), Scalar{0}) {}

    Tensor(Shape shape, std::vector<Scalar> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_))
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, Scalar v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    std::vector<Scalar>& storage() { return data_; }
    const std::vector<Scalar>& storage() const { return data_; }

    Scalar& operator[](std::size_t i) { return data_[i]; }
    Scalar operator[](std::size_t i) const { return data_[i]; }

    template <class... Ix>
    Scalar& operator()(Ix... ix) {
        return data_[offset_of({static_cast<std::size_t>(ix)...})];
    }
    template <class... Ix>
    Scalar operator()(Ix... ix) const {
        return data_[offset_of({static_cast<std::size_t>(ix)...})];
    }

    // Metadata-only: same contiguous values, new extents.
    Tensor reshape(Shape shape) const& {
        Tensor t;
        if (shape_size(shape) != data_.size())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                             " changes element count");
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }
    Tensor reshape(Shape shape) && {
        if (shape_size(shape) != data_.size())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                             " changes element count");
        shape_ = std::move(shape);
        return std::move(*this);
    }

    // Eigen views over the contiguous buffer. mat() requires rank 2;
    // mat(r, c) reinterprets the whole buffer as an r x c matrix.
    Eigen::Map<MatRM<Scalar>> mat() {
        require_rank2();
        return {data_.data(), idx(shape_[0]), idx(shape_[1])};
    }
    Eigen::Map<const MatRM<Scalar>> mat() const {
        require_rank2();
        return {data_.data(), idx(shape_[0]), idx(shape_[1])};
    }
    Eigen::Map<MatRM<Scalar>> mat(std::size_t rows, std::size_t cols) {
        require_count(rows * cols);
        return {data_.data(), idx(rows), idx(cols)};
    }
    Eigen::Map<const MatRM<Scalar>> mat(std::size_t rows, std::size_t cols) const {
        require_count(rows * cols);
        return {data_.data(), idx(rows), idx(cols)};
    }
    Eigen::Map<Eigen::Vector<Scalar, Eigen::Dynamic>> vec() {
        return {data_.data(), idx(data_.size())};
    }
    Eigen::Map<const Eigen::Vector<Scalar, Eigen::Dynamic>> vec() const {
        return {data_.data(), idx(data_.size())};
    }

private:
    static std::size_t checked_size(const Shape& s) {
        for (auto e : s)
            if (e == 0) throw ShapeError("zero extent in shape " + shape_str(s));
        return shape_size(s);
    }

    std::size_t offset_of(std::initializer_list<std::size_t> ix) const {
        assert(ix.size() == shape_.size());
        std::size_t off = 0, d = 0;
        for (auto i : ix) {
            assert(i < shape_[d]);
            off = off * shape_[d] + i;
            ++d;
        }
        return off;
    }

    void require_rank2() const {
        if (shape_.size() != 2)
            throw ShapeError("expected a rank-2 tensor, got shape " + shape_str(shape_));
    }
    void require_count(std::size_t n) const {
        if (n != data_.size())
            throw ShapeError("matrix view of " + std::to_string(n) +
                             " elements over tensor of " + std::to_string(data_.size()));
    }

    static Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

    Shape shape_;
    std::vector<Scalar> data_;
};

// ============================================================================
// Free functions
// ============================================================================

template <class S>
bool all_finite(const Tensor<S>& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t.data()[i])) return false;
    return true;
}

template <class S>
void ensure_finite(const Tensor<S>& t, const std::string& what) {
    if (!all_finite(t))
        throw NumericError(std::string(what) + " produced non-finite values");
}

template <class S>
S max_abs(const Tensor<S>& t) {
    S m = 0;
    for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t.data()[i]));
    return m;
}

template <class S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff: shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    S m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
    if constexpr (std::is_same_v<To, From>) {
        return t;
    } else {
        std::vector<To> out(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t.data()[i]);
        return Tensor<To>(t.shape(), std::move(out));
    }
}

// Standard matrix product of two rank-2 tensors.
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    Tensor<S> out({a.dim(0), b.dim(1)});
    out.mat().noalias() = a.mat() * b.mat();
    ensure_finite(out, "matmul");
    return out;
}

// Keep `idx` entries (in the given order) along dimension `dim`.
template <class S>
Tensor<S> select_dim(const Tensor<S>& t, std::size_t dim,
                     const std::vector<std::size_t>& idx) {
    if (dim >= t.rank())
        throw ShapeError("select_dim: dimension " + std::to_string(dim) +
                         " out of range for shape " + shape_str(t.shape()));
    if (idx.empty()) throw ShapeError("select_dim: empty index set");
    for (auto i : idx)
        if (i >= t.dim(dim))
            throw ShapeError("select_dim: index " + std::to_string(i) +
                             " out of range for shape " + shape_str(t.shape()));

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < dim; ++d) outer *= t.dim(d);
    for (std::size_t d = dim + 1; d < t.rank(); ++d) inner *= t.dim(d);

    Shape out_shape = t.shape();
    out_shape[dim] = idx.size();
    Tensor<S> out(out_shape);

    const S* src = t.data();
    S* dst = out.data();
    const std::size_t src_stride = t.dim(dim) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        for (auto i : idx) {
            std::copy_n(src + o * src_stride + i * inner, inner, dst);
            dst += inner;
        }
    }
    return out;
}

template <class S>
void fill_normal(Tensor<S>& t, std::mt19937_64& rng, double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(dist(rng));
}

template <class S>
void fill_uniform(Tensor<S>& t, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(dist(rng));
}

// splitmix64 step, used to derive independent sub-seeds deterministically.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace rpk
