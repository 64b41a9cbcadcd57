#pragma once
#include <utility>
#include <vector>

#include "rpk/forward.hpp"

namespace rpk {

// ============================================================================
// Reverse-mode gradients
// ============================================================================
//
// The network is strictly sequential, so backpropagation is a reverse walk
// over the layers with the forward activations cached. Auxiliary losses that
// attach to interior activations (the similarity term) are injected as extra
// gradient summands when the walk reaches their activation index.

namespace detail {

template <class S>
void conv2d_backward(const LayerSpec& l, const Tensor<S>& w, const Tensor<S>& x,
                     const Tensor<S>& dy, Tensor<S>& dw, Tensor<S>* db, Tensor<S>& dx) {
    const std::size_t bsz = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t oh = dy.dim(2), ow = dy.dim(3);
    const std::size_t g = l.groups;
    const std::size_t in_g = l.in / g, out_g = l.out / g;
    const std::size_t krows = in_g * l.kernel * l.kernel;

    auto wm = w.mat(l.out, krows);
    auto dwm = dw.mat(l.out, krows);
    for (std::size_t bi = 0; bi < bsz; ++bi) {
        Tensor<S> xs({c, h, wd});
        std::copy(x.data() + bi * xs.size(), x.data() + (bi + 1) * xs.size(), xs.data());
        Tensor<S> cols = im2col(xs, l.kernel, l.stride, l.padding);
        auto cm = cols.mat();

        Tensor<S> dys({l.out, oh * ow},
                      std::vector<S>(dy.data() + bi * l.out * oh * ow,
                                     dy.data() + (bi + 1) * l.out * oh * ow));
        auto dym = dys.mat();

        Tensor<S> dcols({c * l.kernel * l.kernel, oh * ow});
        auto dcm = dcols.mat();
        for (std::size_t gi = 0; gi < g; ++gi) {
            dwm.middleRows(gi * out_g, out_g).noalias() +=
                dym.middleRows(gi * out_g, out_g) *
                cm.middleRows(gi * krows, krows).transpose();
            dcm.middleRows(gi * krows, krows).noalias() =
                wm.middleRows(gi * out_g, out_g).transpose() *
                dym.middleRows(gi * out_g, out_g);
        }
        Tensor<S> dxs = col2im_add(dcols, c, h, wd, l.kernel, l.stride, l.padding);
        std::copy(dxs.data(), dxs.data() + dxs.size(), dx.data() + bi * dxs.size());

        if (db)
            for (std::size_t o = 0; o < l.out; ++o)
                db->data()[o] += dym.row(o).sum();
    }
}

} // namespace detail

// Gradient of one layer: given its input x, output y and dL/dy, accumulate
// weight gradients into `grads` and return dL/dx.
template <class S>
Tensor<S> backward_layer(const LayerSpec& l, const WeightStore<S>& ws, std::size_t index,
                         const Tensor<S>& x, const Tensor<S>& y, const Tensor<S>& dy,
                         GradStore<S>& grads) {
    switch (l.kind) {
        case LayerKind::Conv2d: {
            const Tensor<S>& w = ws.at(weight_name(index));
            Tensor<S> dw(w.shape());
            Tensor<S> db;
            if (l.bias) db = Tensor<S>({l.out});
            Tensor<S> dx(x.shape());
            detail::conv2d_backward(l, w, x, dy, dw, l.bias ? &db : nullptr, dx);
            grads.set(weight_name(index), std::move(dw));
            if (l.bias) grads.set(bias_name(index), std::move(db));
            return dx;
        }
        case LayerKind::Linear: {
            const Tensor<S>& w = ws.at(weight_name(index)); // [out, in]
            Tensor<S> dw(w.shape());
            dw.mat().noalias() = dy.mat().transpose() * x.mat();
            grads.set(weight_name(index), std::move(dw));
            if (l.bias) {
                Tensor<S> db({l.out});
                db.mat(1, l.out) = dy.mat().colwise().sum();
                grads.set(bias_name(index), std::move(db));
            }
            Tensor<S> dx(x.shape());
            dx.mat().noalias() = dy.mat() * w.mat();
            return dx;
        }
        case LayerKind::ReLU: {
            Tensor<S> dx = dy;
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (x.data()[i] <= S(0)) dx.data()[i] = S(0);
            return dx;
        }
        case LayerKind::MaxPool2d: {
            Tensor<S> dx(x.shape()); // zeros
            const std::size_t c = x.dim(1);
            const std::size_t oh = y.dim(2), ow = y.dim(3);
            for (std::size_t bi = 0; bi < x.dim(0); ++bi)
                for (std::size_t ci = 0; ci < c; ++ci)
                    for (std::size_t oy = 0; oy < oh; ++oy)
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            // first maximum in scan order wins
                            std::size_t by = 0, bx = 0;
                            S best = x(bi, ci, oy * l.stride, ox * l.stride);
                            for (std::size_t ky = 0; ky < l.kernel; ++ky)
                                for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                                    const S v = x(bi, ci, oy * l.stride + ky,
                                                  ox * l.stride + kx);
                                    if (v > best) {
                                        best = v;
                                        by = ky;
                                        bx = kx;
                                    }
                                }
                            dx(bi, ci, oy * l.stride + by, ox * l.stride + bx) +=
                                dy(bi, ci, oy, ox);
                        }
            return dx;
        }
        case LayerKind::AvgPool2d: {
            Tensor<S> dx(x.shape());
            const S scale = S(1) / static_cast<S>(l.kernel * l.kernel);
            const std::size_t oh = y.dim(2), ow = y.dim(3);
            for (std::size_t bi = 0; bi < x.dim(0); ++bi)
                for (std::size_t ci = 0; ci < x.dim(1); ++ci)
                    for (std::size_t oy = 0; oy < oh; ++oy)
                        for (std::size_t ox = 0; ox < ow; ++ox)
                            for (std::size_t ky = 0; ky < l.kernel; ++ky)
                                for (std::size_t kx = 0; kx < l.kernel; ++kx)
                                    dx(bi, ci, oy * l.stride + ky, ox * l.stride + kx) +=
                                        dy(bi, ci, oy, ox) * scale;
            return dx;
        }
        case LayerKind::Flatten:
            return Tensor<S>(dy).reshape(x.shape());
        case LayerKind::Softmax: {
            Tensor<S> dx(x.shape());
            auto ym = y.mat();
            auto dym = dy.mat();
            auto dxm = dx.mat();
            for (Eigen::Index r = 0; r < ym.rows(); ++r) {
                const S s = (dym.row(r).array() * ym.row(r).array()).sum();
                dxm.row(r) = ym.row(r).array() * (dym.row(r).array() - s);
            }
            return dx;
        }
    }
    throw Error("unknown layer kind");
}

template <class S>
struct Backprop {
    GradStore<S> grads;
    Tensor<S> input_grad;
};

// Reverse walk over the whole network. `out_grad` is dL/d(final activation);
// `inject` holds extra (activation index, gradient) summands, e.g. scaled
// similarity gradients on interior activations.
template <class S>
Backprop<S> backward(const Network& net, const WeightStore<S>& ws, const Tensor<S>& input,
                     const std::vector<Tensor<S>>& acts, Tensor<S> out_grad,
                     const std::vector<std::pair<std::size_t, Tensor<S>>>& inject = {}) {
    if (acts.size() != net.layers.size())
        throw ShapeError("backward: " + std::to_string(acts.size()) +
                         " cached activations for " + std::to_string(net.layers.size()) +
                         " layers");
    Backprop<S> out;
    Tensor<S> grad = std::move(out_grad);
    for (std::size_t ii = net.layers.size(); ii-- > 0;) {
        for (const auto& [at, extra] : inject)
            if (at == ii) {
                if (extra.shape() != grad.shape())
                    throw ShapeError("backward: injected gradient shape " +
                                     shape_str(extra.shape()) + " does not match " +
                                     shape_str(grad.shape()));
                for (std::size_t t = 0; t < grad.size(); ++t)
                    grad.data()[t] += extra.data()[t];
            }
        const Tensor<S>& x = ii == 0 ? input : acts[ii - 1];
        grad = backward_layer(net.layers[ii], ws, ii, x, acts[ii], grad, out.grads);
        ensure_finite(grad, "gradient of layer " + std::to_string(ii) + " input");
    }
    out.input_grad = std::move(grad);
    return out;
}

} // namespace rpk
