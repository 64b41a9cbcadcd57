#pragma once
#include <limits>
#include <vector>

#include "rpk/net.hpp"

namespace rpk {

// ============================================================================
// Forward evaluation
// ============================================================================
//
// Inputs carry a leading batch extent: [b,c,h,w] for spatial layers, [b,f]
// for flat ones. forward() returns every intermediate activation so that
// training and similarity hooks can reach inside the network; the last entry
// is the network output.

namespace detail {

// Convolution of one sample x[c,h,w] with w[out, in/g, k, k] via im2col:
// each group is a contiguous row block of the column matrix because im2col
// orders rows as (channel, ky, kx).
template <class S>
Tensor<S> conv2d_sample(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias,
                        const LayerSpec& l) {
    const std::size_t oh = conv_out_dim(x.dim(1), l.kernel, l.stride, l.padding);
    const std::size_t ow = conv_out_dim(x.dim(2), l.kernel, l.stride, l.padding);
    const std::size_t g = l.groups;
    const std::size_t in_g = l.in / g;
    const std::size_t out_g = l.out / g;
    const std::size_t krows = in_g * l.kernel * l.kernel;

    Tensor<S> cols = im2col(x, l.kernel, l.stride, l.padding); // [c*k*k, oh*ow]
    Tensor<S> y({l.out, oh, ow});
    auto cm = cols.mat();
    auto wm = w.mat(l.out, krows);
    auto ym = y.mat(l.out, oh * ow);
    for (std::size_t gi = 0; gi < g; ++gi) {
        ym.middleRows(gi * out_g, out_g).noalias() =
            wm.middleRows(gi * out_g, out_g) * cm.middleRows(gi * krows, krows);
    }
    if (bias)
        for (std::size_t o = 0; o < l.out; ++o)
            ym.row(o).array() += bias->data()[o];
    return y;
}

template <class S>
Tensor<S> pool2d(const Tensor<S>& x, const LayerSpec& l, bool take_max) {
    const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = (h - l.kernel) / l.stride + 1;
    const std::size_t ow = (w - l.kernel) / l.stride + 1;
    Tensor<S> y({x.dim(0), c, oh, ow});
    for (std::size_t b = 0; b < x.dim(0); ++b)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    S acc = take_max ? -std::numeric_limits<S>::infinity() : S(0);
                    for (std::size_t ky = 0; ky < l.kernel; ++ky)
                        for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                            const S v = x(b, ci, oy * l.stride + ky, ox * l.stride + kx);
                            acc = take_max ? (v > acc ? v : acc) : acc + v;
                        }
                    y(b, ci, oy, ox) =
                        take_max ? acc : acc / static_cast<S>(l.kernel * l.kernel);
                }
    return y;
}

} // namespace detail

// Apply one layer to a batched activation.
template <class S>
Tensor<S> forward_layer(const LayerSpec& l, const WeightStore<S>& ws, std::size_t index,
                        const Tensor<S>& x) {
    switch (l.kind) {
        case LayerKind::Conv2d: {
            if (x.rank() != 4)
                throw ShapeError("layer " + std::to_string(index) +
                                 " (conv2d): expects [b,c,h,w] input, got " +
                                 shape_str(x.shape()));
            const Tensor<S>& w = ws.at(weight_name(index));
            const Tensor<S>* bias = l.bias ? &ws.at(bias_name(index)) : nullptr;
            const std::size_t b = x.dim(0);
            std::vector<Tensor<S>> outs;
            outs.reserve(b);
            for (std::size_t bi = 0; bi < b; ++bi)
                outs.push_back(detail::conv2d_sample(
                    select_dim(x, 0, {bi}).reshape({x.dim(1), x.dim(2), x.dim(3)}), w,
                    bias, l));
            Tensor<S> y({b, outs[0].dim(0), outs[0].dim(1), outs[0].dim(2)});
            const std::size_t per = outs[0].size();
            for (std::size_t bi = 0; bi < b; ++bi)
                std::copy(outs[bi].data(), outs[bi].data() + per, y.data() + bi * per);
            return y;
        }
        case LayerKind::Linear: {
            if (x.rank() != 2)
                throw ShapeError("layer " + std::to_string(index) +
                                 " (linear): expects [b,features] input, got " +
                                 shape_str(x.shape()));
            const Tensor<S>& w = ws.at(weight_name(index)); // [out, in]
            Tensor<S> y({x.dim(0), l.out});
            y.mat().noalias() = x.mat() * w.mat().transpose();
            if (l.bias) {
                const Tensor<S>& bias = ws.at(bias_name(index));
                y.mat().rowwise() += bias.mat(1, l.out).row(0);
            }
            return y;
        }
        case LayerKind::ReLU: {
            Tensor<S> y = x;
            for (std::size_t i = 0; i < y.size(); ++i)
                if (y.data()[i] < S(0)) y.data()[i] = S(0);
            return y;
        }
        case LayerKind::MaxPool2d:
        case LayerKind::AvgPool2d: {
            if (x.rank() != 4)
                throw ShapeError("layer " + std::to_string(index) +
                                 " (pool): expects [b,c,h,w] input, got " +
                                 shape_str(x.shape()));
            return detail::pool2d(x, l, l.kind == LayerKind::MaxPool2d);
        }
        case LayerKind::Flatten:
            return Tensor<S>(x).reshape({x.dim(0), x.size() / x.dim(0)});
        case LayerKind::Softmax: {
            if (x.rank() != 2)
                throw ShapeError("layer " + std::to_string(index) +
                                 " (softmax): expects [b,features] input, got " +
                                 shape_str(x.shape()));
            Tensor<S> y = x;
            auto m = y.mat();
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                const S mx = m.row(r).maxCoeff();
                m.row(r) = (m.row(r).array() - mx).exp();
                m.row(r) /= m.row(r).sum();
            }
            return y;
        }
    }
    throw Error("unknown layer kind");
}

// Evaluate the whole network, returning one activation per layer (the last is
// the output). Activations are checked finite so overflow is reported at the
// layer that produced it.
template <class S>
std::vector<Tensor<S>> forward(const Network& net, const WeightStore<S>& ws,
                               const Tensor<S>& input) {
    if (input.rank() != net.input_shape.size() + 1)
        throw ShapeError("input " + shape_str(input.shape()) +
                         " does not add a batch extent to " + shape_str(net.input_shape));
    for (std::size_t d = 0; d < net.input_shape.size(); ++d)
        if (input.dim(d + 1) != net.input_shape[d])
            throw ShapeError("input " + shape_str(input.shape()) +
                             " does not match network input " + shape_str(net.input_shape));

    std::vector<Tensor<S>> acts;
    acts.reserve(net.layers.size());
    const Tensor<S>* cur = &input;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        validate_layer(net.layers[i], i);
        acts.push_back(forward_layer(net.layers[i], ws, i, *cur));
        ensure_finite(acts.back(), "layer " + std::to_string(i) + " (" +
                                       layer_kind_name(net.layers[i].kind) + ") output");
        cur = &acts.back();
    }
    return acts;
}

// Network output only.
template <class S>
Tensor<S> predict(const Network& net, const WeightStore<S>& ws, const Tensor<S>& input) {
    auto acts = forward(net, ws, input);
    if (acts.empty()) return input;
    return std::move(acts.back());
}

} // namespace rpk
