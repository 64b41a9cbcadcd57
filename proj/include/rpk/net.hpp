#pragma once
#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rpk/linalg.hpp"
#include "rpk/tensor.hpp"

namespace rpk {

// ============================================================================
// Layer and network description
// ============================================================================

enum class LayerKind { Conv2d, Linear, ReLU, MaxPool2d, AvgPool2d, Flatten, Softmax };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Linear: return "linear";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::AvgPool2d: return "avgpool2d";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

// One layer of a sequential network. `in`/`out` are channels for Conv2d and
// features for Linear; kernel/stride/padding/groups apply to conv and pool
// kinds only.
struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
    bool bias = false;

    static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t k,
                            std::size_t stride = 1, std::size_t pad = 0,
                            std::size_t groups = 1, bool bias = true) {
        return {LayerKind::Conv2d, in, out, k, stride, pad, groups, bias};
    }
    static LayerSpec linear(std::size_t in, std::size_t out, bool bias = true) {
        return {LayerKind::Linear, in, out, 0, 1, 0, 1, bias};
    }
    static LayerSpec relu() { return {LayerKind::ReLU}; }
    static LayerSpec maxpool(std::size_t k, std::size_t stride) {
        return {LayerKind::MaxPool2d, 0, 0, k, stride};
    }
    static LayerSpec avgpool(std::size_t k, std::size_t stride) {
        return {LayerKind::AvgPool2d, 0, 0, k, stride};
    }
    static LayerSpec flatten() { return {LayerKind::Flatten}; }
    static LayerSpec softmax() { return {LayerKind::Softmax}; }

    bool parameterized() const {
        return kind == LayerKind::Conv2d || kind == LayerKind::Linear;
    }
    bool depthwise() const {
        return kind == LayerKind::Conv2d && groups > 1 && groups == in && groups == out;
    }
    // Weight tensor shape: conv [out, in/groups, k, k], linear [out, in].
    Shape weight_shape() const {
        if (kind == LayerKind::Conv2d) return {out, in / groups, kernel, kernel};
        if (kind == LayerKind::Linear) return {out, in};
        return {};
    }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Strictly sequential network: each layer consumes the previous one's output.
struct Network {
    std::string name;
    Shape input_shape; // [channels,h,w] or [features], no batch extent
    std::vector<LayerSpec> layers;

    friend bool operator==(const Network&, const Network&) = default;
};

inline std::string weight_name(std::size_t layer) {
    return "layer" + std::to_string(layer) + ".weight";
}
inline std::string bias_name(std::size_t layer) {
    return "layer" + std::to_string(layer) + ".bias";
}

// ============================================================================
// Shape inference
// ============================================================================

inline void validate_layer(const LayerSpec& l, std::size_t index) {
    auto fail = [&](const std::string& msg) {
        throw ShapeError("layer " + std::to_string(index) + " (" +
                         layer_kind_name(l.kind) + "): " + msg);
    };
    switch (l.kind) {
        case LayerKind::Conv2d:
            if (l.in == 0 || l.out == 0) fail("channel counts must be positive");
            if (l.kernel == 0 || l.stride == 0) fail("kernel and stride must be >= 1");
            if (l.groups == 0 || l.in % l.groups || l.out % l.groups)
                fail("groups must divide in and out channels");
            break;
        case LayerKind::Linear:
            if (l.in == 0 || l.out == 0) fail("feature counts must be positive");
            break;
        case LayerKind::MaxPool2d:
        case LayerKind::AvgPool2d:
            if (l.kernel == 0 || l.stride == 0) fail("kernel and stride must be >= 1");
            break;
        default: break;
    }
}

// Output shape of one layer applied to `in` (no batch extent).
inline Shape layer_out_shape(const LayerSpec& l, const Shape& in, std::size_t index) {
    auto fail = [&](const std::string& msg) {
        throw ShapeError("layer " + std::to_string(index) + " (" +
                         layer_kind_name(l.kind) + "): " + msg);
    };
    switch (l.kind) {
        case LayerKind::Conv2d: {
            if (in.size() != 3) fail("expects [c,h,w] input, got " + shape_str(in));
            if (in[0] != l.in)
                fail("expects " + std::to_string(l.in) + " input channels, got " +
                     std::to_string(in[0]));
            return {l.out, conv_out_dim(in[1], l.kernel, l.stride, l.padding),
                    conv_out_dim(in[2], l.kernel, l.stride, l.padding)};
        }
        case LayerKind::Linear: {
            if (in.size() != 1) fail("expects flat input, got " + shape_str(in));
            if (in[0] != l.in)
                fail("expects " + std::to_string(l.in) + " features, got " +
                     std::to_string(in[0]));
            return {l.out};
        }
        case LayerKind::MaxPool2d:
        case LayerKind::AvgPool2d: {
            if (in.size() != 3) fail("expects [c,h,w] input, got " + shape_str(in));
            if (in[1] < l.kernel || in[2] < l.kernel) fail("pool window larger than input");
            return {in[0], (in[1] - l.kernel) / l.stride + 1,
                    (in[2] - l.kernel) / l.stride + 1};
        }
        case LayerKind::Flatten: return {shape_size(in)};
        case LayerKind::ReLU: return in;
        case LayerKind::Softmax: {
            if (in.size() != 1) fail("expects flat input, got " + shape_str(in));
            return in;
        }
    }
    fail("unknown layer kind");
    return {};
}

// Per-layer output shapes; throws ShapeError if consecutive layers do not compose.
inline std::vector<Shape> infer_shapes(const Network& net) {
    if (net.input_shape.empty()) throw ShapeError("network has no input shape");
    std::vector<Shape> shapes;
    shapes.reserve(net.layers.size());
    Shape cur = net.input_shape;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        validate_layer(net.layers[i], i);
        cur = layer_out_shape(net.layers[i], cur, i);
        shapes.push_back(cur);
    }
    return shapes;
}

inline Shape output_shape(const Network& net) {
    auto shapes = infer_shapes(net);
    return shapes.empty() ? net.input_shape : shapes.back();
}

// ============================================================================
// Weight storage
// ============================================================================

// Named-tensor container keyed "layer{i}.weight" / "layer{i}.bias".
template <class S>
struct WeightStore {
    std::map<std::string, Tensor<S>> entries;

    bool has(const std::string& name) const { return entries.count(name) > 0; }
    const Tensor<S>& at(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw Error("missing weight entry: " + name);
        return it->second;
    }
    Tensor<S>& at(const std::string& name) {
        auto it = entries.find(name);
        if (it == entries.end()) throw Error("missing weight entry: " + name);
        return it->second;
    }
    void set(const std::string& name, Tensor<S> t) { entries[name] = std::move(t); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries) n += t.size();
        return n;
    }
};

template <class S>
using GradStore = WeightStore<S>;

// Check that every parameterized layer has exactly the entries its spec
// demands, with matching shapes, and that no stray entries exist.
template <class S>
void validate_weights(const Network& net, const WeightStore<S>& ws) {
    std::size_t expected = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (!l.parameterized()) continue;
        const auto& w = ws.at(weight_name(i));
        if (w.shape() != l.weight_shape())
            throw ShapeError("layer " + std::to_string(i) + " weight shape " +
                             shape_str(w.shape()) + ", spec demands " +
                             shape_str(l.weight_shape()));
        ++expected;
        if (l.bias) {
            const auto& b = ws.at(bias_name(i));
            if (b.shape() != Shape{l.out})
                throw ShapeError("layer " + std::to_string(i) + " bias shape " +
                                 shape_str(b.shape()) + ", expected [" +
                                 std::to_string(l.out) + "]");
            ++expected;
        } else if (ws.has(bias_name(i))) {
            throw ShapeError("layer " + std::to_string(i) + " has a bias entry but no bias");
        }
    }
    if (expected != ws.entries.size())
        throw ShapeError("weight store has " + std::to_string(ws.entries.size()) +
                         " entries, network needs " + std::to_string(expected));
}

// He-style initialization: weights ~ N(0, sqrt(2/fan_in)), biases zero.
template <class S>
WeightStore<S> init_weights(const Network& net, std::uint64_t seed) {
    WeightStore<S> ws;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (!l.parameterized()) continue;
        std::mt19937_64 rng(mix_seed(seed, i));
        const std::size_t fan_in = l.kind == LayerKind::Conv2d
                                       ? (l.in / l.groups) * l.kernel * l.kernel
                                       : l.in;
        Tensor<S> w(l.weight_shape());
        fill_normal(w, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
        ws.set(weight_name(i), std::move(w));
        if (l.bias) ws.set(bias_name(i), Tensor<S>({l.out}));
    }
    return ws;
}

} // namespace rpk
