#pragma once
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rpk/net.hpp"

namespace rpk {

// ============================================================================
// Parameter and FLOP accounting
// ============================================================================
//
// Convention: one multiply-accumulate counts as 2 FLOPs. Pooling, ReLU,
// softmax and flatten are counted as parameter- and FLOP-free; their cost is
// negligible next to the matrix work and keeping them out makes the totals
// match the usual reporting convention for conv/linear networks.

struct LayerStats {
    std::size_t index = 0;
    std::string kind;
    Shape out_shape;
    std::size_t params = 0;
    std::size_t flops = 0;
};

struct ModelStats {
    std::size_t params = 0;
    std::size_t flops = 0;
    std::vector<LayerStats> layers;
    std::string note = "1 MAC = 2 FLOPs";
};

inline std::size_t layer_param_count(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::Conv2d:
            return l.out * (l.in / l.groups) * l.kernel * l.kernel + (l.bias ? l.out : 0);
        case LayerKind::Linear: return l.out * l.in + (l.bias ? l.out : 0);
        default: return 0;
    }
}

// FLOPs for one sample given the layer's output shape.
inline std::size_t layer_flop_count(const LayerSpec& l, const Shape& out_shape) {
    switch (l.kind) {
        case LayerKind::Conv2d:
            return 2 * l.out * (l.in / l.groups) * l.kernel * l.kernel * out_shape[1] *
                   out_shape[2];
        case LayerKind::Linear: return 2 * l.out * l.in;
        default: return 0;
    }
}

inline ModelStats model_stats(const Network& net) {
    ModelStats s;
    auto shapes = infer_shapes(net);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        LayerStats ls;
        ls.index = i;
        ls.kind = layer_kind_name(net.layers[i].kind);
        ls.out_shape = shapes[i];
        ls.params = layer_param_count(net.layers[i]);
        ls.flops = layer_flop_count(net.layers[i], shapes[i]);
        s.params += ls.params;
        s.flops += ls.flops;
        s.layers.push_back(std::move(ls));
    }
    return s;
}

inline std::string format_stats(const Network& net, const ModelStats& s) {
    std::ostringstream os;
    os << "network: " << net.name << "  input " << shape_str(net.input_shape) << "\n";
    os << std::left << std::setw(6) << "layer" << std::setw(12) << "kind" << std::setw(16)
       << "output" << std::right << std::setw(12) << "params" << std::setw(16) << "flops"
       << "\n";
    for (const auto& l : s.layers)
        os << std::left << std::setw(6) << l.index << std::setw(12) << l.kind
           << std::setw(16) << shape_str(l.out_shape) << std::right << std::setw(12)
           << l.params << std::setw(16) << l.flops << "\n";
    os << "total params " << s.params << ", flops " << s.flops << " (" << s.note << ")\n";
    return os.str();
}

} // namespace rpk
