#pragma once
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rpk/stats.hpp"

namespace rpk {

// ============================================================================
// Channel pruning
// ============================================================================
//
// Filters are ranked inside each layer by the L1 norm of their original
// weights -- original meaning before upstream pruning slices away any input
// channels -- and the ceil(ratio * n) smallest are removed, ties going to the
// lower index. Removed output channels propagate forward: the consumer's
// weight loses the matching input slices, flatten maps surviving channels to
// their contiguous feature blocks, and a depthwise layer simply follows its
// producer's surviving set. The last parameterized layer keeps the network's
// output width and is never pruned, as are any explicitly protected layers.

struct PruneConfig {
    double ratio = 0.5;                        // fraction of filters removed per layer
    std::vector<std::size_t> protected_layers; // extra layer indices left unpruned
};

struct LayerPruneRecord {
    std::size_t layer = 0;
    std::vector<std::size_t> kept; // surviving output indices, ascending
    std::size_t out_before = 0;
    std::size_t out_after = 0;
};

struct PruneRecord {
    std::vector<LayerPruneRecord> layers;
    std::size_t params_before = 0;
    std::size_t params_after = 0;

    double removed_fraction() const {
        if (params_before == 0) return 0.0;
        return 1.0 - static_cast<double>(params_after) / static_cast<double>(params_before);
    }
};

template <class S>
struct PruneResult {
    Network net;
    WeightStore<S> weights;
    PruneRecord record;
};

namespace detail {

// L1 norm of each output filter / row, accumulated in double.
template <class S>
std::vector<double> filter_l1_norms(const Tensor<S>& w) {
    const std::size_t n = w.dim(0);
    const std::size_t per = w.size() / n;
    std::vector<double> norms(n, 0.0);
    for (std::size_t o = 0; o < n; ++o)
        for (std::size_t i = 0; i < per; ++i)
            norms[o] += std::abs(static_cast<double>(w.data()[o * per + i]));
    return norms;
}

// Indices that survive removing ceil(ratio*n) smallest-norm filters; ties are
// broken so the lower index is removed first. Result is ascending.
inline std::vector<std::size_t> survivors(const std::vector<double>& norms, double ratio) {
    const std::size_t n = norms.size();
    const std::size_t drop =
        static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return norms[a] < norms[b]; // stable: equal norms keep index order
    });
    std::vector<std::size_t> kept(order.begin() + std::min(drop, n), order.end());
    std::sort(kept.begin(), kept.end());
    return kept;
}

inline std::vector<std::size_t> iota_vec(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace detail

template <class S>
PruneResult<S> prune_channels(const Network& net, const WeightStore<S>& ws,
                              const PruneConfig& cfg) {
    if (!(cfg.ratio >= 0.0 && cfg.ratio <= 1.0))
        throw Error("pruning ratio must lie in [0,1], got " + std::to_string(cfg.ratio));
    validate_weights(net, ws);
    const auto shapes = infer_shapes(net);

    std::size_t last_param = net.layers.size();
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].parameterized()) last_param = i;

    auto is_protected = [&](std::size_t i) {
        return i == last_param ||
               std::find(cfg.protected_layers.begin(), cfg.protected_layers.end(), i) !=
                   cfg.protected_layers.end();
    };

    PruneResult<S> out;
    out.net = net;
    out.record.params_before = model_stats(net).params;

    // Surviving channel (or feature) indices flowing out of the previous layer.
    std::vector<std::size_t> kept_in =
        detail::iota_vec(net.input_shape.size() == 3 ? net.input_shape[0]
                                                     : net.input_shape[0]);
    bool kept_in_full = true;

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        LayerSpec& l = out.net.layers[i];
        const Shape in_shape = i == 0 ? net.input_shape : shapes[i - 1];
        switch (l.kind) {
            case LayerKind::Conv2d: {
                const Tensor<S>& w = ws.at(weight_name(i));
                if (l.depthwise()) {
                    // One filter per channel: survival is dictated by the producer.
                    Tensor<S> nw = kept_in_full ? w : select_dim(w, 0, kept_in);
                    l.in = l.out = l.groups = kept_in.size();
                    out.weights.set(weight_name(i), std::move(nw));
                    if (l.bias)
                        out.weights.set(bias_name(i),
                                        kept_in_full
                                            ? ws.at(bias_name(i))
                                            : select_dim(ws.at(bias_name(i)), 0, kept_in));
                    out.record.layers.push_back({i, kept_in, w.dim(0), kept_in.size()});
                    break;
                }
                if (l.groups > 1) {
                    if (!kept_in_full)
                        throw Error("layer " + std::to_string(i) +
                                    ": pruning through a grouped convolution is not "
                                    "supported");
                    // Group structure pins both widths; leave the layer alone.
                    out.weights.set(weight_name(i), w);
                    if (l.bias) out.weights.set(bias_name(i), ws.at(bias_name(i)));
                    out.record.layers.push_back(
                        {i, detail::iota_vec(l.out), l.out, l.out});
                    kept_in = detail::iota_vec(l.out);
                    kept_in_full = true;
                    break;
                }
                std::vector<std::size_t> kept =
                    is_protected(i) ? detail::iota_vec(l.out)
                                    : detail::survivors(detail::filter_l1_norms(w),
                                                        cfg.ratio);
                if (kept.empty())
                    throw Error("pruning ratio " + std::to_string(cfg.ratio) +
                                " empties layer " + std::to_string(i) + " (conv2d)");
                Tensor<S> nw = kept.size() == l.out ? w : select_dim(w, 0, kept);
                if (!kept_in_full) nw = select_dim(nw, 1, kept_in);
                out.record.layers.push_back({i, kept, l.out, kept.size()});
                l.in = kept_in.size();
                l.out = kept.size();
                out.weights.set(weight_name(i), std::move(nw));
                if (l.bias)
                    out.weights.set(bias_name(i),
                                    kept.size() == w.dim(0)
                                        ? ws.at(bias_name(i))
                                        : select_dim(ws.at(bias_name(i)), 0, kept));
                kept_in_full = kept.size() == w.dim(0);
                kept_in = std::move(kept);
                break;
            }
            case LayerKind::Linear: {
                const Tensor<S>& w = ws.at(weight_name(i));
                std::vector<std::size_t> kept =
                    is_protected(i) ? detail::iota_vec(l.out)
                                    : detail::survivors(detail::filter_l1_norms(w),
                                                        cfg.ratio);
                if (kept.empty())
                    throw Error("pruning ratio " + std::to_string(cfg.ratio) +
                                " empties layer " + std::to_string(i) + " (linear)");
                Tensor<S> nw = kept.size() == l.out ? w : select_dim(w, 0, kept);
                if (!kept_in_full) nw = select_dim(nw, 1, kept_in);
                out.record.layers.push_back({i, kept, l.out, kept.size()});
                l.in = kept_in.size();
                l.out = kept.size();
                out.weights.set(weight_name(i), std::move(nw));
                if (l.bias)
                    out.weights.set(bias_name(i),
                                    kept.size() == w.dim(0)
                                        ? ws.at(bias_name(i))
                                        : select_dim(ws.at(bias_name(i)), 0, kept));
                kept_in_full = kept.size() == w.dim(0);
                kept_in = std::move(kept);
                break;
            }
            case LayerKind::Flatten: {
                // Each surviving channel contributes its whole spatial block.
                const std::size_t hw =
                    in_shape.size() == 3 ? in_shape[1] * in_shape[2] : 1;
                std::vector<std::size_t> feats;
                feats.reserve(kept_in.size() * hw);
                for (std::size_t c : kept_in)
                    for (std::size_t p = 0; p < hw; ++p) feats.push_back(c * hw + p);
                kept_in = std::move(feats);
                break;
            }
            default:
                break; // relu / pool / softmax leave the channel set untouched
        }
    }

    out.record.params_after = model_stats(out.net).params;
    validate_weights(out.net, out.weights);
    infer_shapes(out.net);
    return out;
}

} // namespace rpk
