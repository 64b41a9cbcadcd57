#pragma once
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rpk/serialize.hpp"

namespace rpk {

// ============================================================================
// Linear over-parameterization
// ============================================================================
//
// Each convolution W [n, m/g, k, k] is replaced by an exactly equivalent
// three-factor unit
//
//     1x1 conv (m -> g*p_g, carries the padding)
//   -> kxk conv (g*p_g -> g*q_g, carries the stride)
//   -> 1x1 conv (g*q_g -> n, carries the bias)
//
// with p_g = ceil(rate * m/g) and q_g = ceil(rate * n/g) per channel group.
// The outer 1x1 factors are drawn at random with full rank; the middle factor
// is solved so the composition reproduces W to machine precision. A linear
// layer expands the same way into a chain of matrices where one interior
// factor absorbs the original weight through the chain's one-sided inverses.
// Contraction multiplies the factors back into a compact layer.
//
// All factor construction and contraction arithmetic runs in float64 and is
// cast to the model's scalar type at the end.

enum class UnitKind { Conv3Factor, LinearChain };

inline const char* unit_kind_name(UnitKind k) {
    return k == UnitKind::Conv3Factor ? "conv3" : "linear_chain";
}

struct ExpansionPlan {
    double rate = 2.0;                  // conv width multiplier, >= 1
    bool expand_fc = false;             // also expand linear layers
    std::size_t fc_depth = 2;           // factors per linear chain
    std::vector<std::size_t> fc_widths; // interior widths; empty -> 2*max(in,out)
    std::size_t fc_theta = 0;           // solved factor position 1..depth; 0 -> middle
    std::uint64_t seed = 0;

    friend bool operator==(const ExpansionPlan&, const ExpansionPlan&) = default;
};

struct ExpandedUnit {
    std::size_t original_index = 0; // layer position in the compact network
    LayerSpec original_spec;
    UnitKind kind = UnitKind::Conv3Factor;
    std::vector<LayerSpec> factor_specs;
    std::size_t first_factor = 0; // layer position of the first factor
    std::size_t theta = 0;        // LinearChain: which factor was solved, 1-based

    friend bool operator==(const ExpandedUnit&, const ExpandedUnit&) = default;
};

struct ExpansionRecord {
    ExpansionPlan plan;
    std::vector<ExpandedUnit> units;

    friend bool operator==(const ExpansionRecord&, const ExpansionRecord&) = default;
};

template <class S>
struct ExpandOutput {
    Network net;
    WeightStore<S> weights;
    ExpansionRecord record;
};

template <class S>
struct ContractOutput {
    Network net;
    WeightStore<S> weights;
};

// ----------------------------------------------------------------------------
// Factor sampling
// ----------------------------------------------------------------------------

// Random factors are rejected not only when numerically rank-deficient but
// already when badly conditioned: the solved middle factor scales with the
// outer factors' inverse smallest singular values, so a sloppy draw would
// erode the float32 equivalence of the expanded network.
inline constexpr double kConditionFloor = 0.02;
inline constexpr int kSampleAttempts = 8;

namespace detail {

// [rows, cols] with entries N(0, 1/sqrt(fan_in)); redraws with seed+1, ...
// until full-rank and acceptably conditioned, then fails loudly.
inline Tensor<double> sample_factor(std::size_t rows, std::size_t cols,
                                    std::size_t fan_in, std::uint64_t seed,
                                    const std::string& what) {
    RankReport last;
    for (int attempt = 0; attempt < kSampleAttempts; ++attempt) {
        Tensor<double> f({rows, cols});
        std::mt19937_64 rng(seed + static_cast<std::uint64_t>(attempt));
        fill_normal(f, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        Eigen::VectorXd sv = singular_values(to_double_matrix(f));
        last = RankReport{rows, cols, 0, kRankRelTol * sv(0), false, false};
        const double cutoff = kRankRelTol * sv(0);
        const std::size_t rank = static_cast<std::size_t>((sv.array() > cutoff).count());
        last.numerical_rank = rank;
        last.full_row_rank = rank == rows;
        last.full_col_rank = rank == cols;
        if (rank < std::min(rows, cols)) continue;
        if (sv(sv.size() - 1) < kConditionFloor * sv(0)) continue;
        return f;
    }
    throw RankError(what + ": no well-conditioned full-rank factor of shape [" +
                        std::to_string(rows) + "," + std::to_string(cols) + "] in " +
                        std::to_string(kSampleAttempts) + " draws",
                    last);
}

// ----------------------------------------------------------------------------
// Reshape choreography between filters and matrices
// ----------------------------------------------------------------------------

// F [n,c,k,k] -> M [n*k*k, c]: the channel axis moves past the kernel block,
// so each row of M is one (output, ky, kx) slot and matrix products act on
// the channel axis alone.
inline Tensor<double> filter_as_kmat(const Tensor<double>& f) {
    const std::size_t n = f.dim(0), c = f.dim(1), k = f.dim(2);
    Tensor<double> m({n * k * k, c});
    for (std::size_t o = 0; o < n; ++o)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx)
                    m(o * k * k + ky * k + kx, ci) = f(o, ci, ky, kx);
    return m;
}

// Inverse of filter_as_kmat: M [n*k*k, c] -> F [n,c,k,k].
inline Tensor<double> kmat_as_filter(const Tensor<double>& m, std::size_t n,
                                     std::size_t k) {
    const std::size_t c = m.dim(1);
    Tensor<double> f({n, c, k, k});
    for (std::size_t o = 0; o < n; ++o)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx)
                    f(o, ci, ky, kx) = m(o * k * k + ky * k + kx, ci);
    return f;
}

// Middle factor B [q,p,k,k] so that 1x1(C) . kxk(B) . 1x1(A) equals the
// original filter F [n,m,k,k]:  B = R_C . reshape(kmat(F) . L_A).
inline Tensor<double> solve_middle_factor(const Tensor<double>& f,
                                          const Tensor<double>& a,
                                          const Tensor<double>& c) {
    const std::size_t n = f.dim(0), k = f.dim(2);
    const std::size_t p = a.dim(0), q = c.dim(1);
    Tensor<double> la = left_inverse(a);   // [m, p]
    Tensor<double> rc = right_inverse(c);  // [q, n]
    Tensor<double> g = matmul(filter_as_kmat(f), la);       // [n*k*k, p]
    Tensor<double> g4 = kmat_as_filter(g, n, k);            // [n, p, k, k]
    Tensor<double> bflat = matmul(rc, std::move(g4).reshape({n, p * k * k}));
    return std::move(bflat).reshape({q, p, k, k});
}

// Merge the three factors back: rows of the result follow the same path in
// reverse, C . reshape(kmat(B) . A) -> F [n,m,k,k].
inline Tensor<double> merge_three_factors(const Tensor<double>& a, const Tensor<double>& b,
                                          const Tensor<double>& c) {
    const std::size_t q = b.dim(0), k = b.dim(2);
    const std::size_t m = a.dim(1), n = c.dim(0);
    Tensor<double> t = matmul(filter_as_kmat(b), a);        // [q*k*k, m]
    Tensor<double> t4 = kmat_as_filter(t, q, k);            // [q, m, k, k]
    Tensor<double> merged = matmul(c, std::move(t4).reshape({q, m * k * k}));
    return std::move(merged).reshape({n, m, k, k});
}

} // namespace detail

// ----------------------------------------------------------------------------
// Single-layer expansion
// ----------------------------------------------------------------------------

struct ConvFactors {
    std::vector<LayerSpec> specs;          // the three factor layers
    std::vector<Tensor<double>> weights;   // their weights, float64
    Tensor<double> bias;                   // bias of the last factor, if any
    bool has_bias = false;
};

// Expand one convolution (grouped and depthwise included) at the given rate.
inline ConvFactors expand_conv(const LayerSpec& l, const Tensor<double>& w,
                               const Tensor<double>* bias, double rate,
                               std::uint64_t seed) {
    if (l.kind != LayerKind::Conv2d)
        throw Error("expand_conv: layer is not a convolution");
    if (rate < 1.0)
        throw Error("expansion rate must be >= 1, got " + std::to_string(rate));
    const std::size_t g = l.groups;
    const std::size_t m_g = l.in / g, n_g = l.out / g, k = l.kernel;
    const std::size_t p_g =
        static_cast<std::size_t>(std::ceil(rate * static_cast<double>(m_g)));
    const std::size_t q_g =
        static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n_g)));

    ConvFactors out;
    out.specs = {
        LayerSpec::conv2d(l.in, g * p_g, 1, 1, l.padding, g, false),
        LayerSpec::conv2d(g * p_g, g * q_g, k, l.stride, 0, g, false),
        LayerSpec::conv2d(g * q_g, l.out, 1, 1, 0, g, l.bias),
    };
    Tensor<double> w1({g * p_g, m_g, 1, 1});
    Tensor<double> w2({g * q_g, p_g, k, k});
    Tensor<double> w3({l.out, q_g, 1, 1});

    for (std::size_t gi = 0; gi < g; ++gi) {
        Tensor<double> a = detail::sample_factor(p_g, m_g, m_g, mix_seed(seed, 2 * gi),
                                                 "expand_conv: input factor");
        Tensor<double> c = detail::sample_factor(n_g, q_g, q_g, mix_seed(seed, 2 * gi + 1),
                                                 "expand_conv: output factor");
        // this group's original filters, [n_g, m_g, k, k]
        Tensor<double> fg({n_g, m_g, k, k});
        std::copy(w.data() + gi * n_g * m_g * k * k,
                  w.data() + (gi + 1) * n_g * m_g * k * k, fg.data());
        Tensor<double> b = detail::solve_middle_factor(fg, a, c);

        std::copy(a.data(), a.data() + a.size(), w1.data() + gi * p_g * m_g);
        std::copy(b.data(), b.data() + b.size(), w2.data() + gi * q_g * p_g * k * k);
        std::copy(c.data(), c.data() + c.size(), w3.data() + gi * n_g * q_g);
    }
    out.weights = {std::move(w1), std::move(w2), std::move(w3)};
    if (l.bias && bias) {
        out.bias = *bias;
        out.has_bias = true;
    }
    return out;
}

// Merge a three-factor unit back into one convolution weight.
inline Tensor<double> contract_conv(const LayerSpec& original,
                                    const std::vector<Tensor<double>>& factors) {
    const std::size_t g = original.groups;
    const std::size_t m_g = original.in / g, n_g = original.out / g;
    const std::size_t k = original.kernel;
    const std::size_t p_g = factors[0].dim(0) / g, q_g = factors[1].dim(0) / g;

    Tensor<double> merged({original.out, m_g, k, k});
    for (std::size_t gi = 0; gi < g; ++gi) {
        Tensor<double> a({p_g, m_g});
        std::copy(factors[0].data() + gi * p_g * m_g,
                  factors[0].data() + (gi + 1) * p_g * m_g, a.data());
        Tensor<double> b({q_g, p_g, k, k});
        std::copy(factors[1].data() + gi * q_g * p_g * k * k,
                  factors[1].data() + (gi + 1) * q_g * p_g * k * k, b.data());
        Tensor<double> c({n_g, q_g});
        std::copy(factors[2].data() + gi * n_g * q_g,
                  factors[2].data() + (gi + 1) * n_g * q_g, c.data());
        Tensor<double> fg = detail::merge_three_factors(a, b, c);
        std::copy(fg.data(), fg.data() + fg.size(),
                  merged.data() + gi * n_g * m_g * k * k);
    }
    return merged;
}

struct LinearFactors {
    std::vector<LayerSpec> specs;
    std::vector<Tensor<double>> weights;
    Tensor<double> bias;
    bool has_bias = false;
    std::size_t theta = 0;
};

// Interior widths for a linear chain of `depth` factors over in->out.
inline std::vector<std::size_t> default_fc_widths(std::size_t in, std::size_t out,
                                                  std::size_t depth) {
    return std::vector<std::size_t>(depth - 1, 2 * std::max(in, out));
}

// Expand one linear layer into `depth` factors; the factor at position theta
// (1-based) is solved from the original weight through the chain's one-sided
// inverses, every other factor is drawn at random.
inline LinearFactors expand_linear(const LayerSpec& l, const Tensor<double>& w,
                                   const Tensor<double>* bias,
                                   std::vector<std::size_t> widths, std::size_t theta,
                                   std::uint64_t seed) {
    if (l.kind != LayerKind::Linear) throw Error("expand_linear: layer is not linear");
    const std::size_t depth = widths.size() + 1;
    if (depth < 2) throw Error("expand_linear: need at least 2 factors");
    if (theta == 0) theta = (depth + 1) / 2;
    if (theta > depth)
        throw Error("expand_linear: solved-factor position " + std::to_string(theta) +
                    " exceeds depth " + std::to_string(depth));

    // widths p_0..p_depth with p_0 = in, p_depth = out
    std::vector<std::size_t> p;
    p.push_back(l.in);
    p.insert(p.end(), widths.begin(), widths.end());
    p.push_back(l.out);

    // Factors before theta need left inverses (nondecreasing widths), factors
    // after theta need right inverses (nonincreasing widths).
    for (std::size_t i = 1; i < theta; ++i)
        if (p[i] < p[i - 1])
            throw Error("expand_linear: infeasible widths, factor " + std::to_string(i) +
                        " shrinks " + std::to_string(p[i - 1]) + " -> " +
                        std::to_string(p[i]) + " before the solved factor");
    for (std::size_t i = theta + 1; i <= depth; ++i)
        if (p[i] > p[i - 1])
            throw Error("expand_linear: infeasible widths, factor " + std::to_string(i) +
                        " grows " + std::to_string(p[i - 1]) + " -> " +
                        std::to_string(p[i]) + " after the solved factor");

    LinearFactors out;
    out.theta = theta;
    std::vector<Tensor<double>> f(depth + 1); // 1-based
    for (std::size_t i = 1; i <= depth; ++i) {
        out.specs.push_back(
            LayerSpec::linear(p[i - 1], p[i], i == depth ? l.bias : false));
        if (i == theta) continue;
        f[i] = detail::sample_factor(p[i], p[i - 1], p[i - 1], mix_seed(seed, i),
                                     "expand_linear: factor " + std::to_string(i));
    }

    // W_theta = (R_{theta+1} ... R_depth) . W . (L_1 ... L_{theta-1})
    Tensor<double> solved = w;
    if (theta > 1) {
        Tensor<double> lv = left_inverse(f[1]); // [p0, p1]
        for (std::size_t i = 2; i < theta; ++i) lv = matmul(lv, left_inverse(f[i]));
        solved = matmul(solved, lv); // [out_dims..] -> [n, p_{theta-1}]
    }
    if (theta < depth) {
        Tensor<double> ru = right_inverse(f[theta + 1]); // [p_{theta+1}? ...]
        for (std::size_t i = theta + 2; i <= depth; ++i)
            ru = matmul(ru, right_inverse(f[i]));
        solved = matmul(ru, solved);
    }
    f[theta] = std::move(solved);

    for (std::size_t i = 1; i <= depth; ++i) out.weights.push_back(std::move(f[i]));
    if (l.bias && bias) {
        out.bias = *bias;
        out.has_bias = true;
    }
    return out;
}

// Multiply a linear chain back into one matrix.
inline Tensor<double> contract_linear(const std::vector<Tensor<double>>& factors) {
    Tensor<double> w = factors[0];
    for (std::size_t i = 1; i < factors.size(); ++i) w = matmul(factors[i], w);
    return w;
}

// ----------------------------------------------------------------------------
// Whole-network expansion and contraction
// ----------------------------------------------------------------------------

template <class S>
ExpandOutput<S> expand_network(const Network& net, const WeightStore<S>& ws,
                               const ExpansionPlan& plan) {
    validate_weights(net, ws);
    if (plan.rate < 1.0)
        throw Error("expansion rate must be >= 1, got " + std::to_string(plan.rate));
    if (!plan.fc_widths.empty() && plan.fc_widths.size() + 1 != plan.fc_depth)
        throw Error("expand: " + std::to_string(plan.fc_depth) + " factors need " +
                    std::to_string(plan.fc_depth - 1) + " interior widths, got " +
                    std::to_string(plan.fc_widths.size()));

    ExpandOutput<S> out;
    out.net.name = net.name;
    out.net.input_shape = net.input_shape;
    out.record.plan = plan;

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        const std::uint64_t layer_seed = plan.seed ^ static_cast<std::uint64_t>(i);
        if (l.kind == LayerKind::Conv2d) {
            Tensor<double> w = cast<double>(ws.at(weight_name(i)));
            Tensor<double> b;
            if (l.bias) b = cast<double>(ws.at(bias_name(i)));
            ConvFactors cf = expand_conv(l, w, l.bias ? &b : nullptr, plan.rate,
                                         layer_seed);
            ExpandedUnit unit{i, l, UnitKind::Conv3Factor, cf.specs,
                              out.net.layers.size(), 0};
            for (std::size_t fj = 0; fj < cf.specs.size(); ++fj) {
                out.weights.set(weight_name(out.net.layers.size()),
                                cast<S>(cf.weights[fj]));
                out.net.layers.push_back(cf.specs[fj]);
            }
            if (cf.has_bias)
                out.weights.set(bias_name(out.net.layers.size() - 1), cast<S>(cf.bias));
            out.record.units.push_back(std::move(unit));
        } else if (l.kind == LayerKind::Linear && plan.expand_fc) {
            Tensor<double> w = cast<double>(ws.at(weight_name(i)));
            Tensor<double> b;
            if (l.bias) b = cast<double>(ws.at(bias_name(i)));
            std::vector<std::size_t> widths =
                plan.fc_widths.empty() ? default_fc_widths(l.in, l.out, plan.fc_depth)
                                       : plan.fc_widths;
            LinearFactors lf = expand_linear(l, w, l.bias ? &b : nullptr,
                                             widths, plan.fc_theta, layer_seed);
            ExpandedUnit unit{i, l, UnitKind::LinearChain, lf.specs,
                              out.net.layers.size(), lf.theta};
            for (std::size_t fj = 0; fj < lf.specs.size(); ++fj) {
                out.weights.set(weight_name(out.net.layers.size()),
                                cast<S>(lf.weights[fj]));
                out.net.layers.push_back(lf.specs[fj]);
            }
            if (lf.has_bias)
                out.weights.set(bias_name(out.net.layers.size() - 1), cast<S>(lf.bias));
            out.record.units.push_back(std::move(unit));
        } else {
            if (l.parameterized()) {
                out.weights.set(weight_name(out.net.layers.size()),
                                ws.at(weight_name(i)));
                if (l.bias)
                    out.weights.set(bias_name(out.net.layers.size()),
                                    ws.at(bias_name(i)));
            }
            out.net.layers.push_back(l);
        }
    }
    validate_weights(out.net, out.weights);
    infer_shapes(out.net);
    return out;
}

template <class S>
ContractOutput<S> contract_network(const Network& net, const WeightStore<S>& ws,
                                   const ExpansionRecord& record) {
    validate_weights(net, ws);
    ContractOutput<S> out;
    out.net.name = net.name;
    out.net.input_shape = net.input_shape;

    std::size_t next_unit = 0;
    std::size_t i = 0;
    while (i < net.layers.size()) {
        const ExpandedUnit* unit =
            next_unit < record.units.size() && record.units[next_unit].first_factor == i
                ? &record.units[next_unit]
                : nullptr;
        if (!unit) {
            const LayerSpec& l = net.layers[i];
            if (l.parameterized()) {
                out.weights.set(weight_name(out.net.layers.size()),
                                ws.at(weight_name(i)));
                if (l.bias)
                    out.weights.set(bias_name(out.net.layers.size()), ws.at(bias_name(i)));
            }
            out.net.layers.push_back(l);
            ++i;
            continue;
        }
        const std::size_t nf = unit->factor_specs.size();
        if (i + nf > net.layers.size())
            throw FormatError("expansion record runs past the network's layers");
        std::vector<Tensor<double>> factors;
        for (std::size_t fj = 0; fj < nf; ++fj) {
            if (net.layers[i + fj] != unit->factor_specs[fj])
                throw FormatError("expansion record does not match the network at layer " +
                                  std::to_string(i + fj));
            factors.push_back(cast<double>(ws.at(weight_name(i + fj))));
        }
        Tensor<double> merged = unit->kind == UnitKind::Conv3Factor
                                    ? contract_conv(unit->original_spec, factors)
                                    : contract_linear(factors);
        out.weights.set(weight_name(out.net.layers.size()), cast<S>(merged));
        if (unit->original_spec.bias)
            out.weights.set(bias_name(out.net.layers.size()),
                            ws.at(bias_name(i + nf - 1)));
        out.net.layers.push_back(unit->original_spec);
        i += nf;
        ++next_unit;
    }
    if (next_unit != record.units.size())
        throw FormatError("expansion record describes units the network does not hold");
    validate_weights(out.net, out.weights);
    return out;
}

// ----------------------------------------------------------------------------
// Record <-> JSON, for the model container
// ----------------------------------------------------------------------------

inline json expansion_to_json(const ExpansionRecord& r) {
    json j;
    j["plan"] = {{"rate", r.plan.rate},         {"expand_fc", r.plan.expand_fc},
                 {"fc_depth", r.plan.fc_depth}, {"fc_widths", r.plan.fc_widths},
                 {"fc_theta", r.plan.fc_theta}, {"seed", r.plan.seed}};
    j["units"] = json::array();
    for (const auto& u : r.units) {
        json uj;
        uj["original_index"] = u.original_index;
        uj["original_spec"] = layer_to_json(u.original_spec);
        uj["kind"] = unit_kind_name(u.kind);
        uj["factor_specs"] = json::array();
        for (const auto& f : u.factor_specs) uj["factor_specs"].push_back(layer_to_json(f));
        uj["first_factor"] = u.first_factor;
        uj["theta"] = u.theta;
        j["units"].push_back(std::move(uj));
    }
    return j;
}

inline ExpansionRecord expansion_from_json(const json& j) {
    try {
        ExpansionRecord r;
        const json& pj = j.at("plan");
        r.plan.rate = pj.at("rate").get<double>();
        r.plan.expand_fc = pj.at("expand_fc").get<bool>();
        r.plan.fc_depth = pj.at("fc_depth").get<std::size_t>();
        r.plan.fc_widths = pj.at("fc_widths").get<std::vector<std::size_t>>();
        r.plan.fc_theta = pj.at("fc_theta").get<std::size_t>();
        r.plan.seed = pj.at("seed").get<std::uint64_t>();
        for (const auto& uj : j.at("units")) {
            ExpandedUnit u;
            u.original_index = uj.at("original_index").get<std::size_t>();
            u.original_spec = layer_from_json(uj.at("original_spec"));
            const auto kind = uj.at("kind").get<std::string>();
            if (kind == "conv3")
                u.kind = UnitKind::Conv3Factor;
            else if (kind == "linear_chain")
                u.kind = UnitKind::LinearChain;
            else
                throw FormatError("unknown expansion unit kind: " + kind);
            for (const auto& fj : uj.at("factor_specs"))
                u.factor_specs.push_back(layer_from_json(fj));
            u.first_factor = uj.at("first_factor").get<std::size_t>();
            u.theta = uj.at("theta").get<std::size_t>();
            r.units.push_back(std::move(u));
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed expansion record: ") + e.what());
    }
}

// Parameter count of the three-factor unit replacing a conv, closed form.
inline std::size_t expanded_conv_params(const LayerSpec& l, double rate) {
    const std::size_t g = l.groups;
    const std::size_t m_g = l.in / g, n_g = l.out / g;
    const std::size_t p_g =
        static_cast<std::size_t>(std::ceil(rate * static_cast<double>(m_g)));
    const std::size_t q_g =
        static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n_g)));
    return g * (p_g * m_g + q_g * p_g * l.kernel * l.kernel + n_g * q_g) +
           (l.bias ? l.out : 0);
}

} // namespace rpk
