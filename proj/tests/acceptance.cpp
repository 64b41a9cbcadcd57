// Release gate for the library: each criterion prints one [PASS]/[FAIL] line
// and the binary exits non-zero if any selected criterion fails.
//
//   rpk_acceptance                run everything
//   rpk_acceptance --criterion 3  run one criterion
//
// The checks are intentionally end-to-end: they drive the public API the way
// the CLI does and judge results with hand arithmetic, finite differences and
// explicit tolerances rather than against cached outputs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "rpk/data.hpp"
#include "rpk/distill.hpp"
#include "rpk/experiment.hpp"
#include "rpk/prune.hpp"
#include "rpk/reparam.hpp"
#include "rpk/serialize.hpp"
#include "rpk/stats.hpp"
#include "rpk/train.hpp"

using namespace rpk;

namespace {

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

void expect(bool ok, const std::string& what) {
    if (!ok) throw CheckFailure(what);
}

// Max over batch rows of ||a-b||_inf / (1 + ||ref||_inf), the same robust
// relative error the verify stage reports.
template <class S>
double batch_rel_err(const Tensor<S>& got, const Tensor<S>& ref) {
    const std::size_t b = ref.dim(0), row = ref.size() / b;
    double worst = 0;
    for (std::size_t i = 0; i < b; ++i) {
        double diff = 0, mag = 0;
        for (std::size_t j = 0; j < row; ++j) {
            const double r = static_cast<double>(ref.data()[i * row + j]);
            const double g = static_cast<double>(got.data()[i * row + j]);
            diff = std::max(diff, std::abs(g - r));
            mag = std::max(mag, std::abs(r));
        }
        worst = std::max(worst, diff / (1.0 + mag));
    }
    return worst;
}

template <class S>
double tensor_rel_err(const Tensor<S>& got, const Tensor<S>& ref) {
    double diff = 0, mag = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(got.data()[i]) -
                                       static_cast<double>(ref.data()[i])));
        mag = std::max(mag, std::abs(static_cast<double>(ref.data()[i])));
    }
    return diff / (mag + 1e-300);
}

// The layer/rate grid shared by the equivalence and round-trip criteria.
struct GridCase {
    Network net;
    ExpansionPlan plan;
    std::string label;
};

std::vector<GridCase> expansion_grid() {
    std::vector<GridCase> cases;
    std::uint64_t salt = 0;
    for (std::size_t k : {1u, 3u, 5u})
        for (std::size_t s : {1u, 2u})
            for (std::size_t pad : {0u, 1u, 2u})
                for (double r : {1.0, 2.0, 3.0}) {
                    Network net;
                    net.input_shape = {4, 8, 8};
                    net.layers = {LayerSpec::conv2d(4, 6, k, s, pad)};
                    ExpansionPlan plan;
                    plan.rate = r;
                    plan.seed = 0xE0'0000 + salt++;
                    cases.push_back({net, plan,
                                     fmt("conv k=%zu s=%zu pad=%zu r=%g", k, s, pad, r)});
                }
    for (std::size_t g : {2u, 4u})
        for (double r : {1.0, 2.0, 3.0}) {
            Network net;
            net.input_shape = {g, 8, 8};
            net.layers = {LayerSpec::conv2d(g, g, 3, 1, 1, g)};
            ExpansionPlan plan;
            plan.rate = r;
            plan.seed = 0xD0'0000 + salt++;
            cases.push_back({net, plan, fmt("depthwise g=%zu r=%g", g, r)});
        }
    for (std::size_t depth : {2u, 3u})
        for (double r : {1.0, 2.0, 3.0}) {
            Network net;
            net.input_shape = {12};
            net.layers = {LayerSpec::linear(12, 7)};
            ExpansionPlan plan;
            plan.rate = r;
            plan.expand_fc = true;
            plan.fc_depth = depth;
            plan.seed = 0xF0'0000 + salt++;
            cases.push_back({net, plan, fmt("linear depth=%zu r=%g", depth, r)});
        }
    return cases;
}

// ============================================================================
// 1. Equivalence: expanded networks compute the same function
// ============================================================================

template <class S>
double equivalence_max_err(double tol) {
    double worst = 0;
    std::uint64_t seed = 0xC1;
    for (const GridCase& c : expansion_grid()) {
        WeightStore<S> ws = init_weights<S>(c.net, seed++);
        ExpandOutput<S> ex = expand_network(c.net, ws, c.plan);

        Shape in_shape = c.net.input_shape;
        in_shape.insert(in_shape.begin(), 100);
        Tensor<S> input(in_shape);
        std::mt19937_64 rng(seed++);
        fill_uniform(input, rng, -1.0, 1.0);

        const double err = batch_rel_err(predict(ex.net, ex.weights, input),
                                         predict(c.net, ws, input));
        expect(err <= tol, c.label + fmt(": rel err %.3e over tolerance %.0e", err, tol));
        worst = std::max(worst, err);
    }
    return worst;
}

std::string criterion_equivalence() {
    const double worst32 = equivalence_max_err<float>(1e-5);
    const double worst64 = equivalence_max_err<double>(1e-10);
    return fmt("%zu configs x 100 inputs, max rel err %.2e float32 / %.2e float64",
               2 * expansion_grid().size(), worst32, worst64);
}

// ============================================================================
// 2. Round trip: contraction recovers the original weights
// ============================================================================

std::string criterion_round_trip() {
    double worst = 0;
    std::uint64_t seed = 0xC2;
    const auto grid = expansion_grid();
    for (const GridCase& c : grid) {
        WeightStore<double> ws = init_weights<double>(c.net, seed++);
        ExpandOutput<double> ex = expand_network(c.net, ws, c.plan);
        ContractOutput<double> co = contract_network(ex.net, ex.weights, ex.record);

        expect(co.net.layers == c.net.layers, c.label + ": contracted layers differ");
        for (std::size_t i = 0; i < c.net.layers.size(); ++i) {
            if (!c.net.layers[i].parameterized()) continue;
            const double werr =
                tensor_rel_err(co.weights.at(weight_name(i)), ws.at(weight_name(i)));
            expect(werr <= 1e-10,
                   c.label + fmt(": weight rel err %.3e over tolerance 1e-10", werr));
            worst = std::max(worst, werr);
            if (c.net.layers[i].bias) {
                const double berr =
                    tensor_rel_err(co.weights.at(bias_name(i)), ws.at(bias_name(i)));
                expect(berr <= 1e-10, c.label + fmt(": bias rel err %.3e", berr));
                worst = std::max(worst, berr);
            }
        }
    }
    return fmt("%zu configs, max weight rel err %.2e (float64)", grid.size(), worst);
}

// ============================================================================
// 3. Gradients: analytic backward matches central finite differences
// ============================================================================

struct GradTally {
    std::size_t coords = 0;
    double worst = 0;

    void take(double analytic, double numeric, const std::string& where) {
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-4});
        expect(rel <= 1e-4, where + fmt(": analytic %.6e vs numeric %.6e (rel %.2e)",
                                        analytic, numeric, rel));
        worst = std::max(worst, rel);
        ++coords;
    }
};

Network grad_net() {
    Network net;
    net.name = "gradcheck";
    net.input_shape = {2, 8, 8};
    net.layers = {LayerSpec::conv2d(2, 4, 3, 1, 1),    LayerSpec::relu(),
                  LayerSpec::maxpool(2, 2),            LayerSpec::conv2d(4, 4, 3, 1, 1, 2),
                  LayerSpec::relu(),                   LayerSpec::avgpool(2, 2),
                  LayerSpec::flatten(),                LayerSpec::linear(16, 3)};
    return net;
}

// Finite-difference every weight coordinate of `net` against the analytic
// gradient of `loss(ws)`.
void fd_all_weights(const Network& net, WeightStore<double>& ws,
                    const std::function<double()>& loss,
                    const std::function<GradStore<double>()>& grad, GradTally& tally,
                    const std::string& tag) {
    GradStore<double> g = grad();
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!net.layers[i].parameterized()) continue;
        std::vector<std::string> names{weight_name(i)};
        if (net.layers[i].bias) names.push_back(bias_name(i));
        for (const std::string& name : names) {
            Tensor<double>& t = ws.at(name);
            const Tensor<double>& a = g.at(name);
            for (std::size_t j = 0; j < t.size(); ++j) {
                const double numeric = oracle::central_diff(loss, t.data()[j], 1e-5);
                tally.take(a.data()[j], numeric, tag + " " + name);
            }
        }
    }
}

std::string criterion_gradients() {
    GradTally tally;
    const Network net = grad_net();
    const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};

    WeightStore<double> ws = init_weights<double>(net, 31);
    Tensor<double> x({6, 2, 8, 8});
    std::mt19937_64 rng(32);
    fill_normal(x, rng, 0.7);

    // Task loss alone.
    fd_all_weights(
        net, ws, [&] { return loss_and_grad<double>(net, ws, x, labels).first.total; },
        [&] { return loss_and_grad<double>(net, ws, x, labels).second; }, tally, "task");

    // Task + similarity loss against a fixed teacher, through the same
    // activations the training loop hooks.
    const Network teacher = grad_net();
    WeightStore<double> tws = init_weights<double>(teacher, 33);
    DistillConfig<double> dc;
    dc.pairs = {{2, 2}, {5, 5}};
    dc.gamma = 7.0;
    dc.teacher_net = &teacher;
    dc.teacher_weights = &tws;
    fd_all_weights(
        net, ws, [&] { return loss_and_grad(net, ws, x, labels, &dc).first.total; },
        [&] { return loss_and_grad(net, ws, x, labels, &dc).second; }, tally, "total");

    // Similarity loss by itself, differentiated in the activation.
    Tensor<double> q({6, 10});
    Tensor<double> teacher_act({6, 10});
    fill_normal(q, rng, 1.0);
    fill_normal(teacher_act, rng, 1.0);
    const Tensor<double> gt = similarity_matrix(teacher_act);
    const Tensor<double> qgrad = sp_loss_grad(q, gt);
    for (std::size_t j = 0; j < q.size(); ++j) {
        const double numeric = oracle::central_diff(
            [&] { return sp_loss_from_grams(gt, similarity_matrix(q)); }, q.data()[j],
            1e-5);
        tally.take(qgrad.data()[j], numeric, "similarity");
    }

    // Softmax backward through a linear functional of the output.
    Network soft;
    soft.input_shape = {5};
    soft.layers = {LayerSpec::linear(5, 4), LayerSpec::softmax()};
    WeightStore<double> sws = init_weights<double>(soft, 35);
    Tensor<double> sx({3, 5}), coef({3, 4});
    fill_normal(sx, rng, 1.0);
    fill_normal(coef, rng, 1.0);
    auto soft_loss = [&] {
        const Tensor<double> y = predict(soft, sws, sx);
        double acc = 0;
        for (std::size_t j = 0; j < y.size(); ++j) acc += coef.data()[j] * y.data()[j];
        return acc;
    };
    {
        auto acts = forward(soft, sws, sx);
        Backprop<double> bp = backward(soft, sws, sx, acts, coef);
        for (const std::string& name : {std::string("layer0.weight"), std::string("layer0.bias")}) {
            Tensor<double>& t = sws.at(name);
            const Tensor<double>& a = bp.grads.at(name);
            for (std::size_t j = 0; j < t.size(); ++j)
                tally.take(a.data()[j], oracle::central_diff(soft_loss, t.data()[j], 1e-5),
                           "softmax " + name);
        }
    }

    // Gradient with respect to the network input.
    Tensor<double> xin({2, 2, 8, 8});
    fill_normal(xin, rng, 0.7);
    const std::vector<std::size_t> lab2{1, 2};
    {
        auto acts = forward(net, ws, xin);
        Backprop<double> bp = backward(net, ws, xin, acts, ce_grad(acts.back(), lab2));
        auto input_loss = [&] { return ce_loss(predict(net, ws, xin), lab2); };
        for (std::size_t j = 0; j < xin.size(); ++j)
            tally.take(bp.input_grad.data()[j],
                       oracle::central_diff(input_loss, xin.data()[j], 1e-5), "input");
    }

    expect(tally.coords >= 500, fmt("only %zu coordinates checked", tally.coords));
    return fmt("%zu coordinates, max rel err %.2e (float64)", tally.coords, tally.worst);
}

// ============================================================================
// 4. Similarity-loss properties
// ============================================================================

std::string criterion_similarity_properties() {
    const std::size_t b = 8, f = 12;
    std::size_t nonneg = 0;
    for (std::size_t t = 0; t < 1000; ++t) {
        auto qs = oracle::random_tensor<double>({b, f}, 0xC400 + t);
        auto qt = oracle::random_tensor<double>({b, f}, 0xC500 + t);
        const double loss = sp_loss(qt, qs);
        expect(std::isfinite(loss), fmt("case %zu: loss not finite", t));
        if (loss >= 0) ++nonneg;
        expect(sp_loss(qt, qt) == 0.0, fmt("case %zu: nonzero loss on itself", t));
    }
    expect(nonneg == 1000, fmt("negative loss in %zu of 1000 cases", 1000 - nonneg));

    double perm_worst = 0, rot_worst = 0;
    for (std::size_t t = 0; t < 200; ++t) {
        auto qs = oracle::random_tensor<double>({b, f}, 0xC600 + t);
        auto qt = oracle::random_tensor<double>({b, f}, 0xC700 + t);
        const double base = sp_loss(qt, qs);

        // Feature (channel) permutation of the student.
        std::vector<std::size_t> perm(f);
        for (std::size_t j = 0; j < f; ++j) perm[j] = j;
        std::mt19937_64 rng(0xC800 + t);
        std::shuffle(perm.begin(), perm.end(), rng);
        Tensor<double> qp({b, f});
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < f; ++j) qp(i, j) = qs(i, perm[j]);
        const double dp = std::abs(sp_loss(qt, qp) - base);
        expect(dp <= 1e-12, fmt("case %zu: permutation shifts loss by %.3e", t, dp));
        perm_worst = std::max(perm_worst, dp);

        // Orthogonal rotation of the student's feature space.
        Tensor<double> m({f, f});
        fill_normal(m, rng, 1.0);
        Eigen::MatrixXd q =
            Eigen::HouseholderQR<Eigen::MatrixXd>(
                Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>(m.data(), f, f))
                .householderQ();
        Tensor<double> qr({b, f});
        qr.mat().noalias() = qs.mat() * q.cast<double>();
        const double dr = std::abs(sp_loss(qt, qr) - base);
        expect(dr <= 1e-10, fmt("case %zu: rotation shifts loss by %.3e", t, dr));
        rot_worst = std::max(rot_worst, dr);
    }
    return fmt("1000 non-negative, zero at identity; 200 invariance cases, "
               "perm drift %.1e rot drift %.1e",
               perm_worst, rot_worst);
}

// ============================================================================
// 5. Factor invertibility: tall normal factors are full column rank
// ============================================================================

std::string criterion_factor_rank() {
    std::size_t ok = 0;
    for (std::size_t t = 0; t < 1000; ++t) {
        const std::size_t m = 1 + t % 8;
        const std::size_t p = m + (t / 8) % 5;
        Tensor<double> fmat({p, m});
        std::mt19937_64 rng(0xC5'0000 + t);
        fill_normal(fmat, rng, 1.0);
        if (numerical_rank(fmat, 1e-10).full_col_rank) ++ok;
    }
    expect(ok >= 999, fmt("only %zu of 1000 factors full rank", ok));
    return fmt("%zu of 1000 seeded factors full column rank at rel tol 1e-10", ok);
}

// ============================================================================
// 6. Ablation ordering on the synthetic task
// ============================================================================

// A 4-layer CNN on an 8-class blob task, sized so that a 30-epoch budget
// separates the fine-tuning regimes: the pruned 3-channel student is too
// small to master the task from scratch in 30 epochs, inheriting teacher
// channels helps, and the similarity loss helps further.
AblationConfig desk_ablation_config() {
    AblationConfig cfg;
    cfg.net.name = "blobs";
    cfg.net.input_shape = {1, 12, 12};
    cfg.net.layers = {LayerSpec::conv2d(1, 16, 3, 1, 1),  LayerSpec::relu(),
                      LayerSpec::maxpool(2, 2),           LayerSpec::conv2d(16, 16, 3, 1, 1),
                      LayerSpec::relu(),                  LayerSpec::maxpool(2, 2),
                      LayerSpec::conv2d(16, 16, 3, 1, 1), LayerSpec::relu(),
                      LayerSpec::flatten(),               LayerSpec::linear(144, 8)};

    cfg.data.kind = "synthetic";
    cfg.data.synthetic.classes = 8;
    cfg.data.synthetic.per_class = 40;
    cfg.data.synthetic.height = 12;
    cfg.data.synthetic.width = 12;
    cfg.data.synthetic.noise = 0.5;
    cfg.data.synthetic.shift = 2;
    cfg.data.seed = 42;
    cfg.data.train_fraction = 0.75;

    cfg.ratios = {0.8};
    cfg.seeds = {0, 1, 2, 3, 4};

    // The teacher is pretraining infrastructure, not one of the compared
    // regimes; it gets a longer schedule and the weight decay that
    // concentrates salience into a prunable subset of channels.
    cfg.teacher_train.epochs = 60;
    cfg.teacher_train.batch_size = 16;
    cfg.teacher_train.lr = 0.03;
    cfg.teacher_train.lr_milestones = {30, 45};
    cfg.teacher_train.weight_decay = 5e-4;

    cfg.tune.epochs = 30;
    cfg.tune.batch_size = 16;
    cfg.tune.lr = 0.01;
    cfg.tune.lr_milestones = {15, 25};

    cfg.plan.rate = 3.0;
    cfg.gamma = 1.0;
    return cfg;
}

std::string criterion_ablation() {
    const auto dir = std::filesystem::temp_directory_path() / "rpk_acceptance_ablation";
    std::filesystem::remove_all(dir);
    const json report = run_ablation(desk_ablation_config(), dir.string());

    auto mode_mean = [&](const char* mode) {
        return report.at("results").at(mode).at("r0.8").at("mean").get<double>();
    };
    const double scratch = mode_mean("train_from_scratch");
    const double vanilla = mode_mean("vanilla_finetune");
    const double kd = mode_mean("overparam_finetune_kd");
    const double teacher = report.at("teacher").at("r0.8").at("mean").get<double>();

    expect(kd >= vanilla, fmt("kd mean %.4f below vanilla mean %.4f", kd, vanilla));
    expect(kd - vanilla > 0, fmt("kd-vanilla gap %.4f not positive", kd - vanilla));
    expect(vanilla > scratch,
           fmt("vanilla mean %.4f not above scratch mean %.4f", vanilla, scratch));
    expect(kd > scratch, fmt("kd mean %.4f not above scratch mean %.4f", kd, scratch));
    return fmt("teacher %.4f | scratch %.4f < vanilla %.4f <= kd %.4f (gap +%.4f, "
               "5 seeds)",
               teacher, scratch, vanilla, kd, kd - vanilla);
}

// ============================================================================
// 7. Stats arithmetic
// ============================================================================

std::string criterion_stats() {
    {
        Network net;
        net.input_shape = {10};
        net.layers = {LayerSpec::linear(10, 5)};
        const ModelStats s = model_stats(net);
        expect(s.params == 55, fmt("linear params %zu != 55", s.params));
        expect(s.flops == 100, fmt("linear flops %zu != 100", s.flops));
    }
    {
        Network net;
        net.input_shape = {3, 4, 4};
        net.layers = {LayerSpec::conv2d(3, 8, 3, 1, 1)};
        const ModelStats s = model_stats(net);
        expect(s.params == 8 * 3 * 9 + 8, fmt("conv params %zu != 224", s.params));
        expect(s.flops == 2 * 8 * 3 * 9 * 16, fmt("conv flops %zu != 6912", s.flops));
    }
    {
        Network net;
        net.input_shape = {4, 6, 6};
        net.layers = {LayerSpec::conv2d(4, 4, 3, 1, 1, 4)};
        const ModelStats s = model_stats(net);
        expect(s.params == 4 * 1 * 9 + 4, fmt("depthwise params %zu != 40", s.params));
        expect(s.flops == 2 * 4 * 1 * 9 * 36, fmt("depthwise flops %zu != 2592", s.flops));
    }
    {
        Network net; // conv + pool + linear stack, totals by hand
        net.input_shape = {1, 6, 6};
        net.layers = {LayerSpec::conv2d(1, 4, 3, 1, 1), LayerSpec::relu(),
                      LayerSpec::maxpool(2, 2), LayerSpec::flatten(),
                      LayerSpec::linear(36, 2)};
        const ModelStats s = model_stats(net);
        expect(s.params == 40 + 74, fmt("stack params %zu != 114", s.params));
        expect(s.flops == 2592 + 144, fmt("stack flops %zu != 2736", s.flops));
    }

    // Expanded conv unit: params p*m + q*p*k^2 + n*q exactly, flops the same
    // three terms weighted by each factor's output area.
    for (double rate : {2.0, 3.0}) {
        const std::size_t m = 3, n = 5, k = 3, h = 6, pad = 1;
        const std::size_t p = static_cast<std::size_t>(std::ceil(rate * m));
        const std::size_t q = static_cast<std::size_t>(std::ceil(rate * n));

        Network net;
        net.input_shape = {m, h, h};
        net.layers = {LayerSpec::conv2d(m, n, k, 1, pad, 1, false)};
        WeightStore<double> ws = init_weights<double>(net, 77);
        ExpansionPlan plan;
        plan.rate = rate;
        ExpandOutput<double> ex = expand_network(net, ws, plan);

        const std::size_t want_params = p * m + q * p * k * k + n * q;
        const std::size_t got_params = ex.weights.param_count();
        expect(got_params == want_params,
               fmt("rate %g: expanded params %zu != %zu", rate, got_params, want_params));
        expect(expanded_conv_params(net.layers[0], rate) == want_params,
               "expanded_conv_params disagrees with the closed form");

        const std::size_t padded = (h + 2 * pad) * (h + 2 * pad); // 1x1 pre-factor area
        const std::size_t out_area = h * h;                       // stride 1, same shape
        const std::size_t want_flops =
            2 * (p * m * padded + q * p * k * k * out_area + n * q * out_area);
        const std::size_t got_flops = model_stats(ex.net).flops;
        expect(got_flops == want_flops,
               fmt("rate %g: expanded flops %zu != %zu", rate, got_flops, want_flops));
    }
    return "hand arithmetic and closed-form expansion growth match exactly";
}

// ============================================================================
// 8. Serialization fuzz
// ============================================================================

Network fuzz_net(std::mt19937_64& rng) {
    Network net;
    switch (rng() % 4) {
        case 0: {
            const std::size_t f = 1 + rng() % 12, o = 1 + rng() % 8;
            net.input_shape = {f};
            net.layers = {LayerSpec::linear(f, o, rng() % 2 == 0)};
            break;
        }
        case 1: {
            const std::size_t c = 1 + rng() % 3, h = 4 + rng() % 5;
            const std::size_t o = 1 + rng() % 4;
            net.input_shape = {c, h, h};
            net.layers = {LayerSpec::conv2d(c, o, 3, 1, 1, 1, rng() % 2 == 0),
                          LayerSpec::relu()};
            break;
        }
        case 2: {
            const std::size_t c = 1 + rng() % 2, h = 6;
            net.input_shape = {c, h, h};
            net.layers = {LayerSpec::conv2d(c, 2, 3, 1, 1), LayerSpec::relu(),
                          LayerSpec::maxpool(2, 2), LayerSpec::flatten(),
                          LayerSpec::linear(2 * 3 * 3, 1 + rng() % 3)};
            break;
        }
        default: {
            const std::size_t f = 2 + rng() % 6;
            net.input_shape = {f};
            net.layers = {LayerSpec::linear(f, f), LayerSpec::relu(),
                          LayerSpec::linear(f, 2), LayerSpec::softmax()};
            break;
        }
    }
    return net;
}

std::string fuzz_name(std::mt19937_64& rng) {
    static const char alphabet[] =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 _-./\"\\";
    std::string name;
    const std::size_t len = rng() % 13;
    for (std::size_t i = 0; i < len; ++i)
        name.push_back(alphabet[rng() % (sizeof alphabet - 1)]);
    return name;
}

std::string criterion_serialization() {
    std::mt19937_64 rng(0xC8);
    std::size_t corruptions = 0;
    for (std::size_t it = 0; it < 1000; ++it) {
        const Network net = fuzz_net(rng);
        std::vector<unsigned char> bytes;
        if (rng() % 2 == 0) {
            Model<float> m{fuzz_name(rng), net, init_weights<float>(net, rng())};
            if (rng() % 4 == 0) m.expansion = json{{"marker", it}};
            if (rng() % 4 == 0) m.meta = json{{"note", fuzz_name(rng)}};
            bytes = model_to_bytes(m);
        } else {
            Model<double> m{fuzz_name(rng), net, init_weights<double>(net, rng())};
            if (rng() % 4 == 0) m.meta = json{{"note", fuzz_name(rng)}};
            bytes = model_to_bytes(m);
        }

        // Bit-exact round trip.
        const AnyModel back = model_from_bytes(bytes);
        const std::vector<unsigned char> bytes2 = model_to_bytes(back);
        expect(bytes2 == bytes, fmt("iteration %zu: reserialized bytes differ", it));

        // One random corruption must surface as a typed format error.
        std::vector<unsigned char> bad = bytes;
        switch (rng() % 4) {
            case 0: bad[rng() % bad.size()] ^= static_cast<unsigned char>(1u << (rng() % 8)); break;
            case 1: bad.resize(rng() % bad.size()); break;
            case 2: bad.push_back(static_cast<unsigned char>(rng())); break;
            default: {
                const std::size_t at = rng() % bad.size();
                bool changed = false;
                for (std::size_t j = at; j < std::min(bad.size(), at + 4); ++j) {
                    changed |= bad[j] != 0;
                    bad[j] = 0;
                }
                if (!changed) bad[at] = 0xff; // span was already zero; force a change
                break;
            }
        }
        bool caught = false;
        try {
            (void)model_from_bytes(bad);
        } catch (const FormatError&) {
            caught = true;
        }
        expect(caught, fmt("iteration %zu: corrupted container loaded cleanly", it));
        ++corruptions;
    }
    return fmt("1000 bit-exact round trips, %zu corruptions all raised typed errors",
               corruptions);
}

// ============================================================================

struct Criterion {
    int id;
    const char* name;
    std::string (*run)();
};

const Criterion kCriteria[] = {
    {1, "equivalence", criterion_equivalence},
    {2, "round-trip", criterion_round_trip},
    {3, "gradients", criterion_gradients},
    {4, "similarity-loss properties", criterion_similarity_properties},
    {5, "factor invertibility", criterion_factor_rank},
    {6, "ablation ordering", criterion_ablation},
    {7, "stats arithmetic", criterion_stats},
    {8, "serialization fuzz", criterion_serialization},
};

} // namespace

int main(int argc, char** argv) {
    Eigen::setNbThreads(static_cast<int>(thread_budget()));
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--criterion" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--criterion 1..8]\n", argv[0]);
            return 1;
        }
    }

    int failures = 0;
    for (const Criterion& c : kCriteria) {
        if (only != 0 && c.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool pass = true;
        try {
            detail = c.run();
        } catch (const std::exception& e) {
            pass = false;
            detail = e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d %s: %s [%.1fs]\n", pass ? "PASS" : "FAIL", c.id,
                    c.name, detail.c_str(), secs);
        std::fflush(stdout);
        if (!pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
