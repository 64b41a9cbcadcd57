#include "rpk/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace rpk {

// ============================================================================
// Config (de)serialization
// ============================================================================

json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"lr_milestones", c.lr_milestones},
            {"lr_decay", c.lr_decay},
            {"seed", c.seed},
            {"mode", train_mode_name(c.mode)},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
    try {
        TrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.momentum = j.value("momentum", c.momentum);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.lr_milestones = j.value("lr_milestones", c.lr_milestones);
        c.lr_decay = j.value("lr_decay", c.lr_decay);
        c.seed = j.value("seed", c.seed);
        if (j.contains("mode")) c.mode = train_mode_from_name(j.at("mode").get<std::string>());
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad train config: ") + e.what());
    }
}

json prune_config_to_json(const PruneConfig& c) {
    return {{"ratio", c.ratio}, {"protected_layers", c.protected_layers}};
}

PruneConfig prune_config_from_json(const json& j) {
    try {
        PruneConfig c;
        c.ratio = j.value("ratio", c.ratio);
        c.protected_layers = j.value("protected_layers", c.protected_layers);
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad prune config: ") + e.what());
    }
}

json plan_to_json(const ExpansionPlan& p) {
    return {{"rate", p.rate},         {"expand_fc", p.expand_fc},
            {"fc_depth", p.fc_depth}, {"fc_widths", p.fc_widths},
            {"fc_theta", p.fc_theta}, {"seed", p.seed}};
}

ExpansionPlan plan_from_json(const json& j) {
    try {
        ExpansionPlan p;
        p.rate = j.value("rate", p.rate);
        p.expand_fc = j.value("expand_fc", p.expand_fc);
        p.fc_depth = j.value("fc_depth", p.fc_depth);
        p.fc_widths = j.value("fc_widths", p.fc_widths);
        p.fc_theta = j.value("fc_theta", p.fc_theta);
        p.seed = j.value("seed", p.seed);
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad expansion plan: ") + e.what());
    }
}

json synthetic_to_json(const SyntheticSpec& s) {
    return {{"classes", s.classes}, {"per_class", s.per_class}, {"channels", s.channels},
            {"height", s.height},   {"width", s.width},         {"noise", s.noise},
            {"shift", s.shift}};
}

SyntheticSpec synthetic_from_json(const json& j) {
    try {
        SyntheticSpec s;
        s.classes = j.value("classes", s.classes);
        s.per_class = j.value("per_class", s.per_class);
        s.channels = j.value("channels", s.channels);
        s.height = j.value("height", s.height);
        s.width = j.value("width", s.width);
        s.noise = j.value("noise", s.noise);
        s.shift = j.value("shift", s.shift);
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad synthetic spec: ") + e.what());
    }
}

json data_spec_to_json(const DataSpec& d) {
    return {{"kind", d.kind},
            {"synthetic", synthetic_to_json(d.synthetic)},
            {"seed", d.seed},
            {"train_fraction", d.train_fraction},
            {"images", d.images},
            {"labels", d.labels}};
}

DataSpec data_spec_from_json(const json& j) {
    try {
        DataSpec d;
        d.kind = j.value("kind", d.kind);
        if (j.contains("synthetic")) d.synthetic = synthetic_from_json(j.at("synthetic"));
        d.seed = j.value("seed", d.seed);
        d.train_fraction = j.value("train_fraction", d.train_fraction);
        d.images = j.value("images", d.images);
        d.labels = j.value("labels", d.labels);
        if (d.kind != "synthetic" && d.kind != "idx")
            throw FormatError("unknown data kind: " + d.kind);
        return d;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad data spec: ") + e.what());
    }
}

Dataset<float> load_dataset(const DataSpec& spec) {
    if (spec.kind == "idx") {
        if (spec.images.empty() || spec.labels.empty())
            throw Error("idx data spec needs both image and label paths");
        return load_idx_dataset<float>(spec.images, spec.labels);
    }
    return gen_synthetic<float>(spec.synthetic, spec.seed);
}

template <class S>
std::pair<Dataset<S>, Dataset<S>> split_dataset(const Dataset<S>& d, double train_fraction) {
    validate_dataset(d);
    const double f = std::min(1.0, std::max(0.0, train_fraction));
    const std::size_t n = d.size();
    const std::size_t n_train = static_cast<std::size_t>(std::lround(f * static_cast<double>(n)));
    std::vector<std::size_t> head(n_train), tail(n - n_train);
    std::iota(head.begin(), head.end(), 0);
    std::iota(tail.begin(), tail.end(), n_train);
    Dataset<S> train, test;
    if (!head.empty()) train.x = gather_rows(d.x, head);
    if (!tail.empty()) test.x = gather_rows(d.x, tail);
    for (std::size_t i : head) train.labels.push_back(d.labels[i]);
    for (std::size_t i : tail) test.labels.push_back(d.labels[i]);
    return {std::move(train), std::move(test)};
}

template std::pair<Dataset<float>, Dataset<float>> split_dataset(const Dataset<float>&, double);
template std::pair<Dataset<double>, Dataset<double>> split_dataset(const Dataset<double>&,
                                                                   double);

std::vector<LayerPair> default_pairs(const ExpansionRecord& record) {
    std::vector<LayerPair> pairs;
    for (const ExpandedUnit& u : record.units)
        pairs.push_back({u.original_index, u.first_factor + u.factor_specs.size() - 1});
    return pairs;
}

// ============================================================================
// File helpers
// ============================================================================

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void save_json_file(const std::string& path, const json& j) {
    const auto dir = std::filesystem::path(path).parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

unsigned thread_budget() {
    if (const char* env = std::getenv("RPK_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// ============================================================================
// Stages
// ============================================================================

namespace {

Model<float> as_float_model(AnyModel any) {
    if (std::holds_alternative<Model<float>>(any))
        return std::get<Model<float>>(std::move(any));
    return model_cast<float>(std::get<Model<double>>(any));
}

std::string ratio_key(double ratio) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "r%g", ratio);
    return buf;
}

// Forward a double batch through a model in its native dtype; result as double.
std::vector<Tensor<double>> native_forward(const AnyModel& any, const Tensor<double>& input) {
    return std::visit(
        [&](const auto& m) {
            using S = typename std::decay_t<decltype(m)>::scalar_type;
            std::vector<Tensor<S>> acts = forward(m.net, m.weights, cast<S>(input));
            std::vector<Tensor<double>> out;
            for (auto& a : acts) out.push_back(cast<double>(a));
            return out;
        },
        any);
}

double batch_row_rel_err(const Tensor<double>& a, const Tensor<double>& ref, std::size_t row,
                         std::size_t row_size) {
    double num = 0, den = 0;
    for (std::size_t i = row * row_size; i < (row + 1) * row_size; ++i) {
        num = std::max(num, std::abs(a.data()[i] - ref.data()[i]));
        den = std::max(den, std::abs(ref.data()[i]));
    }
    return num / (1.0 + den);
}

} // namespace

json prune_stage(const std::string& in, const std::string& out, const PruneConfig& cfg) {
    AnyModel any = load_model(in);
    return std::visit(
        [&](auto& m) {
            auto pr = prune_channels(m.net, m.weights, cfg);
            using S = typename std::decay_t<decltype(m)>::scalar_type;
            Model<S> pruned{m.name, pr.net, std::move(pr.weights), json(), json()};
            pruned.meta = {{"stage", "prune"}, {"ratio", cfg.ratio}};
            save_model(out, pruned);
            json layers = json::array();
            for (const auto& lr : pr.record.layers)
                layers.push_back({{"layer", lr.layer},
                                  {"out_before", lr.out_before},
                                  {"out_after", lr.out_after},
                                  {"kept", lr.kept}});
            return json{{"in", in},
                        {"out", out},
                        {"ratio", cfg.ratio},
                        {"params_before", pr.record.params_before},
                        {"params_after", pr.record.params_after},
                        {"removed_fraction", pr.record.removed_fraction()},
                        {"layers", layers}};
        },
        any);
}

json expand_stage(const std::string& in, const std::string& out, const ExpansionPlan& plan) {
    AnyModel any = load_model(in);
    return std::visit(
        [&](auto& m) {
            using S = typename std::decay_t<decltype(m)>::scalar_type;
            ExpandOutput<S> ex = expand_network(m.net, m.weights, plan);
            const std::size_t before = m.weights.param_count();
            const std::size_t after = ex.weights.param_count();
            Model<S> expanded{m.name, ex.net, std::move(ex.weights),
                              expansion_to_json(ex.record), json{{"stage", "expand"}}};
            save_model(out, expanded);
            json units = json::array();
            for (const auto& u : ex.record.units)
                units.push_back({{"original_index", u.original_index},
                                 {"kind", unit_kind_name(u.kind)},
                                 {"first_factor", u.first_factor},
                                 {"factors", u.factor_specs.size()}});
            return json{{"in", in},
                        {"out", out},
                        {"rate", plan.rate},
                        {"params_before", before},
                        {"params_after", after},
                        {"units", units}};
        },
        any);
}

json contract_stage(const std::string& in, const std::string& out) {
    AnyModel any = load_model(in);
    return std::visit(
        [&](auto& m) {
            using S = typename std::decay_t<decltype(m)>::scalar_type;
            if (m.expansion.is_null())
                throw Error(in + " has no expansion metadata; run expand before contract");
            ExpansionRecord record = expansion_from_json(m.expansion);
            ContractOutput<S> co = contract_network(m.net, m.weights, record);
            const std::size_t before = m.weights.param_count();
            const std::size_t after = co.weights.param_count();
            Model<S> compact{m.name, co.net, std::move(co.weights), json(),
                             json{{"stage", "contract"}}};
            save_model(out, compact);
            return json{{"in", in},
                        {"out", out},
                        {"params_before", before},
                        {"params_after", after},
                        {"units", record.units.size()}};
        },
        any);
}

json verify_stage(const std::string& ref, const std::string& other, double tol,
                  std::size_t n_inputs, std::uint64_t seed) {
    if (n_inputs == 0) throw Error("verify needs at least one input");
    AnyModel a = load_model(ref);
    AnyModel b = load_model(other);
    const Network& na = std::visit([](const auto& m) -> const Network& { return m.net; }, a);
    const Network& nb = std::visit([](const auto& m) -> const Network& { return m.net; }, b);

    json summary{{"ref", ref},     {"other", other}, {"tol", tol},
                 {"inputs", n_inputs}, {"seed", seed}};
    if (na.input_shape != nb.input_shape) {
        summary["pass"] = false;
        summary["reason"] = "input shapes differ: " + shape_str(na.input_shape) + " vs " +
                            shape_str(nb.input_shape);
        return summary;
    }

    Shape in_shape = na.input_shape;
    in_shape.insert(in_shape.begin(), n_inputs);
    Tensor<double> input(in_shape);
    std::mt19937_64 rng(seed);
    fill_uniform(input, rng, -1.0, 1.0);

    std::vector<Tensor<double>> acts_a = native_forward(a, input);
    std::vector<Tensor<double>> acts_b = native_forward(b, input);
    const Tensor<double>& ya = acts_a.back();
    const Tensor<double>& yb = acts_b.back();
    if (ya.shape() != yb.shape()) {
        summary["pass"] = false;
        summary["reason"] = "output shapes differ: " + shape_str(ya.shape()) + " vs " +
                            shape_str(yb.shape());
        return summary;
    }

    const std::size_t row = ya.size() / n_inputs;
    double max_err = 0;
    json per_input = json::array();
    for (std::size_t i = 0; i < n_inputs; ++i) {
        const double e = batch_row_rel_err(yb, ya, i, row);
        per_input.push_back(e);
        max_err = std::max(max_err, e);
    }
    summary["max_rel_err"] = max_err;
    summary["per_input"] = per_input;

    // Layer-by-layer table when the two models share a layer skeleton.
    bool same_structure = na.layers.size() == nb.layers.size();
    for (std::size_t i = 0; same_structure && i < na.layers.size(); ++i)
        same_structure = acts_a[i].shape() == acts_b[i].shape();
    if (same_structure) {
        json per_layer = json::array();
        for (std::size_t i = 0; i < na.layers.size(); ++i) {
            double layer_err = 0;
            for (std::size_t r = 0; r < n_inputs; ++r)
                layer_err = std::max(layer_err, batch_row_rel_err(acts_b[i], acts_a[i], r,
                                                                  acts_a[i].size() / n_inputs));
            per_layer.push_back({{"layer", i},
                                 {"kind", layer_kind_name(na.layers[i].kind)},
                                 {"max_rel_err", layer_err}});
        }
        summary["per_layer"] = per_layer;
    }

    summary["pass"] = max_err <= tol;
    return summary;
}

json stats_stage(const std::string& in) {
    AnyModel any = load_model(in);
    const Network& net = std::visit([](const auto& m) -> const Network& { return m.net; }, any);
    ModelStats s = model_stats(net);
    json layers = json::array();
    for (const LayerStats& l : s.layers)
        layers.push_back({{"layer", l.index},
                          {"kind", l.kind},
                          {"out_shape", l.out_shape},
                          {"params", l.params},
                          {"flops", l.flops}});
    return json{{"in", in},
                {"dtype", dtype_name(model_dtype(any))},
                {"params", s.params},
                {"flops", s.flops},
                {"note", s.note},
                {"layers", layers}};
}

json eval_stage(const std::string& in, const DataSpec& data) {
    AnyModel any = load_model(in);
    Dataset<float> full = load_dataset(data);
    auto [train, test] = split_dataset(full, data.train_fraction);
    return std::visit(
        [&](const auto& m) {
            using S = typename std::decay_t<decltype(m)>::scalar_type;
            Dataset<S> all{cast<S>(full.x), full.labels};
            json summary{{"in", in},
                         {"samples", full.size()},
                         {"accuracy", accuracy(m.net, m.weights, all)}};
            if (train.size() > 0) {
                Dataset<S> d{cast<S>(train.x), train.labels};
                summary["train_accuracy"] = accuracy(m.net, m.weights, d);
                summary["train_samples"] = train.size();
            }
            if (test.size() > 0) {
                Dataset<S> d{cast<S>(test.x), test.labels};
                summary["test_accuracy"] = accuracy(m.net, m.weights, d);
                summary["test_samples"] = test.size();
            }
            return summary;
        },
        any);
}

json finetune_stage(const std::string& in, const std::string& teacher, const json& config,
                    const std::string& out) {
    TrainConfig tc = train_config_from_json(config.value("train", json::object()));
    DataSpec ds = data_spec_from_json(config.value("data", json::object()));

    // Student: an existing model, or a fresh network from the config.
    Model<float> student;
    if (!in.empty()) {
        student = as_float_model(load_model(in));
    } else {
        if (!config.contains("network"))
            throw Error("finetune needs an input model or a \"network\" config entry");
        student.net = network_from_json(config.at("network"));
        student.name = student.net.name.empty() ? "model" : student.net.name;
        student.weights = init_weights<float>(student.net, mix_seed(tc.seed, 0xA110));
    }
    if (tc.mode == TrainMode::TrainFromScratch)
        student.weights = init_weights<float>(student.net, mix_seed(tc.seed, 0xA110));

    Dataset<float> full = load_dataset(ds);
    auto [train, test] = split_dataset(full, ds.train_fraction);
    if (train.size() == 0) throw Error("finetune: train split is empty");

    // Distillation wiring.
    Model<float> teacher_model;
    DistillConfig<float> dc;
    const json distill_cfg = config.value("distill", json::object());
    dc.gamma = distill_cfg.value("gamma", dc.gamma);
    const DistillConfig<float>* distill = nullptr;
    if (!teacher.empty()) {
        teacher_model = as_float_model(load_model(teacher));
        if (distill_cfg.contains("pairs")) {
            for (const auto& p : distill_cfg.at("pairs"))
                dc.pairs.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
        } else if (!student.expansion.is_null()) {
            dc.pairs = default_pairs(expansion_from_json(student.expansion));
        }
        if (dc.pairs.empty())
            throw Error("distillation needs activation pairs: give distill.pairs or an "
                        "expanded student with factor metadata");
        dc.teacher_net = &teacher_model.net;
        dc.teacher_weights = &teacher_model.weights;
        distill = &dc;
    }

    if (tc.step_csv_path.empty()) tc.step_csv_path = out + ".steps.csv";
    if (tc.epoch_csv_path.empty()) tc.epoch_csv_path = out + ".epochs.csv";
    const auto out_dir = std::filesystem::path(out).parent_path();
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    TrainResult<float> r = finetune(student.net, student.weights, train, tc, distill,
                                    test.size() > 0 ? &test : nullptr);

    Model<float> trained{student.name, student.net, std::move(r.weights), student.expansion,
                         json{{"stage", "finetune"}, {"mode", train_mode_name(tc.mode)}}};
    save_model(out, trained);

    json resolved{{"train", train_config_to_json(tc)},
                  {"data", data_spec_to_json(ds)},
                  {"network", network_to_json(student.net)}};
    if (distill) {
        json pairs = json::array();
        for (const auto& p : dc.pairs) pairs.push_back({p.teacher, p.student});
        resolved["distill"] = {{"gamma", dc.gamma}, {"pairs", pairs}, {"teacher", teacher}};
    }
    save_json_file(out + ".config.json", resolved);

    json summary{{"in", in},
                 {"out", out},
                 {"mode", train_mode_name(tc.mode)},
                 {"epochs", r.epochs.size()},
                 {"steps", r.steps.size()},
                 {"distilled", distill != nullptr}};
    if (!r.epochs.empty()) {
        const EpochMetrics& last = r.epochs.back();
        summary["final"] = {{"L_task", last.task},
                            {"L_SP", last.sp},
                            {"total", last.total},
                            {"train_accuracy", last.train_accuracy},
                            {"lr", last.lr}};
        if (!std::isnan(last.val_accuracy)) summary["final"]["val_accuracy"] = last.val_accuracy;
    }
    return summary;
}

// ============================================================================
// Ablation
// ============================================================================

json ablation_to_json(const AblationConfig& c) {
    return {{"network", network_to_json(c.net)},
            {"data", data_spec_to_json(c.data)},
            {"ratios", c.ratios},
            {"seeds", c.seeds},
            {"teacher_train", train_config_to_json(c.teacher_train)},
            {"tune", train_config_to_json(c.tune)},
            {"expand", plan_to_json(c.plan)},
            {"gamma", c.gamma}};
}

AblationConfig ablation_from_json(const json& j) {
    try {
        AblationConfig c;
        c.net = network_from_json(j.at("network"));
        if (j.contains("data")) c.data = data_spec_from_json(j.at("data"));
        c.ratios = j.value("ratios", c.ratios);
        c.seeds = j.value("seeds", c.seeds);
        if (j.contains("teacher_train"))
            c.teacher_train = train_config_from_json(j.at("teacher_train"));
        if (j.contains("tune")) c.tune = train_config_from_json(j.at("tune"));
        if (j.contains("expand")) c.plan = plan_from_json(j.at("expand"));
        c.gamma = j.value("gamma", c.gamma);
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad ablation config: ") + e.what());
    }
}

namespace {

constexpr TrainMode kAblationModes[] = {TrainMode::TrainFromScratch,
                                        TrainMode::VanillaFinetune,
                                        TrainMode::OverparamFinetune,
                                        TrainMode::OverparamFinetuneKd};

struct CellResult {
    double accuracy = 0;
    double train_accuracy = 0;
    std::size_t params = 0;
};

// One (mode, ratio, seed) cell: teacher and pruned result are shared per
// (ratio, seed) by the caller; this runs the mode-specific branch.
CellResult run_mode(const AblationConfig& cfg, TrainMode mode, const Network& teacher_net,
                    const WeightStore<float>& teacher_ws, const PruneResult<float>& pruned,
                    const Dataset<float>& train, const Dataset<float>& test,
                    std::uint64_t seed) {
    TrainConfig ft = cfg.tune;
    ft.mode = mode;
    ft.seed = mix_seed(seed, 3); // same batch order for every mode

    Network eval_net;
    WeightStore<float> eval_ws;

    switch (mode) {
        case TrainMode::TrainFromScratch: {
            WeightStore<float> w0 = init_weights<float>(pruned.net, mix_seed(seed, 4));
            eval_net = pruned.net;
            eval_ws = finetune(pruned.net, std::move(w0), train, ft).weights;
            break;
        }
        case TrainMode::VanillaFinetune: {
            eval_net = pruned.net;
            eval_ws = finetune(pruned.net, pruned.weights, train, ft).weights;
            break;
        }
        case TrainMode::OverparamFinetune:
        case TrainMode::OverparamFinetuneKd: {
            ExpansionPlan plan = cfg.plan;
            plan.seed = mix_seed(seed, 5);
            ExpandOutput<float> ex = expand_network(pruned.net, pruned.weights, plan);
            DistillConfig<float> dc;
            const DistillConfig<float>* distill = nullptr;
            if (mode == TrainMode::OverparamFinetuneKd) {
                dc.pairs = default_pairs(ex.record);
                dc.gamma = cfg.gamma;
                dc.teacher_net = &teacher_net;
                dc.teacher_weights = &teacher_ws;
                distill = &dc;
            }
            TrainResult<float> r = finetune(ex.net, std::move(ex.weights), train, ft, distill);
            ContractOutput<float> co = contract_network(ex.net, r.weights, ex.record);
            eval_net = std::move(co.net);
            eval_ws = std::move(co.weights);
            break;
        }
    }
    CellResult cell;
    cell.accuracy = accuracy(eval_net, eval_ws, test);
    cell.train_accuracy = accuracy(eval_net, eval_ws, train);
    cell.params = eval_ws.param_count();
    return cell;
}

json mean_std(const std::vector<double>& xs) {
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double std_dev =
        xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return {{"mean", mean}, {"std", std_dev}, {"accs", xs}};
}

} // namespace

json run_ablation(const AblationConfig& cfg, const std::string& out_dir) {
    if (cfg.seeds.empty() || cfg.ratios.empty())
        throw Error("ablation needs at least one seed and one ratio");
    std::filesystem::create_directories(out_dir + "/cells");
    save_json_file(out_dir + "/config.json", ablation_to_json(cfg));

    Dataset<float> full = load_dataset(cfg.data);
    auto [train, test] = split_dataset(full, cfg.data.train_fraction);
    if (train.size() == 0 || test.size() == 0)
        throw Error("ablation needs non-empty train and test splits");

    // results[mode][ratio_key] -> per-seed accuracies, seed order
    std::map<std::string, std::map<std::string, std::vector<double>>> accs;
    std::map<std::string, std::vector<double>> teacher_accs;

    for (double ratio : cfg.ratios) {
        const std::string rk = ratio_key(ratio);
        for (std::uint64_t seed : cfg.seeds) {
            TrainConfig tc = cfg.teacher_train;
            tc.mode = TrainMode::TrainFromScratch;
            tc.seed = mix_seed(seed, 1);
            WeightStore<float> w0 = init_weights<float>(cfg.net, mix_seed(seed, 2));
            TrainResult<float> teacher = finetune(cfg.net, std::move(w0), train, tc);
            const double teacher_acc = accuracy(cfg.net, teacher.weights, test);
            teacher_accs[rk].push_back(teacher_acc);

            PruneConfig pc;
            pc.ratio = ratio;
            PruneResult<float> pruned = prune_channels(cfg.net, teacher.weights, pc);

            for (TrainMode mode : kAblationModes) {
                CellResult cell = run_mode(cfg, mode, cfg.net, teacher.weights, pruned,
                                           train, test, seed);
                accs[train_mode_name(mode)][rk].push_back(cell.accuracy);
                save_json_file(out_dir + "/cells/" + train_mode_name(mode) + "_" + rk + "_s" +
                                   std::to_string(seed) + ".json",
                               json{{"mode", train_mode_name(mode)},
                                    {"ratio", ratio},
                                    {"seed", seed},
                                    {"accuracy", cell.accuracy},
                                    {"train_accuracy", cell.train_accuracy},
                                    {"params", cell.params},
                                    {"teacher_accuracy", teacher_acc}});
            }
        }
    }

    json report;
    report["ratios"] = cfg.ratios;
    report["seeds"] = cfg.seeds;
    json modes = json::array();
    for (TrainMode m : kAblationModes) modes.push_back(train_mode_name(m));
    report["modes"] = modes;
    for (const auto& [rk, xs] : teacher_accs) report["teacher"][rk] = mean_std(xs);
    for (const auto& [mode, per_ratio] : accs)
        for (const auto& [rk, xs] : per_ratio) report["results"][mode][rk] = mean_std(xs);

    save_json_file(out_dir + "/report.json", report);
    std::ofstream table(out_dir + "/report.txt", std::ios::trunc);
    table << format_ablation_table(report);
    return report;
}

std::string format_ablation_table(const json& report) {
    std::ostringstream out;
    std::vector<std::string> ratio_keys;
    for (double r : report.at("ratios").get<std::vector<double>>())
        ratio_keys.push_back(ratio_key(r));

    out << "accuracy (mean +- std over " << report.at("seeds").size() << " seeds)\n";
    out << std::left << std::setw(24) << "mode";
    for (const auto& rk : ratio_keys) out << std::setw(20) << ("ratio " + rk.substr(1));
    out << "\n";

    auto row = [&](const std::string& label, const json& per_ratio) {
        out << std::left << std::setw(24) << label;
        for (const auto& rk : ratio_keys) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4f +- %.4f",
                          per_ratio.at(rk).at("mean").get<double>(),
                          per_ratio.at(rk).at("std").get<double>());
            out << std::setw(20) << buf;
        }
        out << "\n";
    };
    row("teacher", report.at("teacher"));
    for (const auto& mode : report.at("modes"))
        row(mode.get<std::string>(), report.at("results").at(mode.get<std::string>()));
    return out.str();
}

} // namespace rpk
