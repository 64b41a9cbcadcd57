#pragma once
#include <string>
#include <utility>
#include <vector>

#include "rpk/data.hpp"
#include "rpk/prune.hpp"
#include "rpk/reparam.hpp"
#include "rpk/serialize.hpp"
#include "rpk/stats.hpp"
#include "rpk/train.hpp"

namespace rpk {

// ============================================================================
// Pipeline stages and the ablation runner
// ============================================================================
//
// Each stage reads/writes `.rpk` containers on disk and returns a JSON
// summary. The stages chain prune -> expand -> finetune -> contract -> eval,
// and any prefix of that order is runnable on its own. All outputs are
// deterministic: no timestamps, sorted JSON keys, seeded randomness only.

// ----------------------------------------------------------------------------
// Config (de)serialization — one JSON dialect shared with the `.rpk` header.
// Parsers start from default-constructed configs and apply present keys only.
// ----------------------------------------------------------------------------

json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j);

json prune_config_to_json(const PruneConfig& c);
PruneConfig prune_config_from_json(const json& j);

json plan_to_json(const ExpansionPlan& p);
ExpansionPlan plan_from_json(const json& j);

json synthetic_to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_from_json(const json& j);

// Where samples come from: a seeded synthetic task or a pair of IDX files.
struct DataSpec {
    std::string kind = "synthetic"; // "synthetic" | "idx"
    SyntheticSpec synthetic;
    std::uint64_t seed = 0;
    double train_fraction = 0.8; // head of the sample list is the train split
    std::string images;          // idx only
    std::string labels;          // idx only
};

json data_spec_to_json(const DataSpec& d);
DataSpec data_spec_from_json(const json& j);

Dataset<float> load_dataset(const DataSpec& spec);

// Head/tail split along the sample axis. The synthetic generator interleaves
// classes, so any split point at a multiple of `classes` stays balanced.
template <class S>
std::pair<Dataset<S>, Dataset<S>> split_dataset(const Dataset<S>& d, double train_fraction);

// One similarity pair per expanded unit: the compact layer's activation in
// the (architecturally identical) teacher vs the unit's last factor in the
// expanded student.
std::vector<LayerPair> default_pairs(const ExpansionRecord& record);

// ----------------------------------------------------------------------------
// File helpers
// ----------------------------------------------------------------------------

json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const json& j);

// RPK_THREADS caps internal parallelism; unset or 0 means hardware count.
unsigned thread_budget();

// ----------------------------------------------------------------------------
// Stages
// ----------------------------------------------------------------------------

json prune_stage(const std::string& in, const std::string& out, const PruneConfig& cfg);

json expand_stage(const std::string& in, const std::string& out, const ExpansionPlan& plan);

// Requires expansion metadata written by expand_stage.
json contract_stage(const std::string& in, const std::string& out);

// Forward-equivalence check of two models on seeded inputs; "pass" reflects
// max relative error against `tol`. Adds a per-layer error table when both
// models share a layer structure.
json verify_stage(const std::string& ref, const std::string& other, double tol,
                  std::size_t n_inputs, std::uint64_t seed);

json stats_stage(const std::string& in);

json eval_stage(const std::string& in, const DataSpec& data);

// Fine-tune `in` (or a freshly initialized config["network"] when `in` is
// empty) on config["data"] per config["train"]; distillation is active when
// `teacher` is a model path. Writes the model to `out`, step/epoch CSVs and
// the fully resolved config next to it.
json finetune_stage(const std::string& in, const std::string& teacher, const json& config,
                    const std::string& out);

// ----------------------------------------------------------------------------
// Ablation
// ----------------------------------------------------------------------------

struct AblationConfig {
    Network net; // teacher architecture
    DataSpec data;
    std::vector<double> ratios{0.8};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    TrainConfig teacher_train; // schedule for pretraining the teacher
    TrainConfig tune;          // schedule shared by all four modes
    ExpansionPlan plan;
    double gamma = 3000.0;
};

json ablation_to_json(const AblationConfig& c);
AblationConfig ablation_from_json(const json& j);

// Runs {train_from_scratch, vanilla_finetune, overparam_finetune,
// overparam_finetune_kd} over ratios x seeds. Per-cell JSON lands in
// out_dir/cells as soon as a cell finishes (partial results survive a crash);
// the deterministic merge writes report.json and report.txt.
json run_ablation(const AblationConfig& cfg, const std::string& out_dir);

std::string format_ablation_table(const json& report);

} // namespace rpk
