#pragma once
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rpk/autodiff.hpp"
#include "rpk/distill.hpp"
#include "rpk/optim.hpp"
#include "rpk/serialize.hpp"

namespace rpk {

// ============================================================================
// Fine-tuning loop
// ============================================================================

enum class TrainMode { VanillaFinetune, OverparamFinetune, OverparamFinetuneKd, TrainFromScratch };

inline const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::VanillaFinetune: return "vanilla_finetune";
        case TrainMode::OverparamFinetune: return "overparam_finetune";
        case TrainMode::OverparamFinetuneKd: return "overparam_finetune_kd";
        case TrainMode::TrainFromScratch: return "train_from_scratch";
    }
    throw Error("unknown train mode");
}

inline TrainMode train_mode_from_name(const std::string& name) {
    for (TrainMode m : {TrainMode::VanillaFinetune, TrainMode::OverparamFinetune,
                        TrainMode::OverparamFinetuneKd, TrainMode::TrainFromScratch})
        if (name == train_mode_name(m)) return m;
    throw Error("unknown train mode: " + name);
}

template <class S>
struct Dataset {
    Tensor<S> x;                     // samples along dim 0
    std::vector<std::size_t> labels; // one label per sample

    std::size_t size() const { return labels.size(); }
};

template <class S>
void validate_dataset(const Dataset<S>& d) {
    if (d.x.rank() == 0 || d.x.dim(0) != d.labels.size())
        throw ShapeError("dataset has " + std::to_string(d.labels.size()) + " labels for " +
                         (d.x.rank() == 0 ? std::string("empty tensor")
                                          : std::to_string(d.x.dim(0)) + " samples"));
}

// Rows of `x` along dim 0, in the given order.
template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::size_t>& idx) {
    Shape out_shape = x.shape();
    out_shape[0] = idx.size();
    Tensor<S> out(out_shape);
    const std::size_t row = x.dim(0) == 0 ? 0 : x.size() / x.dim(0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.dim(0))
            throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of range");
        std::copy(x.data() + idx[i] * row, x.data() + (idx[i] + 1) * row, out.data() + i * row);
    }
    return out;
}

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::vector<std::size_t> lr_milestones = {15, 25};
    double lr_decay = 0.1;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::VanillaFinetune;

    // Optional logging / checkpointing sinks; empty paths disable them.
    std::string step_csv_path;
    std::string epoch_csv_path;
    std::size_t checkpoint_every = 0; // epochs; 0 disables
    std::string checkpoint_dir;
};

struct StepMetrics {
    std::size_t epoch = 0;
    std::size_t step = 0; // global step index
    double task = 0, sp = 0, total = 0, lr = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double task = 0, sp = 0, total = 0; // batch-size-weighted means
    double train_accuracy = 0;
    double val_accuracy = std::nan(""); // nan when no validation set is given
    double lr = 0;
};

template <class S>
struct TrainResult {
    WeightStore<S> weights;
    std::vector<StepMetrics> steps;
    std::vector<EpochMetrics> epochs;
};

// Fraction of samples whose argmax logit matches the label.
template <class S>
double accuracy(const Network& net, const WeightStore<S>& ws, const Dataset<S>& data,
                std::size_t eval_batch = 128) {
    validate_dataset(data);
    if (data.size() == 0) throw ShapeError("accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t start = 0; start < data.size(); start += eval_batch) {
        const std::size_t stop = std::min(data.size(), start + eval_batch);
        std::vector<std::size_t> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor<S> logits = predict(net, ws, gather_rows(data.x, idx));
        if (logits.rank() != 2)
            throw ShapeError("accuracy: network output has rank " +
                             std::to_string(logits.rank()) + ", expected 2");
        auto lm = logits.mat();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Eigen::Index best = 0;
            lm.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
            if (static_cast<std::size_t>(best) == data.labels[idx[i]]) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Forward + loss + reverse walk for one batch. The similarity term is active
// only when `distill` is present with a non-empty pair set and gamma != 0;
// the gamma == 0 path produces gradients bit-identical to no distillation.
template <class S>
std::pair<LossParts, GradStore<S>> loss_and_grad(const Network& net, const WeightStore<S>& ws,
                                                 const Tensor<S>& x,
                                                 const std::vector<std::size_t>& labels,
                                                 const DistillConfig<S>* distill = nullptr) {
    if (!net.layers.empty() && net.layers.back().kind == LayerKind::Softmax)
        throw Error("cross-entropy expects logits; remove the trailing softmax layer "
                    "before training");
    std::vector<Tensor<S>> acts = forward(net, ws, x);
    const Tensor<S>& logits = acts.back();

    LossParts parts;
    parts.task = ce_loss(logits, labels);
    Tensor<S> out_grad = ce_grad(logits, labels);

    std::vector<std::pair<std::size_t, Tensor<S>>> inject;
    const bool kd = distill && !distill->pairs.empty() && distill->gamma != 0.0;
    if (kd) {
        if (!distill->teacher_net || !distill->teacher_weights)
            throw Error("distillation config has activation pairs but no teacher");
        std::vector<Tensor<S>> teacher_acts =
            forward(*distill->teacher_net, *distill->teacher_weights, x);
        for (const LayerPair& p : distill->pairs) {
            if (p.teacher >= teacher_acts.size() || p.student >= acts.size())
                throw ShapeError("activation pair (" + std::to_string(p.teacher) + ", " +
                                 std::to_string(p.student) + ") out of range");
            Tensor<S> gt = similarity_matrix(teacher_acts[p.teacher]);
            Tensor<S> gs = similarity_matrix(acts[p.student]);
            parts.sp += sp_loss_from_grams(gt, gs);
            Tensor<S> g = sp_loss_grad(acts[p.student], gt);
            const S gamma = static_cast<S>(distill->gamma);
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= gamma;
            inject.emplace_back(p.student, std::move(g));
        }
    }
    parts.total = parts.task + (distill ? distill->gamma : 0.0) * parts.sp;

    Backprop<S> bp = backward(net, ws, x, acts, std::move(out_grad), inject);
    return {parts, std::move(bp.grads)};
}

namespace detail {

inline void csv_open(std::ofstream& out, const std::string& path, const char* header) {
    if (path.empty()) return;
    out.open(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << header << "\n";
}

} // namespace detail

// Run the epoch loop: seeded shuffling, milestone-decayed SGD, optional
// similarity distillation, per-step and per-epoch metrics, optional CSV logs
// and periodic checkpoints. Fully deterministic given (seed, config, data).
template <class S>
TrainResult<S> finetune(const Network& net, WeightStore<S> ws, const Dataset<S>& data,
                        const TrainConfig& cfg, const DistillConfig<S>* distill = nullptr,
                        const Dataset<S>* val = nullptr) {
    validate_weights(net, ws);
    TrainResult<S> out;
    if (cfg.epochs == 0) {
        out.weights = std::move(ws);
        return out;
    }
    validate_dataset(data);
    if (data.size() == 0) throw ShapeError("finetune: empty dataset");
    if (val) validate_dataset(*val);
    if (cfg.batch_size == 0) throw Error("finetune: batch_size must be positive");
    const bool kd = distill && !distill->pairs.empty() && distill->gamma != 0.0;
    if (kd && cfg.batch_size < 2)
        throw Error("finetune: similarity distillation needs batch_size >= 2");

    std::ofstream step_csv, epoch_csv;
    detail::csv_open(step_csv, cfg.step_csv_path, "step,L_task,L_SP,total,lr");
    detail::csv_open(epoch_csv, cfg.epoch_csv_path,
                     "epoch,L_task,L_SP,total,train_acc,val_acc,lr");

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    SgdState<S> state;
    std::size_t global_step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = scheduled_lr(cfg.lr, cfg.lr_decay, cfg.lr_milestones, epoch);
        const SgdConfig sgd{lr, cfg.momentum, cfg.weight_decay};
        std::mt19937_64 rng(mix_seed(cfg.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double sum_task = 0, sum_sp = 0, sum_total = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            const std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
            Tensor<S> xb = gather_rows(data.x, idx);
            std::vector<std::size_t> yb(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = data.labels[idx[i]];

            LossParts parts;
            GradStore<S> grads;
            try {
                std::tie(parts, grads) = loss_and_grad(net, ws, xb, yb, distill);
                if (!std::isfinite(parts.total))
                    throw NumericError("non-finite loss");
                sgd_step(ws, grads, state, sgd);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(global_step) + ": " + e.what());
            }

            out.steps.push_back({epoch, global_step, parts.task, parts.sp, parts.total, lr});
            if (step_csv)
                step_csv << global_step << "," << parts.task << "," << parts.sp << ","
                         << parts.total << "," << lr << "\n";
            const double w = static_cast<double>(idx.size());
            sum_task += w * parts.task;
            sum_sp += w * parts.sp;
            sum_total += w * parts.total;
            ++global_step;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.task = sum_task / static_cast<double>(data.size());
        em.sp = sum_sp / static_cast<double>(data.size());
        em.total = sum_total / static_cast<double>(data.size());
        em.train_accuracy = accuracy(net, ws, data);
        if (val) em.val_accuracy = accuracy(net, ws, *val);
        em.lr = lr;
        out.epochs.push_back(em);
        if (epoch_csv)
            epoch_csv << em.epoch << "," << em.task << "," << em.sp << "," << em.total << ","
                      << em.train_accuracy << "," << em.val_accuracy << "," << em.lr << "\n";

        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
            (epoch + 1) % cfg.checkpoint_every == 0) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            Model<S> ckpt{net.name, net, ws, {}, {}};
            save_model(cfg.checkpoint_dir + "/checkpoint_epoch_" + std::to_string(epoch + 1) +
                           ".rpk",
                       ckpt);
        }
    }
    out.weights = std::move(ws);
    return out;
}

} // namespace rpk
