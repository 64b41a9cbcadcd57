#pragma once
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "rpk/net.hpp"

namespace rpk {

// ============================================================================
// Similarity-preserving distillation
// ============================================================================
//
// The pairwise-similarity signature of a batch activation A [b, ...] is the
// row-normalized Gram matrix of Q = reshape(A, [b, features]): G~ = QQ^T,
// G = normalize_rows(G~). Two models agree in this signature when samples
// that excite one similarly excite the other, regardless of which individual
// features fire -- so a student can be steered toward a teacher without any
// width correspondence between them. The distillation term for a set of
// teacher/student layer pairs is
//
//     L_sp = (1/b^2) sum_pairs || G_teacher - G_student ||_F^2
//
// and the training loss is  L = L_task + gamma * L_sp.

enum class ActSource { Teacher, Student };

template <class S>
struct SimilarityMatrix {
    Tensor<S> g; // [b, b], rows L2-normalized (zero rows stay zero)
    ActSource source = ActSource::Student;
    std::size_t layer = 0;
};

// Row-normalized Gram matrix of a batched activation.
template <class S>
Tensor<S> similarity_matrix(const Tensor<S>& act) {
    if (act.rank() < 2)
        throw ShapeError("similarity_matrix expects a batched activation, got " +
                         shape_str(act.shape()));
    const std::size_t b = act.dim(0);
    const std::size_t f = act.size() / b;
    Tensor<S> g({b, b});
    auto q = act.mat(b, f);
    g.mat().noalias() = q * q.transpose();
    for (std::size_t i = 0; i < b; ++i) {
        const double n = g.mat().row(i).template cast<double>().norm();
        if (n > 0) g.mat().row(i) /= static_cast<S>(n);
    }
    ensure_finite(g, "similarity_matrix");
    return g;
}

template <class S>
SimilarityMatrix<S> similarity_of(const std::vector<Tensor<S>>& acts, std::size_t layer,
                                  ActSource source) {
    if (layer >= acts.size())
        throw ShapeError("similarity_of: layer " + std::to_string(layer) +
                         " out of range, network has " + std::to_string(acts.size()) +
                         " activations");
    return {similarity_matrix(acts[layer]), source, layer};
}

// (1/b^2) || g_teacher - g_student ||_F^2 on already-normalized Gram matrices.
template <class S>
double sp_loss_from_grams(const Tensor<S>& g_teacher, const Tensor<S>& g_student) {
    if (g_teacher.rank() != 2 || g_teacher.dim(0) != g_teacher.dim(1) ||
        g_teacher.shape() != g_student.shape())
        throw ShapeError("sp_loss_from_grams expects equal square matrices, got " +
                         shape_str(g_teacher.shape()) + " and " +
                         shape_str(g_student.shape()));
    const std::size_t b = g_teacher.dim(0);
    double acc = 0;
    for (std::size_t i = 0; i < g_teacher.size(); ++i) {
        const double d = static_cast<double>(g_teacher.data()[i]) -
                         static_cast<double>(g_student.data()[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(b * b);
}

// Similarity loss between two activations.
template <class S>
double sp_loss(const Tensor<S>& teacher_act, const Tensor<S>& student_act) {
    return sp_loss_from_grams(similarity_matrix(teacher_act),
                              similarity_matrix(student_act));
}

// d L_sp / d student_act for one pair, with the teacher side fixed.
// With Q the flattened student activation, G~ = QQ^T, g_i = v_i/|v_i| its
// normalized rows and D = (2/b^2)(G - G_teacher):
//   dL/dG~ row i = (D_i - (D_i . g_i) g_i) / |v_i|      (zero rows: zero)
//   dL/dQ = (dL/dG~ + dL/dG~^T) Q
template <class S>
Tensor<S> sp_loss_grad(const Tensor<S>& student_act, const Tensor<S>& g_teacher) {
    const std::size_t b = student_act.dim(0);
    const std::size_t f = student_act.size() / b;
    if (g_teacher.shape() != Shape{b, b})
        throw ShapeError("sp_loss_grad: teacher similarity is " +
                         shape_str(g_teacher.shape()) + ", batch is " +
                         std::to_string(b));
    auto q = student_act.mat(b, f);

    MatRM<double> qd = q.template cast<double>();
    MatRM<double> raw = qd * qd.transpose();
    MatRM<double> gs = raw;
    Eigen::VectorXd norms(b);
    for (std::size_t i = 0; i < b; ++i) {
        norms(i) = raw.row(i).norm();
        if (norms(i) > 0) gs.row(i) /= norms(i);
    }

    MatRM<double> gt = g_teacher.mat().template cast<double>();
    MatRM<double> d = (2.0 / static_cast<double>(b * b)) * (gs - gt);
    MatRM<double> s(b, b);
    for (std::size_t i = 0; i < b; ++i) {
        if (norms(i) > 0) {
            const double along = d.row(i).dot(gs.row(i));
            s.row(i) = (d.row(i) - along * gs.row(i)) / norms(i);
        } else {
            s.row(i).setZero();
        }
    }

    MatRM<double> grad = (s + s.transpose()) * qd;
    Tensor<S> out(student_act.shape());
    out.mat(b, f) = grad.cast<S>();
    ensure_finite(out, "sp_loss_grad");
    return out;
}

// ----------------------------------------------------------------------------
// Task loss
// ----------------------------------------------------------------------------

// Mean softmax cross-entropy over logits [b, classes].
template <class S>
double ce_loss(const Tensor<S>& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("ce_loss expects [b,classes] logits, got " +
                         shape_str(logits.shape()));
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b)
        throw ShapeError("ce_loss: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(b));
    double acc = 0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= c)
            throw ShapeError("ce_loss: label " + std::to_string(labels[i]) +
                             " out of range for " + std::to_string(c) + " classes");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            mx = std::max(mx, static_cast<double>(logits(i, j)));
        double lse = 0;
        for (std::size_t j = 0; j < c; ++j)
            lse += std::exp(static_cast<double>(logits(i, j)) - mx);
        acc += std::log(lse) + mx - static_cast<double>(logits(i, labels[i]));
    }
    return acc / static_cast<double>(b);
}

// d ce_loss / d logits = (softmax - onehot) / b.
template <class S>
Tensor<S> ce_grad(const Tensor<S>& logits, const std::vector<std::size_t>& labels) {
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    Tensor<S> grad({b, c});
    for (std::size_t i = 0; i < b; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            mx = std::max(mx, static_cast<double>(logits(i, j)));
        double sum = 0;
        for (std::size_t j = 0; j < c; ++j)
            sum += std::exp(static_cast<double>(logits(i, j)) - mx);
        for (std::size_t j = 0; j < c; ++j) {
            double p = std::exp(static_cast<double>(logits(i, j)) - mx) / sum;
            if (j == labels[i]) p -= 1.0;
            grad(i, j) = static_cast<S>(p / static_cast<double>(b));
        }
    }
    return grad;
}

// ----------------------------------------------------------------------------
// Combined objective
// ----------------------------------------------------------------------------

struct LayerPair {
    std::size_t teacher = 0; // activation index in the teacher network
    std::size_t student = 0; // activation index in the student network

    friend bool operator==(const LayerPair&, const LayerPair&) = default;
};

template <class S>
struct DistillConfig {
    std::vector<LayerPair> pairs;
    double gamma = 3000.0;
    const Network* teacher_net = nullptr;
    const WeightStore<S>* teacher_weights = nullptr;
};

struct LossParts {
    double total = 0;
    double task = 0;
    double sp = 0;
};

// Task + similarity loss of a student forward pass against fixed teacher
// activations: total = task + gamma * sum_pairs sp.
template <class S>
LossParts total_loss(const std::vector<Tensor<S>>& student_acts,
                     const std::vector<std::size_t>& labels,
                     const std::vector<Tensor<S>>& teacher_acts,
                     const std::vector<LayerPair>& pairs, double gamma) {
    LossParts parts;
    parts.task = ce_loss(student_acts.back(), labels);
    for (const auto& p : pairs) {
        if (p.student >= student_acts.size() || p.teacher >= teacher_acts.size())
            throw ShapeError("total_loss: similarity pair (" + std::to_string(p.teacher) +
                             "," + std::to_string(p.student) + ") out of range");
        parts.sp += sp_loss(teacher_acts[p.teacher], student_acts[p.student]);
    }
    parts.total = parts.task + gamma * parts.sp;
    return parts;
}

} // namespace rpk
