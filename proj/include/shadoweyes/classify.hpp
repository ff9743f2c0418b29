#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadoweyes/common.hpp"
#include "shadoweyes/contrastive.hpp"
#include "shadoweyes/nn.hpp"

namespace shadoweyes {

/// Two dense layers on top of the frozen encoder output.
struct ClassifierHead {
    nn::Linear hidden;
    nn::Linear out;

    Eigen::Index in_dim() const { return hidden.in_dim(); }
    Eigen::Index classes() const { return out.out_dim(); }

    Matrix logits(const Matrix& h, Matrix* act = nullptr) const {
        Matrix pre = hidden.forward(h);
        Matrix a = nn::activate(nn::Activation::Relu, pre);
        Matrix l = out.forward(a);
        if (act) *act = std::move(a);
        return l;
    }

    template <class F> void visit(F&& f) { hidden.visit(f); out.visit(f); }
    template <class F> void visit(F&& f) const { hidden.visit(f); out.visit(f); }
};

inline ClassifierHead init_classifier(Eigen::Index in, Eigen::Index hidden, Eigen::Index classes, std::uint64_t seed) {
    if (in < 1 || hidden < 1 || classes < 2) throw ValidationError("classifier needs positive widths and >= 2 classes");
    std::mt19937_64 rng(seed);
    return {nn::Linear(in, hidden, true, rng), nn::Linear(hidden, classes, true, rng)};
}

inline Matrix softmax_rows(const Matrix& l) {
    Matrix p = l.colwise() - l.rowwise().maxCoeff();
    p = p.array().exp();
    return p.array().colwise() / p.rowwise().sum().array();
}

struct FinetuneConfig {
    int epochs = 200;
    double step = 0.01;
    Eigen::Index hidden = 64;
    std::uint64_t seed = 7;
    nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
};

struct FinetuneResult {
    ClassifierHead head;
    std::vector<double> loss_curve;
    std::vector<std::string> warnings;
};

/// Cross-entropy training of the head on encoder outputs. The encoder is taken
/// by const reference and only evaluated, so its parameters cannot move.
inline FinetuneResult finetune(const Encoder& encoder, const Matrix& X, const std::vector<int>& y, int classes,
                               const FinetuneConfig& cfg) {
    if (X.rows() < 1 || static_cast<std::size_t>(X.rows()) != y.size())
        throw ValidationError("finetune needs one label per sample");
    if (cfg.epochs < 0) throw ValidationError("finetune epochs must be >= 0");
    FinetuneResult r;
    std::vector<int> seen(static_cast<std::size_t>(classes), 0);
    for (int c : y) {
        if (c < 0 || c >= classes) throw ValidationError("label index out of range");
        ++seen[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < classes; ++c)
        if (!seen[static_cast<std::size_t>(c)])
            r.warnings.push_back("class " + std::to_string(c) + " absent from the training set");

    const Matrix H = encoder.forward(X);
    r.head = init_classifier(H.cols(), cfg.hidden, classes, derive_seed(cfg.seed, "classifier-init"));
    Matrix target = Matrix::Zero(H.rows(), classes);
    for (std::size_t i = 0; i < y.size(); ++i) target(static_cast<Eigen::Index>(i), y[i]) = 1;
    nn::Optimizer opt(cfg.optimizer, cfg.step);
    const auto n = static_cast<double>(H.rows());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Matrix act;
        Matrix p = softmax_rows(r.head.logits(H, &act));
        double loss = 0;
        for (std::size_t i = 0; i < y.size(); ++i)
            loss -= std::log(std::max(p(static_cast<Eigen::Index>(i), y[i]), 1e-300));
        loss /= n;
        if (!std::isfinite(loss)) throw DivergenceError("finetune diverged at epoch " + std::to_string(epoch));
        r.loss_curve.push_back(loss);
        auto g = nn::zeros_like(r.head);
        Matrix dl = (p - target) / n;
        Matrix da = r.head.out.backward(act, dl, g.out);
        Matrix dpre = da.cwiseProduct(nn::activate_grad(nn::Activation::Relu, r.head.hidden.forward(H)));
        r.head.hidden.backward(H, dpre, g.hidden);
        opt.step(r.head, g);
    }
    return r;
}

struct Prediction {
    std::vector<int> labels;
    Matrix scores;  // softmax probabilities, one row per sample
};

/// Argmax of the class scores; ties go to the lowest class index.
inline std::vector<int> argmax_rows(const Matrix& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        int best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c)
            if (scores(i, c) > scores(i, best)) best = static_cast<int>(c);
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

inline Prediction predict(const ClassifierHead& head, const Encoder& encoder, const Matrix& X) {
    Prediction p;
    p.scores = softmax_rows(head.logits(encoder.forward(X)));
    p.labels = argmax_rows(p.scores);
    return p;
}

// ---------------------------------------------------------------------------
// Metrics

struct ClassMetrics {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::int64_t tp = 0, fp = 0, fn = 0;
    std::int64_t support = 0;
    bool zero_division = false;  // a zero denominator was defined as 0
};

/// Harmonic mean; 0 when both are 0.
inline double f1_score(double precision, double recall) {
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

inline ClassMetrics metrics_from_confusion(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    if (tp < 0 || fp < 0 || fn < 0) throw ValidationError("negative confusion count");
    ClassMetrics m;
    m.tp = tp, m.fp = fp, m.fn = fn, m.support = tp + fn;
    if (tp + fp > 0)
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else
        m.zero_division = true;
    if (tp + fn > 0)
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else
        m.zero_division = true;
    m.f1 = f1_score(m.precision, m.recall);
    return m;
}

enum class Averaging { Binary, Macro };

inline Averaging parse_averaging(std::string_view s) {
    if (s == "binary") return Averaging::Binary;
    if (s == "macro") return Averaging::Macro;
    throw ValidationError("unknown averaging '" + std::string(s) + "'");
}

inline std::string_view to_string(Averaging a) { return a == Averaging::Binary ? "binary" : "macro"; }

struct MetricsReport {
    Averaging averaging = Averaging::Binary;
    int positive = 1;
    std::vector<ClassMetrics> per_class;
    Matrix confusion;  // rows true class, columns predicted class
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    bool zero_division = false;
    std::size_t samples = 0;
};

/// Binary averaging reports the positive class; macro averages over every class
/// that occurs in y_true or y_pred.
inline MetricsReport metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred, int classes,
                             Averaging avg, int positive = 1) {
    if (y_true.empty() || y_true.size() != y_pred.size())
        throw ValidationError("metrics needs equal, non-empty label vectors");
    if (classes < 2) throw ValidationError("metrics needs at least two classes");
    MetricsReport r;
    r.averaging = avg;
    r.positive = positive;
    r.samples = y_true.size();
    r.confusion = Matrix::Zero(classes, classes);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] < 0 || y_true[i] >= classes || y_pred[i] < 0 || y_pred[i] >= classes)
            throw ValidationError("label index out of range");
        r.confusion(y_true[i], y_pred[i]) += 1;
    }
    for (int c = 0; c < classes; ++c) {
        const auto tp = static_cast<std::int64_t>(r.confusion(c, c));
        const auto fp = static_cast<std::int64_t>(r.confusion.col(c).sum()) - tp;
        const auto fn = static_cast<std::int64_t>(r.confusion.row(c).sum()) - tp;
        r.per_class.push_back(metrics_from_confusion(tp, fp, fn));
    }
    if (avg == Averaging::Binary) {
        if (positive < 0 || positive >= classes) throw ValidationError("positive class out of range");
        const auto& m = r.per_class[static_cast<std::size_t>(positive)];
        r.precision = m.precision, r.recall = m.recall, r.f1 = m.f1, r.zero_division = m.zero_division;
        return r;
    }
    int used = 0;
    for (int c = 0; c < classes; ++c) {
        const auto& m = r.per_class[static_cast<std::size_t>(c)];
        if (m.support == 0 && m.tp + m.fp == 0) continue;
        r.precision += m.precision, r.recall += m.recall, r.f1 += m.f1;
        r.zero_division = r.zero_division || m.zero_division;
        ++used;
    }
    r.precision /= used, r.recall /= used, r.f1 /= used;
    return r;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r, const std::vector<std::string>& class_names) {
    nlohmann::json j;
    j["averaging"] = to_string(r.averaging);
    if (r.averaging == Averaging::Binary) j["positive_class"] = class_names.at(static_cast<std::size_t>(r.positive));
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["zero_division"] = r.zero_division;
    j["samples"] = r.samples;
    auto per = nlohmann::json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& m = r.per_class[c];
        per.push_back({{"class", class_names.at(c)}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                       {"tp", m.tp},                 {"fp", m.fp},               {"fn", m.fn},         {"support", m.support},
                       {"zero_division", m.zero_division}});
    }
    j["per_class"] = per;
    std::vector<std::vector<std::int64_t>> conf;
    for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
        conf.emplace_back();
        for (Eigen::Index k = 0; k < r.confusion.cols(); ++k) conf.back().push_back(static_cast<std::int64_t>(r.confusion(i, k)));
    }
    j["confusion"] = conf;
    return j;
}

inline void write_predictions_csv(const std::string& path, const std::vector<std::string>& addresses,
                                  const std::vector<int>& y_true, const Prediction& p,
                                  const std::vector<std::string>& class_names) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out.precision(17);
    out << "address,true_label,pred_label";
    for (const auto& c : class_names) out << ",score_" << c;
    out << '\n';
    for (std::size_t i = 0; i < addresses.size(); ++i) {
        out << addresses[i] << ',' << class_names.at(static_cast<std::size_t>(y_true[i])) << ','
            << class_names.at(static_cast<std::size_t>(p.labels[i]));
        for (Eigen::Index c = 0; c < p.scores.cols(); ++c) out << ',' << p.scores(static_cast<Eigen::Index>(i), c);
        out << '\n';
    }
}

inline nlohmann::json classifier_to_json(const ClassifierHead& h, const std::vector<std::string>& class_names) {
    return {{"format", "shadoweyes-classifier"}, {"version", 1},          {"in_dim", h.in_dim()},
            {"hidden", h.hidden.out_dim()},      {"classes", class_names}, {"tensors", nn::params_to_json(h)}};
}

}  // namespace shadoweyes
