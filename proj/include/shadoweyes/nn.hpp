#pragma once

#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shadoweyes/common.hpp"

// Minimal dense layers with hand-written backward passes. Every parameter
// struct exposes visit(f) over its matrices in a fixed order, which is what the
// optimizers, checksums and serializers rely on. Gradients use the same struct
// type as the parameters.

namespace shadoweyes::nn {

enum class Activation { Identity, Relu, LeakyRelu, Elu, Tanh };

inline std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::Elu: return "elu";
        case Activation::Tanh: return "tanh";
    }
    return "?";
}

inline Activation parse_activation(std::string_view s) {
    for (auto a : {Activation::Identity, Activation::Relu, Activation::LeakyRelu, Activation::Elu, Activation::Tanh})
        if (to_string(a) == s) return a;
    throw ValidationError("unknown activation '" + std::string(s) + "'");
}

inline double activate(Activation a, double x, double slope = 0.01) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Relu: return x > 0 ? x : 0.0;
        case Activation::LeakyRelu: return x > 0 ? x : slope * x;
        case Activation::Elu: return x > 0 ? x : std::expm1(x);
        case Activation::Tanh: return std::tanh(x);
    }
    return x;
}

/// Derivative evaluated at the pre-activation value.
inline double activate_grad(Activation a, double x, double slope = 0.01) {
    switch (a) {
        case Activation::Identity: return 1.0;
        case Activation::Relu: return x > 0 ? 1.0 : 0.0;
        case Activation::LeakyRelu: return x > 0 ? 1.0 : slope;
        case Activation::Elu: return x > 0 ? 1.0 : std::exp(x);
        case Activation::Tanh: {
            double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

inline Matrix activate(Activation a, const Matrix& x, double slope = 0.01) {
    return x.unaryExpr([=](double v) { return activate(a, v, slope); });
}

inline Matrix activate_grad(Activation a, const Matrix& x, double slope = 0.01) {
    return x.unaryExpr([=](double v) { return activate_grad(a, v, slope); });
}

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-a, a);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
    return m;
}

/// y = x W (+ b). Rows are samples.
struct Linear {
    Matrix W;  // in x out
    Matrix b;  // 1 x out, empty when bias-free

    Linear() = default;
    Linear(Eigen::Index in, Eigen::Index out, bool bias, std::mt19937_64& rng)
        : W(glorot(in, out, rng)), b(bias ? Matrix::Zero(1, out) : Matrix()) {}

    bool has_bias() const { return b.size() > 0; }
    Eigen::Index in_dim() const { return W.rows(); }
    Eigen::Index out_dim() const { return W.cols(); }

    Matrix forward(const Matrix& x) const {
        Matrix y = x * W;
        if (has_bias()) y.rowwise() += b.row(0);
        return y;
    }

    /// Accumulates parameter gradients into `grad`, returns dL/dx.
    Matrix backward(const Matrix& x, const Matrix& dy, Linear& grad) const {
        grad.W.noalias() += x.transpose() * dy;
        if (has_bias()) grad.b += dy.colwise().sum();
        return dy * W.transpose();
    }

    template <class F> void visit(F&& f) { f(W); if (has_bias()) f(b); }
    template <class F> void visit(F&& f) const { f(W); if (has_bias()) f(b); }
};

/// Per-sample normalization over features; no batch statistics, so a single
/// sample's output never depends on the rest of the batch.
struct LayerNorm {
    Matrix gamma;  // 1 x d
    Matrix beta;   // 1 x d
    double eps = 1e-5;

    struct Cache {
        Matrix xhat;
        Vector inv_std;
    };

    LayerNorm() = default;
    explicit LayerNorm(Eigen::Index d) : gamma(Matrix::Ones(1, d)), beta(Matrix::Zero(1, d)) {}

    Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
        const auto d = static_cast<double>(x.cols());
        Vector mean = x.rowwise().mean();
        Matrix centered = x.colwise() - mean;
        Vector var = centered.array().square().rowwise().sum() / d;
        Vector inv_std = (var.array() + eps).rsqrt();
        Matrix xhat = centered.array().colwise() * inv_std.array();
        Matrix y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->inv_std = std::move(inv_std);
        }
        return y;
    }

    Matrix backward(const Matrix& dy, const Cache& c, LayerNorm& grad) const {
        const auto d = static_cast<double>(dy.cols());
        grad.gamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
        grad.beta += dy.colwise().sum();
        Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
        Vector mean_dxhat = dxhat.rowwise().sum() / d;
        Vector mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum() / d;
        Matrix dx = dxhat.colwise() - mean_dxhat;
        dx -= (c.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
        return dx.array().colwise() * c.inv_std.array();
    }

    template <class F> void visit(F&& f) { f(gamma); f(beta); }
    template <class F> void visit(F&& f) const { f(gamma); f(beta); }
};

template <class P>
P zeros_like(const P& p) {
    P z = p;
    z.visit([](Matrix& m) { m.setZero(); });
    return z;
}

template <class P>
std::vector<Matrix*> tensors(P& p) {
    std::vector<Matrix*> out;
    p.visit([&](Matrix& m) { out.push_back(&m); });
    return out;
}

template <class P>
std::vector<const Matrix*> tensors(const P& p) {
    std::vector<const Matrix*> out;
    p.visit([&](const Matrix& m) { out.push_back(&m); });
    return out;
}

template <class P>
std::size_t parameter_count(const P& p) {
    std::size_t n = 0;
    p.visit([&](const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

/// Byte-level checksum over every parameter (shape and values).
template <class P>
std::uint64_t checksum(const P& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    p.visit([&](const Matrix& m) {
        const std::int64_t dims[2] = {m.rows(), m.cols()};
        h = fnv1a(dims, sizeof dims, h);
        h = fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
    });
    return h;
}

template <class P>
bool all_finite(const P& p) {
    bool ok = true;
    p.visit([&](const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
}

enum class OptimizerKind { Sgd, Adam };

inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw ValidationError("unknown optimizer '" + std::string(s) + "'");
}

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

/// Plain SGD or Adam (beta1 0.9, beta2 0.999).
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double step) : kind_(kind), step_(step) {}

    template <class P>
    void step(P& params, const P& grads) {
        auto ps = tensors(params);
        auto gs = tensors(grads);
        if (kind_ == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] -= step_ * *gs[i];
            return;
        }
        if (m_.empty()) {
            for (auto* p : ps) {
                m_.push_back(Matrix::Zero(p->rows(), p->cols()));
                v_.push_back(Matrix::Zero(p->rows(), p->cols()));
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, t_);
        const double c2 = 1.0 - std::pow(kBeta2, t_);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * *gs[i];
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * gs[i]->cwiseProduct(*gs[i]);
            ps[i]->array() -= step_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + kEps);
        }
    }

private:
    static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    OptimizerKind kind_;
    double step_;
    int t_ = 0;
    std::vector<Matrix> m_, v_;
};

// ---------------------------------------------------------------------------
// JSON containers

inline nlohmann::json matrix_to_json(const Matrix& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    auto rows = j.at("rows").get<Eigen::Index>();
    auto cols = j.at("cols").get<Eigen::Index>();
    auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ParseError("matrix payload size mismatch");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[static_cast<std::size_t>(i * cols + j2)];
    return m;
}

template <class P>
nlohmann::json params_to_json(const P& p) {
    auto arr = nlohmann::json::array();
    p.visit([&](const Matrix& m) { arr.push_back(matrix_to_json(m)); });
    return arr;
}

/// Loads into an already-shaped parameter struct; shapes must agree.
template <class P>
void params_from_json(P& p, const nlohmann::json& arr) {
    std::size_t i = 0;
    p.visit([&](Matrix& m) {
        if (i >= arr.size()) throw ParseError("checkpoint has too few tensors");
        Matrix loaded = matrix_from_json(arr[i++]);
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) throw ParseError("checkpoint tensor shape mismatch");
        m = std::move(loaded);
    });
    if (i != arr.size()) throw ParseError("checkpoint has too many tensors");
}

}  // namespace shadoweyes::nn
