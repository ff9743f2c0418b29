#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadoweyes/common.hpp"
#include "shadoweyes/features.hpp"
#include "shadoweyes/nn.hpp"
#include "shadoweyes/txdata.hpp"

namespace shadoweyes {

/// One single-head graph-attention layer: W projects node features, `a` scores a
/// concatenated pair [W h_u || W h_v] to a real.
struct GatLayerParams {
    Matrix W;  // in x out
    Matrix a;  // 2*out x 1; rows [0,out) act on the target node, [out,2*out) on the neighbor
    double leaky_slope = 0.2;

    GatLayerParams() = default;
    GatLayerParams(Eigen::Index in, Eigen::Index out, double slope, std::mt19937_64& rng)
        : W(nn::glorot(in, out, rng)), a(nn::glorot(2 * out, 1, rng)), leaky_slope(slope) {
        if (!(slope > 0 && slope < 1)) throw ValidationError("leaky slope must be in (0,1)");
    }

    Eigen::Index in_dim() const { return W.rows(); }
    Eigen::Index out_dim() const { return W.cols(); }
    auto a_self() const { return a.topRows(out_dim()); }
    auto a_neighbor() const { return a.bottomRows(out_dim()); }

    template <class F> void visit(F&& f) { f(W); f(a); }
    template <class F> void visit(F&& f) const { f(W); f(a); }
};

/// Attention neighborhoods in CSR-like form. Nodes with no neighbors get a
/// self-only neighborhood.
struct Neighborhoods {
    std::vector<std::vector<std::size_t>> lists;

    std::size_t size() const { return lists.size(); }

    static Neighborhoods from_graph(const NodeGraph& g, bool self_loops) {
        Neighborhoods n;
        n.lists.resize(g.size());
        for (std::size_t u = 0; u < g.size(); ++u) {
            auto& l = n.lists[u];
            l = g.neighbors[u];
            if (self_loops || l.empty()) {
                l.push_back(u);
                std::sort(l.begin(), l.end());
            }
        }
        return n;
    }

    /// Neighborhoods of a dense adjacency: v in N(u) iff A(u,v) != 0.
    static Neighborhoods from_dense(const Matrix& A) {
        if (A.rows() != A.cols()) throw ValidationError("adjacency must be square");
        Neighborhoods n;
        n.lists.resize(static_cast<std::size_t>(A.rows()));
        for (Eigen::Index u = 0; u < A.rows(); ++u) {
            for (Eigen::Index v = 0; v < A.cols(); ++v)
                if (A(u, v) != 0.0) n.lists[static_cast<std::size_t>(u)].push_back(static_cast<std::size_t>(v));
            if (n.lists[static_cast<std::size_t>(u)].empty()) n.lists[static_cast<std::size_t>(u)].push_back(static_cast<std::size_t>(u));
        }
        return n;
    }
};

struct LayerCache {
    Matrix input;
    Matrix wh;                                // input * W
    std::vector<std::vector<double>> scores;  // raw e_uv per neighborhood entry
    std::vector<std::vector<double>> alpha;
    Matrix pre;                               // sum_v alpha_uv Wh_v
    Matrix output;
};

namespace detail {

inline void attention_rows(const GatLayerParams& layer, const Matrix& wh, const Neighborhoods& nb,
                           std::vector<std::vector<double>>& scores, std::vector<std::vector<double>>& alpha) {
    const Vector s_self = wh * layer.a_self();
    const Vector s_nbr = wh * layer.a_neighbor();
    scores.assign(nb.size(), {});
    alpha.assign(nb.size(), {});
    for (std::size_t u = 0; u < nb.size(); ++u) {
        const auto& l = nb.lists[u];
        auto& e = scores[u];
        auto& al = alpha[u];
        e.resize(l.size());
        al.resize(l.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < l.size(); ++k) {
            e[k] = s_self[static_cast<Eigen::Index>(u)] + s_nbr[static_cast<Eigen::Index>(l[k])];
            al[k] = nn::activate(nn::Activation::LeakyRelu, e[k], layer.leaky_slope);
            mx = std::max(mx, al[k]);
        }
        double z = 0;
        for (auto& x : al) z += (x = std::exp(x - mx));
        for (auto& x : al) x /= z;
    }
}

}  // namespace detail

/// Dense attention matrix: alpha(u,v) = softmax over N(u) of LeakyReLU(a [W h_u || W h_v]).
inline Matrix attention_coefficients(const GatLayerParams& layer, const Matrix& X, const Matrix& A) {
    if (X.cols() != layer.in_dim() || X.rows() != A.rows()) throw ValidationError("attention shape mismatch");
    auto nb = Neighborhoods::from_dense(A);
    std::vector<std::vector<double>> scores, alpha;
    detail::attention_rows(layer, X * layer.W, nb, scores, alpha);
    Matrix out = Matrix::Zero(A.rows(), A.cols());
    for (std::size_t u = 0; u < nb.size(); ++u)
        for (std::size_t k = 0; k < nb.lists[u].size(); ++k)
            out(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(nb.lists[u][k])) = alpha[u][k];
    return out;
}

inline LayerCache gat_layer_forward(const GatLayerParams& layer, const Matrix& H, const Neighborhoods& nb,
                                    nn::Activation act) {
    LayerCache c;
    c.input = H;
    c.wh = H * layer.W;
    detail::attention_rows(layer, c.wh, nb, c.scores, c.alpha);
    c.pre = Matrix::Zero(H.rows(), layer.out_dim());
    for (std::size_t u = 0; u < nb.size(); ++u)
        for (std::size_t k = 0; k < nb.lists[u].size(); ++k)
            c.pre.row(static_cast<Eigen::Index>(u)) += c.alpha[u][k] * c.wh.row(static_cast<Eigen::Index>(nb.lists[u][k]));
    c.output = nn::activate(act, c.pre);
    return c;
}

/// Returns dL/dH_in and accumulates into `grad`.
inline Matrix gat_layer_backward(const GatLayerParams& layer, const LayerCache& c, const Neighborhoods& nb,
                                 nn::Activation act, const Matrix& d_out, GatLayerParams& grad) {
    const Matrix d_pre = d_out.cwiseProduct(nn::activate_grad(act, c.pre));
    Matrix d_wh = Matrix::Zero(c.wh.rows(), c.wh.cols());
    const auto out = layer.out_dim();
    Matrix d_a_self = Matrix::Zero(out, 1), d_a_nbr = Matrix::Zero(out, 1);
    const Vector a_self = layer.a_self(), a_nbr = layer.a_neighbor();
    std::vector<double> d_alpha;
    for (std::size_t u = 0; u < nb.size(); ++u) {
        const auto& l = nb.lists[u];
        const auto ui = static_cast<Eigen::Index>(u);
        d_alpha.assign(l.size(), 0.0);
        double weighted = 0;
        for (std::size_t k = 0; k < l.size(); ++k) {
            const auto vi = static_cast<Eigen::Index>(l[k]);
            d_alpha[k] = d_pre.row(ui).dot(c.wh.row(vi));
            d_wh.row(vi) += c.alpha[u][k] * d_pre.row(ui);
            weighted += c.alpha[u][k] * d_alpha[k];
        }
        for (std::size_t k = 0; k < l.size(); ++k) {
            const auto vi = static_cast<Eigen::Index>(l[k]);
            const double d_logit = c.alpha[u][k] * (d_alpha[k] - weighted);
            const double d_e = d_logit * nn::activate_grad(nn::Activation::LeakyRelu, c.scores[u][k], layer.leaky_slope);
            d_a_self += d_e * c.wh.row(ui).transpose();
            d_a_nbr += d_e * c.wh.row(vi).transpose();
            d_wh.row(ui) += d_e * a_self.transpose();
            d_wh.row(vi) += d_e * a_nbr.transpose();
        }
    }
    grad.a.topRows(out) += d_a_self;
    grad.a.bottomRows(out) += d_a_nbr;
    grad.W.noalias() += c.input.transpose() * d_wh;
    return d_wh * layer.W.transpose();
}

/// Stack of GAT layers plus a linear feature decoder (Z -> X-hat).
struct GaeModel {
    std::vector<GatLayerParams> layers;
    nn::Linear feature_decoder;
    double lambda = 1.0;
    nn::Activation activation = nn::Activation::Elu;
    bool self_loops = true;

    Eigen::Index input_dim() const { return layers.front().in_dim(); }
    Eigen::Index embedding_dim() const { return layers.back().out_dim(); }

    template <class F> void visit(F&& f) {
        for (auto& l : layers) l.visit(f);
        feature_decoder.visit(f);
    }
    template <class F> void visit(F&& f) const {
        for (const auto& l : layers) l.visit(f);
        feature_decoder.visit(f);
    }
};

struct GaeShape {
    Eigen::Index input_dim = static_cast<Eigen::Index>(kFeatureCount);
    std::vector<Eigen::Index> layer_dims{32, 32};  // last entry is the embedding dim
    double leaky_slope = 0.2;
    double lambda = 1.0;
    nn::Activation activation = nn::Activation::Elu;
    bool self_loops = true;
};

inline GaeModel init_gae(const GaeShape& shape, std::uint64_t seed) {
    if (shape.layer_dims.empty()) throw ValidationError("GAE needs at least one layer");
    if (shape.lambda < 0) throw ValidationError("lambda must be non-negative");
    std::mt19937_64 rng(seed);
    GaeModel m;
    Eigen::Index in = shape.input_dim;
    for (auto d : shape.layer_dims) {
        if (d < 1) throw ValidationError("layer width must be >= 1");
        m.layers.emplace_back(in, d, shape.leaky_slope, rng);
        in = d;
    }
    m.feature_decoder = nn::Linear(in, shape.input_dim, true, rng);
    m.lambda = shape.lambda;
    m.activation = shape.activation;
    m.self_loops = shape.self_loops;
    return m;
}

struct GatForward {
    std::vector<LayerCache> layers;
    Matrix Z;
};

inline GatForward gat_forward(const GaeModel& model, const Matrix& X, const Neighborhoods& nb) {
    if (X.cols() != model.input_dim() || static_cast<std::size_t>(X.rows()) != nb.size())
        throw ValidationError("GAT input shape mismatch");
    GatForward f;
    const Matrix* h = &X;
    for (const auto& l : model.layers) {
        f.layers.push_back(gat_layer_forward(l, *h, nb, model.activation));
        h = &f.layers.back().output;
    }
    f.Z = *h;
    return f;
}

inline GatForward gat_forward(const GaeModel& model, const Matrix& X, const Matrix& A) {
    return gat_forward(model, X, Neighborhoods::from_dense(A));
}

/// A-hat = sigmoid(Z Z^T).
inline Matrix decode_adjacency(const Matrix& Z) {
    Matrix s = Z * Z.transpose();
    return s.unaryExpr([](double x) { return nn::sigmoid(x); });
}

struct GaeLoss {
    double feature = 0;
    double adjacency = 0;
    double total = 0;
};

/// (1/N) sum ||x_i - xhat_i||^2 + lambda * mean BCE(A, A-hat).
inline GaeLoss gae_loss(const Matrix& X, const Matrix& X_hat, const Matrix& A, const Matrix& A_hat, double lambda) {
    if (X.rows() != X_hat.rows() || X.cols() != X_hat.cols() || A.rows() != A_hat.rows() || A.cols() != A_hat.cols())
        throw ValidationError("gae_loss shape mismatch");
    GaeLoss l;
    l.feature = (X - X_hat).squaredNorm() / static_cast<double>(X.rows());
    if (lambda != 0.0) {
        constexpr double eps = 1e-15;
        double bce = 0;
        for (Eigen::Index i = 0; i < A.size(); ++i) {
            const double p = std::clamp(A_hat.data()[i], eps, 1.0 - eps);
            const double y = A.data()[i];
            bce -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        }
        l.adjacency = bce / static_cast<double>(A.size());
    }
    l.total = l.feature + lambda * l.adjacency;
    return l;
}

struct GaeEvaluation {
    GaeLoss loss;
    GaeModel grad;
    Matrix Z;
};

/// Loss and analytic gradient for one pass. `X_in` is the (possibly masked)
/// encoder input, `X_target` the reconstruction target, `A_target` the dense
/// symmetric adjacency the decoder must reproduce.
inline GaeEvaluation gae_loss_and_grad(const GaeModel& model, const Matrix& X_in, const Matrix& X_target,
                                       const Neighborhoods& nb, const Matrix& A_target) {
    const auto n = static_cast<double>(X_in.rows());
    auto fwd = gat_forward(model, X_in, nb);
    const Matrix& Z = fwd.Z;
    GaeEvaluation ev{{}, nn::zeros_like(model), Z};

    const Matrix x_hat = model.feature_decoder.forward(Z);
    const Matrix d_xhat = 2.0 * (x_hat - X_target) / n;
    ev.loss.feature = (x_hat - X_target).squaredNorm() / n;
    Matrix dZ = model.feature_decoder.backward(Z, d_xhat, ev.grad.feature_decoder);

    if (model.lambda != 0.0) {
        // Z Z^T and the target are symmetric, so only the upper triangle is evaluated.
        const Eigen::Index N = Z.rows();
        Matrix s = Matrix::Zero(N, N);
        s.selfadjointView<Eigen::Upper>().rankUpdate(Z);
        double bce = 0;
        const double scale = model.lambda / (n * n);
        for (Eigen::Index j = 0; j < N; ++j)
            for (Eigen::Index i = 0; i <= j; ++i) {
                const double x = s(i, j), y = A_target(i, j);
                const double e = std::exp(-std::abs(x));
                const double sig = x >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
                const double term = std::max(x, 0.0) + std::log1p(e) - y * x;
                bce += i == j ? term : 2.0 * term;
                s(i, j) = scale * (sig - y);
            }
        ev.loss.adjacency = bce / (n * n);
        dZ.noalias() += 2.0 * (s.selfadjointView<Eigen::Upper>() * Z);
    }
    ev.loss.total = ev.loss.feature + model.lambda * ev.loss.adjacency;

    for (std::size_t k = model.layers.size(); k-- > 0;)
        dZ = gat_layer_backward(model.layers[k], fwd.layers[k], nb, model.activation, dZ, ev.grad.layers[k]);
    return ev;
}

struct GaeTrainConfig {
    int epochs = 200;
    double step = 0.01;
    double mask_rate = 0.15;
    std::uint64_t seed = 7;
    nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
};

struct GaeTrainResult {
    GaeModel model;
    Matrix Z;                         // embeddings of the unmasked input
    std::vector<double> loss_curve;   // per-epoch training loss (masked input)
    std::vector<double> smoothed;     // running minimum of loss_curve
    double initial_loss = 0;          // unmasked loss before training
    double final_loss = 0;            // unmasked loss after training
};

inline Matrix gae_target_adjacency(const NodeGraph& g, bool self_loops) { return binary_adjacency(g, self_loops); }

/// Full-batch training with a fresh random feature mask every epoch.
inline GaeTrainResult train_gae(const Matrix& X, const NodeGraph& graph, const GaeShape& shape,
                                const GaeTrainConfig& cfg) {
    if (X.rows() < 2) throw ValidationError("GAE training needs at least two nodes");
    if (static_cast<std::size_t>(X.rows()) != graph.size()) throw ValidationError("feature rows != graph nodes");
    if (cfg.mask_rate < 0 || cfg.mask_rate >= 1) throw ValidationError("mask rate must be in [0,1)");
    GaeShape s = shape;
    s.input_dim = X.cols();
    GaeTrainResult r;
    r.model = init_gae(s, derive_seed(cfg.seed, "gae-init"));
    const auto nb = Neighborhoods::from_graph(graph, s.self_loops);
    const Matrix A = gae_target_adjacency(graph, s.self_loops);
    nn::Optimizer opt(cfg.optimizer, cfg.step);
    std::mt19937_64 rng(derive_seed(cfg.seed, "gae-mask"));
    std::bernoulli_distribution masked(cfg.mask_rate);

    r.initial_loss = gae_loss_and_grad(r.model, X, X, nb, A).loss.total;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Matrix x_in = X;
        if (cfg.mask_rate > 0)
            for (Eigen::Index i = 0; i < x_in.size(); ++i)
                if (masked(rng)) x_in.data()[i] = 0.0;
        auto ev = gae_loss_and_grad(r.model, x_in, X, nb, A);
        if (!std::isfinite(ev.loss.total) || !nn::all_finite(ev.grad))
            throw DivergenceError("GAE diverged at epoch " + std::to_string(epoch) + " (feature loss " +
                                  std::to_string(ev.loss.feature) + ", adjacency loss " +
                                  std::to_string(ev.loss.adjacency) + ")");
        r.loss_curve.push_back(ev.loss.total);
        r.smoothed.push_back(r.smoothed.empty() ? ev.loss.total : std::min(r.smoothed.back(), ev.loss.total));
        opt.step(r.model, ev.grad);
    }
    auto final_ev = gae_loss_and_grad(r.model, X, X, nb, A);
    r.final_loss = final_ev.loss.total;
    r.Z = final_ev.Z;
    return r;
}

/// Share of adjacency entries reproduced by round(A-hat).
inline double adjacency_recovery(const Matrix& A, const Matrix& A_hat) {
    std::size_t hit = 0;
    for (Eigen::Index i = 0; i < A.size(); ++i) hit += ((A_hat.data()[i] > 0.5 ? 1.0 : 0.0) == A.data()[i]);
    return static_cast<double>(hit) / static_cast<double>(A.size());
}

// ---------------------------------------------------------------------------
// Fusion

struct FusedRepresentation {
    std::string address;
    Vector values;
};

/// [x_norm || z]; x_norm must have the registry width, z the embedding width.
inline FusedRepresentation fuse(const std::string& address, const Vector& x_norm, const Vector& z,
                                Eigen::Index embedding_dim) {
    if (x_norm.size() != static_cast<Eigen::Index>(kFeatureCount))
        throw ValidationError("fuse: attribute vector has " + std::to_string(x_norm.size()) + " entries, expected " +
                              std::to_string(kFeatureCount));
    if (z.size() != embedding_dim)
        throw ValidationError("fuse: embedding has " + std::to_string(z.size()) + " entries, expected " +
                              std::to_string(embedding_dim));
    FusedRepresentation f{address, Vector(x_norm.size() + z.size())};
    f.values << x_norm, z;
    return f;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json gae_to_json(const GaeModel& m) {
    nlohmann::json j;
    j["format"] = "shadoweyes-gae";
    j["version"] = 1;
    std::vector<Eigen::Index> dims;
    for (const auto& l : m.layers) dims.push_back(l.out_dim());
    j["input_dim"] = m.input_dim();
    j["layer_dims"] = dims;
    j["leaky_slope"] = m.layers.front().leaky_slope;
    j["lambda"] = m.lambda;
    j["activation"] = nn::to_string(m.activation);
    j["self_loops"] = m.self_loops;
    j["tensors"] = nn::params_to_json(m);
    return j;
}

inline GaeModel gae_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "shadoweyes-gae" || j.value("version", 0) != 1)
        throw ParseError("not a version-1 GAE container");
    GaeShape s;
    s.input_dim = j.at("input_dim").get<Eigen::Index>();
    s.layer_dims = j.at("layer_dims").get<std::vector<Eigen::Index>>();
    s.leaky_slope = j.at("leaky_slope").get<double>();
    s.lambda = j.at("lambda").get<double>();
    s.activation = nn::parse_activation(j.at("activation").get<std::string>());
    s.self_loops = j.at("self_loops").get<bool>();
    auto m = init_gae(s, 0);
    nn::params_from_json(m, j.at("tensors"));
    return m;
}

inline void write_loss_csv(const std::string& path, const std::vector<double>& raw, const std::vector<double>& smooth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out.precision(17);
    out << "epoch,loss,smoothed\n";
    for (std::size_t i = 0; i < raw.size(); ++i) out << i << ',' << raw[i] << ',' << smooth[i] << '\n';
}

}  // namespace shadoweyes
