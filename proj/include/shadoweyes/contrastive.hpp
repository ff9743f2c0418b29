#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadoweyes/augment.hpp"
#include "shadoweyes/common.hpp"
#include "shadoweyes/nn.hpp"

namespace shadoweyes {

// ---------------------------------------------------------------------------
// Residual encoder

/// Linear -> LayerNorm -> ReLU.
struct DenseStage {
    nn::Linear linear;
    nn::LayerNorm norm;

    struct Cache {
        Matrix input;
        nn::LayerNorm::Cache norm;
        Matrix normed;
    };

    DenseStage() = default;
    DenseStage(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) : linear(in, out, true, rng), norm(out) {}

    Matrix forward(const Matrix& x, Cache* c = nullptr) const {
        Matrix y = linear.forward(x);
        Matrix n = norm.forward(y, c ? &c->norm : nullptr);
        if (c) {
            c->input = x;
            c->normed = n;
        }
        return nn::activate(nn::Activation::Relu, n);
    }

    Matrix backward(const Matrix& dy, const Cache& c, DenseStage& g) const {
        Matrix dn = dy.cwiseProduct(nn::activate_grad(nn::Activation::Relu, c.normed));
        Matrix dlin = norm.backward(dn, c.norm, g.norm);
        return linear.backward(c.input, dlin, g.linear);
    }

    template <class F> void visit(F&& f) { linear.visit(f); norm.visit(f); }
    template <class F> void visit(F&& f) const { linear.visit(f); norm.visit(f); }
};

/// H = F(h) + W_b h where F is a chain of dense stages closed by a plain linear
/// map. W_b is the identity when dimensions match, otherwise a learned
/// bias-free projection.
struct ResidualBlock {
    std::vector<DenseStage> stages;
    nn::Linear last;
    nn::Linear shortcut;  // empty W means identity

    struct Cache {
        std::vector<DenseStage::Cache> stages;
        Matrix last_input;
        Matrix input;
    };

    bool identity_shortcut() const { return shortcut.W.size() == 0; }
    Eigen::Index in_dim() const { return stages.empty() ? last.in_dim() : stages.front().linear.in_dim(); }
    Eigen::Index out_dim() const { return last.out_dim(); }

    /// `widths` are the hidden widths of the dense stages.
    static ResidualBlock make(Eigen::Index in, const std::vector<Eigen::Index>& widths, Eigen::Index out,
                              std::mt19937_64& rng) {
        ResidualBlock b;
        Eigen::Index d = in;
        for (auto w : widths) {
            b.stages.emplace_back(d, w, rng);
            d = w;
        }
        b.last = nn::Linear(d, out, true, rng);
        if (in != out) b.shortcut = nn::Linear(in, out, false, rng);
        return b;
    }

    Matrix transform(const Matrix& h, Cache* c = nullptr) const {
        Matrix x = h;
        if (c) c->stages.resize(stages.size());
        for (std::size_t i = 0; i < stages.size(); ++i) x = stages[i].forward(x, c ? &c->stages[i] : nullptr);
        if (c) c->last_input = x;
        return last.forward(x);
    }

    Matrix forward(const Matrix& h, Cache* c = nullptr) const {
        if (h.cols() != in_dim()) throw ValidationError("residual block input has wrong width");
        if (c) c->input = h;
        Matrix f = transform(h, c);
        return identity_shortcut() ? Matrix(f + h) : Matrix(f + shortcut.forward(h));
    }

    Matrix backward(const Matrix& dH, const Cache& c, ResidualBlock& g) const {
        Matrix dx = last.backward(c.last_input, dH, g.last);
        for (std::size_t i = stages.size(); i-- > 0;) dx = stages[i].backward(dx, c.stages[i], g.stages[i]);
        if (identity_shortcut()) return dx + dH;
        return dx + shortcut.backward(c.input, dH, g.shortcut);
    }

    template <class F> void visit(F&& f) {
        for (auto& s : stages) s.visit(f);
        last.visit(f);
        if (!identity_shortcut()) shortcut.visit(f);
    }
    template <class F> void visit(F&& f) const {
        for (const auto& s : stages) s.visit(f);
        last.visit(f);
        if (!identity_shortcut()) shortcut.visit(f);
    }
};

struct EncoderShape {
    std::string profile = "basic";  // basic | deep
    Eigen::Index input_dim = 75;
    int blocks = 4;                 // basic profile only
    Eigen::Index width = 64;
    Eigen::Index bottleneck = 16;   // deep profile only
    std::vector<int> deep_layout{3, 4, 6, 3};

    nlohmann::json to_json() const {
        return {{"profile", profile}, {"input_dim", input_dim}, {"blocks", blocks},
                {"width", width},     {"bottleneck", bottleneck}, {"deep_layout", deep_layout}};
    }
    static EncoderShape from_json(const nlohmann::json& j) {
        EncoderShape s;
        s.profile = j.at("profile").get<std::string>();
        s.input_dim = j.at("input_dim").get<Eigen::Index>();
        s.blocks = j.at("blocks").get<int>();
        s.width = j.at("width").get<Eigen::Index>();
        s.bottleneck = j.at("bottleneck").get<Eigen::Index>();
        s.deep_layout = j.at("deep_layout").get<std::vector<int>>();
        return s;
    }
};

struct Encoder {
    std::vector<ResidualBlock> blocks;

    struct Cache {
        std::vector<ResidualBlock::Cache> blocks;
    };

    Eigen::Index in_dim() const { return blocks.front().in_dim(); }
    Eigen::Index out_dim() const { return blocks.back().out_dim(); }

    Matrix forward(const Matrix& x, Cache* c = nullptr) const {
        if (x.cols() != in_dim())
            throw ValidationError("encoder expects " + std::to_string(in_dim()) + " inputs, got " +
                                  std::to_string(x.cols()));
        if (c) c->blocks.resize(blocks.size());
        Matrix h = x;
        for (std::size_t i = 0; i < blocks.size(); ++i) h = blocks[i].forward(h, c ? &c->blocks[i] : nullptr);
        return h;
    }

    Matrix backward(const Matrix& dy, const Cache& c, Encoder& g) const {
        Matrix d = dy;
        for (std::size_t i = blocks.size(); i-- > 0;) d = blocks[i].backward(d, c.blocks[i], g.blocks[i]);
        return d;
    }

    template <class F> void visit(F&& f) { for (auto& b : blocks) b.visit(f); }
    template <class F> void visit(F&& f) const { for (const auto& b : blocks) b.visit(f); }
};

/// Basic profile: `blocks` two-stage blocks of width `width`. Deep profile:
/// bottleneck blocks (width -> bottleneck -> bottleneck -> width) laid out in
/// groups as in `deep_layout`.
inline Encoder init_encoder(const EncoderShape& s, std::uint64_t seed) {
    if (s.input_dim < 1 || s.width < 1) throw ValidationError("encoder dimensions must be positive");
    std::mt19937_64 rng(seed);
    Encoder e;
    Eigen::Index in = s.input_dim;
    if (s.profile == "basic") {
        if (s.blocks < 1) throw ValidationError("encoder needs at least one block");
        for (int i = 0; i < s.blocks; ++i) {
            e.blocks.push_back(ResidualBlock::make(in, {s.width}, s.width, rng));
            in = s.width;
        }
    } else if (s.profile == "deep") {
        if (s.bottleneck < 1 || s.deep_layout.empty()) throw ValidationError("deep encoder layout is empty");
        for (int group : s.deep_layout)
            for (int i = 0; i < group; ++i) {
                e.blocks.push_back(ResidualBlock::make(in, {s.bottleneck, s.bottleneck}, s.width, rng));
                in = s.width;
            }
        if (e.blocks.empty()) throw ValidationError("deep encoder layout is empty");
    } else {
        throw ValidationError("unknown encoder profile '" + s.profile + "'");
    }
    return e;
}

inline Vector encode(const Vector& fused, const Encoder& enc) {
    return enc.forward(Matrix(fused.transpose())).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Projection head

struct ProjectionHead {
    nn::Linear first;  // bias-free
    nn::LayerNorm norm;
    nn::Linear second;

    struct Cache {
        Matrix input;
        nn::LayerNorm::Cache norm;
        Matrix normed;
        Matrix hidden;
    };

    Matrix forward(const Matrix& x, Cache* c = nullptr) const {
        Matrix y = first.forward(x);
        Matrix n = norm.forward(y, c ? &c->norm : nullptr);
        Matrix h = nn::activate(nn::Activation::Relu, n);
        if (c) {
            c->input = x;
            c->normed = n;
            c->hidden = h;
        }
        return second.forward(h);
    }

    Matrix backward(const Matrix& dy, const Cache& c, ProjectionHead& g) const {
        Matrix dh = second.backward(c.hidden, dy, g.second);
        Matrix dn = dh.cwiseProduct(nn::activate_grad(nn::Activation::Relu, c.normed));
        return first.backward(c.input, norm.backward(dn, c.norm, g.norm), g.first);
    }

    template <class F> void visit(F&& f) { first.visit(f); norm.visit(f); second.visit(f); }
    template <class F> void visit(F&& f) const { first.visit(f); norm.visit(f); second.visit(f); }
};

struct HeadShape {
    Eigen::Index hidden = 64;
    Eigen::Index proj_dim = 32;
};

inline ProjectionHead init_head(Eigen::Index in, const HeadShape& s, std::uint64_t seed) {
    if (in < 1 || s.hidden < 1 || s.proj_dim < 1) throw ValidationError("projection head dimensions must be positive");
    std::mt19937_64 rng(seed);
    ProjectionHead h;
    h.first = nn::Linear(in, s.hidden, false, rng);
    h.norm = nn::LayerNorm(s.hidden);
    h.second = nn::Linear(s.hidden, s.proj_dim, true, rng);
    return h;
}

// ---------------------------------------------------------------------------
// Loss

inline double cosine_sim(const Vector& s, const Vector& t) {
    if (s.size() != t.size()) throw ValidationError("cosine_sim: length mismatch");
    const double ns = s.norm(), nt = t.norm();
    if (ns == 0 || nt == 0) throw ValidationError("cosine_sim: zero vector");
    return std::clamp(s.dot(t) / (ns * nt), -1.0, 1.0);
}

enum class LossMode {
    Views,  // anchor i against all N view embeddings, positive included
    NtXent  // 2N samples, each against the other 2N-1
};

inline LossMode parse_loss_mode(std::string_view s) {
    if (s == "views") return LossMode::Views;
    if (s == "ntxent") return LossMode::NtXent;
    throw ValidationError("unknown loss mode '" + std::string(s) + "'");
}

inline std::string_view to_string(LossMode m) { return m == LossMode::Views ? "views" : "ntxent"; }

struct ContrastiveLoss {
    double loss = 0;
    Matrix d_anchor;  // dL/dS
    Matrix d_view;    // dL/dS'
    double pos_sim_mean = 0;
    double neg_sim_mean = 0;
};

namespace detail {

inline Vector row_norms(const Matrix& m) {
    Vector n = m.rowwise().norm();
    for (Eigen::Index i = 0; i < n.size(); ++i)
        if (n[i] == 0) throw ValidationError("contrastive loss: zero embedding at row " + std::to_string(i));
    return n;
}

// Given dL/dC for C = cos(U_i, V_j), accumulate dL/dU and dL/dV.
inline void cosine_backward(const Matrix& U, const Vector& nu, const Matrix& V, const Vector& nv, const Matrix& dC,
                            Matrix& dU, Matrix& dV) {
    const Matrix Uh = U.array().colwise() / nu.array();
    const Matrix Vh = V.array().colwise() / nv.array();
    Matrix gU = dC * Vh;
    Matrix gV = dC.transpose() * Uh;
    for (Eigen::Index i = 0; i < U.rows(); ++i)
        dU.row(i) += (gU.row(i) - gU.row(i).dot(Uh.row(i)) * Uh.row(i)) / nu[i];
    for (Eigen::Index j = 0; j < V.rows(); ++j)
        dV.row(j) += (gV.row(j) - gV.row(j).dot(Vh.row(j)) * Vh.row(j)) / nv[j];
}

inline Matrix cosine_matrix(const Matrix& U, const Vector& nu, const Matrix& V, const Vector& nv) {
    Matrix c = (U * V.transpose()).array().colwise() / nu.array();
    c = c.array().rowwise() / nv.transpose().array();
    return c;
}

}  // namespace detail

/// Mean over anchors of -log softmax of the positive similarity (divided by tau).
inline ContrastiveLoss contrastive_loss(const Matrix& S, const Matrix& Sp, double tau,
                                        LossMode mode = LossMode::Views) {
    if (S.rows() != Sp.rows() || S.cols() != Sp.cols()) throw ValidationError("contrastive loss: shape mismatch");
    if (S.rows() < 2) throw ValidationError("contrastive loss needs N >= 2");
    if (!(tau > 0)) throw ValidationError("temperature must be > 0");
    const auto n = S.rows();
    const Vector ns = detail::row_norms(S), np = detail::row_norms(Sp);
    ContrastiveLoss out;
    out.d_anchor = Matrix::Zero(S.rows(), S.cols());
    out.d_view = Matrix::Zero(Sp.rows(), Sp.cols());

    const Matrix cross = detail::cosine_matrix(S, ns, Sp, np);
    out.pos_sim_mean = cross.diagonal().mean();
    out.neg_sim_mean = (cross.sum() - cross.diagonal().sum()) / static_cast<double>(n * (n - 1));

    if (mode == LossMode::Views) {
        Matrix dC = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const RowVector logits = cross.row(i) / tau;
            const double mx = logits.maxCoeff();
            const RowVector e = (logits.array() - mx).exp();
            const double z = e.sum();
            out.loss += -logits(i) + mx + std::log(z);
            dC.row(i) = e / z;
            dC(i, i) -= 1.0;
        }
        out.loss /= static_cast<double>(n);
        dC /= static_cast<double>(n) * tau;
        detail::cosine_backward(S, ns, Sp, np, dC, out.d_anchor, out.d_view);
        return out;
    }

    Matrix W(2 * n, S.cols());
    W << S, Sp;
    Vector nw(2 * n);
    nw << ns, np;
    const Matrix C = detail::cosine_matrix(W, nw, W, nw);
    const auto m = 2 * n;
    Matrix dC = Matrix::Zero(m, m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index pos = k < n ? k + n : k - n;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < m; ++j)
            if (j != k) mx = std::max(mx, C(k, j) / tau);
        double z = 0;
        for (Eigen::Index j = 0; j < m; ++j)
            if (j != k) z += (dC(k, j) = std::exp(C(k, j) / tau - mx));
        out.loss += -C(k, pos) / tau + mx + std::log(z);
        dC.row(k) /= z;
        dC(k, pos) -= 1.0;
    }
    out.loss /= static_cast<double>(m);
    dC /= static_cast<double>(m) * tau;
    Matrix dW = Matrix::Zero(m, S.cols());
    detail::cosine_backward(W, nw, W, nw, dC, dW, dW);
    out.d_anchor = dW.topRows(n);
    out.d_view = dW.bottomRows(n);
    return out;
}

// ---------------------------------------------------------------------------
// Pre-training

struct ContrastiveConfig {
    int batch = 32;
    double tau = 1.0;
    int epochs = 50;
    double step = 1e-3;
    std::uint64_t seed = 7;
    nn::OptimizerKind optimizer = nn::OptimizerKind::Sgd;
    LossMode mode = LossMode::Views;

    void validate() const {
        if (batch < 2) throw ValidationError("pretrain batch must be >= 2");
        if (!(tau > 0)) throw ValidationError("pretrain tau must be > 0");
        if (epochs < 0) throw ValidationError("pretrain epochs must be >= 0");
        if (!(step > 0)) throw ValidationError("pretrain step must be > 0");
    }
};

/// One unlabeled account as seen by pre-training.
struct PretrainSample {
    const EgoGraph* ego = nullptr;
    Vector z;  // structural embedding row
};

struct PretrainEpoch {
    int epoch = 0;
    double loss = 0;
    double pos_sim_mean = 0;
    double neg_sim_mean = 0;
};

struct PretrainResult {
    Encoder encoder;
    ProjectionHead head;
    std::vector<PretrainEpoch> log;
};

struct ContrastiveModel {
    Encoder encoder;
    ProjectionHead head;

    template <class F> void visit(F&& f) { encoder.visit(f); head.visit(f); }
    template <class F> void visit(F&& f) const { encoder.visit(f); head.visit(f); }
};

/// Embeds rows through encoder and head, returning caches for backward.
struct Embedded {
    Matrix s;
    Encoder::Cache enc;
    ProjectionHead::Cache head;
};

inline Embedded embed(const ContrastiveModel& m, const Matrix& x) {
    Embedded e;
    e.s = m.head.forward(m.encoder.forward(x, &e.enc), &e.head);
    return e;
}

inline void embed_backward(const ContrastiveModel& m, const Embedded& e, const Matrix& ds, ContrastiveModel& g) {
    m.encoder.backward(m.head.backward(ds, e.head, g.head), e.enc, g.encoder);
}

/// Stacks fused views of one batch into matrices.
inline std::pair<Matrix, Matrix> batch_views(const std::vector<PretrainSample>& samples,
                                             std::span<const std::size_t> idx, const MinMaxStats& stats,
                                             const AugmentConfig& aug, std::uint64_t view_seed,
                                             const StructureFn& restructure = {}) {
    Matrix a, b;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& smp = samples[idx[r]];
        std::mt19937_64 rng(derive_seed(view_seed, "sample", idx[r]));
        auto vp = make_views(*smp.ego, smp.z, stats, aug, rng, std::nullopt, restructure);
        if (r == 0) {
            a.resize(static_cast<Eigen::Index>(idx.size()), vp.view1.values.size());
            b.resize(a.rows(), a.cols());
        }
        a.row(static_cast<Eigen::Index>(r)) = vp.view1.values.transpose();
        b.row(static_cast<Eigen::Index>(r)) = vp.view2.values.transpose();
    }
    return {a, b};
}

/// Contrastive pre-training of encoder and projection head.
inline PretrainResult pretrain(const std::vector<PretrainSample>& samples, const MinMaxStats& stats,
                               const AugmentConfig& aug, const EncoderShape& enc_shape, const HeadShape& head_shape,
                               const ContrastiveConfig& cfg, const StructureFn& restructure = {}) {
    cfg.validate();
    aug.validate();
    if (samples.size() < 2 * static_cast<std::size_t>(cfg.batch))
        throw ValidationError("pretrain needs at least 2*batch samples (" + std::to_string(2 * cfg.batch) + "), got " +
                              std::to_string(samples.size()));
    ContrastiveModel m;
    m.encoder = init_encoder(enc_shape, derive_seed(cfg.seed, "encoder-init"));
    m.head = init_head(m.encoder.out_dim(), head_shape, derive_seed(cfg.seed, "head-init"));
    nn::Optimizer opt(cfg.optimizer, cfg.step);
    PretrainResult r;

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(cfg.batch);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "pretrain-shuffle", static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const auto view_seed = derive_seed(derive_seed(cfg.seed, "pretrain-views"), "epoch", static_cast<std::uint64_t>(epoch));
        PretrainEpoch log{epoch, 0, 0, 0};
        int batches = 0;
        for (std::size_t start = 0; start + 1 < order.size(); start += batch) {
            const auto len = std::min(batch, order.size() - start);
            if (len < 2) break;
            auto [xa, xb] = batch_views(samples, std::span(order).subspan(start, len), stats, aug, view_seed, restructure);
            auto ea = embed(m, xa), eb = embed(m, xb);
            auto l = contrastive_loss(ea.s, eb.s, cfg.tau, cfg.mode);
            auto g = nn::zeros_like(m);
            embed_backward(m, ea, l.d_anchor, g);
            embed_backward(m, eb, l.d_view, g);
            if (!std::isfinite(l.loss) || !nn::all_finite(g))
                throw DivergenceError("pretrain diverged at epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(batches) + " (loss " + std::to_string(l.loss) + ")");
            opt.step(m, g);
            log.loss += l.loss;
            log.pos_sim_mean += l.pos_sim_mean;
            log.neg_sim_mean += l.neg_sim_mean;
            ++batches;
        }
        log.loss /= batches;
        log.pos_sim_mean /= batches;
        log.neg_sim_mean /= batches;
        r.log.push_back(log);
    }
    r.encoder = std::move(m.encoder);
    r.head = std::move(m.head);
    return r;
}

struct ViewAgreement {
    double pos_sim_mean = 0;  // cos(s_i, s'_i)
    double neg_sim_mean = 0;  // cos(s_i, s'_j), i != j
};

/// Cosine agreement of fresh view pairs under a trained model, e.g. on held-out accounts.
inline ViewAgreement view_agreement(const ContrastiveModel& m, const std::vector<PretrainSample>& samples,
                                    const MinMaxStats& stats, const AugmentConfig& aug, std::uint64_t view_seed,
                                    const StructureFn& restructure = {}) {
    if (samples.size() < 2) throw ValidationError("view agreement needs at least two samples");
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto [xa, xb] = batch_views(samples, idx, stats, aug, view_seed, restructure);
    const Matrix sa = m.head.forward(m.encoder.forward(xa)), sb = m.head.forward(m.encoder.forward(xb));
    const Matrix na = sa.rowwise().normalized(), nb = sb.rowwise().normalized();
    const Matrix c = na * nb.transpose();
    const auto n = static_cast<double>(c.rows());
    ViewAgreement v;
    v.pos_sim_mean = c.diagonal().mean();
    v.neg_sim_mean = (c.sum() - c.diagonal().sum()) / (n * (n - 1));
    return v;
}

// ---------------------------------------------------------------------------
// Persistence

inline void write_pretrain_log(const std::string& path, const std::vector<PretrainEpoch>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out.precision(17);
    out << "epoch,loss,pos_sim_mean,neg_sim_mean\n";
    for (const auto& e : log) out << e.epoch << ',' << e.loss << ',' << e.pos_sim_mean << ',' << e.neg_sim_mean << '\n';
}

inline nlohmann::json encoder_checkpoint(const Encoder& enc, const EncoderShape& es, const ProjectionHead* head,
                                         const HeadShape& hs, const std::string& config_hash) {
    nlohmann::json j;
    j["format"] = "shadoweyes-encoder";
    j["version"] = 1;
    j["config_hash"] = config_hash;
    j["encoder_shape"] = es.to_json();
    j["encoder"] = nn::params_to_json(enc);
    if (head) {
        j["head_shape"] = {{"hidden", hs.hidden}, {"proj_dim", hs.proj_dim}};
        j["head"] = nn::params_to_json(*head);
    }
    return j;
}

struct LoadedEncoder {
    Encoder encoder;
    EncoderShape shape;
    std::string config_hash;
};

inline LoadedEncoder load_encoder_checkpoint(const nlohmann::json& j) {
    if (j.value("format", "") != "shadoweyes-encoder" || j.value("version", 0) != 1)
        throw ParseError("not a version-1 encoder checkpoint");
    LoadedEncoder l;
    l.shape = EncoderShape::from_json(j.at("encoder_shape"));
    l.encoder = init_encoder(l.shape, 0);
    nn::params_from_json(l.encoder, j.at("encoder"));
    l.config_hash = j.value("config_hash", "");
    return l;
}

}  // namespace shadoweyes
