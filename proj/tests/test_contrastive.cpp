#include <gtest/gtest.h>

#include <random>

#include "shadoweyes/contrastive.hpp"
#include "shadoweyes/synthgen.hpp"

using namespace shadoweyes;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0, 1);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

double relu(double x) { return x > 0 ? x : 0; }

// Independent evaluation of one basic block: F(h) = W2 relu(LN(W1 h + b1)) + b2, plus shortcut.
Vector manual_block(const ResidualBlock& b, const Vector& h) {
    Vector x = h;
    for (const auto& s : b.stages) {
        Vector y = s.linear.W.transpose() * x + s.linear.b.row(0).transpose();
        const double mu = y.mean();
        const double var = (y.array() - mu).square().mean();
        Vector n(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i)
            n[i] = relu((y[i] - mu) / std::sqrt(var + s.norm.eps) * s.norm.gamma(0, i) + s.norm.beta(0, i));
        x = n;
    }
    Vector f = b.last.W.transpose() * x + b.last.b.row(0).transpose();
    return f + (b.identity_shortcut() ? h : Vector(b.shortcut.W.transpose() * h));
}

struct Corpus {
    Dataset data;
    std::vector<EgoGraph> egos;
    MinMaxStats stats;
    std::vector<PretrainSample> samples;
};

Corpus make_corpus(int per_class) {
    auto spec = GeneratorSpec::with_defaults();
    spec.counts = {{BehaviorLabel::Phishing, per_class}};
    spec.normal_count = per_class;
    spec.seed = 3;
    Corpus c{generate_dataset(spec), {}, {}, {}};
    Matrix rows(static_cast<Eigen::Index>(c.data.labels().size()), static_cast<Eigen::Index>(kFeatureCount));
    Eigen::Index r = 0;
    for (const auto& [addr, _] : c.data.labels()) {
        c.egos.push_back(build_ego_graph(c.data, addr, 1));
        rows.row(r++) = extract_attributes(c.egos.back(), addr).values.transpose();
    }
    c.stats = fit_minmax(rows);
    for (const auto& e : c.egos) c.samples.push_back({&e, Vector::Constant(4, 0.25)});
    return c;
}

EncoderShape small_encoder(Eigen::Index in) {
    EncoderShape s;
    s.input_dim = in;
    s.blocks = 2;
    s.width = 8;
    return s;
}

}  // namespace

TEST(ResidualBlockTest, ZeroTransformWithIdentityShortcutIsIdentity) {
    std::mt19937_64 rng(1);
    auto b = ResidualBlock::make(5, {5}, 5, rng);
    ASSERT_TRUE(b.identity_shortcut());
    b.last.W.setZero();
    b.last.b.setZero();
    Matrix h = random_matrix(3, 5, rng);
    EXPECT_EQ(b.forward(h), h);
}

TEST(ResidualBlockTest, ZeroInputGivesTransformOfZero) {
    std::mt19937_64 rng(2);
    auto b = ResidualBlock::make(4, {6}, 3, rng);
    Matrix z = Matrix::Zero(1, 4);
    EXPECT_TRUE(b.forward(z).isApprox(b.transform(z)));
}

TEST(ResidualBlockTest, MatchesManualEvaluation) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto b = ResidualBlock::make(6, {7}, trial % 2 ? 6 : 4, rng);
        for (auto& s : b.stages) {
            s.linear.b = random_matrix(1, s.linear.out_dim(), rng);
            s.norm.gamma = random_matrix(1, s.linear.out_dim(), rng);
            s.norm.beta = random_matrix(1, s.linear.out_dim(), rng);
        }
        Vector h = random_matrix(6, 1, rng).col(0);
        Vector got = b.forward(Matrix(h.transpose())).row(0).transpose();
        EXPECT_TRUE(got.isApprox(manual_block(b, h), 1e-9));
    }
}

TEST(EncoderTest, CompositionAndDeterminism) {
    EncoderShape s;
    s.input_dim = 10;
    auto e = init_encoder(s, 4);
    ASSERT_EQ(e.blocks.size(), 4u);
    EXPECT_FALSE(e.blocks[0].identity_shortcut());
    EXPECT_TRUE(e.blocks[1].identity_shortcut());
    std::mt19937_64 rng(5);
    Vector x = random_matrix(10, 1, rng).col(0);
    Vector manual = x;
    for (const auto& b : e.blocks) manual = manual_block(b, manual);
    EXPECT_TRUE(encode(x, e).isApprox(manual, 1e-9));
    EXPECT_EQ(encode(x, e), encode(x, e));
    EXPECT_THROW(encode(Vector::Zero(9), e), ValidationError);
}

TEST(EncoderTest, DeepProfileLayout) {
    EncoderShape s;
    s.profile = "deep";
    s.input_dim = 75;
    auto e = init_encoder(s, 1);
    EXPECT_EQ(e.blocks.size(), 16u);
    EXPECT_EQ(e.blocks[0].stages.size(), 2u);
    EXPECT_EQ(e.blocks[0].stages[0].linear.out_dim(), 16);
    EXPECT_EQ(e.out_dim(), 64);
    s.profile = "wide";
    EXPECT_THROW(init_encoder(s, 1), ValidationError);
}

TEST(Cosine, Examples) {
    Vector a(2), b(2);
    a << 1, 0;
    b << 1, 1;
    EXPECT_NEAR(cosine_sim(a, b), 1 / std::sqrt(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(cosine_sim(b, b), 1.0);
    Vector c(2);
    c << 0, 3;
    EXPECT_DOUBLE_EQ(cosine_sim(a, c), 0.0);
    EXPECT_THROW(cosine_sim(a, Vector::Zero(2)), ValidationError);
    EXPECT_NEAR(cosine_sim(7.5 * a, b), cosine_sim(a, b), 1e-12);
}

TEST(Loss, EqualSimilaritiesGiveLogN) {
    Matrix s = Matrix::Ones(2, 3);
    EXPECT_NEAR(contrastive_loss(s, s, 1.0).loss, std::log(2.0), 1e-12);
}

TEST(Loss, PerfectAlignmentNearZero) {
    Matrix s(2, 2);
    s << 1, 0, -1, 0;
    const double expect = -std::log(std::exp(10.0) / (std::exp(10.0) + std::exp(-10.0)));
    EXPECT_NEAR(contrastive_loss(s, s, 0.1).loss, expect, 1e-15);
    EXPECT_NEAR(expect, 2.06e-9, 1e-11);
}

TEST(Loss, PositiveAndPermutationInvariant) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a = random_matrix(5, 3, rng), b = random_matrix(5, 3, rng);
        for (auto mode : {LossMode::Views, LossMode::NtXent}) {
            const double l = contrastive_loss(a, b, 0.5, mode).loss;
            EXPECT_GT(l, 0.0);
            std::vector<Eigen::Index> perm{3, 0, 4, 1, 2};
            Matrix pa(5, 3), pb(5, 3);
            for (Eigen::Index i = 0; i < 5; ++i) {
                pa.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
                pb.row(i) = b.row(perm[static_cast<std::size_t>(i)]);
            }
            EXPECT_NEAR(contrastive_loss(pa, pb, 0.5, mode).loss, l, 1e-12);
        }
    }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    for (auto mode : {LossMode::Views, LossMode::NtXent}) {
        for (int trial = 0; trial < 10; ++trial) {
            Matrix a = random_matrix(3, 5, rng), b = random_matrix(3, 5, rng);
            const double tau = 0.3 + 0.1 * trial;
            auto l = contrastive_loss(a, b, tau, mode);
            for (int which = 0; which < 2; ++which) {
                Matrix& m = which ? b : a;
                const Matrix& g = which ? l.d_view : l.d_anchor;
                for (Eigen::Index i = 0; i < m.size(); ++i) {
                    const double keep = m.data()[i], h = 1e-6;
                    m.data()[i] = keep + h;
                    const double up = contrastive_loss(a, b, tau, mode).loss;
                    m.data()[i] = keep - h;
                    const double down = contrastive_loss(a, b, tau, mode).loss;
                    m.data()[i] = keep;
                    const double fd = (up - down) / (2 * h);
                    EXPECT_LE(std::abs(fd - g.data()[i]), 1e-4 * std::max({std::abs(fd), std::abs(g.data()[i]), 1e-3}));
                }
            }
        }
    }
}

TEST(Loss, Errors) {
    EXPECT_THROW(contrastive_loss(Matrix::Ones(1, 2), Matrix::Ones(1, 2), 1), ValidationError);
    EXPECT_THROW(contrastive_loss(Matrix::Ones(2, 2), Matrix::Zero(2, 2), 1), ValidationError);
    EXPECT_THROW(contrastive_loss(Matrix::Ones(2, 2), Matrix::Ones(2, 2), 0), ValidationError);
}

TEST(Embedding, ParameterGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    ContrastiveModel m{init_encoder(small_encoder(4), 1), init_head(8, {6, 3}, 2)};
    Matrix xa = random_matrix(3, 4, rng), xb = random_matrix(3, 4, rng);
    auto loss_of = [&] { return contrastive_loss(embed(m, xa).s, embed(m, xb).s, 0.5).loss; };
    auto ea = embed(m, xa), eb = embed(m, xb);
    auto l = contrastive_loss(ea.s, eb.s, 0.5);
    auto g = nn::zeros_like(m);
    embed_backward(m, ea, l.d_anchor, g);
    embed_backward(m, eb, l.d_view, g);
    auto ps = nn::tensors(m);
    auto gs = nn::tensors(g);
    for (std::size_t t = 0; t < ps.size(); ++t)
        for (Eigen::Index i = 0; i < ps[t]->size(); ++i) {
            double& x = ps[t]->data()[i];
            const double keep = x, h = 1e-6;
            x = keep + h;
            const double up = loss_of();
            x = keep - h;
            const double down = loss_of();
            x = keep;
            const double fd = (up - down) / (2 * h), an = gs[t]->data()[i];
            EXPECT_LE(std::abs(fd - an), 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-3})) << t << ":" << i;
        }
}

TEST(Pretrain, ZeroEpochsReturnsInitialization) {
    auto c = make_corpus(6);
    ContrastiveConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 0;
    auto r = pretrain(c.samples, c.stats, {}, small_encoder(47), {6, 3}, cfg);
    EXPECT_EQ(nn::checksum(r.encoder), nn::checksum(init_encoder(small_encoder(47), derive_seed(cfg.seed, "encoder-init"))));
    EXPECT_TRUE(r.log.empty());
}

TEST(Pretrain, DeterministicAndLogged) {
    auto c = make_corpus(6);
    ContrastiveConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 3;
    cfg.optimizer = nn::OptimizerKind::Adam;
    auto a = pretrain(c.samples, c.stats, {}, small_encoder(47), {6, 3}, cfg);
    auto b = pretrain(c.samples, c.stats, {}, small_encoder(47), {6, 3}, cfg);
    EXPECT_EQ(nn::checksum(a.encoder), nn::checksum(b.encoder));
    EXPECT_EQ(nn::checksum(a.head), nn::checksum(b.head));
    ASSERT_EQ(a.log.size(), 3u);
    for (const auto& e : a.log) EXPECT_TRUE(std::isfinite(e.loss));
}

TEST(Pretrain, RejectsTooFewSamples) {
    auto c = make_corpus(3);
    ContrastiveConfig cfg;
    cfg.batch = 4;
    EXPECT_THROW(pretrain(c.samples, c.stats, {}, small_encoder(47), {6, 3}, cfg), ValidationError);
}

TEST(Checkpoint, RoundTrip) {
    auto e = init_encoder(small_encoder(47), 3);
    auto h = init_head(8, {6, 3}, 4);
    auto j = nlohmann::json::parse(encoder_checkpoint(e, small_encoder(47), &h, {6, 3}, "abc").dump());
    auto l = load_encoder_checkpoint(j);
    EXPECT_EQ(nn::checksum(l.encoder), nn::checksum(e));
    EXPECT_EQ(l.config_hash, "abc");
    j["format"] = "other";
    EXPECT_THROW(load_encoder_checkpoint(j), ParseError);
}
