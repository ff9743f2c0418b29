#include <gtest/gtest.h>

#include <random>

#include "shadoweyes/augment.hpp"

using namespace shadoweyes;

namespace {

std::vector<TransactionRecord> random_history(std::mt19937_64& rng, int n) {
    std::uniform_int_distribution<std::int64_t> t(1'600'000'000, 1'600'000'000 + 10 * 86400);
    std::uniform_int_distribution<std::int64_t> amt(1, 50);
    std::uniform_int_distribution<int> cp(0, 4);
    std::bernoulli_distribution in(0.5);
    std::vector<TransactionRecord> v;
    for (int i = 0; i < n; ++i) {
        auto other = "cp" + std::to_string(cp(rng));
        TransactionRecord r{"t" + std::to_string(i), t(rng), "c", other, amt(rng)};
        if (in(rng)) std::swap(r.sender, r.receiver);
        v.push_back(r);
    }
    std::sort(v.begin(), v.end(), earlier);
    return v;
}

std::string base_id(const std::string& id) {
    auto pos = id.find('/');
    return pos == std::string::npos ? id : id.substr(0, pos);
}

std::pair<std::int64_t, std::int64_t> totals(const std::vector<TransactionRecord>& h) {
    std::int64_t in = 0, out = 0;
    for (const auto& t : h) (t.receiver == "c" ? in : out) += t.amount;
    return {in, out};
}

std::pair<std::set<std::string>, std::set<std::string>> counterparties(const std::vector<TransactionRecord>& h) {
    std::set<std::string> in, out;
    for (const auto& t : h) {
        if (t.receiver == "c") in.insert(t.sender);
        if (t.sender == "c") out.insert(t.receiver);
    }
    return {in, out};
}

AugmentConfig cfg_with(double p, double theta = 0.1, double dt = 3600) {
    AugmentConfig c;
    c.p = p;
    c.theta = theta;
    c.delta_t_max = dt;
    return c;
}

}  // namespace

TEST(TimeDelay, ZeroProbabilityIsIdentity) {
    std::mt19937_64 rng(1);
    auto h = random_history(rng, 12);
    EXPECT_EQ(time_delay(h, cfg_with(0), rng), h);
}

TEST(TimeDelay, SubSecondMaximumLeavesTimesUnchanged) {
    std::mt19937_64 rng(2);
    auto h = random_history(rng, 8);
    EXPECT_EQ(time_delay(h, cfg_with(1, 0.1, 0.5), rng), h);
}

TEST(TimeDelay, FullProbabilityStaysWithinBound) {
    std::mt19937_64 rng(3);
    std::vector<TransactionRecord> h{{"a", 100, "c", "x", 5}, {"b", 200, "x", "c", 6}, {"d", 300, "c", "y", 7}};
    auto out = time_delay(h, cfg_with(1, 0.1, 50), rng);
    ASSERT_EQ(out.size(), 3u);
    for (const auto& t : out) {
        auto orig = std::find_if(h.begin(), h.end(), [&](const auto& o) { return o.tx_id == t.tx_id; });
        EXPECT_GE(t.timestamp, orig->timestamp);
        EXPECT_LE(t.timestamp, orig->timestamp + 50);
    }
    EXPECT_TRUE(std::is_sorted(out.begin(), out.end(), earlier));
}

TEST(TimeDelay, SingleDeltaShiftsEverythingTogether) {
    std::mt19937_64 rng(4);
    auto h = random_history(rng, 10);
    auto c = cfg_with(1);
    c.single_delta = true;
    auto out = time_delay(h, c, rng);
    const auto shift = out[0].timestamp - h[0].timestamp;
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(out[i].timestamp - h[i].timestamp, shift);
}

TEST(TimeDelay, EmptyHistoryRejected) {
    std::mt19937_64 rng(5);
    EXPECT_THROW(time_delay({}, cfg_with(0.5), rng), ValidationError);
}

TEST(AmountSplit, SingleTransactionSplitsIntoHalves) {
    std::mt19937_64 rng(6);
    std::vector<TransactionRecord> h{{"t", 100, "s", "c", 10}};
    auto out = amount_split(h, cfg_with(1, 1.0), rng);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].amount, 5);
    EXPECT_EQ(out[1].amount, 5);
    for (const auto& t : out) {
        EXPECT_EQ(t.sender, "s");
        EXPECT_EQ(t.receiver, "c");
    }
    EXPECT_EQ(out[0].timestamp, 100);
    EXPECT_NE(out[0].tx_id, out[1].tx_id);
}

TEST(AmountSplit, OddAmountUsesCeilAndFloor) {
    std::mt19937_64 rng(7);
    auto out = amount_split({{"t", 0, "s", "c", 7}}, cfg_with(1, 1.0), rng);
    ASSERT_EQ(out.size(), 2u);
    std::multiset<std::int64_t> amounts{out[0].amount, out[1].amount};
    EXPECT_EQ(amounts, (std::multiset<std::int64_t>{3, 4}));
}

TEST(AmountSplit, UnsplittableAmountsAreCounted) {
    std::mt19937_64 rng(8);
    SplitStats s;
    auto out = amount_split({{"t", 0, "s", "c", 1}}, cfg_with(1, 1.0), rng, &s);
    EXPECT_EQ(out.size(), 1u);
    EXPECT_EQ(s.skipped, 1u);
    EXPECT_EQ(s.split, 0u);
}

TEST(AmountSplit, ZeroProbabilityIsIdentity) {
    std::mt19937_64 rng(9);
    auto h = random_history(rng, 15);
    EXPECT_EQ(amount_split(h, cfg_with(0, 1.0), rng), h);
}

TEST(AmountSplit, ChoosesCeilThetaShare) {
    std::mt19937_64 rng(10);
    std::vector<TransactionRecord> h;
    for (int i = 0; i < 21; ++i) h.push_back({"t" + std::to_string(i), i, "s", "c", 100});
    SplitStats s;
    auto out = amount_split(h, cfg_with(1, 0.1), rng, &s);
    EXPECT_EQ(s.split, 3u);
    EXPECT_EQ(out.size(), 24u);
}

TEST(Augment, PropertyInvariants) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(0, 1);
    for (int trial = 0; trial < 300; ++trial) {
        auto h = random_history(rng, 1 + trial % 25);
        auto c = cfg_with(unit(rng), 0.05 + 0.95 * unit(rng), 1 + 7200 * unit(rng));
        c.single_delta = trial % 3 == 0;

        auto delayed = time_delay(h, c, rng);
        ASSERT_EQ(delayed.size(), h.size());
        for (const auto& t : delayed) {
            auto o = std::find_if(h.begin(), h.end(), [&](const auto& x) { return x.tx_id == t.tx_id; });
            EXPECT_GE(t.timestamp, o->timestamp);
            EXPECT_EQ(t.amount, o->amount);
        }
        EXPECT_EQ(counterparties(delayed), counterparties(h));

        SplitStats s;
        auto split = amount_split(h, c, rng, &s);
        EXPECT_EQ(totals(split), totals(h));
        EXPECT_EQ(split.size(), h.size() + s.split);
        EXPECT_EQ(counterparties(split), counterparties(h));
        for (const auto& t : split) {
            auto o = std::find_if(h.begin(), h.end(), [&](const auto& x) { return x.tx_id == base_id(t.tx_id); });
            ASSERT_NE(o, h.end());
            EXPECT_GE(t.timestamp, o->timestamp);
        }

        auto aug = augment_history(h, BehaviorLabel::Gambling, c, rng);
        EXPECT_EQ(aug.label, BehaviorLabel::Gambling);
        EXPECT_EQ(totals(aug.history), totals(h));
    }
}

TEST(Augment, ConfigValidation) {
    std::mt19937_64 rng(12);
    std::vector<TransactionRecord> h{{"t", 0, "s", "c", 3}};
    EXPECT_THROW(time_delay(h, cfg_with(1.5), rng), ValidationError);
    EXPECT_THROW(amount_split(h, cfg_with(0.5, 0.0), rng), ValidationError);
    EXPECT_THROW(time_delay(h, cfg_with(0.5, 0.1, 0), rng), ValidationError);
}

namespace {

struct Fixture {
    Dataset data;
    EgoGraph ego;
    MinMaxStats stats;
    Vector z;

    static Fixture make() {
        std::mt19937_64 rng(13);
        auto h = random_history(rng, 20);
        Dataset d(h, {{"c", BehaviorLabel::Phishing}}, "btc");
        auto ego = build_ego_graph(d, "c", 1);
        Matrix rows(1, static_cast<Eigen::Index>(kFeatureCount));
        rows.row(0) = extract_attributes(ego, "c").values.transpose();
        MinMaxStats s{rows.row(0).transpose().array() - 1.0, rows.row(0).transpose().array() + 1.0};
        return {std::move(d), std::move(ego), s, Vector::LinSpaced(8, -1, 1)};
    }
};

}  // namespace

TEST(MakeViews, ZeroProbabilityReproducesOriginal) {
    auto f = Fixture::make();
    std::mt19937_64 rng(1);
    auto vp = make_views(f.ego, f.z, f.stats, cfg_with(0), rng, BehaviorLabel::Phishing);
    auto original = fuse("c", apply_minmax(extract_attributes(f.ego, "c").values, f.stats), f.z, 8);
    EXPECT_EQ(vp.view1.values, original.values);
    EXPECT_EQ(vp.view2.values, original.values);
    EXPECT_EQ(vp.label, BehaviorLabel::Phishing);
}

TEST(MakeViews, DeterministicPerSeed) {
    auto f = Fixture::make();
    std::mt19937_64 a(5), b(5);
    auto va = make_views(f.ego, f.z, f.stats, cfg_with(0.5, 0.5), a);
    auto vb = make_views(f.ego, f.z, f.stats, cfg_with(0.5, 0.5), b);
    EXPECT_EQ(va.view1.values, vb.view1.values);
    EXPECT_EQ(va.view2.values, vb.view2.values);
}

TEST(MakeViews, PureAmountTotalsAndStructureKept) {
    auto f = Fixture::make();
    std::mt19937_64 rng(6);
    auto c = cfg_with(1, 0.5);
    auto vp = make_views(f.ego, f.z, f.stats, c, rng);
    auto original = apply_minmax(extract_attributes(f.ego, "c").values, f.stats);
    for (const char* name : {"total_in", "total_out", "net_out_minus_in"}) {
        auto k = static_cast<Eigen::Index>(feature_index(name));
        EXPECT_DOUBLE_EQ(vp.view1.values[k], original[k]) << name;
        EXPECT_DOUBLE_EQ(vp.view2.values[k], original[k]) << name;
    }
    EXPECT_EQ(vp.view1.values.tail(8), f.z);
    EXPECT_NE(vp.view1.values, vp.view2.values);
}

TEST(MakeViews, RestructureHookUsedOnlyWhenEnabled) {
    auto f = Fixture::make();
    int calls = 0;
    StructureFn hook = [&](const EgoGraph&) {
        ++calls;
        return Vector::Zero(8).eval();
    };
    std::mt19937_64 rng(7);
    auto c = cfg_with(0.5);
    make_views(f.ego, f.z, f.stats, c, rng, std::nullopt, hook);
    EXPECT_EQ(calls, 0);
    c.recompute_structure = true;
    auto vp = make_views(f.ego, f.z, f.stats, c, rng, std::nullopt, hook);
    EXPECT_EQ(calls, 2);
    EXPECT_TRUE(vp.view1.values.tail(8).isZero());
}
