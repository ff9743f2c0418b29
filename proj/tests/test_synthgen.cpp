#include <gtest/gtest.h>

#include <functional>
#include <sstream>

#include "shadoweyes/features.hpp"
#include "shadoweyes/synthgen.hpp"

using namespace shadoweyes;

namespace {

AccountContext ctx(const std::string& center) { return {center, "btc", 1'600'000'000, 180 * 86400, 0, 0}; }

AccountHistory gen(BehaviorLabel l, const BehaviorParams& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return generate_account(l, p, rng, ctx("center"));
}

std::vector<TransactionRecord> own(const AccountHistory& h) {
    std::vector<TransactionRecord> v;
    for (const auto& t : h.transactions)
        if (t.sender == h.center || t.receiver == h.center) v.push_back(t);
    return v;
}

// Enumerates all simple directed paths src -> dst and records their interior lengths.
void enumerate_paths(const std::multimap<std::string, std::string>& out, const std::string& at, const std::string& dst,
                     std::vector<std::string>& path, std::vector<std::size_t>& lengths) {
    if (at == dst) {
        lengths.push_back(path.size() - 2);
        return;
    }
    auto [b, e] = out.equal_range(at);
    std::set<std::string> next;
    for (auto it = b; it != e; ++it) next.insert(it->second);
    for (const auto& n : next) {
        if (std::find(path.begin(), path.end(), n) != path.end()) continue;
        path.push_back(n);
        enumerate_paths(out, n, dst, path, lengths);
        path.pop_back();
    }
}

GeneratorSpec spec_with(std::map<BehaviorLabel, int> counts, int normal, std::uint64_t seed) {
    auto s = GeneratorSpec::with_defaults();
    s.counts = std::move(counts);
    s.normal_count = normal;
    s.seed = seed;
    return s;
}

}  // namespace

TEST(GenerateAccount, BlackmailSingleTransaction) {
    auto p = default_params(BehaviorLabel::CriminalBlacklist);
    p.n_transactions = {1, 1};
    auto h = gen(BehaviorLabel::CriminalBlacklist, p, 1);
    auto mine = own(h);
    ASSERT_EQ(mine.size(), 1u);
    EXPECT_EQ(mine[0].sender, "center");
}

TEST(GenerateAccount, PonziInflowSignature) {
    auto p = default_params(BehaviorLabel::PonziScheme);
    p.counterparty_count = {20, 20};
    p.inflow_outflow_ratio = 4;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto mine = own(gen(BehaviorLabel::PonziScheme, p, seed));
        std::size_t in = 0, out = 0;
        for (const auto& t : mine) (t.receiver == "center" ? in : out)++;
        EXPECT_GE(in, 20u);
        EXPECT_GE(in, 4 * out);
        EXPECT_GT(out, 0u);
    }
}

TEST(GenerateAccount, DarknetPathsHaveConfiguredIntermediaries) {
    auto p = default_params(BehaviorLabel::DarknetTransaction);
    for (int hops : {1, 3, 5}) {
        p.intermediary_hops = hops;
        auto h = gen(BehaviorLabel::DarknetTransaction, p, static_cast<std::uint64_t>(hops));
        std::multimap<std::string, std::string> out;
        std::set<std::string> buyers, sellers;
        for (const auto& t : h.transactions) {
            out.emplace(t.sender, t.receiver);
            if (t.sender.find("_buyer") != std::string::npos) buyers.insert(t.sender);
            if (t.receiver.find("_seller") != std::string::npos) sellers.insert(t.receiver);
        }
        ASSERT_FALSE(buyers.empty());
        ASSERT_FALSE(sellers.empty());
        std::size_t paths = 0;
        for (const auto& b : buyers)
            for (const auto& s : sellers) {
                std::vector<std::string> path{b};
                std::vector<std::size_t> lengths;
                enumerate_paths(out, b, s, path, lengths);
                for (auto len : lengths) EXPECT_EQ(len, static_cast<std::size_t>(hops));
                paths += lengths.size();
            }
        EXPECT_GT(paths, 0u);
    }
}

TEST(GenerateAccount, DeterministicAndWithinWindow) {
    for (auto l : kAllLabels) {
        auto p = default_params(l);
        auto a = gen(l, p, 99), b = gen(l, p, 99);
        EXPECT_EQ(a.transactions, b.transactions) << to_string(l);
        for (const auto& t : a.transactions) {
            EXPECT_GT(t.amount, 0);
            EXPECT_GE(t.timestamp, 1'600'000'000);
            EXPECT_LT(t.timestamp, 1'600'000'000 + 180 * 86400);
        }
    }
}

TEST(GenerateAccount, InvalidParamsRejected) {
    auto p = default_params(BehaviorLabel::Phishing);
    p.n_transactions = {5, 2};
    std::mt19937_64 rng(1);
    EXPECT_THROW(generate_account(BehaviorLabel::Phishing, p, rng, ctx("c")), ValidationError);
}

TEST(GenerateDataset, SingleNormalAccount) {
    auto d = generate_dataset(spec_with({}, 1, 3));
    ASSERT_EQ(d.labels().size(), 1u);
    EXPECT_FALSE(is_malicious(d.labels().begin()->second));
}

TEST(GenerateDataset, ByteIdenticalAcrossRuns) {
    std::map<BehaviorLabel, int> counts;
    for (auto l : kAllLabels) counts[l] = 10;
    auto write = [&] {
        auto d = generate_dataset(spec_with(counts, 0, 7));
        std::ostringstream out;
        write_transactions(out, d.transactions());
        write_labels(out, d.labels());
        return out.str();
    };
    EXPECT_EQ(write(), write());
}

TEST(GenerateDataset, PhishingPlusNormalCounts) {
    auto d = generate_dataset(spec_with({{BehaviorLabel::Phishing, 5}}, 5, 2));
    EXPECT_EQ(d.labels().size(), 10u);
    int malicious = 0;
    for (const auto& [_, l] : d.labels()) malicious += roll_up(l) == BinaryLabel::Malicious;
    EXPECT_EQ(malicious, 5);
    EXPECT_TRUE(std::is_sorted(d.transactions().begin(), d.transactions().end(), earlier));
}

TEST(GenerateDataset, ClassSignatures) {
    std::map<BehaviorLabel, int> counts{{BehaviorLabel::Phishing, 30},
                                        {BehaviorLabel::MoneyLaundering, 30},
                                        {BehaviorLabel::PonziScheme, 30},
                                        {BehaviorLabel::CriminalBlacklist, 30}};
    auto d = generate_dataset(spec_with(counts, 60, 7));
    std::map<BehaviorLabel, std::vector<Vector>> by_class;
    std::vector<Vector> normal;
    for (const auto& [addr, l] : d.labels()) {
        auto v = extract_attributes(build_ego_graph(d, addr, 1), addr).values;
        (is_malicious(l) ? by_class[l] : normal).push_back(v);
    }
    auto mean_of = [](const std::vector<Vector>& vs, std::string_view name, bool skip_zero = false) {
        double s = 0;
        int n = 0;
        for (const auto& v : vs) {
            double x = v[static_cast<Eigen::Index>(feature_index(name))];
            if (skip_zero && x == 0) continue;
            s += x, ++n;
        }
        return n ? s / n : 0.0;
    };
    const double normal_out = mean_of(normal, "out_mean", true);
    const double normal_count = mean_of(normal, "total_tx_count");
    const double normal_gap = mean_of(normal, "interval_mean");

    EXPECT_GE(mean_of(by_class[BehaviorLabel::Phishing], "out_mean"), 5 * normal_out);
    EXPECT_LT(mean_of(by_class[BehaviorLabel::Phishing], "total_tx_count"), normal_count);
    EXPECT_LE(mean_of(by_class[BehaviorLabel::MoneyLaundering], "interval_mean"), normal_gap / 10);
    for (const auto& v : by_class[BehaviorLabel::PonziScheme])
        EXPECT_GE(v[static_cast<Eigen::Index>(feature_index("in_degree"))],
                  2 * v[static_cast<Eigen::Index>(feature_index("out_degree"))]);
    for (const auto& v : by_class[BehaviorLabel::CriminalBlacklist])
        EXPECT_LE(v[static_cast<Eigen::Index>(feature_index("total_tx_count"))], 3.0);
}

TEST(GenerateDataset, NoAccountsRejected) {
    EXPECT_THROW(generate_dataset(spec_with({}, 0, 1)), ValidationError);
}
