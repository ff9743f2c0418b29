#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "shadoweyes/txdata.hpp"

using namespace shadoweyes;

namespace {

TransactionRecord tx(std::string id, std::int64_t t, std::string s, std::string r, std::int64_t amt) {
    return {std::move(id), t, std::move(s), std::move(r), amt};
}

Dataset chain_abc() {
    return Dataset({tx("1", 10, "a", "b", 5), tx("2", 20, "b", "c", 3)}, {}, "btc");
}

// Floyd-Warshall hop distances over the undirected transaction graph.
std::set<std::string> reachable_oracle(const Dataset& d, const std::string& center, int hops) {
    std::vector<std::string> names;
    for (const auto& t : d.transactions()) names.push_back(t.sender), names.push_back(t.receiver);
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    const auto n = names.size();
    auto idx = [&](const std::string& s) { return std::lower_bound(names.begin(), names.end(), s) - names.begin(); };
    const int inf = 1 << 20;
    std::vector<std::vector<int>> dist(n, std::vector<int>(n, inf));
    for (std::size_t i = 0; i < n; ++i) dist[i][i] = 0;
    for (const auto& t : d.transactions()) {
        auto u = idx(t.sender), v = idx(t.receiver);
        if (u != v) dist[u][v] = dist[v][u] = 1;
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) dist[i][j] = std::min(dist[i][j], dist[i][k] + dist[k][j]);
    std::set<std::string> out;
    auto c = idx(center);
    for (std::size_t j = 0; j < n; ++j)
        if (dist[c][j] <= hops) out.insert(names[j]);
    return out;
}

Dataset random_dataset(std::mt19937_64& rng, int addresses, int txs) {
    std::uniform_int_distribution<int> pick(0, addresses - 1);
    std::vector<TransactionRecord> v;
    for (int i = 0; i < txs; ++i)
        v.push_back(tx("t" + std::to_string(i), i, "n" + std::to_string(pick(rng)), "n" + std::to_string(pick(rng)), 1 + i));
    return Dataset(std::move(v), {}, "btc");
}

}  // namespace

TEST(LoadTransactions, EmptyInput) {
    std::istringstream in("");
    auto r = parse_transactions(in, true);
    EXPECT_TRUE(r.records.empty());
    EXPECT_EQ(r.skipped(), 0u);
}

TEST(LoadTransactions, SingleRecordRoundTripsExactly) {
    const std::string line = R"({"tx_id":"a","timestamp":100,"sender":"s","receiver":"r","amount":5})";
    std::istringstream in(line + "\n");
    auto r = parse_transactions(in, true);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.records[0], tx("a", 100, "s", "r", 5));
    EXPECT_EQ(to_wire(r.records[0]), line);
}

TEST(LoadTransactions, NegativeAmountStrictNamesLine) {
    std::istringstream in(R"({"tx_id":"a","timestamp":100,"sender":"s","receiver":"r","amount":-1})" "\n");
    try {
        parse_transactions(in, true);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    }
}

TEST(LoadTransactions, NegativeAmountLenientSkips) {
    std::istringstream in(R"({"tx_id":"a","timestamp":100,"sender":"s","receiver":"r","amount":-1})" "\n");
    auto r = parse_transactions(in, false);
    EXPECT_EQ(r.records.size(), 0u);
    ASSERT_EQ(r.skipped(), 1u);
    EXPECT_EQ(r.errors[0].line, 1u);
}

TEST(LoadTransactions, PerLineErrors) {
    std::istringstream in(
        R"({"tx_id":"a","timestamp":1,"sender":"s","receiver":"r","amount":1})" "\n"
        R"({"tx_id":"b","sender":"s","receiver":"r","amount":1})" "\n"
        R"({"tx_id":"c","timestamp":1.5,"sender":"s","receiver":"r","amount":1})" "\n"
        R"({"tx_id":"a","timestamp":2,"sender":"s","receiver":"r","amount":1})" "\n"
        R"({"tx_id":"d","timestamp":"3","sender":"s","receiver":"r","amount":1})" "\n"
        R"({"tx_id":"e","timestamp":3,"sender":"s","receiver":"r","amount":1,"fee":2})" "\n"
        "not json\n");
    auto r = parse_transactions(in, false);
    EXPECT_EQ(r.records.size(), 1u);
    ASSERT_EQ(r.errors.size(), 6u);
    EXPECT_EQ(r.errors[0].line, 2u);
    EXPECT_NE(r.errors[0].message.find("missing field 'timestamp'"), std::string::npos);
    EXPECT_NE(r.errors[1].message.find("integer"), std::string::npos);
    EXPECT_NE(r.errors[2].message.find("duplicate"), std::string::npos);
    EXPECT_EQ(r.errors[5].line, 7u);
}

TEST(LoadTransactions, FileRoundTripIsBitIdentical) {
    std::mt19937_64 rng(3);
    auto d = random_dataset(rng, 12, 40);
    auto path = std::filesystem::temp_directory_path() / "se_roundtrip.jsonl";
    write_transactions(path.string(), d.transactions());
    auto r = load_transactions(path.string(), true);
    EXPECT_EQ(r.records, d.transactions());
    std::filesystem::remove(path);
}

TEST(LoadLabels, HeaderOnly) {
    std::istringstream in("address,label\n");
    EXPECT_TRUE(parse_labels(in).empty());
}

TEST(LoadLabels, SingleRow) {
    std::istringstream in("address,label\naddr1,Phishing\n");
    auto m = parse_labels(in);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m.at("addr1"), BehaviorLabel::Phishing);
}

TEST(LoadLabels, ConflictNamesAddress) {
    std::istringstream in("address,label\naddr1,Phishing\naddr1,Gambling\n");
    try {
        parse_labels(in);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("addr1"), std::string::npos);
    }
}

TEST(LoadLabels, UnknownLabelAndBadHeader) {
    std::istringstream bad_label("address,label\nx,Pirate\n");
    EXPECT_THROW(parse_labels(bad_label), ParseError);
    std::istringstream bad_header("addr,lbl\n");
    EXPECT_THROW(parse_labels(bad_header), ParseError);
}

TEST(Labels, RollUpMatchesGrouping) {
    int malicious = 0;
    for (auto l : kAllLabels) malicious += is_malicious(l);
    EXPECT_EQ(malicious, 6);
    EXPECT_EQ(roll_up(BehaviorLabel::DarknetTransaction), BinaryLabel::Malicious);
    EXPECT_EQ(roll_up(BehaviorLabel::DigitalFinancialService), BinaryLabel::Normal);
    for (auto l : kAllLabels) EXPECT_EQ(parse_label(to_string(l)), l);
}

TEST(DatasetInvariants, RejectsBadData) {
    EXPECT_THROW(Dataset({tx("1", 1, "a", "b", -1)}, {}, "btc"), ValidationError);
    EXPECT_THROW(Dataset({tx("1", 1, "a", "b", 1), tx("1", 2, "a", "b", 1)}, {}, "btc"), ValidationError);
    EXPECT_THROW(Dataset({tx("1", 1, "a", "b", 1)}, {{"zzz", BehaviorLabel::Phishing}}, "btc"), ValidationError);
}

TEST(EgoGraph, SingleTransaction) {
    Dataset d({tx("1", 1, "s", "r", 4)}, {}, "btc");
    auto g = build_ego_graph(d, "s", 1);
    EXPECT_EQ(g.nodes, (std::vector<std::string>{"s", "r"}));
    ASSERT_EQ(g.edges.size(), 1u);
    EXPECT_EQ(g.edges[0], (Edge{0, 1, 1}));
}

TEST(EgoGraph, ChainHopLimits) {
    auto d = chain_abc();
    auto g1 = build_ego_graph(d, "a", 1);
    EXPECT_EQ(std::set<std::string>(g1.nodes.begin(), g1.nodes.end()), reachable_oracle(d, "a", 1));
    EXPECT_EQ(g1.nodes, (std::vector<std::string>{"a", "b"}));
    EXPECT_TRUE(g1.history("c").empty());
    auto g2 = build_ego_graph(d, "a", 2);
    EXPECT_EQ(g2.nodes, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(EgoGraph, Errors) {
    auto d = chain_abc();
    EXPECT_THROW(build_ego_graph(d, "nobody", 1), ValidationError);
    EXPECT_THROW(build_ego_graph(d, "a", 0), ValidationError);
}

TEST(EgoGraph, MultiplicityAndHistories) {
    Dataset d({tx("1", 30, "a", "b", 1), tx("2", 10, "a", "b", 2), tx("3", 20, "b", "a", 3)}, {}, "btc");
    auto g = build_ego_graph(d, "a", 1);
    ASSERT_EQ(g.edges.size(), 2u);
    EXPECT_EQ(g.edges[0], (Edge{0, 1, 2}));
    EXPECT_EQ(g.edges[1], (Edge{1, 0, 1}));
    const auto& h = g.history("a");
    ASSERT_EQ(h.size(), 3u);
    EXPECT_TRUE(std::is_sorted(h.begin(), h.end(), [](auto& x, auto& y) { return x.timestamp < y.timestamp; }));
}

TEST(EgoGraph, PropertiesOnRandomData) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        auto d = random_dataset(rng, 15, 25);
        const auto center = d.transactions().front().sender;
        std::vector<std::string> prev;
        for (int hops = 1; hops <= 3; ++hops) {
            auto g = build_ego_graph(d, center, hops);
            auto again = build_ego_graph(d, center, hops);
            EXPECT_EQ(g.nodes, again.nodes);
            EXPECT_EQ(g.edges, again.edges);
            EXPECT_EQ(g.nodes.front(), center);
            auto set = std::set<std::string>(g.nodes.begin(), g.nodes.end());
            EXPECT_EQ(set, reachable_oracle(d, center, hops));
            for (const auto& p : prev) EXPECT_TRUE(set.count(p)) << "monotonicity";
            for (const auto& e : g.edges) EXPECT_LT(std::max(e.from, e.to), g.size());
            auto a = adjacency(g, true);
            EXPECT_TRUE(a.isApprox(a.transpose()));
            EXPECT_TRUE((a.array() == 0.0 || a.array() == 1.0).all());
            prev = g.nodes;
        }
    }
}

TEST(Adjacency, EmptyEdges) {
    EgoGraph g;
    g.nodes = {"a", "b", "c"};
    EXPECT_TRUE(adjacency(g, true).isZero());
}

TEST(Adjacency, SingleEdgeSymmetric) {
    Dataset d({tx("1", 1, "s", "r", 4)}, {}, "btc");
    auto a = adjacency(build_ego_graph(d, "s", 1), true);
    EXPECT_EQ(a.sum(), 2.0);
    EXPECT_EQ(a(0, 1), 1.0);
    EXPECT_EQ(a(1, 0), 1.0);
}

TEST(Adjacency, TriangleIsOnesMinusIdentity) {
    Dataset d({tx("1", 1, "a", "b", 1), tx("2", 2, "b", "c", 1), tx("3", 3, "c", "a", 1)}, {}, "btc");
    auto a = adjacency(build_ego_graph(d, "a", 1), true);
    // enumerate every ordered pair
    for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v) EXPECT_EQ(a(u, v), u == v ? 0.0 : 1.0);
}

TEST(Adjacency, WeightedCountsDirected) {
    Dataset d({tx("1", 1, "a", "b", 1), tx("2", 2, "a", "b", 1), tx("3", 3, "a", "a", 1)}, {}, "btc");
    auto a = adjacency(build_ego_graph(d, "a", 1), false);
    EXPECT_EQ(a(0, 1), 2.0);
    EXPECT_EQ(a(1, 0), 0.0);
    EXPECT_EQ(a(0, 0), 1.0);
}

TEST(NodeGraph, MergeAndInduce) {
    auto d = chain_abc();
    std::vector<EgoGraph> gs{build_ego_graph(d, "a", 1), build_ego_graph(d, "c", 1)};
    auto m = merge_graphs(gs);
    EXPECT_EQ(m.nodes, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(m.neighbors[1], (std::vector<std::size_t>{0, 2}));
    auto sub = induced_subgraph(m, {1, 2});
    EXPECT_EQ(sub.nodes, (std::vector<std::string>{"b", "c"}));
    EXPECT_EQ(sub.neighbors[0], (std::vector<std::size_t>{1}));
    auto a = binary_adjacency(m, true);
    EXPECT_EQ(a.trace(), 3.0);
}
