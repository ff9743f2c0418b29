#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "shadoweyes/common.hpp"

namespace shadoweyes {

/// One directed value transfer. Amounts are integer base units.
struct TransactionRecord {
    std::string tx_id;
    std::int64_t timestamp = 0;
    std::string sender;
    std::string receiver;
    std::int64_t amount = 0;

    bool operator==(const TransactionRecord&) const = default;
};

inline bool earlier(const TransactionRecord& a, const TransactionRecord& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.tx_id < b.tx_id;
}

enum class BehaviorLabel : int {
    PersonalWallet = 0,
    MiningPool,
    NetworkService,
    DigitalFinancialService,
    Phishing,
    Gambling,
    PonziScheme,
    MoneyLaundering,
    CriminalBlacklist,
    DarknetTransaction,
};

inline constexpr std::size_t kLabelCount = 10;

inline constexpr std::array<BehaviorLabel, kLabelCount> kAllLabels = {
    BehaviorLabel::PersonalWallet,  BehaviorLabel::MiningPool,        BehaviorLabel::NetworkService,
    BehaviorLabel::DigitalFinancialService, BehaviorLabel::Phishing,  BehaviorLabel::Gambling,
    BehaviorLabel::PonziScheme,     BehaviorLabel::MoneyLaundering,   BehaviorLabel::CriminalBlacklist,
    BehaviorLabel::DarknetTransaction,
};

/// Binary roll-up used by every detection protocol. Normal is class 0.
enum class BinaryLabel : int { Normal = 0, Malicious = 1 };

inline std::string_view to_string(BehaviorLabel l) {
    switch (l) {
        case BehaviorLabel::PersonalWallet: return "PersonalWallet";
        case BehaviorLabel::MiningPool: return "MiningPool";
        case BehaviorLabel::NetworkService: return "NetworkService";
        case BehaviorLabel::DigitalFinancialService: return "DigitalFinancialService";
        case BehaviorLabel::Phishing: return "Phishing";
        case BehaviorLabel::Gambling: return "Gambling";
        case BehaviorLabel::PonziScheme: return "PonziScheme";
        case BehaviorLabel::MoneyLaundering: return "MoneyLaundering";
        case BehaviorLabel::CriminalBlacklist: return "CriminalBlacklist";
        case BehaviorLabel::DarknetTransaction: return "DarknetTransaction";
    }
    return "?";
}

inline std::string_view to_string(BinaryLabel l) { return l == BinaryLabel::Malicious ? "Malicious" : "Normal"; }

inline std::optional<BehaviorLabel> parse_label(std::string_view s) {
    for (auto l : kAllLabels)
        if (to_string(l) == s) return l;
    return std::nullopt;
}

inline bool is_malicious(BehaviorLabel l) { return static_cast<int>(l) >= static_cast<int>(BehaviorLabel::Phishing); }

inline BinaryLabel roll_up(BehaviorLabel l) { return is_malicious(l) ? BinaryLabel::Malicious : BinaryLabel::Normal; }

using LabelMap = std::map<std::string, BehaviorLabel>;

/// Validated, immutable set of transactions plus labels for one platform.
class Dataset {
public:
    Dataset() = default;

    Dataset(std::vector<TransactionRecord> transactions, LabelMap labels, std::string platform)
        : transactions_(std::move(transactions)), labels_(std::move(labels)), platform_(std::move(platform)) {
        std::unordered_set<std::string> ids;
        ids.reserve(transactions_.size());
        for (std::size_t i = 0; i < transactions_.size(); ++i) {
            const auto& t = transactions_[i];
            if (t.amount < 0) throw ValidationError("transaction '" + t.tx_id + "': negative amount");
            if (t.timestamp < 0) throw ValidationError("transaction '" + t.tx_id + "': negative timestamp");
            if (t.sender.empty() || t.receiver.empty())
                throw ValidationError("transaction '" + t.tx_id + "': empty address");
            if (!ids.insert(t.tx_id).second) throw ValidationError("duplicate tx_id '" + t.tx_id + "'");
            by_address_[t.sender].push_back(i);
            if (t.receiver != t.sender) by_address_[t.receiver].push_back(i);
        }
        for (const auto& [addr, _] : labels_)
            if (!by_address_.count(addr))
                throw ValidationError("labeled address '" + addr + "' appears in no transaction");
    }

    const std::vector<TransactionRecord>& transactions() const { return transactions_; }
    const LabelMap& labels() const { return labels_; }
    const std::string& platform() const { return platform_; }

    bool contains(const std::string& address) const { return by_address_.count(address) != 0; }

    /// Indices into transactions() touching `address`, in dataset order.
    std::span<const std::size_t> transactions_of(const std::string& address) const {
        auto it = by_address_.find(address);
        if (it == by_address_.end()) return {};
        return it->second;
    }

    std::size_t address_count() const { return by_address_.size(); }

private:
    std::vector<TransactionRecord> transactions_;
    LabelMap labels_;
    std::string platform_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_address_;
};

// ---------------------------------------------------------------------------
// Wire formats

struct LineError {
    std::size_t line = 0;
    std::string message;
};

struct LoadResult {
    std::vector<TransactionRecord> records;
    std::vector<LineError> errors;

    std::size_t skipped() const { return errors.size(); }
};

namespace detail {

inline TransactionRecord parse_record(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("record is not an object");
    static constexpr std::array<std::string_view, 5> fields = {"tx_id", "timestamp", "sender", "receiver", "amount"};
    for (auto f : fields)
        if (!j.contains(std::string(f))) throw ValidationError("missing field '" + std::string(f) + "'");
    if (j.size() != fields.size()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            if (std::find(fields.begin(), fields.end(), it.key()) == fields.end())
                throw ValidationError("unexpected field '" + it.key() + "'");
    }
    auto need_string = [&](const char* f) -> std::string {
        if (!j[f].is_string()) throw ValidationError(std::string("field '") + f + "' must be a string");
        return j[f].get<std::string>();
    };
    auto need_int = [&](const char* f) -> std::int64_t {
        const auto& v = j[f];
        if (v.is_number_unsigned()) {
            auto u = v.get<std::uint64_t>();
            if (u > static_cast<std::uint64_t>(INT64_MAX))
                throw ValidationError(std::string("field '") + f + "' out of range");
            return static_cast<std::int64_t>(u);
        }
        if (v.is_number_integer()) return v.get<std::int64_t>();
        throw ValidationError(std::string("field '") + f + "' must be an integer");
    };
    TransactionRecord r;
    r.tx_id = need_string("tx_id");
    r.timestamp = need_int("timestamp");
    r.sender = need_string("sender");
    r.receiver = need_string("receiver");
    r.amount = need_int("amount");
    if (r.tx_id.empty()) throw ValidationError("empty tx_id");
    if (r.timestamp < 0) throw ValidationError("negative timestamp");
    if (r.amount < 0) throw ValidationError("negative amount");
    if (r.sender.empty() || r.receiver.empty()) throw ValidationError("empty address");
    return r;
}

}  // namespace detail

/// Reads line-delimited transaction records. Strict mode throws ParseError on the
/// first bad line; lenient mode records the error and skips the line.
inline LoadResult parse_transactions(std::istream& in, bool strict) {
    LoadResult out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto rec = detail::parse_record(line);
            if (!seen.insert(rec.tx_id).second) throw ValidationError("duplicate tx_id '" + rec.tx_id + "'");
            out.records.push_back(std::move(rec));
        } catch (const ValidationError& e) {
            if (strict) throw ParseError(e.what(), lineno);
            out.errors.push_back({lineno, e.what()});
        }
    }
    return out;
}

inline LoadResult load_transactions(const std::string& path, bool strict) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open transactions file '" + path + "'");
    return parse_transactions(in, strict);
}

inline std::string to_wire(const TransactionRecord& t) {
    nlohmann::ordered_json j;
    j["tx_id"] = t.tx_id;
    j["timestamp"] = t.timestamp;
    j["sender"] = t.sender;
    j["receiver"] = t.receiver;
    j["amount"] = t.amount;
    return j.dump();
}

inline void write_transactions(std::ostream& out, std::span<const TransactionRecord> txs) {
    for (const auto& t : txs) out << to_wire(t) << '\n';
}

inline void write_transactions(const std::string& path, std::span<const TransactionRecord> txs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    write_transactions(out, txs);
}

inline LabelMap parse_labels(std::istream& in) {
    LabelMap out;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!header) {
            if (line != "address,label") throw ParseError("expected header 'address,label'", lineno);
            header = true;
            continue;
        }
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw ParseError("expected 'address,label'", lineno);
        auto addr = line.substr(0, comma);
        auto name = line.substr(comma + 1);
        if (addr.empty()) throw ParseError("empty address", lineno);
        auto label = parse_label(name);
        if (!label) throw ParseError("unknown label '" + name + "'", lineno);
        auto [it, inserted] = out.emplace(addr, *label);
        if (!inserted && it->second != *label)
            throw ParseError("conflicting labels for address '" + addr + "'", lineno);
    }
    if (!header) throw ParseError("missing header 'address,label'");
    return out;
}

inline LabelMap load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open labels file '" + path + "'");
    return parse_labels(in);
}

inline void write_labels(std::ostream& out, const LabelMap& labels) {
    out << "address,label\n";
    for (const auto& [addr, l] : labels) out << addr << ',' << to_string(l) << '\n';
}

inline void write_labels(const std::string& path, const LabelMap& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    write_labels(out, labels);
}

// ---------------------------------------------------------------------------
// Ego graphs

struct Edge {
    std::size_t from = 0;
    std::size_t to = 0;
    std::size_t multiplicity = 0;

    bool operator==(const Edge&) const = default;
};

/// k-hop neighborhood of one account. Node 0 is the center; the rest are sorted.
struct EgoGraph {
    std::string center;
    std::vector<std::string> nodes;
    std::vector<Edge> edges;  // directed, sorted by (from, to)
    std::map<std::string, std::vector<TransactionRecord>> histories;
    int hop_limit = 1;

    std::size_t size() const { return nodes.size(); }

    std::optional<std::size_t> index_of(const std::string& address) const {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i] == address) return i;
        return std::nullopt;
    }

    const std::vector<TransactionRecord>& history(const std::string& address) const {
        static const std::vector<TransactionRecord> empty;
        auto it = histories.find(address);
        return it == histories.end() ? empty : it->second;
    }
};

inline EgoGraph build_ego_graph(const Dataset& dataset, const std::string& center, int hops) {
    if (hops < 1) throw ValidationError("hop limit must be >= 1");
    if (!dataset.contains(center)) throw ValidationError("unknown center address '" + center + "'");
    const auto& txs = dataset.transactions();

    std::set<std::string> reached{center};
    std::vector<std::string> frontier{center};
    for (int h = 0; h < hops && !frontier.empty(); ++h) {
        std::vector<std::string> next;
        for (const auto& a : frontier) {
            for (auto i : dataset.transactions_of(a)) {
                const auto& other = txs[i].sender == a ? txs[i].receiver : txs[i].sender;
                if (reached.insert(other).second) next.push_back(other);
            }
        }
        std::sort(next.begin(), next.end());
        frontier = std::move(next);
    }

    EgoGraph g;
    g.center = center;
    g.hop_limit = hops;
    g.nodes.push_back(center);
    for (const auto& a : reached)
        if (a != center) g.nodes.push_back(a);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) index.emplace(g.nodes[i], i);

    std::set<std::size_t> inside;
    for (const auto& a : g.nodes)
        for (auto i : dataset.transactions_of(a))
            if (index.count(txs[i].sender) && index.count(txs[i].receiver)) inside.insert(i);

    std::map<std::pair<std::size_t, std::size_t>, std::size_t> mult;
    for (auto i : inside) {
        const auto& t = txs[i];
        ++mult[{index.at(t.sender), index.at(t.receiver)}];
        g.histories[t.sender].push_back(t);
        if (t.receiver != t.sender) g.histories[t.receiver].push_back(t);
    }
    for (const auto& [key, m] : mult) g.edges.push_back({key.first, key.second, m});
    for (auto& [_, h] : g.histories) std::sort(h.begin(), h.end(), earlier);
    return g;
}

/// Dense adjacency over the ego graph's node order. Binary mode is symmetric in
/// {0,1}; weighted mode holds directed transaction counts.
inline Matrix adjacency(const EgoGraph& graph, bool binary) {
    const auto n = static_cast<Eigen::Index>(graph.size());
    Matrix a = Matrix::Zero(n, n);
    for (const auto& e : graph.edges) {
        auto u = static_cast<Eigen::Index>(e.from), v = static_cast<Eigen::Index>(e.to);
        if (binary) {
            a(u, v) = 1.0;
            a(v, u) = 1.0;
        } else {
            a(u, v) += static_cast<double>(e.multiplicity);
        }
    }
    return a;
}

/// Undirected simple graph over string-named nodes; what the structural
/// autoencoder trains on. Neighbor lists are sorted and exclude self-loops.
struct NodeGraph {
    std::vector<std::string> nodes;
    std::vector<std::vector<std::size_t>> neighbors;

    std::size_t size() const { return nodes.size(); }

    std::optional<std::size_t> index_of(const std::string& address) const {
        auto it = std::lower_bound(nodes.begin(), nodes.end(), address);
        if (it == nodes.end() || *it != address) return std::nullopt;
        return static_cast<std::size_t>(it - nodes.begin());
    }
};

/// Union of ego graphs; node order is lexicographic.
inline NodeGraph merge_graphs(std::span<const EgoGraph> graphs) {
    std::set<std::string> all;
    for (const auto& g : graphs) all.insert(g.nodes.begin(), g.nodes.end());
    NodeGraph out;
    out.nodes.assign(all.begin(), all.end());
    std::vector<std::set<std::size_t>> adj(out.nodes.size());
    for (const auto& g : graphs) {
        for (const auto& e : g.edges) {
            if (e.from == e.to) continue;
            auto u = *out.index_of(g.nodes[e.from]);
            auto v = *out.index_of(g.nodes[e.to]);
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    out.neighbors.resize(out.nodes.size());
    for (std::size_t i = 0; i < adj.size(); ++i) out.neighbors[i].assign(adj[i].begin(), adj[i].end());
    return out;
}

inline NodeGraph to_node_graph(const EgoGraph& g) { return merge_graphs(std::span<const EgoGraph>(&g, 1)); }

/// Subgraph induced by `keep` (indices into g.nodes), re-sorted by name.
inline NodeGraph induced_subgraph(const NodeGraph& g, std::vector<std::size_t> keep) {
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    NodeGraph out;
    std::unordered_map<std::size_t, std::size_t> remap;
    for (auto k : keep) {
        remap.emplace(k, out.nodes.size());
        out.nodes.push_back(g.nodes.at(k));
    }
    out.neighbors.resize(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i)
        for (auto v : g.neighbors[keep[i]])
            if (auto it = remap.find(v); it != remap.end()) out.neighbors[i].push_back(it->second);
    return out;
}

/// Symmetric {0,1} dense adjacency; `self_loops` sets the diagonal.
inline Matrix binary_adjacency(const NodeGraph& g, bool self_loops) {
    const auto n = static_cast<Eigen::Index>(g.size());
    Matrix a = Matrix::Zero(n, n);
    for (std::size_t u = 0; u < g.size(); ++u)
        for (auto v : g.neighbors[u]) a(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = 1.0;
    if (self_loops) a.diagonal().setOnes();
    return a;
}

}  // namespace shadoweyes
