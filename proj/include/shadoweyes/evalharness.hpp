#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "shadoweyes/augment.hpp"
#include "shadoweyes/classify.hpp"
#include "shadoweyes/common.hpp"
#include "shadoweyes/config.hpp"
#include "shadoweyes/contrastive.hpp"
#include "shadoweyes/features.hpp"
#include "shadoweyes/structgae.hpp"
#include "shadoweyes/synthgen.hpp"
#include "shadoweyes/txdata.hpp"

namespace shadoweyes {

// ---------------------------------------------------------------------------
// Splits

enum class ClassTarget { Binary, Multiclass };

inline ClassTarget parse_target(std::string_view s) {
    if (s == "binary") return ClassTarget::Binary;
    if (s == "multiclass") return ClassTarget::Multiclass;
    throw ValidationError("unknown classification target '" + std::string(s) + "'");
}

struct Split {
    std::string protocol;
    std::vector<std::string> train;
    std::vector<std::string> test;
    std::vector<std::string> unused;  // sampled out of the universe (imbalanced protocol only)
    nlohmann::json details = nlohmann::json::object();
};

namespace detail {

// Stratum of a label: each malicious label on its own, the benign roles together.
inline int stratum(BehaviorLabel l) { return is_malicious(l) ? static_cast<int>(l) : -1; }

inline std::map<int, std::vector<std::string>> by_stratum(const LabelMap& labels) {
    std::map<int, std::vector<std::string>> g;
    for (const auto& [a, l] : labels) g[stratum(l)].push_back(a);
    return g;
}

inline void finish(Split& s) {
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.unused.begin(), s.unused.end());
}

// Per stratum: shuffle, send floor(size * fraction) to `test`, the rest to `train`.
inline void stratified(const LabelMap& labels, double test_fraction, std::mt19937_64& rng,
                       std::vector<std::string>& train, std::vector<std::string>& test) {
    for (auto& [_, members] : by_stratum(labels)) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(members.size()) * test_fraction));
        test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
        train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
    }
}

inline void check_fraction(double f) {
    if (!(f > 0 && f < 1)) throw ValidationError("test fraction must be in (0,1)");
}

}  // namespace detail

/// Stratified by class (malicious labels separately, benign roles as one Normal
/// class); each contributes floor(size * test_fraction) test accounts.
inline Split split_standard(const LabelMap& labels, double test_fraction, std::uint64_t seed) {
    detail::check_fraction(test_fraction);
    if (labels.empty()) throw ValidationError("cannot split an empty label set");
    Split s;
    s.protocol = "standard";
    std::mt19937_64 rng(derive_seed(seed, "split-standard"));
    detail::stratified(labels, test_fraction, rng, s.train, s.test);
    s.details["test_fraction"] = test_fraction;
    detail::finish(s);
    return s;
}

/// Every account of `masked` goes to test; the rest is split as in the standard protocol.
inline Split split_zero_shot(const LabelMap& labels, BehaviorLabel masked, double test_fraction, std::uint64_t seed) {
    detail::check_fraction(test_fraction);
    if (!is_malicious(masked)) throw ValidationError("masked label must be a malicious class");
    LabelMap rest;
    Split s;
    s.protocol = "zero_shot";
    for (const auto& [a, l] : labels) {
        if (l == masked)
            s.test.push_back(a);
        else
            rest.emplace(a, l);
    }
    if (s.test.empty()) throw ValidationError("masked label " + std::string(to_string(masked)) + " is absent");
    std::mt19937_64 rng(derive_seed(seed, "split-zero-shot"));
    detail::stratified(rest, test_fraction, rng, s.train, s.test);
    s.details["masked_label"] = to_string(masked);
    s.details["test_fraction"] = test_fraction;
    detail::finish(s);
    return s;
}

struct Ratio {
    int malicious = 1;
    int normal = 1;
};

inline Ratio parse_ratio(const std::string& s) {
    auto colon = s.find(':');
    if (colon == std::string::npos) throw ValidationError("ratio must look like 'm:n', got '" + s + "'");
    Ratio r{std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
    if (r.malicious < 1 || r.normal < 1) throw ValidationError("ratio terms must be >= 1");
    return r;
}

/// Holds out a stratified test share first, then draws k*m malicious and k*n
/// normal training accounts from the remainder with the largest feasible k.
/// Remainder accounts not drawn are recorded as unused.
inline Split split_imbalanced(const LabelMap& labels, Ratio ratio, double test_fraction, std::uint64_t seed) {
    detail::check_fraction(test_fraction);
    Split s;
    s.protocol = "imbalanced";
    std::mt19937_64 rng(derive_seed(seed, "split-imbalanced"));
    std::vector<std::string> pool;
    detail::stratified(labels, test_fraction, rng, pool, s.test);
    std::sort(pool.begin(), pool.end());
    std::vector<std::string> mal, norm;
    for (const auto& a : pool) (is_malicious(labels.at(a)) ? mal : norm).push_back(a);
    const auto k = std::min(mal.size() / static_cast<std::size_t>(ratio.malicious),
                            norm.size() / static_cast<std::size_t>(ratio.normal));
    if (k < 1)
        throw ValidationError("ratio " + std::to_string(ratio.malicious) + ":" + std::to_string(ratio.normal) +
                              " is infeasible with " + std::to_string(mal.size()) + " malicious and " +
                              std::to_string(norm.size()) + " normal training accounts");
    std::shuffle(mal.begin(), mal.end(), rng);
    std::shuffle(norm.begin(), norm.end(), rng);
    const auto km = k * static_cast<std::size_t>(ratio.malicious), kn = k * static_cast<std::size_t>(ratio.normal);
    s.train.assign(mal.begin(), mal.begin() + static_cast<std::ptrdiff_t>(km));
    s.train.insert(s.train.end(), norm.begin(), norm.begin() + static_cast<std::ptrdiff_t>(kn));
    s.unused.assign(mal.begin() + static_cast<std::ptrdiff_t>(km), mal.end());
    s.unused.insert(s.unused.end(), norm.begin() + static_cast<std::ptrdiff_t>(kn), norm.end());
    s.details["ratio"] = std::to_string(ratio.malicious) + ":" + std::to_string(ratio.normal);
    s.details["train_malicious"] = km;
    s.details["train_normal"] = kn;
    s.details["test_fraction"] = test_fraction;
    detail::finish(s);
    return s;
}

/// Classification targets. Binary rolls labels up to Normal/Malicious;
/// multiclass keeps each malicious label and merges the benign roles into Normal.
struct ClassScheme {
    ClassTarget target = ClassTarget::Binary;
    std::vector<BehaviorLabel> malicious;  // multiclass only, enum order

    static ClassScheme from(ClassTarget t, const LabelMap& labels) {
        ClassScheme s{t, {}};
        if (t == ClassTarget::Multiclass) {
            std::set<BehaviorLabel> m;
            for (const auto& [_, l] : labels)
                if (is_malicious(l)) m.insert(l);
            s.malicious.assign(m.begin(), m.end());
        }
        return s;
    }

    std::size_t size() const { return target == ClassTarget::Binary ? 2 : 1 + malicious.size(); }

    std::vector<std::string> names() const {
        std::vector<std::string> n{"Normal"};
        if (target == ClassTarget::Binary) n.emplace_back("Malicious");
        for (auto l : malicious) n.emplace_back(to_string(l));
        return n;
    }

    int index(BehaviorLabel l) const {
        if (!is_malicious(l)) return 0;
        if (target == ClassTarget::Binary) return 1;
        auto it = std::find(malicious.begin(), malicious.end(), l);
        if (it == malicious.end()) throw ValidationError("label " + std::string(to_string(l)) + " is not a target class");
        return 1 + static_cast<int>(it - malicious.begin());
    }
};

/// Exactly n_labeled training accounts spread over the target classes as evenly
/// as integer division allows; extra slots go to the lowest class indices and
/// shortfalls of small classes are passed on in class order.
inline Split split_few_shot(const LabelMap& labels, std::size_t n_labeled, const ClassScheme& scheme,
                            std::uint64_t seed) {
    if (n_labeled < 1) throw ValidationError("few-shot size must be >= 1");
    if (n_labeled > labels.size())
        throw ValidationError("few-shot size " + std::to_string(n_labeled) + " exceeds the " +
                              std::to_string(labels.size()) + " labeled accounts");
    const std::size_t n_classes = scheme.size();
    std::vector<std::vector<std::string>> members(n_classes);
    for (const auto& [a, l] : labels) members[static_cast<std::size_t>(scheme.index(l))].push_back(a);

    std::vector<std::size_t> quota(n_classes, 0);
    std::size_t left = n_labeled;
    // Round-robin in class order: each pass gives one slot to every class that still has members.
    while (left > 0) {
        bool progressed = false;
        for (std::size_t c = 0; c < n_classes && left > 0; ++c)
            if (quota[c] < members[c].size()) ++quota[c], --left, progressed = true;
        if (!progressed) break;
    }
    Split s;
    s.protocol = "few_shot";
    std::mt19937_64 rng(derive_seed(seed, "split-few-shot"));
    for (std::size_t c = 0; c < n_classes; ++c) {
        auto& m = members[c];
        std::shuffle(m.begin(), m.end(), rng);
        s.train.insert(s.train.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(quota[c]));
        s.test.insert(s.test.end(), m.begin() + static_cast<std::ptrdiff_t>(quota[c]), m.end());
    }
    s.details["n_labeled"] = n_labeled;
    s.details["per_class"] = quota;
    detail::finish(s);
    return s;
}

// ---------------------------------------------------------------------------
// Representation distance

struct DistanceMatrix {
    std::vector<std::string> groups;
    Matrix values;                     // NaN where undefined
    std::vector<std::vector<bool>> missing;
    bool normalized = false;
};

/// Mean Euclidean distance between groups; the diagonal averages within-group
/// pairs (self-pairs excluded) and is missing for singleton groups. With
/// `normalize`, defined entries are min-max rescaled to [0,1].
inline DistanceMatrix representation_distance(const std::vector<std::string>& names,
                                              const std::vector<std::vector<Vector>>& groups, bool normalize) {
    if (groups.size() < 2 || names.size() != groups.size()) throw ValidationError("distance needs >= 2 named groups");
    for (const auto& g : groups)
        if (g.empty()) throw ValidationError("distance group is empty");
    const auto k = groups.size();
    DistanceMatrix d;
    d.groups = names;
    d.values = Matrix::Constant(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k),
                                std::numeric_limits<double>::quiet_NaN());
    d.missing.assign(k, std::vector<bool>(k, false));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < k; ++j) {
            double sum = 0;
            std::size_t pairs = 0;
            for (std::size_t a = 0; a < groups[i].size(); ++a)
                for (std::size_t b = (i == j ? a + 1 : 0); b < groups[j].size(); ++b) {
                    sum += (groups[i][a] - groups[j][b]).norm();
                    ++pairs;
                }
            if (pairs == 0) {
                d.missing[i][j] = d.missing[j][i] = true;
                continue;
            }
            d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                d.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = sum / static_cast<double>(pairs);
        }
    if (normalize) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (Eigen::Index i = 0; i < d.values.size(); ++i)
            if (!std::isnan(d.values.data()[i])) lo = std::min(lo, d.values.data()[i]), hi = std::max(hi, d.values.data()[i]);
        for (Eigen::Index i = 0; i < d.values.size(); ++i) {
            double& v = d.values.data()[i];
            if (!std::isnan(v)) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        }
        d.normalized = true;
    }
    return d;
}

inline void write_distance_csv(const std::string& path, const DistanceMatrix& d) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out.precision(17);
    out << "class";
    for (const auto& g : d.groups) out << ',' << g;
    out << '\n';
    for (std::size_t i = 0; i < d.groups.size(); ++i) {
        out << d.groups[i];
        for (std::size_t j = 0; j < d.groups.size(); ++j) {
            out << ',';
            if (!d.missing[i][j]) out << d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
        out << '\n';
    }
}

inline nlohmann::json distance_to_json(const DistanceMatrix& d) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < d.groups.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < d.groups.size(); ++j)
            row.push_back(d.missing[i][j] ? nlohmann::json(nullptr)
                                          : nlohmann::json(d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
        rows.push_back(row);
    }
    return {{"classes", d.groups}, {"normalized", d.normalized}, {"matrix", rows}};
}

// ---------------------------------------------------------------------------
// Experiment configuration

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

}  // namespace detail

/// Every tunable of a run with its built-in default.
inline Config experiment_defaults() {
    std::map<std::string, std::string> d{
        {"seed", "7"},
        {"data.source", "synth"},
        {"data.transactions", ""},
        {"data.labels", ""},
        {"data.platform", "btc"},
        {"data.strict", "true"},
        {"synth.platform", "btc"},
        {"synth.count.Normal", "30"},
        {"synth.epoch_start", "1600000000"},
        {"synth.epoch_window", std::to_string(180 * 86400)},
        {"synth.shared_pool_size", "40"},
        {"synth.shared_fraction", "0.3"},
        {"graph.hops", "1"},
        {"gae.layers", "32,32"},
        {"gae.epochs", "200"},
        {"gae.step", "0.01"},
        {"gae.lambda", "1"},
        {"gae.mask_rate", "0.15"},
        {"gae.self_loops", "true"},
        {"gae.leaky_slope", "0.2"},
        {"gae.activation", "elu"},
        {"gae.optimizer", "adam"},
        {"gae.per_ego", "false"},
        {"augment.p", "0.5"},
        {"augment.delta_t_max", "3600"},
        {"augment.theta", "0.1"},
        {"augment.single_delta", "false"},
        {"augment.recompute_structure", "false"},
        {"encoder.profile", "basic"},
        {"encoder.blocks", "4"},
        {"encoder.width", "64"},
        {"encoder.bottleneck", "16"},
        {"head.hidden", "64"},
        {"head.proj_dim", "32"},
        {"pretrain.batch", "32"},
        {"pretrain.tau", "1"},
        {"pretrain.epochs", "50"},
        {"pretrain.step", "0.001"},
        {"pretrain.optimizer", "sgd"},
        {"pretrain.loss_mode", "views"},
        {"finetune.epochs", "200"},
        {"finetune.step", "0.01"},
        {"finetune.hidden", "64"},
        {"finetune.optimizer", "adam"},
        {"classify.target", "binary"},
        {"classify.average", "macro"},
        {"split.protocol", "standard"},
        {"split.test_fraction", "0.2"},
        {"split.masked_label", "Phishing"},
        {"split.ratio", "1:5"},
        {"split.n_labeled", "10"},
        {"cross.source", "synth"},
        {"cross.platform", "eth"},
        {"cross.transactions", ""},
        {"cross.labels", ""},
        {"distance.per_class", "15"},
        {"distance.normalize", "true"},
        {"ablation.no_fusion", "false"},
        {"ablation.no_pretrain", "false"},
    };
    for (auto l : kAllLabels) {
        const auto name = std::string(to_string(l));
        d["synth.count." + name] = is_malicious(l) ? "30" : "0";
        const auto p = default_params(l);
        const auto base = "synth.params." + name + ".";
        d[base + "n_min"] = std::to_string(p.n_transactions.min);
        d[base + "n_max"] = std::to_string(p.n_transactions.max);
        d[base + "amount_mean"] = detail::fmt(p.amount_mean);
        d[base + "amount_spread"] = detail::fmt(p.amount_spread);
        d[base + "interarrival_mean"] = detail::fmt(p.interarrival_mean);
        d[base + "interarrival_jitter"] = detail::fmt(p.interarrival_jitter);
        d[base + "cp_min"] = std::to_string(p.counterparty_count.min);
        d[base + "cp_max"] = std::to_string(p.counterparty_count.max);
        d[base + "hops"] = std::to_string(p.intermediary_hops);
        d[base + "inflow_outflow_ratio"] = detail::fmt(p.inflow_outflow_ratio);
    }
    return Config(std::move(d));
}

inline GeneratorSpec generator_spec_from(const Config& c, const std::string& platform, std::uint64_t seed) {
    auto s = GeneratorSpec::with_defaults();
    s.platform = platform;
    s.seed = seed;
    s.epoch_start = c.integer("synth.epoch_start");
    s.epoch_window = c.integer("synth.epoch_window");
    s.shared_pool_size = static_cast<int>(c.integer("synth.shared_pool_size"));
    s.shared_fraction = c.real("synth.shared_fraction");
    s.normal_count = static_cast<int>(c.integer("synth.count.Normal"));
    for (auto l : kAllLabels) {
        const auto name = std::string(to_string(l));
        if (auto n = c.integer("synth.count." + name); n > 0) s.counts[l] = static_cast<int>(n);
        auto& p = s.params[l];
        const auto base = "synth.params." + name + ".";
        p.n_transactions = {static_cast<int>(c.integer(base + "n_min")), static_cast<int>(c.integer(base + "n_max"))};
        p.amount_mean = c.real(base + "amount_mean");
        p.amount_spread = c.real(base + "amount_spread");
        p.interarrival_mean = c.real(base + "interarrival_mean");
        p.interarrival_jitter = c.real(base + "interarrival_jitter");
        p.counterparty_count = {static_cast<int>(c.integer(base + "cp_min")), static_cast<int>(c.integer(base + "cp_max"))};
        p.intermediary_hops = static_cast<int>(c.integer(base + "hops"));
        p.inflow_outflow_ratio = c.real(base + "inflow_outflow_ratio");
    }
    return s;
}

inline GaeShape gae_shape_from(const Config& c) {
    GaeShape s;
    s.layer_dims.clear();
    std::stringstream in(c.str("gae.layers"));
    std::string tok;
    while (std::getline(in, tok, ','))
        if (!Config::trim(tok).empty()) s.layer_dims.push_back(std::stoll(Config::trim(tok)));
    s.leaky_slope = c.real("gae.leaky_slope");
    s.lambda = c.real("gae.lambda");
    s.activation = nn::parse_activation(c.str("gae.activation"));
    s.self_loops = c.flag("gae.self_loops");
    return s;
}

inline AugmentConfig augment_config_from(const Config& c, std::uint64_t seed) {
    AugmentConfig a;
    a.p = c.real("augment.p");
    a.delta_t_max = c.real("augment.delta_t_max");
    a.theta = c.real("augment.theta");
    a.single_delta = c.flag("augment.single_delta");
    a.recompute_structure = c.flag("augment.recompute_structure");
    a.seed = seed;
    a.validate();
    return a;
}

// ---------------------------------------------------------------------------
// Pipeline stages

/// One platform's accounts and everything derived from them before training.
struct Corpus {
    Dataset data;
    std::vector<std::string> accounts;  // labeled, sorted
    std::vector<EgoGraph> egos;         // aligned with accounts
    NodeGraph graph;                    // union of the ego graphs
    Matrix node_attributes;             // raw registry attributes, one row per graph node
    std::vector<std::size_t> account_rows;  // graph row of each account
    std::size_t ingest_errors = 0;
};

inline Dataset load_dataset(const std::string& tx_path, const std::string& label_path, const std::string& platform,
                            bool strict, std::size_t* errors = nullptr) {
    if (tx_path.empty() || label_path.empty()) throw ConfigError("file source needs transactions and labels paths");
    auto r = load_transactions(tx_path, strict);
    if (errors) *errors = r.skipped();
    return Dataset(std::move(r.records), load_labels(label_path), platform);
}

inline Corpus featurize(Dataset data, int hops) {
    Corpus c{std::move(data), {}, {}, {}, {}, {}, 0};
    for (const auto& [a, _] : c.data.labels()) c.accounts.push_back(a);
    if (c.accounts.empty()) throw ValidationError("dataset has no labeled accounts");
    for (const auto& a : c.accounts) c.egos.push_back(build_ego_graph(c.data, a, hops));
    c.graph = merge_graphs(c.egos);
    c.node_attributes.resize(static_cast<Eigen::Index>(c.graph.size()), static_cast<Eigen::Index>(kFeatureCount));
    std::map<std::string, std::size_t> ego_of;
    for (std::size_t i = 0; i < c.accounts.size(); ++i) ego_of.emplace(c.accounts[i], i);
    for (std::size_t n = 0; n < c.graph.size(); ++n) {
        const auto& addr = c.graph.nodes[n];
        auto it = ego_of.find(addr);
        auto values = it != ego_of.end() ? extract_attributes(c.egos[it->second], addr).values
                                         : extract_attributes(build_ego_graph(c.data, addr, hops), addr).values;
        c.node_attributes.row(static_cast<Eigen::Index>(n)) = values.transpose();
    }
    for (const auto& a : c.accounts) c.account_rows.push_back(*c.graph.index_of(a));
    return c;
}

/// Normalized attributes of the labeled accounts.
inline Matrix account_attributes(const Corpus& c, const MinMaxStats& stats) {
    Matrix x(static_cast<Eigen::Index>(c.accounts.size()), static_cast<Eigen::Index>(kFeatureCount));
    for (std::size_t i = 0; i < c.accounts.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = c.node_attributes.row(static_cast<Eigen::Index>(c.account_rows[i]));
    return apply_minmax(x, stats).values;
}

/// Structural embedding of every labeled account under a trained model.
inline Matrix structural_embeddings(const Corpus& c, const GaeModel& model, const MinMaxStats& stats) {
    const Matrix x = apply_minmax(c.node_attributes, stats).values;
    const Matrix z = gat_forward(model, x, Neighborhoods::from_graph(c.graph, model.self_loops)).Z;
    Matrix out(static_cast<Eigen::Index>(c.accounts.size()), z.cols());
    for (std::size_t i = 0; i < c.accounts.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(c.account_rows[i]));
    return out;
}

/// Per-ego-graph alternative: one small GAE per account, center row kept.
inline Matrix per_ego_embeddings(const Corpus& c, const MinMaxStats& stats, const GaeShape& shape,
                                 const GaeTrainConfig& cfg) {
    Matrix out;
    for (std::size_t i = 0; i < c.accounts.size(); ++i) {
        auto g = to_node_graph(c.egos[i]);
        Matrix x(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(kFeatureCount));
        for (std::size_t n = 0; n < g.size(); ++n)
            x.row(static_cast<Eigen::Index>(n)) =
                c.node_attributes.row(static_cast<Eigen::Index>(*c.graph.index_of(g.nodes[n])));
        x = apply_minmax(x, stats).values;
        auto local = cfg;
        local.seed = derive_seed(cfg.seed, "ego", i);
        Matrix z;
        if (g.size() < 2) {
            auto m = init_gae(shape, local.seed);
            z = gat_forward(m, x, Neighborhoods::from_graph(g, shape.self_loops)).Z;
        } else {
            z = train_gae(x, g, shape, local).Z;
        }
        if (i == 0) out.resize(static_cast<Eigen::Index>(c.accounts.size()), z.cols());
        out.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(*g.index_of(c.accounts[i])));
    }
    return out;
}

inline Matrix fuse_rows(const Corpus& c, const Matrix& x_norm, const Matrix& z) {
    Matrix out(x_norm.rows(), x_norm.cols() + z.cols());
    for (Eigen::Index i = 0; i < x_norm.rows(); ++i)
        out.row(i) = fuse(c.accounts[static_cast<std::size_t>(i)], x_norm.row(i).transpose(), z.row(i).transpose(), z.cols())
                         .values.transpose();
    return out;
}

/// Recomputes the center embedding from an augmented ego graph with a trained GAE.
inline StructureFn restructure_with(const GaeModel& model, const MinMaxStats& stats) {
    return [&model, &stats](const EgoGraph& g) {
        auto ng = to_node_graph(g);
        Matrix x(static_cast<Eigen::Index>(ng.size()), static_cast<Eigen::Index>(kFeatureCount));
        for (std::size_t n = 0; n < ng.size(); ++n)
            x.row(static_cast<Eigen::Index>(n)) = extract_attributes(g, ng.nodes[n]).values.transpose();
        x = apply_minmax(x, stats).values;
        Matrix z = gat_forward(model, x, Neighborhoods::from_graph(ng, model.self_loops)).Z;
        return Vector(z.row(static_cast<Eigen::Index>(*ng.index_of(g.center))).transpose());
    };
}

/// Learned representation state of the pre-training platform.
struct Representation {
    MinMaxStats stats;
    std::optional<GaeModel> gae;  // absent when fusion is disabled or per-ego mode is used
    GaeTrainResult gae_run;       // loss curves of the shared GAE
    Matrix x_norm;                // account attributes
    Matrix z;                     // account embeddings (0 columns without fusion)
    Matrix fused;
};

struct RunOptions {
    bool no_fusion = false;
    bool no_pretrain = false;
    bool per_ego = false;
};

inline Representation learn_representation(const Corpus& c, const GaeShape& shape, const GaeTrainConfig& cfg,
                                           const RunOptions& opt) {
    Representation r;
    r.stats = fit_minmax(c.node_attributes);
    r.x_norm = account_attributes(c, r.stats);
    if (opt.no_fusion) {
        r.z = Matrix(r.x_norm.rows(), 0);
    } else if (opt.per_ego) {
        r.z = per_ego_embeddings(c, r.stats, shape, cfg);
    } else {
        r.gae_run = train_gae(apply_minmax(c.node_attributes, r.stats).values, c.graph, shape, cfg);
        r.gae = r.gae_run.model;
        r.z = structural_embeddings(c, *r.gae, r.stats);
    }
    r.fused = fuse_rows(c, r.x_norm, r.z);
    return r;
}

/// Representation of another platform under an already-learned one.
inline Representation transfer_representation(const Corpus& c, const Representation& source, const GaeShape& shape,
                                              const GaeTrainConfig& cfg, const RunOptions& opt) {
    Representation r;
    r.stats = source.stats;
    r.gae = source.gae;
    r.x_norm = account_attributes(c, r.stats);
    if (opt.no_fusion)
        r.z = Matrix(r.x_norm.rows(), 0);
    else if (opt.per_ego)
        r.z = per_ego_embeddings(c, r.stats, shape, cfg);
    else
        r.z = structural_embeddings(c, *r.gae, r.stats);
    r.fused = fuse_rows(c, r.x_norm, r.z);
    return r;
}

inline std::vector<PretrainSample> pretrain_samples(const Corpus& c, const Representation& r) {
    std::vector<PretrainSample> s;
    for (std::size_t i = 0; i < c.accounts.size(); ++i)
        s.push_back({&c.egos[i], r.z.row(static_cast<Eigen::Index>(i)).transpose()});
    return s;
}

// ---------------------------------------------------------------------------
// Experiment

struct SeedPlan {
    std::uint64_t root, synth, cross_synth, gae, pretrain, split, finetune, distance;

    explicit SeedPlan(std::uint64_t seed)
        : root(seed),
          synth(derive_seed(seed, "synth")),
          cross_synth(derive_seed(seed, "cross-synth")),
          gae(derive_seed(seed, "gae")),
          pretrain(derive_seed(seed, "pretrain")),
          split(derive_seed(seed, "split")),
          finetune(derive_seed(seed, "finetune")),
          distance(derive_seed(seed, "distance")) {}

    nlohmann::json to_json() const {
        return {{"root", root},         {"synth", hex64(synth)},   {"cross_synth", hex64(cross_synth)},
                {"gae", hex64(gae)},    {"pretrain", hex64(pretrain)}, {"split", hex64(split)},
                {"finetune", hex64(finetune)}, {"distance", hex64(distance)}};
    }
};

/// A pipeline stage failed; carries the stage name and the config hash.
class StageError : public Error {
public:
    StageError(std::string stage, std::string config_hash, const std::string& what)
        : Error("stage " + stage + " failed (config " + config_hash + "): " + what),
          stage_(std::move(stage)), hash_(std::move(config_hash)), cause_(what) {}
    const std::string& stage() const { return stage_; }
    const std::string& config_hash() const { return hash_; }
    const std::string& cause() const { return cause_; }

private:
    std::string stage_, hash_, cause_;
};

/// Everything the stages produce; filled progressively by Experiment.
class Experiment {
public:
    explicit Experiment(Config cfg) : cfg_(std::move(cfg)), seeds_(static_cast<std::uint64_t>(cfg_.integer("seed"))) {
        opt_.no_fusion = cfg_.flag("ablation.no_fusion");
        opt_.no_pretrain = cfg_.flag("ablation.no_pretrain");
        opt_.per_ego = cfg_.flag("gae.per_ego");
        protocol_ = cfg_.str("split.protocol");
        static const std::set<std::string> known{"standard", "zero_shot", "imbalanced", "few_shot", "cross_platform"};
        if (!known.count(protocol_)) throw ConfigError("unknown split.protocol '" + protocol_ + "'");
    }

    const Config& config() const { return cfg_; }
    const SeedPlan& seeds() const { return seeds_; }
    std::string config_hash() const { return hex64(cfg_.hash()); }
    bool cross_platform() const { return protocol_ == "cross_platform"; }

    // -- data -------------------------------------------------------------

    Dataset synth_dataset(const std::string& platform, std::uint64_t seed) const {
        return generate_dataset(generator_spec_from(cfg_, platform, seed));
    }

    const Dataset& source_dataset() {
        if (!source_data_) stage("data", [&] {
            if (cfg_.str("data.source") == "synth") {
                source_data_ = synth_dataset(cfg_.str("synth.platform"), seeds_.synth);
            } else if (cfg_.str("data.source") == "files") {
                source_data_ = load_dataset(cfg_.str("data.transactions"), cfg_.str("data.labels"),
                                            cfg_.str("data.platform"), cfg_.flag("data.strict"), &ingest_errors_);
            } else {
                throw ConfigError("data.source must be synth or files");
            }
        });
        return *source_data_;
    }

    const Dataset& target_dataset() {
        if (!cross_platform() || cfg_.str("cross.source") == "same") return source_dataset();
        if (!target_data_) stage("data", [&] {
            if (cfg_.str("cross.source") == "synth")
                target_data_ = synth_dataset(cfg_.str("cross.platform"), seeds_.cross_synth);
            else if (cfg_.str("cross.source") == "files")
                target_data_ = load_dataset(cfg_.str("cross.transactions"), cfg_.str("cross.labels"),
                                            cfg_.str("cross.platform"), cfg_.flag("data.strict"));
            else
                throw ConfigError("cross.source must be synth, files or same");
        });
        return *target_data_;
    }

    bool shares_target() const { return !cross_platform() || cfg_.str("cross.source") == "same"; }

    // -- features ---------------------------------------------------------

    const Corpus& source_corpus() {
        if (!source_corpus_) {
            const auto& d = source_dataset();
            stage("featurize", [&] { source_corpus_ = featurize(d, static_cast<int>(cfg_.integer("graph.hops"))); });
        }
        return *source_corpus_;
    }

    const Corpus& target_corpus() {
        if (shares_target()) return source_corpus();
        if (!target_corpus_) {
            const auto& d = target_dataset();
            stage("featurize", [&] { target_corpus_ = featurize(d, static_cast<int>(cfg_.integer("graph.hops"))); });
        }
        return *target_corpus_;
    }

    // -- structure --------------------------------------------------------

    GaeTrainConfig gae_train_config() const {
        GaeTrainConfig g;
        g.epochs = static_cast<int>(cfg_.integer("gae.epochs"));
        g.step = cfg_.real("gae.step");
        g.mask_rate = cfg_.real("gae.mask_rate");
        g.optimizer = nn::parse_optimizer(cfg_.str("gae.optimizer"));
        g.seed = seeds_.gae;
        return g;
    }

    const Representation& source_representation() {
        if (!source_rep_) {
            const auto& c = source_corpus();
            stage("gae", [&] { source_rep_ = learn_representation(c, gae_shape_from(cfg_), gae_train_config(), opt_); });
        }
        return *source_rep_;
    }

    const Representation& target_representation() {
        if (shares_target()) return source_representation();
        if (!target_rep_) {
            const auto& c = target_corpus();
            const auto& src = source_representation();
            stage("gae", [&] {
                    target_rep_ = transfer_representation(c, src, gae_shape_from(cfg_), gae_train_config(), opt_);
            });
        }
        return *target_rep_;
    }

    // -- pre-training -----------------------------------------------------

    EncoderShape encoder_shape() const {
        EncoderShape s;
        s.profile = cfg_.str("encoder.profile");
        s.blocks = static_cast<int>(cfg_.integer("encoder.blocks"));
        s.width = cfg_.integer("encoder.width");
        s.bottleneck = cfg_.integer("encoder.bottleneck");
        s.input_dim = static_cast<Eigen::Index>(kFeatureCount) + (opt_.no_fusion ? 0 : gae_shape_from(cfg_).layer_dims.back());
        return s;
    }

    HeadShape head_shape() const { return {cfg_.integer("head.hidden"), cfg_.integer("head.proj_dim")}; }

    ContrastiveConfig contrastive_config() const {
        ContrastiveConfig c;
        c.batch = static_cast<int>(cfg_.integer("pretrain.batch"));
        c.tau = cfg_.real("pretrain.tau");
        c.epochs = static_cast<int>(cfg_.integer("pretrain.epochs"));
        c.step = cfg_.real("pretrain.step");
        c.optimizer = nn::parse_optimizer(cfg_.str("pretrain.optimizer"));
        c.mode = parse_loss_mode(cfg_.str("pretrain.loss_mode"));
        c.seed = seeds_.pretrain;
        return c;
    }

    AugmentConfig augment_config() const { return augment_config_from(cfg_, derive_seed(seeds_.pretrain, "augment")); }

    /// Pre-trained encoder, or the untouched initialization under the no-pretrain ablation.
    const PretrainResult& pretrained() {
        if (!pretrain_) {
            const Corpus* c = opt_.no_pretrain ? nullptr : &source_corpus();
            const Representation* rep = opt_.no_pretrain ? nullptr : &source_representation();
            stage("pretrain", [&] {
                auto cc = contrastive_config();
                if (opt_.no_pretrain) {
                    PretrainResult r;
                    r.encoder = init_encoder(encoder_shape(), derive_seed(cc.seed, "encoder-init"));
                    r.head = init_head(r.encoder.out_dim(), head_shape(), derive_seed(cc.seed, "head-init"));
                    pretrain_ = std::move(r);
                } else {
                    StructureFn hook;
                    if (rep->gae) hook = restructure_with(*rep->gae, rep->stats);
                    pretrain_ = pretrain(pretrain_samples(*c, *rep), rep->stats, augment_config(), encoder_shape(),
                                         head_shape(), cc, hook);
                }
                encoder_checksum_after_pretrain_ = nn::checksum(pretrain_->encoder);
            });
        }
        return *pretrain_;
    }

    // -- evaluation -------------------------------------------------------

    ClassTarget target() const {
        return protocol_ == "zero_shot" ? ClassTarget::Binary : parse_target(cfg_.str("classify.target"));
    }

    ClassScheme scheme() { return ClassScheme::from(target(), target_corpus().data.labels()); }

    std::vector<std::string> class_names() { return scheme().names(); }

    const Split& split() {
        if (!split_) {
            const auto& labels = target_corpus().data.labels();
            stage("split", [&] {
                const double frac = cfg_.real("split.test_fraction");
                if (protocol_ == "standard" || protocol_ == "cross_platform")
                    split_ = split_standard(labels, frac, seeds_.split);
                else if (protocol_ == "zero_shot") {
                    auto masked = parse_label(cfg_.str("split.masked_label"));
                    if (!masked) throw ConfigError("unknown split.masked_label '" + cfg_.str("split.masked_label") + "'");
                    split_ = split_zero_shot(labels, *masked, frac, seeds_.split);
                } else if (protocol_ == "imbalanced")
                    split_ = split_imbalanced(labels, parse_ratio(cfg_.str("split.ratio")), frac, seeds_.split);
                else
                    split_ = split_few_shot(labels, static_cast<std::size_t>(cfg_.integer("split.n_labeled")), scheme(),
                                            seeds_.split);
            });
        }
        return *split_;
    }

    struct Evaluation {
        FinetuneResult finetune;
        Prediction prediction;
        std::vector<std::string> test_addresses;
        std::vector<int> test_labels;
        MetricsReport metrics;
        std::uint64_t encoder_checksum_before = 0, encoder_checksum_after = 0;
    };

    const Evaluation& evaluation() {
        if (!eval_) {
            const auto& c = target_corpus();
            const auto& rep = target_representation();
            const auto& enc = pretrained().encoder;
            const auto& sp = split();
            stage("finetune", [&] {
                if (sp.test.empty()) throw ValidationError("split produced an empty test set");
                const auto sch = scheme();
                auto rows = [&](const std::vector<std::string>& addrs, Matrix& x, std::vector<int>& y) {
                    x.resize(static_cast<Eigen::Index>(addrs.size()), rep.fused.cols());
                    y.clear();
                    for (std::size_t i = 0; i < addrs.size(); ++i) {
                        auto pos = std::lower_bound(c.accounts.begin(), c.accounts.end(), addrs[i]) - c.accounts.begin();
                        x.row(static_cast<Eigen::Index>(i)) = rep.fused.row(pos);
                        y.push_back(sch.index(c.data.labels().at(addrs[i])));
                    }
                };
                Evaluation e;
                Matrix x_train, x_test;
                std::vector<int> y_train;
                rows(sp.train, x_train, y_train);
                rows(sp.test, x_test, e.test_labels);
                e.test_addresses = sp.test;
                const int n_classes = static_cast<int>(sch.size());
                FinetuneConfig fc;
                fc.epochs = static_cast<int>(cfg_.integer("finetune.epochs"));
                fc.step = cfg_.real("finetune.step");
                fc.hidden = cfg_.integer("finetune.hidden");
                fc.optimizer = nn::parse_optimizer(cfg_.str("finetune.optimizer"));
                fc.seed = seeds_.finetune;
                e.encoder_checksum_before = nn::checksum(enc);
                e.finetune = finetune(enc, x_train, y_train, n_classes, fc);
                e.encoder_checksum_after = nn::checksum(enc);
                e.prediction = predict(e.finetune.head, enc, x_test);
                const auto avg = target() == ClassTarget::Binary ? Averaging::Binary : parse_averaging(cfg_.str("classify.average"));
                e.metrics = metrics(e.test_labels, e.prediction.labels, n_classes, avg,
                                    static_cast<int>(BinaryLabel::Malicious));
                eval_ = std::move(e);
            });
        }
        return *eval_;
    }

    /// Class-by-class distance over sampled fused representations of the evaluation corpus.
    const DistanceMatrix& distances() {
        if (!distance_) {
            const auto& c = target_corpus();
            const auto& rep = target_representation();
            stage("distance", [&] {
                const auto per_class = static_cast<std::size_t>(cfg_.integer("distance.per_class"));
                if (per_class < 1) throw ConfigError("distance.per_class must be >= 1");
                const auto sch = ClassScheme::from(ClassTarget::Multiclass, c.data.labels());
                std::map<int, std::vector<std::size_t>> members;
                for (std::size_t i = 0; i < c.accounts.size(); ++i)
                    members[sch.index(c.data.labels().at(c.accounts[i]))].push_back(i);
                std::mt19937_64 rng(seeds_.distance);
                std::vector<std::string> names;
                std::vector<std::vector<Vector>> groups;
                for (auto& [cls, idx] : members) {
                    std::shuffle(idx.begin(), idx.end(), rng);
                    idx.resize(std::min(idx.size(), per_class));
                    names.push_back(sch.names()[static_cast<std::size_t>(cls)]);
                    groups.emplace_back();
                    for (auto i : idx) groups.back().push_back(rep.fused.row(static_cast<Eigen::Index>(i)).transpose());
                }
                distance_ = representation_distance(names, groups, cfg_.flag("distance.normalize"));
            });
        }
        return *distance_;
    }

    std::optional<std::uint64_t> encoder_checksum_after_pretrain() const { return encoder_checksum_after_pretrain_; }
    std::size_t ingest_errors() const { return ingest_errors_; }
    const RunOptions& options() const { return opt_; }
    const std::string& protocol() const { return protocol_; }

private:
    template <class F> auto stage(const char* name, F&& f) -> decltype(f()) {
        try {
            return f();
        } catch (const StageError&) {
            throw;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, config_hash(), e.what());
        }
    }

    Config cfg_;
    SeedPlan seeds_;
    RunOptions opt_;
    std::string protocol_;
    std::size_t ingest_errors_ = 0;
    std::optional<Dataset> source_data_, target_data_;
    std::optional<Corpus> source_corpus_, target_corpus_;
    std::optional<Representation> source_rep_, target_rep_;
    std::optional<PretrainResult> pretrain_;
    std::optional<std::uint64_t> encoder_checksum_after_pretrain_;
    std::optional<Split> split_;
    std::optional<Evaluation> eval_;
    std::optional<DistanceMatrix> distance_;
};

// ---------------------------------------------------------------------------
// Artifacts

namespace fs = std::filesystem;

inline void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out << text;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline void write_config_snapshot(const fs::path& dir, const Config& c) {
    write_text(dir / "config.resolved", "# config hash " + hex64(c.hash()) + "\n" + c.resolved_text());
}

inline nlohmann::json dataset_summary(const Dataset& d) {
    std::map<std::string, std::size_t> per;
    for (const auto& [_, l] : d.labels()) ++per[std::string(to_string(l))];
    return {{"platform", d.platform()},
            {"transactions", d.transactions().size()},
            {"labeled_accounts", d.labels().size()},
            {"addresses", d.address_count()},
            {"per_label", per}};
}

inline void write_embeddings_csv(const fs::path& p, const Corpus& c, const Matrix& m) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out.precision(17);
    out << "address,label";
    for (Eigen::Index k = 0; k < m.cols(); ++k) out << ",e" << k;
    out << '\n';
    for (std::size_t i = 0; i < c.accounts.size(); ++i) {
        out << c.accounts[i] << ',' << to_string(c.data.labels().at(c.accounts[i]));
        for (Eigen::Index k = 0; k < m.cols(); ++k) out << ',' << m(static_cast<Eigen::Index>(i), k);
        out << '\n';
    }
}

inline void write_dataset(const fs::path& dir, const Dataset& d) {
    fs::create_directories(dir);
    write_transactions((dir / "transactions.jsonl").string(), d.transactions());
    write_labels((dir / "labels.csv").string(), d.labels());
}

inline void write_features(const fs::path& dir, const Corpus& c, const MinMaxStats& stats) {
    fs::create_directories(dir);
    Matrix raw(static_cast<Eigen::Index>(c.accounts.size()), static_cast<Eigen::Index>(kFeatureCount));
    for (std::size_t i = 0; i < c.accounts.size(); ++i)
        raw.row(static_cast<Eigen::Index>(i)) = c.node_attributes.row(static_cast<Eigen::Index>(c.account_rows[i]));
    write_feature_csv((dir / "features.csv").string(), c.accounts, raw);
    write_feature_csv((dir / "features_normalized.csv").string(), c.accounts, apply_minmax(raw, stats).values);
    write_json(dir / "norm_stats.json", stats.to_json());
}

inline void write_gae_artifacts(const fs::path& dir, const Corpus& c, const Representation& r) {
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "logs");
    if (r.gae) write_json(dir / "checkpoints" / "gae.json", gae_to_json(*r.gae));
    if (!r.gae_run.loss_curve.empty())
        write_loss_csv((dir / "logs" / "gae_loss.csv").string(), r.gae_run.loss_curve, r.gae_run.smoothed);
    write_embeddings_csv(dir / "structural_embeddings.csv", c, r.z);
}

inline void write_pretrain_artifacts(const fs::path& dir, Experiment& ex) {
    const auto& p = ex.pretrained();
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "logs");
    write_json(dir / "checkpoints" / "encoder.json",
               encoder_checkpoint(p.encoder, ex.encoder_shape(), &p.head, ex.head_shape(), ex.config_hash()));
    write_pretrain_log((dir / "logs" / "pretrain.csv").string(), p.log);
}

inline void write_finetune_artifacts(const fs::path& dir, Experiment& ex) {
    const auto& e = ex.evaluation();
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "logs");
    write_json(dir / "checkpoints" / "classifier.json", classifier_to_json(e.finetune.head, ex.class_names()));
    std::ostringstream log;
    log.precision(17);
    log << "epoch,loss\n";
    for (std::size_t i = 0; i < e.finetune.loss_curve.size(); ++i) log << i << ',' << e.finetune.loss_curve[i] << '\n';
    write_text(dir / "logs" / "finetune.csv", log.str());
    write_predictions_csv((dir / "predictions.csv").string(), e.test_addresses, e.test_labels, e.prediction,
                          ex.class_names());
}

inline void write_metrics_csv(const fs::path& p, const MetricsReport& m, const std::vector<std::string>& names) {
    std::ostringstream out;
    out.precision(17);
    out << "class,precision,recall,f1,support\n";
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        const auto& k = m.per_class[c];
        out << names[c] << ',' << k.precision << ',' << k.recall << ',' << k.f1 << ',' << k.support << '\n';
    }
    out << (m.averaging == Averaging::Binary ? "binary:" + names[static_cast<std::size_t>(m.positive)] : std::string("macro"))
        << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',' << m.samples << '\n';
    write_text(p, out.str());
}

/// Full run: every stage, every artifact, and the report. `wall_clock_seconds`
/// is the only field that varies between identical runs.
inline nlohmann::json run_experiment(Experiment& ex, const fs::path& out) {
    const auto start = std::chrono::steady_clock::now();
    fs::create_directories(out);
    write_config_snapshot(out, ex.config());

    const auto& src = ex.source_corpus();
    const auto& tgt = ex.target_corpus();
    const auto& rep = ex.target_representation();
    write_features(out, tgt, rep.stats);
    write_gae_artifacts(out, ex.source_corpus(), ex.source_representation());
    write_pretrain_artifacts(out, ex);
    write_finetune_artifacts(out, ex);
    const auto& ev = ex.evaluation();
    const auto names = ex.class_names();
    write_metrics_csv(out / "metrics.csv", ev.metrics, names);
    const auto& dist = ex.distances();
    write_distance_csv((out / "distances.csv").string(), dist);
    write_embeddings_csv(out / "embeddings.csv", tgt, ex.pretrained().encoder.forward(rep.fused));

    nlohmann::json r;
    r["format"] = "shadoweyes-report";
    r["version"] = 1;
    r["config_hash"] = ex.config_hash();
    r["seeds"] = ex.seeds().to_json();
    r["protocol"] = ex.protocol();
    r["split"] = {{"train", ex.split().train.size()},
                  {"test", ex.split().test.size()},
                  {"unused", ex.split().unused.size()},
                  {"details", ex.split().details}};
    r["ablation"] = {{"no_fusion", ex.options().no_fusion}, {"no_pretrain", ex.options().no_pretrain}};
    r["platforms"] = {{"pretrain", src.data.platform()}, {"finetune", tgt.data.platform()}};
    r["dataset"] = {{"pretrain", dataset_summary(src.data)}, {"finetune", dataset_summary(tgt.data)}};
    r["ingest_errors"] = ex.ingest_errors();
    r["representation_dim"] = rep.fused.cols();
    nlohmann::json gae = nlohmann::json::object();
    if (!ex.source_representation().gae_run.loss_curve.empty()) {
        const auto& g = ex.source_representation().gae_run;
        gae = {{"initial_loss", g.initial_loss}, {"final_loss", g.final_loss}, {"nodes", src.graph.size()}};
    }
    r["gae"] = gae;
    const auto& log = ex.pretrained().log;
    r["pretrain"] = log.empty() ? nlohmann::json::object()
                                : nlohmann::json{{"epochs", log.size()},
                                                 {"final_loss", log.back().loss},
                                                 {"final_pos_sim", log.back().pos_sim_mean},
                                                 {"final_neg_sim", log.back().neg_sim_mean}};
    r["encoder_checksum"] = {{"after_pretrain", hex64(*ex.encoder_checksum_after_pretrain())},
                             {"before_finetune", hex64(ev.encoder_checksum_before)},
                             {"after_finetune", hex64(ev.encoder_checksum_after)}};
    r["finetune"] = {{"final_loss", ev.finetune.loss_curve.empty() ? 0.0 : ev.finetune.loss_curve.back()},
                     {"warnings", ev.finetune.warnings}};
    r["classes"] = names;
    r["metrics"] = metrics_to_json(ev.metrics, names);
    r["distance"] = distance_to_json(dist);
    r["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json(out / "report.json", r);
    return r;
}

/// Report with the run-time-dependent fields removed, for comparisons.
inline nlohmann::json comparable_report(nlohmann::json r) {
    r.erase("wall_clock_seconds");
    return r;
}

}  // namespace shadoweyes
