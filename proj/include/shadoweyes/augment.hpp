#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "shadoweyes/common.hpp"
#include "shadoweyes/features.hpp"
#include "shadoweyes/structgae.hpp"
#include "shadoweyes/txdata.hpp"

namespace shadoweyes {

struct AugmentConfig {
    double p = 0.5;
    double delta_t_max = 3600;  // seconds
    double theta = 0.1;         // share of a history eligible for splitting
    std::uint64_t seed = 7;
    bool single_delta = false;  // one delay for the whole history instead of per transaction
    bool recompute_structure = false;

    void validate() const {
        if (!(p >= 0 && p <= 1)) throw ValidationError("augment.p must be in [0,1]");
        if (!(delta_t_max > 0)) throw ValidationError("augment.delta_t_max must be > 0");
        if (!(theta > 0 && theta <= 1)) throw ValidationError("augment.theta must be in (0,1]");
    }
};

namespace detail {

// Delay in whole seconds: a real draw from (0, delta_t_max], floored. Timestamps
// are integers, so a sub-second maximum yields no shift at all.
inline std::int64_t draw_delay(double delta_t_max, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, delta_t_max);
    return static_cast<std::int64_t>(std::floor(delta_t_max - u(rng)));
}

inline void require_history(const std::vector<TransactionRecord>& h) {
    if (h.empty()) throw ValidationError("cannot augment an empty history");
}

}  // namespace detail

/// Shifts transactions later in time. Per-transaction mode selects each
/// transaction with probability p; single-delta mode selects the whole history
/// once. Output is sorted.
inline std::vector<TransactionRecord> time_delay(std::vector<TransactionRecord> history, const AugmentConfig& cfg,
                                                 std::mt19937_64& rng) {
    detail::require_history(history);
    cfg.validate();
    std::bernoulli_distribution pick(cfg.p);
    if (cfg.single_delta) {
        if (pick(rng)) {
            const auto dt = detail::draw_delay(cfg.delta_t_max, rng);
            for (auto& t : history) t.timestamp += dt;
        }
    } else {
        for (auto& t : history)
            if (pick(rng)) t.timestamp += detail::draw_delay(cfg.delta_t_max, rng);
    }
    std::sort(history.begin(), history.end(), earlier);
    return history;
}

struct SplitStats {
    std::size_t split = 0;
    std::size_t skipped = 0;  // chosen but below 2 base units
};

/// With probability p, splits ceil(theta * |history|) randomly chosen
/// transactions into two halves. The first half keeps the original time, the
/// second lands up to delta_t_max later. Amounts are conserved exactly.
inline std::vector<TransactionRecord> amount_split(std::vector<TransactionRecord> history, const AugmentConfig& cfg,
                                                   std::mt19937_64& rng, SplitStats* stats = nullptr) {
    detail::require_history(history);
    cfg.validate();
    SplitStats local;
    std::bernoulli_distribution apply(cfg.p);
    if (apply(rng)) {
        const auto n = history.size();
        const auto k = std::min(n, static_cast<std::size_t>(std::ceil(cfg.theta * static_cast<double>(n))));
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> d(i, n - 1);
            std::swap(idx[i], idx[d(rng)]);
        }
        std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        std::vector<TransactionRecord> extra;
        for (std::size_t i = 0; i < k; ++i) {
            auto& t = history[idx[i]];
            if (t.amount < 2) {
                ++local.skipped;
                continue;
            }
            TransactionRecord second = t;
            second.amount = t.amount / 2;
            second.timestamp = t.timestamp + detail::draw_delay(cfg.delta_t_max, rng);
            second.tx_id = t.tx_id + "/s2";
            t.amount -= second.amount;
            t.tx_id += "/s1";
            extra.push_back(std::move(second));
            ++local.split;
        }
        history.insert(history.end(), extra.begin(), extra.end());
        std::sort(history.begin(), history.end(), earlier);
    }
    if (stats) *stats = local;
    return history;
}

/// One augmented sample: a transformed history plus the label of the account it
/// came from. The label is copied, never recomputed.
struct AugmentedHistory {
    std::vector<TransactionRecord> history;
    std::optional<BehaviorLabel> label;
    SplitStats split;
};

inline AugmentedHistory augment_history(const std::vector<TransactionRecord>& history,
                                        std::optional<BehaviorLabel> label, const AugmentConfig& cfg,
                                        std::mt19937_64& rng) {
    AugmentedHistory out;
    out.label = label;
    out.history = amount_split(time_delay(history, cfg, rng), cfg, rng, &out.split);
    return out;
}

struct ViewPair {
    std::string address;
    FusedRepresentation view1;
    FusedRepresentation view2;
    std::optional<BehaviorLabel> label;
};

/// Optional hook that recomputes the structural embedding of the center from an
/// augmented ego graph. When absent, views reuse the original embedding.
using StructureFn = std::function<Vector(const EgoGraph&)>;

/// Builds two independently augmented views of the ego graph's center.
inline ViewPair make_views(const EgoGraph& ego, const Vector& z_row, const MinMaxStats& stats,
                           const AugmentConfig& cfg, std::mt19937_64& rng,
                           std::optional<BehaviorLabel> label = std::nullopt, const StructureFn& restructure = {}) {
    const auto& original = ego.history(ego.center);
    auto view = [&]() {
        auto aug = augment_history(original, label, cfg, rng);
        EgoGraph g = ego;
        g.histories[ego.center] = std::move(aug.history);
        Vector x = apply_minmax(extract_attributes(g, ego.center).values, stats);
        Vector z = cfg.recompute_structure && restructure ? restructure(g) : z_row;
        return fuse(ego.center, x, z, z_row.size());
    };
    ViewPair vp;
    vp.address = ego.center;
    vp.label = label;
    vp.view1 = view();
    vp.view2 = view();
    return vp;
}

}  // namespace shadoweyes
