#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shadoweyes/common.hpp"
#include "shadoweyes/txdata.hpp"

namespace shadoweyes {

enum class FeatureCategory { Temporal, Amount, Count };

struct FeatureDef {
    std::string_view name;
    FeatureCategory category;
    std::string_view unit;
    std::string_view description;
};

inline constexpr std::size_t kTemporalFeatures = 17;
inline constexpr std::size_t kAmountFeatures = 19;
inline constexpr std::size_t kCountFeatures = 7;
inline constexpr std::size_t kFeatureCount = kTemporalFeatures + kAmountFeatures + kCountFeatures;
inline constexpr int kRegistryVersion = 1;

// Order is part of the on-disk schema; bump kRegistryVersion when it changes.
inline constexpr std::array<FeatureDef, kFeatureCount> kFeatureRegistry = {{
    {"lifecycle_span", FeatureCategory::Temporal, "s", "last minus first transaction time"},
    {"active_days", FeatureCategory::Temporal, "days", "distinct UTC days with activity"},
    {"active_day_ratio", FeatureCategory::Temporal, "ratio", "active days over calendar days spanned"},
    {"interval_mean", FeatureCategory::Temporal, "s", "mean gap between consecutive transactions"},
    {"interval_std", FeatureCategory::Temporal, "s", "std of consecutive gaps"},
    {"interval_min", FeatureCategory::Temporal, "s", "smallest consecutive gap"},
    {"interval_max", FeatureCategory::Temporal, "s", "largest consecutive gap"},
    {"in_interarrival_mean", FeatureCategory::Temporal, "s", "mean gap between incoming transactions"},
    {"in_interarrival_std", FeatureCategory::Temporal, "s", "std of incoming gaps"},
    {"out_interarrival_mean", FeatureCategory::Temporal, "s", "mean gap between outgoing transactions"},
    {"out_interarrival_std", FeatureCategory::Temporal, "s", "std of outgoing gaps"},
    {"hour_mean", FeatureCategory::Temporal, "h", "mean UTC hour of day"},
    {"hour_std", FeatureCategory::Temporal, "h", "std of UTC hour of day"},
    {"max_txs_per_day", FeatureCategory::Temporal, "count", "busiest UTC day"},
    {"mean_txs_per_active_day", FeatureCategory::Temporal, "count", "transactions per active day"},
    {"first_to_peak_gap", FeatureCategory::Temporal, "s", "first transaction to first transaction of busiest day"},
    {"burstiness", FeatureCategory::Temporal, "ratio", "(std-mean)/(std+mean) of gaps"},
    {"total_in", FeatureCategory::Amount, "base", "sum of incoming amounts"},
    {"total_out", FeatureCategory::Amount, "base", "sum of outgoing amounts"},
    {"net_out_minus_in", FeatureCategory::Amount, "base", "total_out - total_in"},
    {"in_mean", FeatureCategory::Amount, "base", "mean incoming amount"},
    {"in_std", FeatureCategory::Amount, "base", "std of incoming amounts"},
    {"in_min", FeatureCategory::Amount, "base", "smallest incoming amount"},
    {"in_max", FeatureCategory::Amount, "base", "largest incoming amount"},
    {"out_mean", FeatureCategory::Amount, "base", "mean outgoing amount"},
    {"out_std", FeatureCategory::Amount, "base", "std of outgoing amounts"},
    {"out_min", FeatureCategory::Amount, "base", "smallest outgoing amount"},
    {"out_max", FeatureCategory::Amount, "base", "largest outgoing amount"},
    {"in_range", FeatureCategory::Amount, "base", "max - min single incoming amount"},
    {"out_range", FeatureCategory::Amount, "base", "max - min single outgoing amount"},
    {"in_median", FeatureCategory::Amount, "base", "median incoming amount"},
    {"out_median", FeatureCategory::Amount, "base", "median outgoing amount"},
    {"out_in_ratio", FeatureCategory::Amount, "ratio", "total_out / total_in (0 without inflow)"},
    {"max_share", FeatureCategory::Amount, "ratio", "largest single amount / total volume"},
    {"mean_amount", FeatureCategory::Amount, "base", "count-weighted mean over all transactions"},
    {"below_median_fraction", FeatureCategory::Amount, "ratio", "share of transactions below the median amount"},
    {"in_degree", FeatureCategory::Count, "count", "incoming transaction count"},
    {"out_degree", FeatureCategory::Count, "count", "outgoing transaction count"},
    {"degree_difference", FeatureCategory::Count, "count", "out_degree - in_degree"},
    {"unique_in_counterparties", FeatureCategory::Count, "count", "distinct senders"},
    {"unique_out_counterparties", FeatureCategory::Count, "count", "distinct receivers"},
    {"total_tx_count", FeatureCategory::Count, "count", "all transactions of the account"},
    {"neighbor_mean_tx_count", FeatureCategory::Count, "count", "mean transaction count of 1-hop neighbors"},
}};

inline std::size_t feature_index(std::string_view name) {
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        if (kFeatureRegistry[i].name == name) return i;
    throw ValidationError("unknown feature '" + std::string(name) + "'");
}

struct AttributeVector {
    std::string address;
    Vector values = Vector::Zero(kFeatureCount);
};

namespace detail {

struct Moments {
    double mean = 0, std = 0, min = 0, max = 0;
};

inline Moments moments(std::span<const double> xs) {
    Moments m;
    if (xs.empty()) return m;
    m.min = *std::min_element(xs.begin(), xs.end());
    m.max = *std::max_element(xs.begin(), xs.end());
    m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size()));
    return m;
}

inline double median(std::vector<double> xs) {
    if (xs.empty()) return 0;
    std::sort(xs.begin(), xs.end());
    auto n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline std::vector<double> gaps(const std::vector<std::int64_t>& times) {
    std::vector<double> g;
    for (std::size_t i = 1; i < times.size(); ++i) g.push_back(static_cast<double>(times[i] - times[i - 1]));
    return g;
}

inline std::int64_t utc_day(std::int64_t t) { return t >= 0 ? t / 86400 : -((-t + 86399) / 86400); }

}  // namespace detail

/// Computes the 43 registry attributes of `center` from its history in `graph`.
/// The history is re-sorted internally, so input order does not matter.
inline AttributeVector extract_attributes(const EgoGraph& graph, const std::string& center) {
    auto hist = graph.history(center);
    if (hist.empty()) throw ValidationError("account '" + center + "' has no transactions");
    std::sort(hist.begin(), hist.end(), earlier);

    std::vector<std::int64_t> times, in_times, out_times;
    std::vector<double> in_amt, out_amt, all_amt;
    std::set<std::string> in_cp, out_cp;
    for (const auto& t : hist) {
        times.push_back(t.timestamp);
        all_amt.push_back(static_cast<double>(t.amount));
        if (t.receiver == center) {
            in_times.push_back(t.timestamp);
            in_amt.push_back(static_cast<double>(t.amount));
            in_cp.insert(t.sender);
        }
        if (t.sender == center) {
            out_times.push_back(t.timestamp);
            out_amt.push_back(static_cast<double>(t.amount));
            out_cp.insert(t.receiver);
        }
    }

    AttributeVector out;
    out.address = center;
    auto& v = out.values;
    std::size_t k = 0;

    // temporal
    const double lifecycle = static_cast<double>(times.back() - times.front());
    std::map<std::int64_t, std::size_t> per_day;
    for (auto t : times) ++per_day[detail::utc_day(t)];
    const double active_days = static_cast<double>(per_day.size());
    const double spanned_days =
        static_cast<double>(detail::utc_day(times.back()) - detail::utc_day(times.front()) + 1);
    auto iv = detail::gaps(times);
    auto ivm = detail::moments(iv);
    auto inm = detail::moments(detail::gaps(in_times));
    auto outm = detail::moments(detail::gaps(out_times));
    std::vector<double> hours;
    for (auto t : times) hours.push_back(static_cast<double>((t - detail::utc_day(t) * 86400) / 3600));
    auto hm = detail::moments(hours);
    std::int64_t peak_day = 0;
    std::size_t peak_count = 0;
    for (const auto& [day, c] : per_day)
        if (c > peak_count) peak_day = day, peak_count = c;
    std::int64_t peak_first = times.front();
    for (auto t : times)
        if (detail::utc_day(t) == peak_day) {
            peak_first = t;
            break;
        }

    v[k++] = lifecycle;
    v[k++] = active_days;
    v[k++] = active_days / spanned_days;
    v[k++] = ivm.mean;
    v[k++] = ivm.std;
    v[k++] = ivm.min;
    v[k++] = ivm.max;
    v[k++] = inm.mean;
    v[k++] = inm.std;
    v[k++] = outm.mean;
    v[k++] = outm.std;
    v[k++] = hm.mean;
    v[k++] = hm.std;
    v[k++] = static_cast<double>(peak_count);
    v[k++] = static_cast<double>(times.size()) / active_days;
    v[k++] = static_cast<double>(peak_first - times.front());
    v[k++] = (ivm.std + ivm.mean) > 0 ? (ivm.std - ivm.mean) / (ivm.std + ivm.mean) : 0.0;

    // amount
    auto im = detail::moments(in_amt);
    auto om = detail::moments(out_amt);
    const double total_in = std::accumulate(in_amt.begin(), in_amt.end(), 0.0);
    const double total_out = std::accumulate(out_amt.begin(), out_amt.end(), 0.0);
    const double volume = std::accumulate(all_amt.begin(), all_amt.end(), 0.0);
    const double all_median = detail::median(all_amt);
    const double largest = *std::max_element(all_amt.begin(), all_amt.end());
    v[k++] = total_in;
    v[k++] = total_out;
    v[k++] = total_out - total_in;
    v[k++] = im.mean;
    v[k++] = im.std;
    v[k++] = im.min;
    v[k++] = im.max;
    v[k++] = om.mean;
    v[k++] = om.std;
    v[k++] = om.min;
    v[k++] = om.max;
    v[k++] = im.max - im.min;
    v[k++] = om.max - om.min;
    v[k++] = detail::median(in_amt);
    v[k++] = detail::median(out_amt);
    v[k++] = total_in > 0 ? total_out / total_in : 0.0;
    v[k++] = volume > 0 ? largest / volume : 0.0;
    v[k++] = volume / static_cast<double>(all_amt.size());
    v[k++] = static_cast<double>(std::count_if(all_amt.begin(), all_amt.end(),
                                               [&](double a) { return a < all_median; })) /
             static_cast<double>(all_amt.size());

    // count
    std::set<std::string> neighbors(in_cp);
    neighbors.insert(out_cp.begin(), out_cp.end());
    neighbors.erase(center);
    double neighbor_txs = 0;
    for (const auto& n : neighbors) neighbor_txs += static_cast<double>(graph.history(n).size());
    v[k++] = static_cast<double>(in_amt.size());
    v[k++] = static_cast<double>(out_amt.size());
    v[k++] = static_cast<double>(out_amt.size()) - static_cast<double>(in_amt.size());
    v[k++] = static_cast<double>(in_cp.size());
    v[k++] = static_cast<double>(out_cp.size());
    v[k++] = static_cast<double>(hist.size());
    v[k++] = neighbors.empty() ? 0.0 : neighbor_txs / static_cast<double>(neighbors.size());
    return out;
}

// ---------------------------------------------------------------------------
// Min-max normalization

struct MinMaxStats {
    Vector min;
    Vector max;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "shadoweyes-minmax";
        j["version"] = 1;
        j["registry_version"] = kRegistryVersion;
        j["min"] = std::vector<double>(min.data(), min.data() + min.size());
        j["max"] = std::vector<double>(max.data(), max.data() + max.size());
        return j;
    }

    static MinMaxStats from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "shadoweyes-minmax") throw ParseError("not a min-max stats file");
        auto lo = j.at("min").get<std::vector<double>>();
        auto hi = j.at("max").get<std::vector<double>>();
        if (lo.size() != hi.size()) throw ParseError("min/max length mismatch");
        MinMaxStats s;
        s.min = Eigen::Map<Vector>(lo.data(), static_cast<Eigen::Index>(lo.size()));
        s.max = Eigen::Map<Vector>(hi.data(), static_cast<Eigen::Index>(hi.size()));
        return s;
    }
};

struct Normalized {
    Matrix values;
    std::size_t out_of_range = 0;  // entries outside [0,1] when applying foreign stats
};

inline MinMaxStats fit_minmax(const Matrix& m) {
    if (m.rows() < 1) throw ValidationError("normalization needs at least one row");
    if (!m.allFinite()) throw ValidationError("normalization input has non-finite entries");
    return {m.colwise().minCoeff().transpose(), m.colwise().maxCoeff().transpose()};
}

/// (x - min) / (max - min) per column. Constant columns map to 0. Values are not
/// clipped; entries that fall outside [0,1] are counted.
inline Normalized apply_minmax(const Matrix& m, const MinMaxStats& stats) {
    if (m.cols() != stats.min.size()) throw ValidationError("normalization column count mismatch");
    if (!m.allFinite()) throw ValidationError("normalization input has non-finite entries");
    Normalized out{Matrix(m.rows(), m.cols()), 0};
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double range = stats.max[c] - stats.min[c];
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            double x = range > 0 ? (m(r, c) - stats.min[c]) / range : 0.0;
            out.values(r, c) = x;
            if (x < 0.0 || x > 1.0) ++out.out_of_range;
        }
    }
    return out;
}

inline Vector apply_minmax(const Vector& row, const MinMaxStats& stats) {
    return apply_minmax(Matrix(row.transpose()), stats).values.row(0).transpose();
}

struct FittedNormalization {
    Normalized normalized;
    MinMaxStats stats;
};

inline FittedNormalization normalize_minmax(const Matrix& m) {
    auto stats = fit_minmax(m);
    return {apply_minmax(m, stats), stats};
}

// ---------------------------------------------------------------------------
// Persistence

inline std::string feature_header() {
    std::string h = "address";
    for (const auto& f : kFeatureRegistry) (h += ',') += f.name;
    return h;
}

inline void write_feature_csv(const std::string& path, std::span<const std::string> addresses, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << feature_header() << '\n';
    out.precision(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        out << addresses[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << m(r, c);
        out << '\n';
    }
}

}  // namespace shadoweyes
