#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "shadoweyes/common.hpp"
#include "shadoweyes/txdata.hpp"

namespace shadoweyes {

struct IntRange {
    int min = 1;
    int max = 1;
};

/// Per-class generator knobs. Amounts are base units; times are seconds.
/// `spread` and `jitter` are log-normal sigmas around the stated means.
struct BehaviorParams {
    BehaviorLabel label = BehaviorLabel::PersonalWallet;
    IntRange n_transactions{10, 30};
    double amount_mean = 2e6;
    double amount_spread = 0.8;
    double interarrival_mean = 86400;
    double interarrival_jitter = 0.8;
    IntRange counterparty_count{3, 10};
    int intermediary_hops = 3;        // darknet only
    double inflow_outflow_ratio = 4;  // ponzi only

    void validate() const {
        auto name = std::string(to_string(label));
        if (n_transactions.min < 1 || n_transactions.min > n_transactions.max)
            throw ValidationError(name + ": invalid transaction-count range");
        if (counterparty_count.min < 1 || counterparty_count.min > counterparty_count.max)
            throw ValidationError(name + ": invalid counterparty range");
        if (!(amount_mean > 0) || !(interarrival_mean > 0)) throw ValidationError(name + ": means must be positive");
        if (amount_spread < 0 || interarrival_jitter < 0) throw ValidationError(name + ": negative spread");
        if (intermediary_hops < 1) throw ValidationError(name + ": intermediary_hops must be >= 1");
        if (!(inflow_outflow_ratio > 0)) throw ValidationError(name + ": inflow_outflow_ratio must be positive");
    }
};

inline BehaviorParams default_params(BehaviorLabel label) {
    BehaviorParams p;
    p.label = label;
    switch (label) {
        case BehaviorLabel::PersonalWallet:
            p.n_transactions = {8, 30};
            p.amount_mean = 2e6, p.amount_spread = 0.9;
            p.interarrival_mean = 86400, p.interarrival_jitter = 0.8;
            p.counterparty_count = {3, 10};
            break;
        case BehaviorLabel::MiningPool:
            p.n_transactions = {20, 50};
            p.amount_mean = 1.5e6, p.amount_spread = 0.7;
            p.interarrival_mean = 43200, p.interarrival_jitter = 0.6;
            p.counterparty_count = {10, 30};
            break;
        case BehaviorLabel::NetworkService:
            p.n_transactions = {15, 45};
            p.amount_mean = 1.2e6, p.amount_spread = 0.8;
            p.interarrival_mean = 50000, p.interarrival_jitter = 0.8;
            p.counterparty_count = {8, 25};
            break;
        case BehaviorLabel::DigitalFinancialService:
            p.n_transactions = {15, 40};
            p.amount_mean = 3e6, p.amount_spread = 0.9;
            p.interarrival_mean = 70000, p.interarrival_jitter = 0.7;
            p.counterparty_count = {6, 20};
            break;
        case BehaviorLabel::Phishing:
            p.n_transactions = {3, 7};
            p.amount_mean = 2.5e7, p.amount_spread = 0.6;
            p.interarrival_mean = 40000, p.interarrival_jitter = 1.0;
            p.counterparty_count = {2, 5};
            break;
        case BehaviorLabel::Gambling:
            p.n_transactions = {40, 80};
            p.amount_mean = 2e5, p.amount_spread = 0.7;
            p.interarrival_mean = 3000, p.interarrival_jitter = 0.9;
            p.counterparty_count = {10, 30};
            break;
        case BehaviorLabel::PonziScheme:
            p.n_transactions = {25, 50};
            p.amount_mean = 5e6, p.amount_spread = 0.6;
            p.interarrival_mean = 30000, p.interarrival_jitter = 0.6;
            p.counterparty_count = {15, 30};
            p.inflow_outflow_ratio = 4;
            break;
        case BehaviorLabel::MoneyLaundering:
            p.n_transactions = {40, 80};
            p.amount_mean = 8e5, p.amount_spread = 0.5;
            p.interarrival_mean = 300, p.interarrival_jitter = 0.5;
            p.counterparty_count = {3, 6};
            break;
        case BehaviorLabel::CriminalBlacklist:
            p.n_transactions = {1, 3};
            p.amount_mean = 1.5e7, p.amount_spread = 0.5;
            p.interarrival_mean = 20000, p.interarrival_jitter = 0.8;
            p.counterparty_count = {1, 3};
            break;
        case BehaviorLabel::DarknetTransaction:
            p.n_transactions = {8, 20};
            p.amount_mean = 3e6, p.amount_spread = 0.8;
            p.interarrival_mean = 30000, p.interarrival_jitter = 1.2;
            p.counterparty_count = {5, 15};
            p.intermediary_hops = 3;
            break;
    }
    return p;
}

struct GeneratorSpec {
    std::map<BehaviorLabel, BehaviorParams> params;
    std::map<BehaviorLabel, int> counts;
    int normal_count = 0;  // accounts drawn from a mixture of the four benign roles
    std::string platform = "btc";
    std::uint64_t seed = 7;
    std::int64_t epoch_start = 1'600'000'000;
    std::int64_t epoch_window = 180 * 86400;
    int shared_pool_size = 40;      // service addresses shared between benign accounts
    double shared_fraction = 0.3;   // share of benign counterparties drawn from the pool

    static GeneratorSpec with_defaults() {
        GeneratorSpec s;
        for (auto l : kAllLabels) s.params[l] = default_params(l);
        return s;
    }

    const BehaviorParams& params_for(BehaviorLabel l) const {
        auto it = params.find(l);
        if (it == params.end()) throw ValidationError("no generator params for " + std::string(to_string(l)));
        return it->second;
    }

    int total_accounts() const {
        int n = normal_count;
        for (const auto& [_, c] : counts) n += c;
        return n;
    }

    void validate() const {
        for (const auto& [l, c] : counts) {
            if (c < 0) throw ValidationError("negative account count");
            if (c > 0) params_for(l).validate();
        }
        if (normal_count < 0) throw ValidationError("negative account count");
        if (normal_count > 0)
            for (int i = 0; i < 4; ++i) params_for(kAllLabels[static_cast<std::size_t>(i)]).validate();
        if (total_accounts() < 1) throw ValidationError("generator spec produces no accounts");
        if (epoch_window <= 0 || epoch_start < 0) throw ValidationError("invalid epoch window");
        if (shared_fraction < 0 || shared_fraction > 1) throw ValidationError("shared_fraction must be in [0,1]");
    }
};

/// Where an account's synthetic history is placed.
struct AccountContext {
    std::string center;
    std::string platform = "btc";
    std::int64_t epoch_start = 1'600'000'000;
    std::int64_t epoch_window = 180 * 86400;
    int shared_pool_size = 0;
    double shared_fraction = 0;
};

struct AccountHistory {
    std::string center;
    BehaviorLabel label = BehaviorLabel::PersonalWallet;
    std::vector<TransactionRecord> transactions;  // center's own plus neighbor stubs
};

namespace detail {

inline std::string_view label_abbrev(BehaviorLabel l) {
    static constexpr std::array<std::string_view, kLabelCount> abbr = {"pw", "mp", "ns", "dfs", "phi",
                                                                       "gam", "pon", "ml", "bl", "dn"};
    return abbr[static_cast<std::size_t>(l)];
}

class Sampler {
public:
    explicit Sampler(std::mt19937_64& rng) : rng_(rng) {}

    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    int uniform_int(IntRange r) { return uniform_int(r.min, r.max); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
    bool bernoulli(double p) { return uniform() < p; }

    // log-normal with the given arithmetic mean
    double lognormal(double mean, double sigma) {
        const double mu = std::log(mean) - 0.5 * sigma * sigma;
        return std::exp(std::normal_distribution<double>(mu, sigma)(rng_));
    }

    std::int64_t amount(const BehaviorParams& p) {
        return std::max<std::int64_t>(1, std::llround(lognormal(p.amount_mean, p.amount_spread)));
    }

    std::int64_t gap(const BehaviorParams& p) {
        return std::max<std::int64_t>(1, std::llround(lognormal(p.interarrival_mean, p.interarrival_jitter)));
    }

private:
    std::mt19937_64& rng_;
};

/// Builds transactions on a relative clock, then shifts them into the epoch window.
class HistoryBuilder {
public:
    explicit HistoryBuilder(const AccountContext& ctx) : ctx_(ctx) {}

    void add(std::int64_t t, const std::string& from, const std::string& to, std::int64_t amount) {
        txs_.push_back({"", t, from, to, std::max<std::int64_t>(1, amount)});
    }

    std::vector<TransactionRecord> finish(Sampler& s) {
        if (txs_.empty()) return {};
        std::int64_t lo = txs_.front().timestamp, hi = lo;
        for (const auto& t : txs_) lo = std::min(lo, t.timestamp), hi = std::max(hi, t.timestamp);
        const std::int64_t span = hi - lo;
        const std::int64_t room = ctx_.epoch_window - 1;
        double scale = 1.0;
        if (span > room) scale = static_cast<double>(room) / static_cast<double>(span);
        const auto scaled_span = static_cast<std::int64_t>(std::floor(static_cast<double>(span) * scale));
        const std::int64_t slack = room - scaled_span;
        const auto start = ctx_.epoch_start + static_cast<std::int64_t>(std::floor(s.uniform() * static_cast<double>(slack)));
        std::vector<TransactionRecord> out = std::move(txs_);
        for (std::size_t i = 0; i < out.size(); ++i) {
            auto rel = static_cast<double>(out[i].timestamp - lo) * scale;
            out[i].timestamp = start + static_cast<std::int64_t>(std::floor(rel));
            char buf[24];
            std::snprintf(buf, sizeof buf, "%05zu", i);
            out[i].tx_id = ctx_.center + ":" + buf;
        }
        return out;
    }

private:
    const AccountContext& ctx_;
    std::vector<TransactionRecord> txs_;
};

inline std::string counterparty(const AccountContext& ctx, const char* role, int j) {
    return ctx.center + "_" + role + std::to_string(j);
}

inline std::vector<std::string> benign_counterparties(const AccountContext& ctx, Sampler& s, int n) {
    std::vector<std::string> cps;
    for (int j = 0; j < n; ++j) {
        if (ctx.shared_pool_size > 0 && s.bernoulli(ctx.shared_fraction))
            cps.push_back(ctx.platform + "_svc_" + std::to_string(s.uniform_int(0, ctx.shared_pool_size - 1)));
        else
            cps.push_back(counterparty(ctx, "cp", j));
    }
    return cps;
}

}  // namespace detail

/// Emits one account's history following its class's structural signature.
inline AccountHistory generate_account(BehaviorLabel label, const BehaviorParams& params, std::mt19937_64& rng,
                                       const AccountContext& ctx) {
    params.validate();
    detail::Sampler s(rng);
    detail::HistoryBuilder b(ctx);
    const auto& c = ctx.center;
    std::int64_t t = 0;

    switch (label) {
        case BehaviorLabel::PersonalWallet:
        case BehaviorLabel::MiningPool:
        case BehaviorLabel::NetworkService:
        case BehaviorLabel::DigitalFinancialService: {
            // mining pools mostly pay out; the other roles are roughly balanced
            const double in_share = label == BehaviorLabel::MiningPool ? 0.2 : 0.5;
            const int n = s.uniform_int(params.n_transactions);
            auto cps = detail::benign_counterparties(ctx, s, s.uniform_int(params.counterparty_count));
            for (int i = 0; i < n; ++i) {
                const auto& cp = cps[static_cast<std::size_t>(s.uniform_int(0, static_cast<int>(cps.size()) - 1))];
                if (s.bernoulli(in_share))
                    b.add(t, cp, c, s.amount(params));
                else
                    b.add(t, c, cp, s.amount(params));
                t += s.gap(params);
            }
            break;
        }
        case BehaviorLabel::Phishing: {
            // victims pay in large sums, the balance is swept out to fraudster wallets
            const int n = s.uniform_int(params.n_transactions);
            const int n_out = n >= 2 ? std::max(1, n / 3) : 0;
            const int n_in = n - n_out;
            const int victims = s.uniform_int(params.counterparty_count);
            std::int64_t balance = 0;
            for (int i = 0; i < n_in; ++i) {
                auto a = s.amount(params);
                balance += a;
                b.add(t, detail::counterparty(ctx, "victim", i % victims), c, a);
                t += s.gap(params);
            }
            const int sinks = s.uniform_int(1, 2);
            for (int i = 0; i < n_out; ++i) {
                b.add(t, c, detail::counterparty(ctx, "sink", i % sinks), balance / n_out);
                t += s.gap(params);
            }
            break;
        }
        case BehaviorLabel::Gambling: {
            // house address: many small bets in, payouts out
            const int n = s.uniform_int(params.n_transactions);
            const int players = s.uniform_int(params.counterparty_count);
            for (int i = 0; i < n; ++i) {
                auto p = detail::counterparty(ctx, "player", s.uniform_int(0, players - 1));
                if (s.bernoulli(0.6))
                    b.add(t, p, c, s.amount(params));
                else
                    b.add(t, c, p, s.amount(params));
                t += s.gap(params);
            }
            break;
        }
        case BehaviorLabel::PonziScheme: {
            // every investor pays in at least once; payouts go to earlier investors
            const int investors = s.uniform_int(params.counterparty_count);
            const int n = s.uniform_int(params.n_transactions);
            const double r = params.inflow_outflow_ratio;
            int n_out = static_cast<int>(std::floor(static_cast<double>(n) / (r + 1.0)));
            int n_in = std::max(n - n_out, investors);
            n_out = std::min(n_out, static_cast<int>(std::floor(static_cast<double>(n_in) / r)));
            std::vector<char> is_out(static_cast<std::size_t>(n_in + n_out), 0);
            // payouts never precede the first few investments
            for (int k = 0; k < n_out; ++k) {
                int pos;
                do {
                    pos = s.uniform_int(std::min(3, n_in), n_in + n_out - 1);
                } while (is_out[static_cast<std::size_t>(pos)]);
                is_out[static_cast<std::size_t>(pos)] = 1;
            }
            int invested = 0;
            for (std::size_t i = 0; i < is_out.size(); ++i) {
                if (is_out[i] && invested > 0) {
                    auto who = s.uniform_int(0, std::min(invested, investors) - 1);
                    b.add(t, c, detail::counterparty(ctx, "investor", who),
                          static_cast<std::int64_t>(1.3 * static_cast<double>(s.amount(params))));
                } else {
                    auto who = invested < investors ? invested : s.uniform_int(0, investors - 1);
                    b.add(t, detail::counterparty(ctx, "investor", who), c, s.amount(params));
                    ++invested;
                }
                t += s.gap(params);
            }
            break;
        }
        case BehaviorLabel::MoneyLaundering: {
            // rapid cycles: center -> colluder -> colluder -> center
            const int n = s.uniform_int(params.n_transactions);
            const int k = std::max(2, s.uniform_int(params.counterparty_count));
            int emitted = 0;
            int round = 0;
            while (emitted < n) {
                auto a = detail::counterparty(ctx, "mule", round % k);
                auto z = detail::counterparty(ctx, "mule", (round + 1) % k);
                auto amt = s.amount(params);
                b.add(t, c, a, amt);
                ++emitted;
                auto dt = s.gap(params);
                b.add(t + dt / 2, a, z, amt - amt / 100);
                t += dt;
                if (emitted < n) {
                    b.add(t, z, c, amt - amt / 50);
                    ++emitted;
                    t += s.gap(params);
                }
                ++round;
            }
            break;
        }
        case BehaviorLabel::CriminalBlacklist: {
            // one-off victim payments, then a single cash-out
            const int n = s.uniform_int(params.n_transactions);
            const int victims = s.uniform_int(params.counterparty_count);
            std::int64_t balance = 0;
            for (int i = 0; i + 1 < n; ++i) {
                auto a = s.amount(params);
                balance += a;
                b.add(t, detail::counterparty(ctx, "victim", i % victims), c, a);
                t += s.gap(params);
            }
            b.add(t, c, detail::counterparty(ctx, "cashout", 0), balance > 0 ? balance : s.amount(params));
            break;
        }
        case BehaviorLabel::DarknetTransaction: {
            // market hub: buyer -> hub -> relay... -> seller, hub counted as first intermediary
            const int purchases = s.uniform_int(params.n_transactions);
            const int buyers = s.uniform_int(params.counterparty_count);
            const int sellers = s.uniform_int(1, 3);
            for (int i = 0; i < purchases; ++i) {
                auto buyer = detail::counterparty(ctx, "buyer", s.uniform_int(0, buyers - 1));
                const int seller = s.uniform_int(0, sellers - 1);
                auto amt = s.amount(params);
                b.add(t, buyer, c, amt);
                std::string prev = c;
                std::int64_t hop_t = t;
                for (int h = 1; h < params.intermediary_hops; ++h) {
                    auto relay = detail::counterparty(ctx, ("relay" + std::to_string(seller) + "_").c_str(), h);
                    hop_t += 1 + s.uniform_int(0, 600);
                    b.add(hop_t, prev, relay, amt);
                    prev = relay;
                }
                hop_t += 1 + s.uniform_int(0, 600);
                b.add(hop_t, prev, detail::counterparty(ctx, "seller", seller), amt);
                t += s.gap(params);
            }
            break;
        }
    }
    return {c, label, b.finish(s)};
}

/// Address of the i-th generated account.
inline std::string account_address(const std::string& platform, BehaviorLabel l, int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d", index);
    return platform + "_" + std::string(detail::label_abbrev(l)) + "_" + buf;
}

/// Deterministic merged dataset: classes in enum order, then the benign mixture.
inline Dataset generate_dataset(const GeneratorSpec& spec) {
    spec.validate();
    std::vector<std::pair<BehaviorLabel, int>> plan;  // (label, global index)
    int index = 0;
    for (auto l : kAllLabels) {
        auto it = spec.counts.find(l);
        for (int i = 0; it != spec.counts.end() && i < it->second; ++i) plan.emplace_back(l, index++);
    }
    {
        std::mt19937_64 mix(derive_seed(spec.seed, "normal-mixture"));
        for (int i = 0; i < spec.normal_count; ++i)
            plan.emplace_back(kAllLabels[std::uniform_int_distribution<std::size_t>(0, 3)(mix)], index++);
    }

    std::vector<TransactionRecord> all;
    LabelMap labels;
    for (const auto& [label, idx] : plan) {
        AccountContext ctx{account_address(spec.platform, label, idx), spec.platform, spec.epoch_start,
                           spec.epoch_window, is_malicious(label) ? 0 : spec.shared_pool_size,
                           spec.shared_fraction};
        std::mt19937_64 rng(derive_seed(spec.seed, "account", static_cast<std::uint64_t>(idx)));
        auto acct = generate_account(label, spec.params_for(label), rng, ctx);
        labels.emplace(acct.center, label);
        all.insert(all.end(), std::make_move_iterator(acct.transactions.begin()),
                   std::make_move_iterator(acct.transactions.end()));
    }
    std::sort(all.begin(), all.end(), earlier);
    return Dataset(std::move(all), std::move(labels), spec.platform);
}

}  // namespace shadoweyes
