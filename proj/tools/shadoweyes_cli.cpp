// shadoweyes command-line driver.
//
// Exit status: 0 ok, 1 stage failure, 2 usage, 3 config error.
// Failures print one JSON line on stderr: {"error": <class>, ...}.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shadoweyes/shadoweyes.hpp"

namespace fs = std::filesystem;
using namespace shadoweyes;

namespace {

enum Exit { kOk = 0, kStage = 1, kUsage = 2, kConfig = 3 };

struct Options {
    std::string config_path;
    std::optional<std::int64_t> seed;
    std::string out;
    std::vector<std::string> sets;
    std::string transactions, labels, platform;
    bool lenient = false;
    bool verbose = false;
    std::string from;  // report only
};

int fail(const std::string& cls, const std::string& message, const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j = extra;
    j["error"] = cls;
    j["message"] = message;
    std::cerr << j.dump() << '\n';
    if (cls == "usage") return kUsage;
    if (cls == "config") return kConfig;
    return kStage;
}

// Built-in defaults, then the config file, then flags.
Config resolve(const Options& o, std::map<std::string, std::string>& origin) {
    auto c = experiment_defaults();
    for (const auto& [k, _] : c.values()) origin[k] = "default";
    auto apply = [&](const std::string& k, const std::string& v, const char* from) {
        c.set(k, v);
        origin[k] = from;
    };
    if (!o.config_path.empty()) {
        Config file = experiment_defaults();
        file.merge_file(o.config_path);
        for (const auto& [k, v] : file.values())
            if (v != c.values().at(k)) apply(k, v, "file");
    }
    for (const auto& kv : o.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply(Config::trim(kv.substr(0, eq)), Config::trim(kv.substr(eq + 1)), "flag");
    }
    if (o.seed) apply("seed", std::to_string(*o.seed), "flag");
    if (!o.transactions.empty() || !o.labels.empty()) {
        apply("data.source", "files", "flag");
        if (!o.transactions.empty()) apply("data.transactions", o.transactions, "flag");
        if (!o.labels.empty()) apply("data.labels", o.labels, "flag");
    }
    if (!o.platform.empty()) apply("data.platform", o.platform, "flag");
    if (o.lenient) apply("data.strict", "false", "flag");
    return c;
}

void say(const Options& o, const std::string& msg) {
    if (o.verbose) std::cerr << msg << '\n';
}

int run(const std::string& cmd, const Options& o) {
    std::map<std::string, std::string> origin;
    Config cfg = resolve(o, origin);
    if (o.verbose) {
        std::cerr << "# resolved config (key = value  [source])\n";
        for (const auto& [k, v] : cfg.values()) std::cerr << k << " = " << v << "  [" << origin[k] << "]\n";
    }
    const fs::path out = o.out;
    fs::create_directories(out);

    if (cmd == "report") {
        const fs::path from = o.from.empty() ? out : fs::path(o.from);
        std::ifstream in(from / "report.json");
        if (!in) throw Error("no report.json under '" + from.string() + "'");
        auto r = nlohmann::json::parse(in);
        std::ostringstream s;
        s << "config " << r.value("config_hash", "?") << "  protocol " << r.value("protocol", "?") << "  platforms "
          << r["platforms"].value("pretrain", "?") << " -> " << r["platforms"].value("finetune", "?") << '\n';
        const auto& m = r["metrics"];
        s << "averaging " << m.value("averaging", "?") << "  precision " << m.value("precision", 0.0) << "  recall "
          << m.value("recall", 0.0) << "  f1 " << m.value("f1", 0.0) << "  samples " << m.value("samples", 0) << '\n';
        for (const auto& c : m["per_class"])
            s << "  " << c.value("class", "?") << "  p " << c.value("precision", 0.0) << "  r " << c.value("recall", 0.0)
              << "  f1 " << c.value("f1", 0.0) << "  support " << c.value("support", 0) << '\n';
        std::cout << s.str();
        write_config_snapshot(out, cfg);
        write_text(out / "report_summary.txt", s.str());
        return kOk;
    }

    write_config_snapshot(out, cfg);
    Experiment ex(cfg);
    say(o, "config hash " + ex.config_hash());

    if (cmd == "synth") {
        auto c = cfg;
        c.set("data.source", "synth");
        Experiment gen(c);
        write_dataset(out, gen.source_dataset());
        nlohmann::json summary{{"source", dataset_summary(gen.source_dataset())}};
        if (!gen.shares_target()) {
            write_dataset(out / "cross", gen.target_dataset());
            summary["cross"] = dataset_summary(gen.target_dataset());
        }
        write_json(out / "dataset.json", summary);
        say(o, "wrote " + std::to_string(gen.source_dataset().transactions().size()) + " transactions");
        return kOk;
    }
    if (cmd == "ingest") {
        if (cfg.str("data.source") != "files") throw ConfigError("ingest needs --transactions and --labels");
        std::size_t skipped = 0;
        Dataset d;
        try {
            auto r = load_transactions(cfg.str("data.transactions"), cfg.flag("data.strict"));
            skipped = r.skipped();
            nlohmann::json errs = nlohmann::json::array();
            for (const auto& e : r.errors) errs.push_back({{"line", e.line}, {"message", e.message}});
            d = Dataset(std::move(r.records), load_labels(cfg.str("data.labels")), cfg.str("data.platform"));
            write_dataset(out, d);
            write_json(out / "ingest.json", {{"dataset", dataset_summary(d)}, {"skipped", skipped}, {"errors", errs}});
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError("ingest", ex.config_hash(), e.what());
        }
        say(o, "ingested " + std::to_string(d.transactions().size()) + " transactions, skipped " + std::to_string(skipped));
        return kOk;
    }
    if (cmd == "featurize") {
        const auto& src = ex.source_corpus();
        const auto& tgt = ex.target_corpus();
        write_features(out, tgt, fit_minmax(src.node_attributes));
        return kOk;
    }
    if (cmd == "gae") {
        const auto& rep = ex.target_representation();
        write_features(out, ex.target_corpus(), rep.stats);
        write_gae_artifacts(out, ex.source_corpus(), ex.source_representation());
        return kOk;
    }
    if (cmd == "pretrain") {
        write_gae_artifacts(out, ex.source_corpus(), ex.source_representation());
        write_pretrain_artifacts(out, ex);
        return kOk;
    }
    if (cmd == "finetune") {
        write_pretrain_artifacts(out, ex);
        write_finetune_artifacts(out, ex);
        write_metrics_csv(out / "metrics.csv", ex.evaluation().metrics, ex.class_names());
        return kOk;
    }
    if (cmd == "evaluate") {
        auto r = run_experiment(ex, out);
        std::cout << "f1 " << r["metrics"]["f1"].get<double>() << "  precision " << r["metrics"]["precision"].get<double>()
                  << "  recall " << r["metrics"]["recall"].get<double>() << "  (" << out.string() << "/report.json)\n";
        return kOk;
    }
    if (cmd == "distance") {
        const auto& d = ex.distances();
        write_distance_csv((out / "distances.csv").string(), d);
        write_json(out / "distance.json", distance_to_json(d));
        return kOk;
    }
    return fail("usage", "unknown subcommand '" + cmd + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shadoweyes: transaction-graph contrastive detection pipeline"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    Options o;
    const char* env_out = std::getenv("SHADOWEYES_OUT");
    o.out = env_out && *env_out ? env_out : "shadoweyes_out";
    app.add_option("-c,--config", o.config_path, "key = value config file");
    app.add_option("-s,--seed", o.seed, "top-level seed (overrides the config)");
    app.add_option("-o,--out", o.out, "output directory (default $SHADOWEYES_OUT or ./shadoweyes_out)");
    app.add_option("--set", o.sets, "override one config key, key=value (repeatable)")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    app.add_option("--transactions", o.transactions, "transactions JSON-lines file (implies data.source=files)");
    app.add_option("--labels", o.labels, "labels CSV file");
    app.add_option("--platform", o.platform, "platform tag for ingested data");
    app.add_flag("--lenient", o.lenient, "skip malformed transaction lines instead of failing");
    app.add_flag("-v,--verbose", o.verbose, "print the resolved config and progress on stderr");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"synth", "generate a synthetic dataset"},
        {"ingest", "validate and normalize transaction and label files"},
        {"featurize", "extract and normalize account attributes"},
        {"gae", "train the graph autoencoder and write structural embeddings"},
        {"pretrain", "contrastive pre-training of the encoder"},
        {"finetune", "train the classifier head on a split and predict"},
        {"evaluate", "run the full pipeline and write report.json"},
        {"distance", "class-by-class representation distance"},
        {"report", "summarize an existing report.json"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        if (name == "report") sub->add_option("--from", o.from, "run directory holding report.json (default --out)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help();
        return fail("usage", e.what());
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return fail("usage", "missing subcommand");
    }
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        return run(cmd, o);
    } catch (const ConfigError& e) {
        return fail("config", e.what());
    } catch (const StageError& e) {
        return fail("stage", e.cause(), {{"stage", e.stage()}, {"config_hash", e.config_hash()}});
    } catch (const std::exception& e) {
        return fail("stage", e.what(), {{"stage", cmd}});
    }
}
