// Command-line front end for the membership inference test pipeline.
//
//   mint <subcommand> --config experiment.json [--quiet]
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <string>

#include "mint/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Options {
    std::string config_path;
    bool quiet = false;
    std::vector<int> layers;  // overrides mint.layers when given
};

mint::Logger make_logger(const Options& opts) {
    if (opts.quiet) return {};
    return [](const std::string& msg) { std::cerr << "[mint] " << msg << '\n'; };
}

mint::ExperimentConfig load(const Options& opts) {
    auto config = mint::load_config(opts.config_path);
    if (!opts.layers.empty()) {
        config.mint.layers = opts.layers;
        config.validate();
    }
    return config;
}

void print_report(const mint::MintAuditReport& r) {
    std::cout << std::fixed << std::setprecision(4);
    std::cout << "layer " << r.layer_index << "  checkpoint " << r.checkpoint_id << '\n';
    std::cout << "class   auc     bal_acc  best_bal  members  externals\n";
    for (const auto& [c, m] : r.per_class) {
        std::cout << std::setw(5) << c << "  " << m.auc << "  " << m.balanced_accuracy << "   " << m.best_balanced_accuracy
                  << "    " << std::setw(7) << m.n_members << "  " << std::setw(9) << m.n_externals << '\n';
    }
    std::cout << "pooled auc " << r.aggregate.auc << "  mean class auc " << r.mean_class_auc << "  balanced acc "
              << r.aggregate.balanced_accuracy << " (best " << r.aggregate.best_balanced_accuracy << ")\n";
}

int cmd_ingest(const Options& opts) {
    mint::Pipeline p(load(opts), make_logger(opts));
    const auto& corpus = p.corpus();
    std::cout << "corpus " << mint::to_string(corpus.descriptor().name) << ": " << corpus.size() << " images, "
              << corpus.num_classes() << " classes\n";
    const auto counts = corpus.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) std::cout << "  class " << c << ": " << counts[c] << '\n';
    return 0;
}

int cmd_split(const Options& opts) {
    mint::Pipeline p(load(opts), make_logger(opts));
    const auto& split = p.split();
    std::filesystem::create_directories(p.config().output_dir);
    const auto path = p.config().output_dir / "split.json";
    mint::save_split(split, path);
    std::cout << "split " << split.id() << ": " << split.members.size() << " members, " << split.externals.size()
              << " externals -> " << path.string() << '\n';
    return 0;
}

int cmd_train_audited(const Options& opts) {
    mint::Pipeline p(load(opts), make_logger(opts));
    const auto arch = p.audited_architecture();
    const int epochs = p.config().audited.epochs;
    const auto ckpt = p.checkpoint(arch, epochs);
    const auto report = p.train_report(arch, epochs);
    std::cout << "checkpoint " << ckpt.id() << " (" << mint::to_string(arch) << ", " << epochs << " epochs)\n"
              << "  train accuracy " << report.train_accuracy << ", test accuracy " << report.test_accuracy << '\n'
              << "  " << p.checkpoint_dir(arch, epochs).string() << '\n';
    mint::append_runs_csv(p.config().output_dir / "runs.csv", ckpt, report);
    return 0;
}

int cmd_extract(const Options& opts) {
    mint::Pipeline p(load(opts), make_logger(opts));
    const auto ckpt = p.checkpoint();
    for (int layer : p.config().mint.layers) {
        const auto set = p.embeddings(ckpt, layer);
        std::cout << "layer " << set.provenance.layer_index << ": " << set.records.size() << " vectors of length "
                  << set.records.front().vector.size() << " -> " << p.embeddings_dir(ckpt, layer).string() << '\n';
    }
    return 0;
}

int cmd_train_mint(const Options& opts) {
    mint::Pipeline p(load(opts), make_logger(opts));
    const auto ckpt = p.checkpoint();
    for (int layer : p.config().mint.layers) {
        const auto set = p.embeddings(ckpt, layer);
        const auto run = p.mint(set);
        std::cout << "layer " << set.provenance.layer_index << ": " << run.training.ensemble.per_class_models.size()
                  << " class models -> " << p.mint_dir(set).string() << '\n';
    }
    return 0;
}

int cmd_audit(const Options& opts) {
    const auto result = mint::run_audit(load(opts), make_logger(opts));
    print_report(result.report);
    std::cout << "report written to " << (result.dir / "report.json").string() << '\n';
    return 0;
}

int cmd_sweep(const Options& opts) {
    const auto result = mint::run_sweep(load(opts), make_logger(opts));
    std::cout << std::fixed << std::setprecision(4);
    std::cout << mint::to_string(result.axis) << "  pooled_auc  mean_class_auc  balanced_acc\n";
    for (const auto& pt : result.points) {
        if (pt.report) {
            std::cout << pt.axis_value << "  " << pt.report->aggregate.auc << "  " << pt.report->mean_class_auc << "  "
                      << pt.report->aggregate.balanced_accuracy << '\n';
        } else {
            std::cout << pt.axis_value << "  failed: " << pt.error << '\n';
        }
    }
    std::cout << "summary written to " << (result.dir / "summary.csv").string() << '\n';
    return 0;
}

int cmd_baselines(const Options& opts) {
    const auto table = mint::run_baseline_comparison(load(opts), make_logger(opts));
    std::cout << std::fixed << std::setprecision(4) << "method             auc     balanced_acc\n";
    for (const auto& r : table.rows) {
        std::cout << std::left << std::setw(18) << r.method << std::right << ' ' << r.auc << "  " << r.balanced_accuracy
                  << '\n';
    }
    return 0;
}

int cmd_report(const Options& opts) {
    const auto config = load(opts);
    bool found = false;
    const auto audit = config.output_dir / "audit" / "report.json";
    if (std::filesystem::exists(audit)) {
        std::ifstream in(audit);
        std::cout << "== " << audit.string() << '\n' << nlohmann::json::parse(in).dump(2) << '\n';
        found = true;
    }
    for (const char* axis : {"epochs", "layers", "classes", "architectures"}) {
        const auto summary = config.output_dir / ("sweep_" + std::string(axis)) / "summary.csv";
        if (!std::filesystem::exists(summary)) continue;
        std::ifstream in(summary);
        std::cout << "== " << summary.string() << '\n' << in.rdbuf();
        found = true;
    }
    const auto comparison = config.output_dir / "baselines" / "comparison.csv";
    if (std::filesystem::exists(comparison)) {
        std::ifstream in(comparison);
        std::cout << "== " << comparison.string() << '\n' << in.rdbuf();
        found = true;
    }
    if (!found) {
        throw mint::StageError("report", config.output_dir.string(), "no audit, sweep or baseline results found");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Membership inference test: audit whether samples were used to train a classifier"};
    app.require_subcommand(1);
    Options opts;

    struct Command {
        const char* name;
        const char* help;
        int (*run)(const Options&);
    };
    const Command commands[] = {
        {"ingest", "Load the configured corpus and print class counts", cmd_ingest},
        {"split", "Create the member/external split", cmd_split},
        {"train-audited", "Train (or load from cache) the audited classifier", cmd_train_audited},
        {"extract", "Extract per-layer activations of every split sample", cmd_extract},
        {"train-mint", "Train the per-class MINT ensemble", cmd_train_mint},
        {"audit", "Run the whole pipeline and write a report", cmd_audit},
        {"sweep", "Run one audit per value of the configured sweep axis", cmd_sweep},
        {"baselines", "Compare MINT with the output-only attacks", cmd_baselines},
        {"report", "Print the results stored in the output directory", cmd_report},
    };
    int (*selected)(const Options&) = nullptr;
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("-c,--config", opts.config_path, "Experiment config (JSON)")->required();
        sub->add_flag("-q,--quiet", opts.quiet, "Suppress progress messages");
        if (std::string(c.name) == "extract" || std::string(c.name) == "train-mint") {
            sub->add_option("-l,--layer", opts.layers, "Layer index (repeatable); overrides mint.layers");
        }
        sub->callback([&selected, run = c.run] { selected = run; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        return selected(opts);
    } catch (const mint::ConfigurationError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const mint::StageError& e) {
        std::cerr << e.what() << '\n';
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    }
}
