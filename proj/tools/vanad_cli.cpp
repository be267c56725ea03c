// vanad: synthesize benchmarks, run detection, and evaluate score files.

#include "vanad/vanad.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace fs = std::filesystem;
using namespace vanad;

namespace {

std::vector<int> parse_buffers(const std::string& text) {
    std::vector<int> out;
    std::stringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            std::size_t used = 0;
            int v = std::stoi(tok, &used);
            if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw Error("cli", "bad buffer level '" + tok + "'");
        }
    }
    if (out.empty()) throw Error("cli", "no buffer levels given");
    return out;
}

void write_metrics(const fs::path& dir, const MetricsReport& m) {
    std::ofstream txt(dir / "metrics.txt");
    txt << m.to_text();
    nlohmann::ordered_json j;
    j["auc_roc"] = m.auc_roc;
    j["auc_pr"] = m.auc_pr;
    j["vus_roc"] = m.vus_roc;
    j["vus_pr"] = m.vus_pr;
    j["buffer_levels"] = m.buffer_levels;
    std::ofstream js(dir / "metrics.json");
    js << j.dump(2) << '\n';
    if (!txt || !js) throw Error("cli", "cannot write metrics to '" + dir.string() + "'");
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error("cli", "cannot create output directory '" + dir.string() + "'");
}

std::unique_ptr<Backbone> make_backbone(const RunConfig& cfg) {
    if (cfg.backbone == "remote") return std::make_unique<RemoteBackbone>(cfg.endpoint);
    return std::make_unique<ReferenceBackbone>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visual masked-reconstruction and flow-density anomaly detection for multivariate series"};
    app.require_subcommand(1);

    std::string kind = "spike", config_path, out_dir;
    Index length = 2000, vars = 3;
    std::optional<std::uint64_t> seed;
    std::optional<Index> window;
    auto* synth = app.add_subcommand("synth", "write a synthetic train/test pair");
    synth->add_option("--kind", kind, "spike | level_shift | plateau")->check(CLI::IsMember({"spike", "level_shift", "plateau"}));
    synth->add_option("--length", length, "steps per split")->capture_default_str();
    synth->add_option("--vars", vars, "number of variables")->capture_default_str();
    synth->add_option("--seed", seed, "overrides the config seed");
    synth->add_option("--window", window, "overrides dataset.window (plateaus span 3 windows)");
    synth->add_option("--config", config_path, "JSON config");
    synth->add_option("--out", out_dir, "output directory")->required();

    std::string train_path, test_path, label_column = "label";
    auto* detect = app.add_subcommand("detect", "train the flow and score the test split");
    detect->add_option("--train", train_path, "training CSV")->required();
    detect->add_option("--test", test_path, "test CSV")->required();
    detect->add_option("--config", config_path, "JSON config");
    detect->add_option("--out", out_dir, "output directory")->required();
    detect->add_option("--label-column", label_column, "label column name, used when present")->capture_default_str();

    std::string scores_path, labels_path, buffers_text;
    auto* eval = app.add_subcommand("eval", "recompute metrics from a scores CSV and labels");
    eval->add_option("--scores", scores_path, "scores CSV (t,s_mae,s_nf,s)")->required();
    eval->add_option("--labels", labels_path, "CSV holding the label column")->required();
    eval->add_option("--label-column", label_column, "label column name")->capture_default_str();
    eval->add_option("--buffers", buffers_text, "comma-separated buffer levels");
    eval->add_option("--out", out_dir, "directory for metrics.txt / metrics.json");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);

        if (*synth) {
            if (seed) cfg.seed = *seed;
            if (window) cfg.window = *window;
            auto pair = gen_synthetic_pair(parse_anomaly_kind(kind), length, vars, cfg.seed, cfg.window);
            ensure_dir(out_dir);
            write_csv(fs::path(out_dir) / "train.csv", pair.train);
            write_csv(fs::path(out_dir) / "test.csv", pair.test);
            return 0;
        }

        if (*detect) {
            if (const char* env = std::getenv("VANAD_BACKBONE_ENDPOINT"); env && *env) cfg.endpoint = env;
            cfg.validate();
            const auto train_split = load_csv(train_path, label_column, true);
            const auto test_split = load_csv(test_path, label_column, true);
            ensure_dir(out_dir);
            auto backbone = make_backbone(cfg);
            const auto result = run_detection(train_split, test_split, cfg, *backbone);

            const fs::path dir(out_dir);
            write_scores_csv(dir / "scores.csv", result.scores);
            save_flow(result.flow, dir / "flow.txt");
            RunConfig resolved = cfg;
            resolved.stride = cfg.resolved_stride();
            resolved.flow_hidden = result.flow.hidden();
            resolved.save(dir / "config.json");
            if (result.metrics) {
                write_metrics(dir, *result.metrics);
                std::cout << result.metrics->to_text();
            } else {
                std::cerr << "notice: " << result.notice << '\n';
            }
            return 0;
        }

        if (*eval) {
            const auto scores = read_scores_csv(scores_path);
            const auto labelled = load_csv(labels_path, label_column);
            const auto& labels = *labelled.labels;
            if (static_cast<std::size_t>(scores.s.size()) != labels.size())
                throw Error("cli", "length mismatch: " + std::to_string(scores.s.size()) + " scores, " +
                                       std::to_string(labels.size()) + " labels");
            const auto levels = buffers_text.empty() ? cfg.buffers : parse_buffers(buffers_text);
            std::span<const double> s(scores.s.data(), static_cast<std::size_t>(scores.s.size()));
            const auto report = evaluate(s, labels, levels);
            if (!out_dir.empty()) {
                ensure_dir(out_dir);
                write_metrics(out_dir, report);
            }
            std::cout << report.to_text();
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
