#pragma once

#include "vanad/admm.hpp"
#include "vanad/core.hpp"
#include "vanad/flow.hpp"
#include "vanad/metrics.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace vanad {

enum class Standardize { global, none };

inline Standardize parse_standardize(std::string_view s) {
    if (s == "global") return Standardize::global;
    if (s == "none") return Standardize::none;
    throw Error("config", "unknown standardize '" + std::string(s) + "' (expected global or none)");
}
inline std::string_view to_string(Standardize s) { return s == Standardize::none ? "none" : "global"; }

/// Every experiment knob. Serialised as flat JSON with dotted keys.
struct RunConfig {
    std::uint64_t seed = 0;

    Index window = 196;
    Index stride = 0;  // 0 = window (non-overlapping)

    Index resolution = 224;
    Index patch = 16;

    AdmmMode admm_mode = AdmmMode::self_standardize;
    double admm_eps = kDefaultAdmmEps;

    Index flow_layers = 3;
    Index flow_hidden = 0;  // 0 = max(2C, 8)
    Conditioner conditioner = Conditioner::masked;
    BaseMode base = BaseMode::random;

    Index epochs = 5;
    double lr = 0.005;
    Index batch = 128;

    double lambda = 0.05;
    Standardize standardize = Standardize::global;

    std::vector<int> buffers = default_buffer_levels();

    std::string backbone = "reference";  // reference | remote
    std::string endpoint;

    Index resolved_stride() const { return stride > 0 ? stride : window; }

    void validate() const {
        auto fail = [](const std::string& m) { throw Error("config", m); };
        if (window < 1) fail("dataset.window must be positive");
        if (stride < 0) fail("dataset.stride must be non-negative");
        if (patch < 1 || resolution < 1 || resolution % patch != 0)
            fail("imaging.resolution must be a positive multiple of imaging.patch");
        if (!(admm_eps > 0.0)) fail("admm.eps must be positive");
        if (flow_layers < 1) fail("flow.layers must be positive");
        if (flow_hidden < 0) fail("flow.hidden must be non-negative");
        if (epochs < 0) fail("train.epochs must be non-negative");
        if (!(lr >= 0.0)) fail("train.lr must be non-negative");
        if (batch < 1) fail("train.batch must be positive");
        if (buffers.empty()) fail("metrics.buffers must not be empty");
        for (int b : buffers)
            if (b < 0) fail("metrics.buffers must be non-negative");
        if (backbone != "reference" && backbone != "remote")
            fail("backbone.kind must be reference or remote");
        if (backbone == "remote" && endpoint.empty()) fail("backbone.endpoint is required for remote backbone");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["seed"] = seed;
        j["dataset.window"] = window;
        j["dataset.stride"] = stride;
        j["imaging.resolution"] = resolution;
        j["imaging.patch"] = patch;
        j["admm.mode"] = std::string(to_string(admm_mode));
        j["admm.eps"] = admm_eps;
        j["flow.layers"] = flow_layers;
        j["flow.hidden"] = flow_hidden;
        j["flow.conditioner"] = std::string(to_string(conditioner));
        j["flow.base"] = std::string(to_string(base));
        j["train.epochs"] = epochs;
        j["train.lr"] = lr;
        j["train.batch"] = batch;
        j["scoring.lambda"] = lambda;
        j["scoring.standardize"] = std::string(to_string(standardize));
        j["metrics.buffers"] = buffers;
        j["backbone.kind"] = backbone;
        j["backbone.endpoint"] = endpoint;
        return j;
    }

    /// Keys absent from `j` keep their defaults; unknown keys are errors.
    static RunConfig from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw Error("config", "config must be a JSON object");
        RunConfig c;
        for (const auto& [key, v] : j.items()) {
            try {
                if (key == "seed") c.seed = v.get<std::uint64_t>();
                else if (key == "dataset.window") c.window = v.get<Index>();
                else if (key == "dataset.stride") c.stride = v.get<Index>();
                else if (key == "imaging.resolution") c.resolution = v.get<Index>();
                else if (key == "imaging.patch") c.patch = v.get<Index>();
                else if (key == "admm.mode") c.admm_mode = parse_admm_mode(v.get<std::string>());
                else if (key == "admm.eps") c.admm_eps = v.get<double>();
                else if (key == "flow.layers") c.flow_layers = v.get<Index>();
                else if (key == "flow.hidden") c.flow_hidden = v.get<Index>();
                else if (key == "flow.conditioner") c.conditioner = parse_conditioner(v.get<std::string>());
                else if (key == "flow.base") c.base = parse_base_mode(v.get<std::string>());
                else if (key == "train.epochs") c.epochs = v.get<Index>();
                else if (key == "train.lr") c.lr = v.get<double>();
                else if (key == "train.batch") c.batch = v.get<Index>();
                else if (key == "scoring.lambda") c.lambda = v.get<double>();
                else if (key == "scoring.standardize") c.standardize = parse_standardize(v.get<std::string>());
                else if (key == "metrics.buffers") c.buffers = v.get<std::vector<int>>();
                else if (key == "backbone.kind") c.backbone = v.get<std::string>();
                else if (key == "backbone.endpoint") c.endpoint = v.get<std::string>();
                else throw Error("config", "unknown key '" + key + "'");
            } catch (const nlohmann::json::exception& e) {
                throw Error("config", "bad value for '" + key + "': " + e.what());
            }
            static const char* kIntegerKeys[] = {"seed",          "dataset.window", "dataset.stride",
                                                 "imaging.resolution", "imaging.patch", "flow.layers",
                                                 "flow.hidden",   "train.epochs",   "train.batch"};
            for (const char* k : kIntegerKeys)
                if (key == k && !v.is_number_integer())
                    throw Error("config", "'" + key + "' must be an integer");
        }
        c.validate();
        return c;
    }

    static RunConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("config", "cannot open '" + path.string() + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Error("config", "cannot parse '" + path.string() + "': " + e.what());
        }
        return from_json(j);
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw Error("config", "cannot write '" + path.string() + "'");
        out << to_json().dump(2) << '\n';
    }
};

}  // namespace vanad
