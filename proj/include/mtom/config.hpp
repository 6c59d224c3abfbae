#pragma once

// Flat `key = value` run configuration. Every key is schema-checked, unknown
// keys are rejected, and the fully resolved configuration can be echoed back
// out so a run directory records what actually took effect.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "mtom/data.hpp"
#include "mtom/model.hpp"
#include "mtom/train.hpp"

namespace mtom {

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RunConfig {
    MToMnetConfig model;
    TrainConfig train;
    SyntheticConfig synth;
    std::string data_dir;
    std::string out_dir;
    std::string checkpoint;

    RunConfig() { apply_mode(DatasetMode::Boss); }

    void apply_mode(DatasetMode m) {
        model.mode = m;
        model.num_classes = m == DatasetMode::Boss ? kNumObjectClasses : kNumDynClasses;
        synth.mode = m;
        train.batch_size = m == DatasetMode::Boss ? 4 : 64;
    }
};

namespace config_detail {

inline double parse_double(const std::string& key, const std::string& val) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + val + "'");
    }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& val) {
    try {
        std::size_t pos = 0;
        if (!val.empty() && val[0] == '-') throw std::invalid_argument(val);
        const std::uint64_t u = std::stoull(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return u;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" +
                          val + "'");
    }
}

}  // namespace config_detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& val) {
    using config_detail::parse_double;
    using config_detail::parse_uint;
    try {
        if (key == "mode") cfg.apply_mode(mode_from_name(val));
        else if (key == "variant") cfg.model.variant = variant_from_name(val);
        else if (key == "aggregation") cfg.model.aggregation = aggregation_from_name(val);
        else if (key == "tau") cfg.model.tau = parse_double(key, val);
        else if (key == "dropout") cfg.model.dropout = parse_double(key, val);
        else if (key == "seed") {
            cfg.train.seed = parse_uint(key, val);
            cfg.synth.seed = cfg.train.seed;
        } else if (key == "epochs") cfg.train.epochs = parse_uint(key, val);
        else if (key == "batch_size") cfg.train.batch_size = parse_uint(key, val);
        else if (key == "lr") cfg.train.lr = parse_double(key, val);
        else if (key == "beta1") cfg.train.beta1 = parse_double(key, val);
        else if (key == "beta2") cfg.train.beta2 = parse_double(key, val);
        else if (key == "adam_eps") cfg.train.eps = parse_double(key, val);
        else if (key == "episode_count") cfg.synth.episode_count = parse_uint(key, val);
        else if (key == "t_len") cfg.synth.t_len = parse_uint(key, val);
        else if (key == "frame_size") cfg.synth.frame_size = parse_uint(key, val);
        else if (key == "object_count") cfg.synth.object_count = parse_uint(key, val);
        else if (key == "move_rate") cfg.synth.move_rate = parse_double(key, val);
        else if (key == "leave_room_rate") cfg.synth.leave_room_rate = parse_double(key, val);
        else if (key == "attend_rate") cfg.synth.attend_rate = parse_double(key, val);
        else if (key == "joint_attend_rate")
            cfg.synth.joint_attend_rate = parse_double(key, val);
        else if (key == "false_belief_rate")
            cfg.synth.false_belief_rate = parse_double(key, val);
        else if (key == "data_dir") cfg.data_dir = val;
        else if (key == "out_dir") cfg.out_dir = val;
        else if (key == "checkpoint") cfg.checkpoint = val;
        else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const TensorError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline void validate_run_config(const RunConfig& cfg);

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) +
                              " is not of the form 'key = value'");
        auto trim = [](std::string s) {
            const auto x = s.find_first_not_of(" \t");
            if (x == std::string::npos) return std::string();
            const auto y = s.find_last_not_of(" \t");
            return s.substr(x, y - x + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError("config: line " + std::to_string(lineno) +
                              " has an empty key or value");
        apply_config_entry(cfg, key, val);
    }
    validate_run_config(cfg);
    return cfg;
}

inline void validate_run_config(const RunConfig& cfg) {
    try {
        cfg.model.validate();
        cfg.train.validate();
        cfg.synth.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (cfg.synth.mode != cfg.model.mode)
        throw ConfigError("config: generator and model modes disagree");
}

inline std::string format_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    os << "mode = " << mode_name(cfg.model.mode) << "\n";
    os << "variant = " << variant_name(cfg.model.variant) << "\n";
    os << "aggregation = " << aggregation_name(cfg.model.aggregation) << "\n";
    os << "tau = " << num(cfg.model.tau) << "\n";
    os << "dropout = " << num(cfg.model.dropout) << "\n";
    os << "seed = " << cfg.train.seed << "\n";
    os << "epochs = " << cfg.train.epochs << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "lr = " << num(cfg.train.lr) << "\n";
    os << "beta1 = " << num(cfg.train.beta1) << "\n";
    os << "beta2 = " << num(cfg.train.beta2) << "\n";
    os << "adam_eps = " << num(cfg.train.eps) << "\n";
    os << "episode_count = " << cfg.synth.episode_count << "\n";
    os << "t_len = " << cfg.synth.t_len << "\n";
    os << "frame_size = " << cfg.synth.frame_size << "\n";
    os << "object_count = " << cfg.synth.object_count << "\n";
    os << "move_rate = " << num(cfg.synth.move_rate) << "\n";
    os << "leave_room_rate = " << num(cfg.synth.leave_room_rate) << "\n";
    os << "attend_rate = " << num(cfg.synth.attend_rate) << "\n";
    os << "joint_attend_rate = " << num(cfg.synth.joint_attend_rate) << "\n";
    os << "false_belief_rate = " << num(cfg.synth.false_belief_rate) << "\n";
    if (!cfg.data_dir.empty()) os << "data_dir = " << cfg.data_dir << "\n";
    if (!cfg.out_dir.empty()) os << "out_dir = " << cfg.out_dir << "\n";
    if (!cfg.checkpoint.empty()) os << "checkpoint = " << cfg.checkpoint << "\n";
    return os.str();
}

}  // namespace mtom
