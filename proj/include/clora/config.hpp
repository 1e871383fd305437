#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "clora/model.hpp"

namespace clora {

enum class LossScheme { eps_only, x0_only, x0_then_eps, eps_then_x0 };

inline const char* scheme_name(LossScheme s) {
    switch (s) {
        case LossScheme::eps_only: return "eps_only";
        case LossScheme::x0_only: return "x0_only";
        case LossScheme::x0_then_eps: return "x0_then_eps";
        case LossScheme::eps_then_x0: return "eps_then_x0";
    }
    return "?";
}

inline LossScheme scheme_from_name(const std::string& s) {
    if (s == "eps_only") return LossScheme::eps_only;
    if (s == "x0_only") return LossScheme::x0_only;
    if (s == "x0_then_eps") return LossScheme::x0_then_eps;
    if (s == "eps_then_x0") return LossScheme::eps_then_x0;
    throw std::invalid_argument("config: unknown loss scheme '" + s + "'");
}

// Structured experiment configuration. Five fixed sections; unknown sections
// or keys are hard errors so typos never pass silently.
struct ExperimentConfig {
    struct Model {
        int height = 16, width = 16, channels = 32, embed_dim = 16;
        uint64_t seed = 1234;
        bool operator==(const Model&) const = default;
    } model;
    struct Schedule {
        int timesteps     = 200;
        double beta_start = 1e-4, beta_end = 0.02;
        bool operator==(const Schedule&) const = default;
    } schedule;
    struct Train {
        int total_steps     = 3000;
        int transition_step = 1000;
        double lr_phase1    = 2e-3;
        double lr_phase2    = 1e-3;
        double adam_beta1   = 0.9;
        double adam_beta2   = 0.999;
        int batch_size      = 1;
        uint64_t seed       = 7;
        LossScheme scheme   = LossScheme::eps_then_x0;
        int lora_rank       = 8;
        double lora_alpha   = 8.0;
        int base_steps      = 2000;
        double base_lr      = 1e-3;
        int dataset_size    = 64;
        uint64_t dataset_seed = 100;
        bool operator==(const Train&) const = default;
    } train;
    struct Guidance {
        double lambda_cfg       = 5.0;
        double lambda_cont      = 0.0;
        double lambda_sty       = 0.0;
        int sample_steps        = 50;
        uint64_t sample_seed    = 11;
        double content_strength = 1.0;
        double style_strength   = 1.0;
        bool operator==(const Guidance&) const = default;
    } guidance;
    struct Paths {
        std::string data_dir   = ".";
        std::string output_dir = ".";
        bool operator==(const Paths&) const = default;
    } paths;

    bool operator==(const ExperimentConfig&) const = default;

    ModelConfig model_config() const { return {model.height, model.width, model.channels, model.embed_dim}; }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    size_t pos = 0;
    double x;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for '" + key + "': " + v);
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad number for '" + key + "': " + v);
    return x;
}

inline int parse_int(const std::string& key, const std::string& v) {
    size_t pos = 0;
    long x;
    try {
        x = std::stol(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
    return static_cast<int>(x);
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
    size_t pos = 0;
    unsigned long long x;
    try {
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad seed for '" + key + "': " + v);
    }
    if (pos != v.size()) throw std::invalid_argument("config: bad seed for '" + key + "': " + v);
    return static_cast<uint64_t>(x);
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw std::invalid_argument("config: malformed section at line " + std::to_string(lineno));
            section = s.substr(1, s.size() - 2);
            if (section != "model" && section != "schedule" && section != "train" &&
                section != "guidance" && section != "paths")
                throw std::invalid_argument("config: unknown section [" + section + "]");
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key = value at line " + std::to_string(lineno));
        std::string key = detail::trim(s.substr(0, eq));
        std::string val = detail::trim(s.substr(eq + 1));
        if (section.empty())
            throw std::invalid_argument("config: key '" + key + "' before any section");

        auto unknown = [&]() -> std::invalid_argument {
            return std::invalid_argument("config: unknown key '" + key + "' in section [" + section + "]");
        };
        if (section == "model") {
            if (key == "height") cfg.model.height = detail::parse_int(key, val);
            else if (key == "width") cfg.model.width = detail::parse_int(key, val);
            else if (key == "channels") cfg.model.channels = detail::parse_int(key, val);
            else if (key == "embed_dim") cfg.model.embed_dim = detail::parse_int(key, val);
            else if (key == "seed") cfg.model.seed = detail::parse_u64(key, val);
            else throw unknown();
        } else if (section == "schedule") {
            if (key == "timesteps") cfg.schedule.timesteps = detail::parse_int(key, val);
            else if (key == "beta_start") cfg.schedule.beta_start = detail::parse_double(key, val);
            else if (key == "beta_end") cfg.schedule.beta_end = detail::parse_double(key, val);
            else throw unknown();
        } else if (section == "train") {
            if (key == "total_steps") cfg.train.total_steps = detail::parse_int(key, val);
            else if (key == "transition_step") cfg.train.transition_step = detail::parse_int(key, val);
            else if (key == "lr_phase1") cfg.train.lr_phase1 = detail::parse_double(key, val);
            else if (key == "lr_phase2") cfg.train.lr_phase2 = detail::parse_double(key, val);
            else if (key == "adam_beta1") cfg.train.adam_beta1 = detail::parse_double(key, val);
            else if (key == "adam_beta2") cfg.train.adam_beta2 = detail::parse_double(key, val);
            else if (key == "batch_size") cfg.train.batch_size = detail::parse_int(key, val);
            else if (key == "seed") cfg.train.seed = detail::parse_u64(key, val);
            else if (key == "scheme") cfg.train.scheme = scheme_from_name(val);
            else if (key == "lora_rank") cfg.train.lora_rank = detail::parse_int(key, val);
            else if (key == "lora_alpha") cfg.train.lora_alpha = detail::parse_double(key, val);
            else if (key == "base_steps") cfg.train.base_steps = detail::parse_int(key, val);
            else if (key == "base_lr") cfg.train.base_lr = detail::parse_double(key, val);
            else if (key == "dataset_size") cfg.train.dataset_size = detail::parse_int(key, val);
            else if (key == "dataset_seed") cfg.train.dataset_seed = detail::parse_u64(key, val);
            else throw unknown();
        } else if (section == "guidance") {
            if (key == "lambda_cfg") cfg.guidance.lambda_cfg = detail::parse_double(key, val);
            else if (key == "lambda_cont") cfg.guidance.lambda_cont = detail::parse_double(key, val);
            else if (key == "lambda_sty") cfg.guidance.lambda_sty = detail::parse_double(key, val);
            else if (key == "sample_steps") cfg.guidance.sample_steps = detail::parse_int(key, val);
            else if (key == "sample_seed") cfg.guidance.sample_seed = detail::parse_u64(key, val);
            else if (key == "content_strength") cfg.guidance.content_strength = detail::parse_double(key, val);
            else if (key == "style_strength") cfg.guidance.style_strength = detail::parse_double(key, val);
            else throw unknown();
        } else {  // paths
            if (key == "data_dir") cfg.paths.data_dir = val;
            else if (key == "output_dir") cfg.paths.output_dir = val;
            else throw unknown();
        }
    }
    return cfg;
}

inline std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "[model]\n"
       << "height = " << c.model.height << "\n"
       << "width = " << c.model.width << "\n"
       << "channels = " << c.model.channels << "\n"
       << "embed_dim = " << c.model.embed_dim << "\n"
       << "seed = " << c.model.seed << "\n\n";
    os << "[schedule]\n"
       << "timesteps = " << c.schedule.timesteps << "\n"
       << "beta_start = " << detail::fmt_double(c.schedule.beta_start) << "\n"
       << "beta_end = " << detail::fmt_double(c.schedule.beta_end) << "\n\n";
    os << "[train]\n"
       << "total_steps = " << c.train.total_steps << "\n"
       << "transition_step = " << c.train.transition_step << "\n"
       << "lr_phase1 = " << detail::fmt_double(c.train.lr_phase1) << "\n"
       << "lr_phase2 = " << detail::fmt_double(c.train.lr_phase2) << "\n"
       << "adam_beta1 = " << detail::fmt_double(c.train.adam_beta1) << "\n"
       << "adam_beta2 = " << detail::fmt_double(c.train.adam_beta2) << "\n"
       << "batch_size = " << c.train.batch_size << "\n"
       << "seed = " << c.train.seed << "\n"
       << "scheme = " << scheme_name(c.train.scheme) << "\n"
       << "lora_rank = " << c.train.lora_rank << "\n"
       << "lora_alpha = " << detail::fmt_double(c.train.lora_alpha) << "\n"
       << "base_steps = " << c.train.base_steps << "\n"
       << "base_lr = " << detail::fmt_double(c.train.base_lr) << "\n"
       << "dataset_size = " << c.train.dataset_size << "\n"
       << "dataset_seed = " << c.train.dataset_seed << "\n\n";
    os << "[guidance]\n"
       << "lambda_cfg = " << detail::fmt_double(c.guidance.lambda_cfg) << "\n"
       << "lambda_cont = " << detail::fmt_double(c.guidance.lambda_cont) << "\n"
       << "lambda_sty = " << detail::fmt_double(c.guidance.lambda_sty) << "\n"
       << "sample_steps = " << c.guidance.sample_steps << "\n"
       << "sample_seed = " << c.guidance.sample_seed << "\n"
       << "content_strength = " << detail::fmt_double(c.guidance.content_strength) << "\n"
       << "style_strength = " << detail::fmt_double(c.guidance.style_strength) << "\n\n";
    os << "[paths]\n"
       << "data_dir = " << c.paths.data_dir << "\n"
       << "output_dir = " << c.paths.output_dir << "\n";
    return os.str();
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

inline void write_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot open " + path + " for writing");
    os << serialize_config(cfg);
}

}  // namespace clora
