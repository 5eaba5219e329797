#include "defence/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>

namespace defence {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& scope,
                const std::set<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::runtime_error("config: unknown key \"" +
                                     (scope.empty() ? it.key() : scope + "." + it.key()) + "\"");
}

template <typename T>
T get_checked(const json& j, const std::string& key, T fallback, T lo, T hi) {
    if (!j.contains(key)) return fallback;
    T v = j.at(key).get<T>();
    if (v < lo || v > hi)
        throw std::runtime_error("config: value out of range for \"" + key + "\"");
    return v;
}

}  // namespace

PipelineParams PipelineConfig::pipeline_params() const {
    PipelineParams p;
    p.flow = flow;
    p.lambda = lambda;
    p.eps_stop = eps_stop;
    p.max_iters = max_iters;
    p.power_iters = power_iters;
    return p;
}

PipelineConfig parse_config_text(const std::string& json_text) {
    json j = json::parse(json_text);
    check_keys(j, "", {"segment", "flow", "fista", "seed"});

    PipelineConfig cfg;
    cfg.seed = get_checked<unsigned>(j, "seed", 0u, 0u, 0xffffffffu);

    if (j.contains("segment")) {
        const json& s = j["segment"];
        check_keys(s, "segment",
                   {"stride", "window", "tau", "erode_r", "dilate_r", "lambda_s",
                    "sigma_c", "thickness", "nms_radius", "max_link", "min_rel_score"});
        auto& p = cfg.segment;
        p.stride = get_checked<int>(s, "stride", p.stride, 1, 1000);
        p.window = get_checked<int>(s, "window", p.window, 4, 1024);
        p.tau = get_checked<double>(s, "tau", p.tau, 1e-9, 1.0 - 1e-9);
        p.erode_r = get_checked<int>(s, "erode_r", p.erode_r, 1, 100);
        p.dilate_r = get_checked<int>(s, "dilate_r", p.dilate_r, 1, 100);
        p.lambda_s = get_checked<double>(s, "lambda_s", p.lambda_s, 0.0, 1e9);
        p.sigma_c = get_checked<double>(s, "sigma_c", p.sigma_c, 1e-6, 10.0);
        p.thickness = get_checked<int>(s, "thickness", p.thickness, 1, 100);
        p.nms_radius = get_checked<double>(s, "nms_radius", p.nms_radius, -1.0, 1e4);
        p.max_link = get_checked<double>(s, "max_link", p.max_link, -1.0, 1e5);
        p.min_rel_score = get_checked<double>(s, "min_rel_score", p.min_rel_score, 0.0, 1.0);
    }
    if (j.contains("flow")) {
        const json& f = j["flow"];
        check_keys(f, "flow",
                   {"mu", "epsilon_phi", "pyramid_ratio", "outer_iters", "cg_iters",
                    "cg_tol", "warp_updates"});
        auto& p = cfg.flow;
        p.mu = get_checked<double>(f, "mu", p.mu, 1e-12, 1e6);
        p.epsilon_phi = get_checked<double>(f, "epsilon_phi", p.epsilon_phi, 1e-12, 1.0);
        p.pyramid_ratio = get_checked<double>(f, "pyramid_ratio", p.pyramid_ratio, 0.25, 0.9);
        p.outer_iters = get_checked<int>(f, "outer_iters", p.outer_iters, 1, 100);
        p.cg_iters = get_checked<int>(f, "cg_iters", p.cg_iters, 1, 100000);
        p.cg_tol = get_checked<double>(f, "cg_tol", p.cg_tol, 0.0, 1.0);
        p.warp_updates = get_checked<int>(f, "warp_updates", p.warp_updates, 1, 100);
    }
    if (j.contains("fista")) {
        const json& f = j["fista"];
        check_keys(f, "fista", {"lambda", "eps_stop", "max_iters", "power_iters"});
        cfg.lambda = get_checked<double>(f, "lambda", cfg.lambda, 0.0, 1e6);
        cfg.eps_stop = get_checked<double>(f, "eps_stop", cfg.eps_stop, 0.0, 1e6);
        cfg.max_iters = get_checked<int>(f, "max_iters", cfg.max_iters, 1, 1000000);
        cfg.power_iters = get_checked<int>(f, "power_iters", cfg.power_iters, 5, 10000);
    }
    return cfg;
}

PipelineConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

std::string config_to_json(const PipelineConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["segment"] = {{"stride", cfg.segment.stride},     {"window", cfg.segment.window},
                    {"tau", cfg.segment.tau},           {"erode_r", cfg.segment.erode_r},
                    {"dilate_r", cfg.segment.dilate_r}, {"lambda_s", cfg.segment.lambda_s},
                    {"sigma_c", cfg.segment.sigma_c},   {"thickness", cfg.segment.thickness},
                    {"nms_radius", cfg.segment.nms_radius}, {"max_link", cfg.segment.max_link},
                    {"min_rel_score", cfg.segment.min_rel_score}};
    j["flow"] = {{"mu", cfg.flow.mu},
                 {"epsilon_phi", cfg.flow.epsilon_phi},
                 {"pyramid_ratio", cfg.flow.pyramid_ratio},
                 {"outer_iters", cfg.flow.outer_iters},
                 {"cg_iters", cfg.flow.cg_iters},
                 {"cg_tol", cfg.flow.cg_tol},
                 {"warp_updates", cfg.flow.warp_updates}};
    j["fista"] = {{"lambda", cfg.lambda},
                  {"eps_stop", cfg.eps_stop},
                  {"max_iters", cfg.max_iters},
                  {"power_iters", cfg.power_iters}};
    return j.dump(2);
}

}  // namespace defence
