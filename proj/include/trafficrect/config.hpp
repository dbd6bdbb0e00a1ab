#pragma once

#include <cstdlib>
#include <functional>
#include <string>

#include <json.hpp>

#include "trafficrect/error.hpp"
#include "trafficrect/image.hpp"
#include "trafficrect/pipeline.hpp"
#include "trafficrect/robust.hpp"

namespace trafficrect {

/// Settings shared by the service and the CLI. Precedence, highest first:
/// TRAFFICRECT_* environment variables, the JSON config file, built-in
/// defaults.
///
///   TRAFFICRECT_HOST               listen host
///   TRAFFICRECT_PORT               listen port
///   TRAFFICRECT_STORE_DIR          store directory
///   TRAFFICRECT_IMAGERY_ENDPOINT   ArcGIS image service URL
///   TRAFFICRECT_STATIC_DIR         built web UI directory
///   TRAFFICRECT_SEED               robust estimation seed
///   TRAFFICRECT_EMA_ALPHA          camera-space smoothing factor
///   TRAFFICRECT_A_TRIGGER          braking trigger, m/s^2
struct AppConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string store_dir = "trafficrect-store";
    std::string imagery_endpoint;
    std::string static_dir;
    RobustParams robust;
    PipelineOptions pipeline;

    void validate() const {
        if (port < 0 || port > 65535) fail(ErrorCode::configuration, "port out of range");
        if (store_dir.empty()) fail(ErrorCode::configuration, "store_dir must not be empty");
        robust.validate();
        pipeline.validate();
    }
};

inline nlohmann::json to_json(const AppConfig& c) {
    return {{"host", c.host},
            {"port", c.port},
            {"store_dir", c.store_dir},
            {"imagery_endpoint", c.imagery_endpoint},
            {"static_dir", c.static_dir},
            {"robust", to_json(c.robust)},
            {"pipeline", to_json(c.pipeline)}};
}

inline AppConfig app_config_from_json(const nlohmann::json& j, AppConfig base = {}) {
    if (!j.is_object()) fail(ErrorCode::configuration, "config must be a JSON object");
    try {
        base.host = j.value("host", base.host);
        base.port = j.value("port", base.port);
        base.store_dir = j.value("store_dir", base.store_dir);
        base.imagery_endpoint = j.value("imagery_endpoint", base.imagery_endpoint);
        base.static_dir = j.value("static_dir", base.static_dir);
        if (j.contains("robust")) base.robust = robust_params_from_json(j.at("robust"), base.robust);
        if (j.contains("pipeline")) base.pipeline = pipeline_options_from_json(j.at("pipeline"), base.pipeline);
        // Thresholds may also sit at top level, next to robust.
        if (j.contains("thresholds"))
            base.pipeline.thresholds = braking_thresholds_from_json(j.at("thresholds"), base.pipeline.thresholds);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::configuration, std::string("invalid config: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorCode::configuration, e.what(), e.details());
    }
    return base;
}

using EnvLookup = std::function<const char*(const char*)>;

inline AppConfig apply_env_overrides(AppConfig c, const EnvLookup& env) {
    auto number = [](const char* name, const char* text) {
        try {
            std::size_t used = 0;
            const double v = std::stod(text, &used);
            if (used != std::string(text).size()) throw std::invalid_argument(name);
            return v;
        } catch (const std::exception&) {
            fail(ErrorCode::configuration, std::string(name) + " is not a number");
        }
    };
    if (const char* v = env("TRAFFICRECT_HOST")) c.host = v;
    if (const char* v = env("TRAFFICRECT_PORT")) c.port = static_cast<int>(number("TRAFFICRECT_PORT", v));
    if (const char* v = env("TRAFFICRECT_STORE_DIR")) c.store_dir = v;
    if (const char* v = env("TRAFFICRECT_IMAGERY_ENDPOINT")) c.imagery_endpoint = v;
    if (const char* v = env("TRAFFICRECT_STATIC_DIR")) c.static_dir = v;
    if (const char* v = env("TRAFFICRECT_SEED"))
        c.robust.seed = static_cast<std::uint64_t>(number("TRAFFICRECT_SEED", v));
    if (const char* v = env("TRAFFICRECT_EMA_ALPHA")) c.pipeline.ema_alpha = number("TRAFFICRECT_EMA_ALPHA", v);
    if (const char* v = env("TRAFFICRECT_A_TRIGGER"))
        c.pipeline.thresholds.a_trigger = number("TRAFFICRECT_A_TRIGGER", v);
    return c;
}

/// Defaults, then the file (if any), then the environment.
inline AppConfig load_app_config(const std::string& path, const EnvLookup& env = [](const char* k) { return std::getenv(k); }) {
    AppConfig c;
    if (!path.empty()) {
        const auto bytes = read_file_bytes(path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.begin(), bytes.end());
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::configuration, path + " is not valid JSON: " + e.what());
        }
        c = app_config_from_json(j, c);
    }
    c = apply_env_overrides(std::move(c), env);
    try {
        c.validate();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::configuration) throw;
        fail(ErrorCode::configuration, e.what(), e.details());
    }
    return c;
}

}  // namespace trafficrect
