#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <json.hpp>

#include "trafficrect/analytics.hpp"
#include "trafficrect/config.hpp"
#include "trafficrect/correspond.hpp"
#include "trafficrect/error.hpp"
#include "trafficrect/homography.hpp"
#include "trafficrect/http_transport.hpp"
#include "trafficrect/image.hpp"
#include "trafficrect/ortho.hpp"
#include "trafficrect/pipeline.hpp"
#include "trafficrect/robust.hpp"
#include "trafficrect/site.hpp"
#include "trafficrect/store.hpp"

namespace trafficrect {

/// HTTP status for each error code. Every module error surfaces through
/// exactly one of these.
inline int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::validation:
        case ErrorCode::precondition:
        case ErrorCode::geometry:
        case ErrorCode::parse:
        case ErrorCode::schema:
        case ErrorCode::schema_version: return 400;
        case ErrorCode::not_found: return 404;
        case ErrorCode::degenerate:
        case ErrorCode::estimation_failed:
        case ErrorCode::conflict: return 409;
        case ErrorCode::horizon:
        case ErrorCode::unit:
        case ErrorCode::configuration: return 422;
        case ErrorCode::transport:
        case ErrorCode::decode:
        case ErrorCode::upstream_status: return 502;
        case ErrorCode::io: return 500;
    }
    return 500;
}

inline nlohmann::json api_error_json(const Error& e) {
    return {{"code", to_string(e.code())}, {"message", e.what()}, {"details", e.details()}};
}

/// REST front end over the pipeline. Site records live in the store's
/// sites table; rasters and correspondence files live under
/// <store_dir>/site-files/<site_id>/.
class Service {
public:
    explicit Service(AppConfig config, std::shared_ptr<HttpTransport> imagery = nullptr)
        : config_(std::move(config)),
          store_(config_.store_dir),
          imagery_(imagery ? std::move(imagery) : std::make_shared<HttplibTransport>()) {
        config_.validate();
        routes();
        if (!config_.static_dir.empty() && !server_.set_mount_point("/", config_.static_dir))
            fail(ErrorCode::configuration, "static_dir does not exist: " + config_.static_dir);
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    ~Service() { stop(); }

    httplib::Server& server() noexcept { return server_; }
    Store& store() noexcept { return store_; }
    const AppConfig& config() const noexcept { return config_; }

    /// Binds (port 0 picks a free one) and serves on a background thread.
    int start() {
        const int port = config_.port == 0 ? server_.bind_to_any_port(config_.host)
                                           : (server_.bind_to_port(config_.host, config_.port) ? config_.port : -1);
        if (port < 0) fail(ErrorCode::io, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port;
    }

    /// Serves on the calling thread until stop().
    void run() {
        if (!server_.listen(config_.host, config_.port))
            fail(ErrorCode::io, "cannot listen on " + config_.host + ":" + std::to_string(config_.port));
    }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::filesystem::path site_dir(const std::string& site_id) const {
        return std::filesystem::path(config_.store_dir) / "site-files" / site_id;
    }

private:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static Handler guarded(Handler h) {
        return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
            try {
                h(req, res);
            } catch (const Error& e) {
                send_json(res, http_status(e.code()), api_error_json(e));
            } catch (const nlohmann::json::exception& e) {
                send_json(res, 400, api_error_json(Error(ErrorCode::schema, e.what())));
            } catch (const std::exception& e) {
                send_json(res, 500, api_error_json(Error(ErrorCode::io, e.what())));
            }
        };
    }

    static nlohmann::json parse_body(const httplib::Request& req) {
        try {
            return nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::parse, std::string("request body is not valid JSON: ") + e.what());
        }
    }

    std::shared_ptr<std::mutex> site_lock(const std::string& site_id) {
        std::lock_guard lock(locks_mu_);
        auto& m = site_locks_[site_id];
        if (!m) m = std::make_shared<std::mutex>();
        return m;
    }

    SiteConfig load_site(const std::string& site_id) const {
        const auto rec = store_.site(site_id);
        if (!rec) fail(ErrorCode::not_found, "unknown site: " + site_id);
        return site_config_from_json(*rec);
    }

    void save_site(const SiteConfig& site) { store_.put_site(to_json(site)); }

    std::optional<CorrespondenceSet> load_pairs(const std::string& site_id) const {
        const auto path = site_dir(site_id) / "pairs.json";
        if (!std::filesystem::exists(path)) return std::nullopt;
        return load_set(path.string());
    }

    nlohmann::json site_summary(const SiteConfig& site) const {
        nlohmann::json j = to_json(site);
        const auto pairs = load_pairs(site.site_id);
        j["pair_count"] = pairs ? pairs->pairs.size() : 0;
        j["estimable"] = pairs && pairs->estimable();
        j["has_ortho"] = std::filesystem::exists(site_dir(site.site_id) / "ortho.png");
        j["has_camera_frame"] = std::filesystem::exists(site_dir(site.site_id) / "camera.png");
        return j;
    }

    void routes() {
        server_.Post("/sites", guarded([this](const auto& req, auto& res) { create_site(req, res); }));
        server_.Get(R"(/sites/([^/]+))", guarded([this](const auto& req, auto& res) {
            send_json(res, 200, site_summary(load_site(req.matches[1])));
        }));
        server_.Put(R"(/sites/([^/]+)/ortho)", guarded([this](const auto& req, auto& res) { put_raster(req, res, "ortho.png"); }));
        server_.Put(R"(/sites/([^/]+)/camera-frame)",
                    guarded([this](const auto& req, auto& res) { put_raster(req, res, "camera.png"); }));
        server_.Put(R"(/sites/([^/]+)/pairs)", guarded([this](const auto& req, auto& res) { put_pairs(req, res); }));
        server_.Get(R"(/sites/([^/]+)/pairs)", guarded([this](const auto& req, auto& res) {
            load_site(req.matches[1]);
            const auto pairs = load_pairs(req.matches[1]);
            if (!pairs) fail(ErrorCode::not_found, "site has no correspondences yet");
            send_json(res, 200, to_json(*pairs));
        }));
        server_.Put(R"(/sites/([^/]+)/annotations)",
                    guarded([this](const auto& req, auto& res) { put_annotations(req, res); }));
        server_.Get(R"(/sites/([^/]+)/annotations)", guarded([this](const auto& req, auto& res) {
            const auto site = load_site(req.matches[1]);
            if (!site.annotations) fail(ErrorCode::not_found, "site has no annotations yet");
            send_json(res, 200, annotations_to_json(*site.annotations));
        }));
        server_.Post(R"(/sites/([^/]+)/estimate)", guarded([this](const auto& req, auto& res) { estimate(req, res); }));
        server_.Get(R"(/sites/([^/]+)/homographies)", guarded([this](const auto& req, auto& res) {
            const auto site = load_site(req.matches[1]);
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& e : site.homographies) arr.push_back(to_json(e));
            send_json(res, 200, {{"homographies", arr}});
        }));
        server_.Get(R"(/sites/([^/]+)/overlay)", guarded([this](const auto& req, auto& res) { overlay(req, res); }));
        server_.Post(R"(/sites/([^/]+)/ingest)", guarded([this](const auto& req, auto& res) { ingest(req, res); }));
        server_.Get(R"(/sites/([^/]+)/tracks)", guarded([this](const auto& req, auto& res) { tracks(req, res); }));
        server_.Get(R"(/sites/([^/]+)/events)", guarded([this](const auto& req, auto& res) { events(req, res); }));
        server_.Get(R"(/sites/([^/]+)/reports/([^/]+))", guarded([this](const auto& req, auto& res) { report(req, res); }));
    }

    void create_site(const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        if (!body.is_object()) fail(ErrorCode::schema, "site body must be a JSON object");
        SiteConfig site;
        site.site_id = body.value("site_id", "");
        site.crs_units = parse_crs_units(body.value("crs_units", "meters"));
        if (body.contains("bbox")) {
            site.bbox = body.at("bbox").get<BoundingBoxGeo>();
            site.bbox->validate();
        }
        if (body.contains("geotransform")) site.geotransform = body.at("geotransform").get<GeoTransform>();
        const int width = body.value("width", 0), height = body.value("height", 0);
        if (site.bbox && !site.geotransform && width > 0 && height > 0)
            site.geotransform = geotransform_for_bbox(*site.bbox, width, height);
        if (!site.bbox && !site.geotransform) fail(ErrorCode::validation, "site needs a bbox or a geotransform");

        std::lock_guard create(create_mu_);
        if (site.site_id.empty()) {
            std::size_t n = store_.row_count(Table::sites) + 1;
            while (store_.site("site-" + std::to_string(n))) ++n;
            site.site_id = "site-" + std::to_string(n);
        }
        if (site.site_id.find('/') != std::string::npos || site.site_id == "." || site.site_id == "..")
            fail(ErrorCode::validation, "site_id must be a plain name");
        if (store_.site(site.site_id)) fail(ErrorCode::conflict, "site already exists: " + site.site_id);

        const bool fetch = body.value("fetch", false);
        std::optional<OrthoRaster> ortho;
        if (fetch) {
            if (!site.bbox || width <= 0 || height <= 0)
                fail(ErrorCode::validation, "fetching imagery needs bbox, width and height");
            const std::string endpoint = body.value("imagery_endpoint", config_.imagery_endpoint);
            if (endpoint.empty()) fail(ErrorCode::configuration, "no imagery endpoint configured");
            ortho = fetch_ortho(*site.bbox, width, height, endpoint, *imagery_);
            site.ortho_ref = ortho->source_uri;
        }
        std::filesystem::create_directories(site_dir(site.site_id));
        if (ortho) save_ortho(*ortho, (site_dir(site.site_id) / "ortho.png").string());
        save_site(site);
        send_json(res, 201, site_summary(site));
    }

    void put_raster(const httplib::Request& req, httplib::Response& res, const std::string& name) {
        const std::string id = req.matches[1];
        auto lock = site_lock(id);
        std::lock_guard guard(*lock);
        auto site = load_site(id);
        Raster raster;
        try {
            raster = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()));
        } catch (const Error& e) {
            fail(ErrorCode::validation, std::string("body is not a PNG or TIFF image: ") + e.what());
        }
        const bool is_ortho = name == "ortho.png";
        if (is_ortho && !site.geotransform) fail(ErrorCode::precondition, "site has no geotransform for the orthoimage");
        std::filesystem::create_directories(site_dir(id));
        const auto path = site_dir(id) / name;
        if (is_ortho) {
            save_ortho({raster, *site.geotransform, ""}, path.string());
            site.ortho_ref = "file://" + path.string();
        } else {
            save_image(path.string(), raster);
            site.camera_image_ref = "file://" + path.string();
        }
        save_site(site);
        send_json(res, 200, {{"width", raster.width}, {"height", raster.height}});
    }

    void put_pairs(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        auto lock = site_lock(id);
        std::lock_guard guard(*lock);
        load_site(id);
        auto set = parse_set(req.body);
        if (set.site_id != id) fail(ErrorCode::validation, "body site_id does not match the URL");
        std::filesystem::create_directories(site_dir(id));
        save_set(set, (site_dir(id) / "pairs.json").string());
        send_json(res, 200, {{"pairs", set.pairs.size()}, {"estimable", set.estimable()}, {"warnings", set.warnings()}});
    }

    void put_annotations(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        auto lock = site_lock(id);
        std::lock_guard guard(*lock);
        auto site = load_site(id);
        site.annotations = annotations_from_json(parse_body(req));
        save_site(site);
        send_json(res, 200, annotations_to_json(*site.annotations));
    }

    void estimate(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        auto lock = site_lock(id);
        std::lock_guard guard(*lock);
        auto site = load_site(id);
        const nlohmann::json body = req.body.empty() ? nlohmann::json::object() : parse_body(req);
        const auto pairs = load_pairs(id);
        if (!pairs) fail(ErrorCode::precondition, "site has no correspondences");
        if (!pairs->estimable())
            fail(ErrorCode::precondition, "homography estimation needs at least 4 pairs", {{"pairs", pairs->pairs.size()}});
        const RobustParams params = robust_params_from_json(body.value("robust", nlohmann::json::object()), config_.robust);
        const EstimateResult result = estimate_robust(pairs->pairs, params);

        nlohmann::json entry_json = {{"id", body.value("id", "default")}, {"matrix", matrix_json(result.homography)}};
        for (const char* key : {"valid_from", "valid_to", "filename_pattern"})
            if (body.contains(key)) entry_json[key] = body.at(key);
        site.register_homography(registry_entry_from_json(entry_json));
        save_site(site);

        nlohmann::json out = to_json(result);
        out["homography_id"] = entry_json["id"];
        out["robust"] = to_json(params);
        send_json(res, 200, out);
    }

    void overlay(const httplib::Request& req, httplib::Response& res) {
        const auto site = load_site(req.matches[1]);
        if (site.homographies.empty()) fail(ErrorCode::not_found, "site has no homography");
        const RegistryEntry* entry = &site.homographies.back();
        if (req.has_param("h")) {
            entry = nullptr;
            for (const auto& e : site.homographies)
                if (e.id == req.get_param_value("h")) entry = &e;
            if (!entry) fail(ErrorCode::not_found, "unknown homography id");
        }
        double alpha = 0.5;
        if (req.has_param("alpha")) {
            try {
                alpha = std::stod(req.get_param_value("alpha"));
            } catch (const std::exception&) {
                fail(ErrorCode::validation, "alpha must be a number");
            }
        }
        if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::validation, "alpha must lie in [0, 1]");
        const auto dir = site_dir(site.site_id);
        if (!std::filesystem::exists(dir / "ortho.png") || !std::filesystem::exists(dir / "camera.png"))
            fail(ErrorCode::not_found, "overlay needs both the orthoimage and a camera frame");
        const Raster ortho = load_image((dir / "ortho.png").string());
        const Raster camera = load_image((dir / "camera.png").string());
        const Raster warped = warp_image(entry->h, camera, ortho.width, ortho.height);
        const auto png = encode_png(blend_over(ortho, warped, alpha));
        res.status = 200;
        res.set_content(std::string(png.begin(), png.end()), "image/png");
    }

    void ingest(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!req.is_multipart_form_data() || !req.has_file("detections") || !req.has_file("meta"))
            fail(ErrorCode::validation, "ingest expects multipart parts 'detections' and 'meta'");
        auto lock = site_lock(id);
        std::lock_guard guard(*lock);
        const auto site = load_site(id);
        const VideoMeta meta = parse_video_meta(req.get_file_value("meta").content);
        const auto outcome = ingest_video(store_, site, req.get_file_value("detections").content, meta, config_.pipeline);
        nlohmann::json out = outcome.result.summary();
        out["changed"] = outcome.changed;
        send_json(res, 200, out);
    }

    void tracks(const httplib::Request& req, httplib::Response& res) const {
        const std::string id = req.matches[1];
        load_site(id);
        std::optional<std::string> video;
        if (req.has_param("video_id")) video = req.get_param_value("video_id");
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& t : store_.query_trajectories(id, video)) arr.push_back(to_json(t));
        send_json(res, 200, {{"tracks", arr}});
    }

    static double number_param(const httplib::Request& req, const char* name, double fallback) {
        if (!req.has_param(name)) return fallback;
        const std::string text = req.get_param_value(name);
        try {
            return std::stod(text);
        } catch (const std::exception&) {
            return parse_iso8601(text).epoch_s;
        }
    }

    EventQuery event_query(const httplib::Request& req, const std::string& id) const {
        EventQuery q;
        q.site_id = id;
        q.t_from = number_param(req, "t_from", q.t_from);
        q.t_to = number_param(req, "t_to", q.t_to);
        if (req.has_param("severity")) {
            std::set<Severity> sev;
            std::stringstream ss(req.get_param_value("severity"));
            for (std::string part; std::getline(ss, part, ',');)
                if (!part.empty()) sev.insert(parse_severity(part));
            q.severities = sev;
        }
        if (req.has_param("video_id")) q.video_id = req.get_param_value("video_id");
        return q;
    }

    void events(const httplib::Request& req, httplib::Response& res) const {
        const std::string id = req.matches[1];
        load_site(id);
        const auto result = store_.query_events(event_query(req, id));
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : result.events) arr.push_back(to_json(e));
        send_json(res, 200, {{"events", arr}, {"warnings", result.warnings}});
    }

    void report(const httplib::Request& req, httplib::Response& res) const {
        const std::string id = req.matches[1];
        const std::string product = req.matches[2];
        const auto site = load_site(id);
        ReportInputs in;
        in.events = store_.query_events(event_query(req, id)).events;
        const auto videos = store_.query_videos(id);
        in.observation = observation_from_videos(videos);
        if (site.geotransform) in.geotransform = site.metric_geotransform();
        const auto format = parse_report_format(req.has_param("format") ? req.get_param_value("format") : "json");
        const std::string text = render_report(product, in, format);
        res.status = 200;
        res.set_content(text, format == ReportFormat::csv ? "text/csv" : "application/json");
    }

    AppConfig config_;
    Store store_;
    std::shared_ptr<HttpTransport> imagery_;
    httplib::Server server_;
    std::thread thread_;
    std::mutex locks_mu_;
    std::mutex create_mu_;
    std::map<std::string, std::shared_ptr<std::mutex>> site_locks_;
};

}  // namespace trafficrect
