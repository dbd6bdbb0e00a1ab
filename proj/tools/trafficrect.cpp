// trafficrect command-line front end: batch runs of the same pipeline the
// HTTP service exposes.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trafficrect/trafficrect.hpp"

namespace tr = trafficrect;
using nlohmann::json;

namespace {

std::string read_text(const std::string& path) {
    const auto bytes = tr::read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        tr::fail(tr::ErrorCode::parse, path + " is not valid JSON: " + e.what());
    }
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) tr::fail(tr::ErrorCode::io, "cannot write " + path);
    out << text;
}

std::vector<double> split_numbers(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        try {
            out.push_back(std::stod(part));
        } catch (const std::exception&) {
            tr::fail(tr::ErrorCode::validation, "not a number: " + part);
        }
    }
    return out;
}

double time_arg(const std::string& text, double fallback) {
    if (text.empty()) return fallback;
    return tr::parse_iso8601(text).epoch_s;
}

struct Common {
    std::string config_path;
    tr::AppConfig config() const { return tr::load_app_config(config_path); }
};

// ------------------------------------------------------------ fetch-ortho

struct FetchArgs {
    std::string bbox, crs, endpoint, out;
    int width = 0, height = 0;
};

int run_fetch(const Common& common, const FetchArgs& a) {
    const auto cfg = common.config();
    const auto v = split_numbers(a.bbox);
    if (v.size() != 4) tr::fail(tr::ErrorCode::validation, "--bbox needs min_lon,min_lat,max_lon,max_lat");
    const tr::BoundingBoxGeo bbox{v[0], v[1], v[2], v[3], a.crs};
    const std::string endpoint = a.endpoint.empty() ? cfg.imagery_endpoint : a.endpoint;
    if (endpoint.empty()) tr::fail(tr::ErrorCode::configuration, "no imagery endpoint given");
    tr::HttplibTransport transport;
    const auto ortho = tr::fetch_ortho(bbox, a.width, a.height, endpoint, transport);
    tr::save_ortho(ortho, a.out);
    std::cout << json{{"path", a.out},
                      {"world_file", tr::world_file_path(a.out)},
                      {"geotransform", ortho.geotransform},
                      {"width", ortho.raster.width},
                      {"height", ortho.raster.height}}
                     .dump(2)
              << "\n";
    return 0;
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
    std::string pairs, out, id = "default", valid_from, valid_to, pattern, scoring, created_at;
    std::uint64_t seed = 0;
    bool seed_given = false;
    double threshold = 0.0;
    int max_iterations = 0;
};

int run_estimate(const Common& common, const EstimateArgs& a) {
    const auto cfg = common.config();
    tr::RobustParams params = cfg.robust;
    if (a.seed_given) params.seed = a.seed;
    if (a.threshold > 0.0) params.inlier_threshold = a.threshold;
    if (a.max_iterations > 0) params.max_iterations = a.max_iterations;
    if (!a.scoring.empty()) params.scoring = tr::parse_scoring(a.scoring);
    std::cerr << "seed: " << params.seed << "\n";

    const auto set = tr::load_set(a.pairs);
    if (!set.estimable())
        tr::fail(tr::ErrorCode::precondition, "homography estimation needs at least 4 pairs", {{"pairs", set.pairs.size()}});
    const auto result = tr::estimate_robust(set.pairs, params);

    json out = tr::to_json(result);
    out["id"] = a.id;
    out["site_id"] = set.site_id;
    out["robust"] = tr::to_json(params);
    if (!a.valid_from.empty() || !a.valid_to.empty()) {
        out["valid_from"] = a.valid_from;
        out["valid_to"] = a.valid_to;
    }
    if (!a.pattern.empty()) out["filename_pattern"] = a.pattern;
    if (!a.created_at.empty()) out["created_at"] = a.created_at;
    tr::registry_entry_from_json(out);  // the output must load back as a registry entry
    write_output(a.out, out.dump(2) + "\n");
    return 0;
}

// ------------------------------------------------------------------ ingest

struct IngestArgs {
    std::string site, store;
    std::vector<std::string> homographies, detections, metas;
    int parallel = 1;
};

int run_ingest(const Common& common, const IngestArgs& a) {
    const auto cfg = common.config();
    if (a.detections.size() != a.metas.size())
        tr::fail(tr::ErrorCode::validation, "--detections and --meta must be given the same number of times");
    if (a.parallel < 1) tr::fail(tr::ErrorCode::validation, "--parallel must be at least 1");

    tr::SiteConfig site = tr::load_site_config(a.site);
    for (const auto& path : a.homographies) site.register_homography(tr::registry_entry_from_json(read_json(path)));

    const std::size_t n = a.detections.size();
    std::vector<std::string> texts(n);
    std::vector<tr::VideoMeta> metas(n);
    for (std::size_t i = 0; i < n; ++i) {
        texts[i] = read_text(a.detections[i]);
        metas[i] = tr::parse_video_meta(read_text(a.metas[i]));
    }

    // Processing is pure and runs in parallel; store writes happen afterwards
    // in argument order so the store contents do not depend on --parallel.
    std::vector<std::optional<tr::VideoResult>> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                const auto parsed = tr::parse_detections(texts[i], cfg.pipeline.strict_parse);
                if (!parsed.ok())
                    tr::fail(tr::ErrorCode::parse, a.detections[i] + ": " + std::to_string(parsed.errors.size()) +
                                                       " malformed detection line(s)",
                             {{"file", a.detections[i]}, {"errors", tr::to_json(parsed.errors)}});
                results[i] = tr::process_video(site, parsed.detections, metas[i], cfg.pipeline);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(a.parallel), std::max<std::size_t>(n, 1)));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    tr::Store store(a.store.empty() ? cfg.store_dir : a.store);
    store.put_site(tr::to_json(site));
    for (const auto& r : results) {
        const bool changed = store.replace_video(r->video, r->trajectories, r->events);
        json line = r->summary();
        line["changed"] = changed;
        std::cout << line.dump() << "\n";
    }
    return 0;
}

// ------------------------------------------------------------------ detect

struct DetectArgs {
    std::string detections, out;
    bool strict = false;
};

// Detection and tracking run upstream; this validates and normalizes their
// NDJSON output so malformed files are caught before ingestion.
int run_detect(const Common&, const DetectArgs& a) {
    const auto parsed = tr::parse_detections(read_text(a.detections), a.strict);
    std::set<std::pair<std::string, int>> tracks;
    std::map<std::string, std::size_t> classes;
    std::string normalized;
    for (const auto& d : parsed.detections) {
        tracks.emplace(d.video_id, d.track_id);
        ++classes[d.class_label];
        normalized += tr::to_json(d).dump() + "\n";
    }
    if (!a.out.empty()) write_output(a.out, normalized);
    std::cout << json{{"detections", parsed.detections.size()},
                      {"tracks", tracks.size()},
                      {"classes", classes},
                      {"errors", tr::to_json(parsed.errors)}}
                     .dump(2)
              << "\n";
    if (!parsed.ok())
        tr::fail(tr::ErrorCode::parse, std::to_string(parsed.errors.size()) + " malformed detection line(s)",
                 {{"errors", tr::to_json(parsed.errors)}});
    return 0;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
    std::string store, site, product, format = "json", out, from, to;
    int hour_from = 7, hour_to = 19;
};

int run_report(const Common& common, const ReportArgs& a) {
    const auto cfg = common.config();
    const tr::Store store(a.store.empty() ? cfg.store_dir : a.store, tr::Store::Access::read_only);
    const auto format = tr::parse_report_format(a.format);
    tr::EventQuery q;
    q.site_id = a.site;
    q.t_from = time_arg(a.from, q.t_from);
    q.t_to = time_arg(a.to, q.t_to);
    auto result = store.query_events(q);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

    tr::ReportInputs in;
    in.events = std::move(result.events);
    in.observation = tr::observation_from_videos(store.query_videos(a.site));
    in.hour_from = a.hour_from;
    in.hour_to = a.hour_to;
    if (const auto rec = store.site(a.site)) {
        const auto site = tr::site_config_from_json(*rec);
        if (site.geotransform) in.geotransform = site.metric_geotransform();
    }
    write_output(a.out, tr::render_report(a.product, in, format));
    return 0;
}

// ------------------------------------------------------------------ export

struct ExportArgs {
    std::string store, table, out;
};

int run_export(const Common& common, const ExportArgs& a) {
    const auto cfg = common.config();
    const auto table = tr::parse_table(a.table);
    const tr::Store store(a.store.empty() ? cfg.store_dir : a.store, tr::Store::Access::read_only);
    write_output(a.out, store.export_ndjson(table));
    return 0;
}

// ------------------------------------------------------------------- serve

struct ServeArgs {
    std::string host, store, static_dir;
    int port = -1;
};

int run_serve(const Common& common, const ServeArgs& a) {
    auto cfg = common.config();
    if (!a.host.empty()) cfg.host = a.host;
    if (a.port >= 0) cfg.port = a.port;
    if (!a.store.empty()) cfg.store_dir = a.store;
    if (!a.static_dir.empty()) cfg.static_dir = a.static_dir;
    tr::Service service(cfg);
    std::cerr << "listening on " << cfg.host << ":" << cfg.port << " store " << cfg.store_dir << "\n";
    service.run();
    return 0;
}

void print_error(const tr::Error& e) {
    std::cerr << json{{"error", tr::api_error_json(e)}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Camera-to-ortho rectification and hard-braking analytics"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config_path, "JSON config file shared with the service");

    FetchArgs fetch;
    auto* c_fetch = app.add_subcommand("fetch-ortho", "Download an orthoimage and write PNG plus world file");
    c_fetch->add_option("--bbox", fetch.bbox, "min_lon,min_lat,max_lon,max_lat")->required();
    c_fetch->add_option("--crs", fetch.crs, "CRS id of the bbox, e.g. EPSG:3857")->required();
    c_fetch->add_option("--width", fetch.width, "Image width in pixels")->required();
    c_fetch->add_option("--height", fetch.height, "Image height in pixels")->required();
    c_fetch->add_option("--endpoint", fetch.endpoint, "ArcGIS ImageServer exportImage URL");
    c_fetch->add_option("--out", fetch.out, "Output PNG path")->required();

    EstimateArgs est;
    auto* c_est = app.add_subcommand("estimate", "Robust homography from a correspondence file");
    c_est->add_option("--pairs", est.pairs, "Correspondence JSON")->required();
    auto* seed_opt = c_est->add_option("--seed", est.seed, "Sampling seed (default from config, 42)");
    c_est->add_option("--scoring", est.scoring, "magsac++ or msac");
    c_est->add_option("--threshold", est.threshold, "Inlier threshold, px");
    c_est->add_option("--max-iterations", est.max_iterations, "Hypothesis cap");
    c_est->add_option("--id", est.id, "Registry id for the result")->capture_default_str();
    c_est->add_option("--valid-from", est.valid_from, "Local time-of-day window start, HH:MM[:SS]");
    c_est->add_option("--valid-to", est.valid_to, "Local time-of-day window end, HH:MM[:SS]");
    c_est->add_option("--filename-pattern", est.pattern, "Glob matched against video filenames");
    c_est->add_option("--created-at", est.created_at, "Timestamp recorded verbatim in the output");
    c_est->add_option("--out", est.out, "Output path (default stdout)");

    IngestArgs ing;
    auto* c_ing = app.add_subcommand("ingest", "Run detections through tracks, braking and the store");
    c_ing->add_option("--site", ing.site, "Site config JSON")->required();
    c_ing->add_option("--homography", ing.homographies, "Estimate output to register (repeatable)");
    c_ing->add_option("--detections", ing.detections, "Detections NDJSON (repeatable)")->required();
    c_ing->add_option("--meta", ing.metas, "Video metadata sidecar, one per --detections")->required();
    c_ing->add_option("--store", ing.store, "Store directory (default from config)");
    c_ing->add_option("--parallel", ing.parallel, "Videos processed concurrently")->capture_default_str();

    DetectArgs det;
    auto* c_det = app.add_subcommand("detect", "Validate and normalize an upstream detections file");
    c_det->add_option("--detections", det.detections, "Detections NDJSON")->required();
    c_det->add_option("--out", det.out, "Write normalized NDJSON here");
    c_det->add_flag("--strict", det.strict, "Stop at the first malformed line");

    ReportArgs rep;
    auto* c_rep = app.add_subcommand("report", "Render an analytics product from the store");
    c_rep->add_option("--store", rep.store, "Store directory (default from config)");
    c_rep->add_option("--site", rep.site, "Site id")->required();
    c_rep->add_option("--product", rep.product, "hourly-counts, heatmap, hourly-stats, rstart-ecdf or scatter")->required();
    c_rep->add_option("--format", rep.format, "json or csv")->capture_default_str();
    c_rep->add_option("--from", rep.from, "ISO-8601 lower bound, inclusive");
    c_rep->add_option("--to", rep.to, "ISO-8601 upper bound, exclusive");
    c_rep->add_option("--hour-from", rep.hour_from, "First hour for hourly-stats")->capture_default_str();
    c_rep->add_option("--hour-to", rep.hour_to, "Hour after the last for hourly-stats")->capture_default_str();
    c_rep->add_option("--out", rep.out, "Output path (default stdout)");

    ExportArgs exp;
    auto* c_exp = app.add_subcommand("export", "Dump one store table as NDJSON");
    c_exp->add_option("--store", exp.store, "Store directory (default from config)");
    c_exp->add_option("--table", exp.table, "trajectories, events, sites or videos")->required();
    c_exp->add_option("--out", exp.out, "Output path (default stdout)");

    ServeArgs srv;
    auto* c_srv = app.add_subcommand("serve", "Run the HTTP API");
    c_srv->add_option("--host", srv.host, "Listen host");
    c_srv->add_option("--port", srv.port, "Listen port");
    c_srv->add_option("--store", srv.store, "Store directory");
    c_srv->add_option("--static-dir", srv.static_dir, "Built web UI to serve at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    est.seed_given = seed_opt->count() > 0;

    try {
        if (*c_fetch) return run_fetch(common, fetch);
        if (*c_est) return run_estimate(common, est);
        if (*c_ing) return run_ingest(common, ing);
        if (*c_det) return run_detect(common, det);
        if (*c_rep) return run_report(common, rep);
        if (*c_exp) return run_export(common, exp);
        if (*c_srv) return run_serve(common, srv);
    } catch (const tr::Error& e) {
        print_error(e);
        return tr::exit_code(e.code());
    } catch (const std::exception& e) {
        print_error(tr::Error(tr::ErrorCode::io, e.what()));
        return 1;
    }
    return 1;
}
