#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "trafficrect/error.hpp"
#include "trafficrect/geometry.hpp"
#include "trafficrect/image.hpp"

namespace trafficrect {

struct BoundingBoxGeo {
    double min_lon = 0.0;
    double min_lat = 0.0;
    double max_lon = 0.0;
    double max_lat = 0.0;
    std::string crs_id;

    void validate() const {
        if (!(std::isfinite(min_lon) && std::isfinite(min_lat) && std::isfinite(max_lon) && std::isfinite(max_lat)))
            fail(ErrorCode::precondition, "bounding box has non-finite coordinates");
        if (!(min_lon < max_lon)) fail(ErrorCode::precondition, "bounding box requires min_lon < max_lon");
        if (!(min_lat < max_lat)) fail(ErrorCode::precondition, "bounding box requires min_lat < max_lat");
    }
};

/// Linear unit of the orthoimage CRS. Carried as configuration because no
/// CRS database is consulted.
enum class CrsUnits { meters, feet, degrees };

inline std::string_view to_string(CrsUnits u) {
    switch (u) {
        case CrsUnits::meters: return "meters";
        case CrsUnits::feet: return "feet";
        case CrsUnits::degrees: return "degrees";
    }
    return "meters";
}

inline CrsUnits parse_crs_units(std::string_view s) {
    if (s == "meters" || s == "metre" || s == "m") return CrsUnits::meters;
    if (s == "feet" || s == "ft" || s == "us-ft") return CrsUnits::feet;
    if (s == "degrees" || s == "deg") return CrsUnits::degrees;
    fail(ErrorCode::validation, "unknown crs_units: " + std::string(s));
}

inline constexpr double kMetersPerFoot = 0.3048;

/// North-up affine georeference. origin_* is the world position of the
/// center of pixel (0, 0); rows grow southward.
struct GeoTransform {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double scale_x = 1.0;
    double scale_y = 1.0;
    std::string crs_id;

    void validate() const {
        if (!(scale_x > 0.0) || !(scale_y > 0.0)) fail(ErrorCode::validation, "geotransform scales must be positive");
        if (!std::isfinite(origin_x) || !std::isfinite(origin_y))
            fail(ErrorCode::validation, "geotransform origin must be finite");
    }

    friend bool operator==(const GeoTransform&, const GeoTransform&) = default;
};

inline WorldPoint pixel_to_world(const GeoTransform& gt, const OrthoPoint& p) {
    return {gt.origin_x + p.x * gt.scale_x, gt.origin_y - p.y * gt.scale_y};
}

inline OrthoPoint world_to_pixel(const GeoTransform& gt, const WorldPoint& w) {
    return {(w.easting - gt.origin_x) / gt.scale_x, (gt.origin_y - w.northing) / gt.scale_y};
}

struct MetersPerPixel {
    double sx = 0.0;
    double sy = 0.0;
};

inline MetersPerPixel meters_per_pixel(const GeoTransform& gt, CrsUnits units) {
    switch (units) {
        case CrsUnits::meters: return {gt.scale_x, gt.scale_y};
        case CrsUnits::feet: return {gt.scale_x * kMetersPerFoot, gt.scale_y * kMetersPerFoot};
        case CrsUnits::degrees: break;
    }
    fail(ErrorCode::unit, "CRS '" + gt.crs_id + "' has angular units; metric scale is undefined");
}

/// Geotransform for a raster of size (width, height) covering bbox exactly:
/// the bbox edges are the outer pixel edges, so pixel centers sit half a
/// pixel inside.
inline GeoTransform geotransform_for_bbox(const BoundingBoxGeo& bbox, int width, int height) {
    bbox.validate();
    if (width <= 0 || height <= 0) fail(ErrorCode::precondition, "image size must be positive");
    GeoTransform gt;
    gt.scale_x = (bbox.max_lon - bbox.min_lon) / width;
    gt.scale_y = (bbox.max_lat - bbox.min_lat) / height;
    gt.origin_x = bbox.min_lon + gt.scale_x / 2.0;
    gt.origin_y = bbox.max_lat - gt.scale_y / 2.0;
    gt.crs_id = bbox.crs_id;
    return gt;
}

// ---------------------------------------------------------------- world file

/// ESRI world file: sx, rotation-y, rotation-x, -sy, center-x, center-y.
inline std::string format_world_file(const GeoTransform& gt) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.17g\n0\n0\n%.17g\n%.17g\n%.17g\n", gt.scale_x, -gt.scale_y, gt.origin_x,
                  gt.origin_y);
    return buf;
}

inline GeoTransform parse_world_file(const std::string& text, std::string crs_id = {}) {
    std::istringstream in(text);
    double v[6];
    for (double& x : v) {
        std::string line;
        if (!std::getline(in, line)) fail(ErrorCode::parse, "world file needs 6 lines");
        try {
            std::size_t used = 0;
            x = std::stod(line, &used);
        } catch (const std::exception&) {
            fail(ErrorCode::parse, "world file line is not a number: " + line);
        }
    }
    if (v[1] != 0.0 || v[2] != 0.0) fail(ErrorCode::parse, "rotated world files are not supported");
    GeoTransform gt{v[4], v[5], v[0], -v[3], std::move(crs_id)};
    gt.validate();
    return gt;
}

/// Sidecar path convention: image.png -> image.pgw, image.tif -> image.tfw.
inline std::string world_file_path(const std::string& image_path) {
    const auto dot = image_path.find_last_of('.');
    const std::string stem = dot == std::string::npos ? image_path : image_path.substr(0, dot);
    const std::string ext = dot == std::string::npos ? "" : image_path.substr(dot + 1);
    if (ext == "png") return stem + ".pgw";
    if (ext == "tif" || ext == "tiff") return stem + ".tfw";
    return image_path + ".wld";
}

// ---------------------------------------------------------------- rasters

struct OrthoRaster {
    Raster raster;
    GeoTransform geotransform;
    std::string source_uri;
};

inline OrthoRaster load_ortho(const std::string& image_path, std::string crs_id = {}) {
    OrthoRaster out;
    out.raster = load_image(image_path);
    const auto wf = read_file_bytes(world_file_path(image_path));
    out.geotransform = parse_world_file(std::string(wf.begin(), wf.end()), std::move(crs_id));
    out.source_uri = "file://" + image_path;
    return out;
}

inline void save_ortho(const OrthoRaster& ortho, const std::string& image_path) {
    save_image(image_path, ortho.raster);
    const auto text = format_world_file(ortho.geotransform);
    write_file_bytes(world_file_path(image_path), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------- fetching

struct HttpResponse {
    int status = 0;
    std::string body;
    std::string content_type;
};

/// Blocking HTTP GET. Implementations throw Error(transport) when no
/// response was received at all.
class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse get(const std::string& url) = 0;
};

/// Transport backed by a callable; convenient for tests and fixtures.
class FunctionTransport final : public HttpTransport {
public:
    explicit FunctionTransport(std::function<HttpResponse(const std::string&)> fn) : fn_(std::move(fn)) {}
    HttpResponse get(const std::string& url) override { return fn_(url); }

private:
    std::function<HttpResponse(const std::string&)> fn_;
};

/// Strips an "EPSG:" style authority prefix; ArcGIS expects the bare wkid.
inline std::string spatial_reference_param(const std::string& crs_id) {
    const auto colon = crs_id.find(':');
    return colon == std::string::npos ? crs_id : crs_id.substr(colon + 1);
}

inline std::string format_coord(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// ArcGIS REST exportImage request URL for bbox at the given pixel size.
inline std::string export_image_url(const std::string& endpoint, const BoundingBoxGeo& bbox, int width, int height) {
    std::string base = endpoint;
    while (!base.empty() && base.back() == '/') base.pop_back();
    if (!base.ends_with("/exportImage")) base += "/exportImage";
    const std::string sr = spatial_reference_param(bbox.crs_id);
    return base + "?bbox=" + format_coord(bbox.min_lon) + "," + format_coord(bbox.min_lat) + "," +
           format_coord(bbox.max_lon) + "," + format_coord(bbox.max_lat) + "&bboxSR=" + sr + "&imageSR=" + sr +
           "&size=" + std::to_string(width) + "," + std::to_string(height) + "&format=png&f=image";
}

/// One GET against an ArcGIS-style image export endpoint. The raster's
/// geotransform is derived from the request, not from the response.
inline OrthoRaster fetch_ortho(const BoundingBoxGeo& bbox, int width, int height, const std::string& endpoint,
                               HttpTransport& transport) {
    const GeoTransform gt = geotransform_for_bbox(bbox, width, height);
    const std::string url = export_image_url(endpoint, bbox, width, height);
    const HttpResponse resp = transport.get(url);
    if (resp.status != 200)
        fail(ErrorCode::upstream_status, "imagery service answered HTTP " + std::to_string(resp.status),
             {{"status", resp.status}, {"url", url}});
    Raster raster;
    try {
        raster = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(resp.body.data()), resp.body.size()));
    } catch (const Error& e) {
        fail(ErrorCode::decode, std::string("imagery response is not a decodable image: ") + e.what(), {{"url", url}});
    }
    if (raster.width != width || raster.height != height)
        fail(ErrorCode::decode, "imagery response has unexpected dimensions",
             {{"expected", {width, height}}, {"got", {raster.width, raster.height}}});
    return {std::move(raster), gt, url};
}

// ---------------------------------------------------------------- JSON

inline void to_json(nlohmann::json& j, const GeoTransform& gt) {
    j = {{"origin_x", gt.origin_x}, {"origin_y", gt.origin_y}, {"scale_x", gt.scale_x},
         {"scale_y", gt.scale_y},   {"crs_id", gt.crs_id}};
}

inline void from_json(const nlohmann::json& j, GeoTransform& gt) {
    gt.origin_x = j.at("origin_x").get<double>();
    gt.origin_y = j.at("origin_y").get<double>();
    gt.scale_x = j.at("scale_x").get<double>();
    gt.scale_y = j.at("scale_y").get<double>();
    gt.crs_id = j.value("crs_id", "");
    gt.validate();
}

inline void to_json(nlohmann::json& j, const BoundingBoxGeo& b) {
    j = {{"min_lon", b.min_lon}, {"min_lat", b.min_lat}, {"max_lon", b.max_lon}, {"max_lat", b.max_lat},
         {"crs_id", b.crs_id}};
}

inline void from_json(const nlohmann::json& j, BoundingBoxGeo& b) {
    b.min_lon = j.at("min_lon").get<double>();
    b.min_lat = j.at("min_lat").get<double>();
    b.max_lon = j.at("max_lon").get<double>();
    b.max_lat = j.at("max_lat").get<double>();
    b.crs_id = j.value("crs_id", "");
}

}  // namespace trafficrect
