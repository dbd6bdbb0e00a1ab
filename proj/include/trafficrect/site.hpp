#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trafficrect/correspond.hpp"
#include "trafficrect/error.hpp"
#include "trafficrect/homography.hpp"
#include "trafficrect/ortho.hpp"

namespace trafficrect {

/// Everything the pipeline needs to know about one camera site.
struct SiteConfig {
    std::string site_id;
    std::optional<BoundingBoxGeo> bbox;
    std::optional<GeoTransform> geotransform;
    CrsUnits crs_units = CrsUnits::meters;
    std::string camera_image_ref;
    std::string ortho_ref;
    std::optional<SiteAnnotations> annotations;
    std::vector<RegistryEntry> homographies;

    /// Geotransform whose world outputs are meters, whatever the CRS linear
    /// unit. Angular CRSs have no metric scale and are refused.
    GeoTransform metric_geotransform() const {
        if (!geotransform) fail(ErrorCode::configuration, "site " + site_id + " has no geotransform");
        double f = 1.0;
        switch (crs_units) {
            case CrsUnits::meters: f = 1.0; break;
            case CrsUnits::feet: f = kMetersPerFoot; break;
            case CrsUnits::degrees:
                fail(ErrorCode::unit, "CRS '" + geotransform->crs_id + "' has angular units; metric analysis is undefined");
        }
        GeoTransform g = *geotransform;
        g.origin_x *= f;
        g.origin_y *= f;
        g.scale_x *= f;
        g.scale_y *= f;
        return g;
    }

    /// Adds or replaces (by id) a registry entry.
    void register_homography(RegistryEntry entry) {
        for (auto& e : homographies)
            if (e.id == entry.id) {
                e = std::move(entry);
                return;
            }
        homographies.push_back(std::move(entry));
    }
};

inline nlohmann::json to_json(const SiteConfig& s) {
    nlohmann::json j = {{"site_id", s.site_id},
                        {"crs_units", to_string(s.crs_units)},
                        {"camera_image_ref", s.camera_image_ref},
                        {"ortho_ref", s.ortho_ref}};
    j["bbox"] = s.bbox ? nlohmann::json(*s.bbox) : nlohmann::json();
    j["geotransform"] = s.geotransform ? nlohmann::json(*s.geotransform) : nlohmann::json();
    j["annotations"] = s.annotations ? annotations_to_json(*s.annotations) : nlohmann::json();
    nlohmann::json reg = nlohmann::json::array();
    for (const auto& e : s.homographies) reg.push_back(to_json(e));
    j["homographies"] = reg;
    return j;
}

inline SiteConfig site_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorCode::schema, "site config must be a JSON object");
    SiteConfig s;
    try {
        s.site_id = j.at("site_id").get<std::string>();
        if (j.contains("bbox") && !j.at("bbox").is_null()) {
            s.bbox = j.at("bbox").get<BoundingBoxGeo>();
            s.bbox->validate();
        }
        if (j.contains("geotransform") && !j.at("geotransform").is_null())
            s.geotransform = j.at("geotransform").get<GeoTransform>();
        s.crs_units = parse_crs_units(j.value("crs_units", "meters"));
        s.camera_image_ref = j.value("camera_image_ref", "");
        s.ortho_ref = j.value("ortho_ref", "");
        if (j.contains("annotations") && !j.at("annotations").is_null())
            s.annotations = annotations_from_json(j.at("annotations"));
        if (j.contains("homographies"))
            for (const auto& e : j.at("homographies")) s.homographies.push_back(registry_entry_from_json(e));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid site config: ") + e.what());
    }
    if (s.site_id.empty()) fail(ErrorCode::schema, "site_id must not be empty");
    return s;
}

inline SiteConfig load_site_config(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return site_config_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::parse, path + " is not valid JSON: " + e.what());
    }
}

}  // namespace trafficrect
