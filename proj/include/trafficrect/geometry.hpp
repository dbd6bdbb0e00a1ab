#pragma once

#include <cmath>
#include <limits>

namespace trafficrect {

/// Pixel position in the native traffic-camera frame.
struct CameraPoint {
    double u = 0.0;
    double v = 0.0;
    friend bool operator==(const CameraPoint&, const CameraPoint&) = default;
};

/// Pixel position in the orthoimage (pixel centers at integer coordinates).
struct OrthoPoint {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const OrthoPoint&, const OrthoPoint&) = default;
};

/// Projected world coordinate in meters.
struct WorldPoint {
    double easting = 0.0;
    double northing = 0.0;
    friend bool operator==(const WorldPoint&, const WorldPoint&) = default;
};

struct Segment {
    WorldPoint a;
    WorldPoint b;
    friend bool operator==(const Segment&, const Segment&) = default;
};

inline bool is_finite(const CameraPoint& p) { return std::isfinite(p.u) && std::isfinite(p.v); }
inline bool is_finite(const OrthoPoint& p) { return std::isfinite(p.x) && std::isfinite(p.y); }
inline bool is_finite(const WorldPoint& p) { return std::isfinite(p.easting) && std::isfinite(p.northing); }

inline double distance(const WorldPoint& p, const WorldPoint& q) {
    return std::hypot(p.easting - q.easting, p.northing - q.northing);
}

/// Closest point of segment [a, b] to p. Zero-length segments collapse to a.
inline WorldPoint closest_point(const Segment& s, const WorldPoint& p) {
    const double dx = s.b.easting - s.a.easting;
    const double dy = s.b.northing - s.a.northing;
    const double len2 = dx * dx + dy * dy;
    if (len2 == 0.0) return s.a;
    double t = ((p.easting - s.a.easting) * dx + (p.northing - s.a.northing) * dy) / len2;
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    return {s.a.easting + t * dx, s.a.northing + t * dy};
}

inline double distance_to_segment(const Segment& s, const WorldPoint& p) {
    return distance(p, closest_point(s, p));
}

/// z-component of (b - a) x (p - a); positive when p is left of a->b.
inline double cross(const Segment& s, const WorldPoint& p) {
    return (s.b.easting - s.a.easting) * (p.northing - s.a.northing) -
           (s.b.northing - s.a.northing) * (p.easting - s.a.easting);
}

}  // namespace trafficrect
