#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "trafficrect/braking.hpp"
#include "trafficrect/error.hpp"
#include "trafficrect/tracks.hpp"

namespace trafficrect {

/// Trajectory as persisted: identifiers, class and world-space points only.
struct StoredTrajectory {
    std::string site_id;
    std::string video_id;
    int track_id = 0;
    std::string class_label;
    std::vector<double> t;  // epoch s
    std::vector<double> x;  // easting, m
    std::vector<double> y;  // northing, m
    friend bool operator==(const StoredTrajectory&, const StoredTrajectory&) = default;
};

inline StoredTrajectory stored_trajectory(const std::string& site_id, const Trajectory& traj) {
    StoredTrajectory s{site_id, traj.video_id, traj.track_id, traj.class_label, {}, {}, {}};
    for (const auto& p : traj.points) {
        s.t.push_back(p.t);
        s.x.push_back(p.world.easting);
        s.y.push_back(p.world.northing);
    }
    return s;
}

inline nlohmann::json to_json(const StoredTrajectory& s) {
    return {{"site_id", s.site_id},
            {"video_id", s.video_id},
            {"track_id", s.track_id},
            {"class", s.class_label},
            {"point_count", s.t.size()},
            {"t_first", s.t.empty() ? 0.0 : s.t.front()},
            {"t_last", s.t.empty() ? 0.0 : s.t.back()},
            {"points_blob", {{"t", s.t}, {"x", s.x}, {"y", s.y}}}};
}

inline StoredTrajectory stored_trajectory_from_json(const nlohmann::json& j) {
    StoredTrajectory s;
    try {
        s.site_id = j.at("site_id").get<std::string>();
        s.video_id = j.at("video_id").get<std::string>();
        s.track_id = j.at("track_id").get<int>();
        s.class_label = j.at("class").get<std::string>();
        const auto& blob = j.at("points_blob");
        s.t = blob.at("t").get<std::vector<double>>();
        s.x = blob.at("x").get<std::vector<double>>();
        s.y = blob.at("y").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid trajectory row: ") + e.what());
    }
    if (s.t.size() != s.x.size() || s.t.size() != s.y.size())
        fail(ErrorCode::schema, "points_blob columns differ in length");
    if (j.contains("point_count") && j.at("point_count").get<std::size_t>() != s.t.size())
        fail(ErrorCode::schema, "point_count does not match points_blob");
    return s;
}

/// Recorded span of an ingested video; the denominator source for hourly
/// averages.
struct VideoRecord {
    std::string site_id;
    std::string video_id;
    std::string filename;
    double t_begin = 0.0;
    double t_end = 0.0;
    int tz_offset_s = 0;
    std::string homography_id;
    friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

inline nlohmann::json to_json(const VideoRecord& v) {
    return {{"site_id", v.site_id}, {"video_id", v.video_id}, {"filename", v.filename},
            {"t_begin", v.t_begin}, {"t_end", v.t_end},       {"tz_offset_s", v.tz_offset_s},
            {"homography_id", v.homography_id}};
}

inline VideoRecord video_record_from_json(const nlohmann::json& j) {
    try {
        return {j.at("site_id").get<std::string>(), j.at("video_id").get<std::string>(),
                j.value("filename", ""),             j.at("t_begin").get<double>(),
                j.at("t_end").get<double>(),         j.value("tz_offset_s", 0),
                j.value("homography_id", "")};
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema, std::string("invalid video row: ") + e.what());
    }
}

enum class Table { trajectories, events, sites, videos };

inline std::string_view to_string(Table t) {
    switch (t) {
        case Table::trajectories: return "trajectories";
        case Table::events: return "events";
        case Table::sites: return "sites";
        case Table::videos: return "videos";
    }
    return "events";
}

inline Table parse_table(std::string_view s) {
    if (s == "trajectories") return Table::trajectories;
    if (s == "events") return Table::events;
    if (s == "sites") return Table::sites;
    if (s == "videos") return Table::videos;
    fail(ErrorCode::not_found, "unknown table: " + std::string(s));
}

inline constexpr Table kTables[] = {Table::trajectories, Table::events, Table::sites, Table::videos};

enum class WriteMode { reject_conflicts, replace };

struct EventQuery {
    std::string site_id;
    double t_from = -std::numeric_limits<double>::infinity();
    double t_to = std::numeric_limits<double>::infinity();
    std::optional<std::set<Severity>> severities;
    std::optional<std::string> video_id;
};

struct EventQueryResult {
    std::vector<BrakingEvent> events;
    std::vector<std::string> warnings;
};

/// Append-only NDJSON store. Each table is a directory of numbered segment
/// files; every line is one log record:
///
///   {"op":"put","key":[...],"row":{...}}
///   {"op":"drop_video","site_id":"...","video_id":"..."}
///
/// Opening replays every segment in order into an in-memory index (last
/// write wins). A writer holds an exclusive flock on <root>/LOCK and starts
/// a fresh segment the first time it appends to a table, so earlier
/// segments are never modified. A final line without its newline, or one
/// that fails to parse, is a torn write and is skipped with a warning.
class Store {
public:
    enum class Access { read_only, read_write };

    explicit Store(std::filesystem::path root, Access access = Access::read_write)
        : root_(std::move(root)), access_(access) {
        std::error_code ec;
        if (access_ == Access::read_write) {
            std::filesystem::create_directories(root_, ec);
            if (ec) fail(ErrorCode::io, "cannot create store directory " + root_.string() + ": " + ec.message());
            lock_fd_ = ::open((root_ / "LOCK").c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
            if (lock_fd_ < 0) fail(ErrorCode::io, "cannot open store lock: " + std::string(std::strerror(errno)));
            if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
                ::close(lock_fd_);
                lock_fd_ = -1;
                fail(ErrorCode::conflict, "store " + root_.string() + " is locked by another writer");
            }
        } else if (!std::filesystem::is_directory(root_, ec)) {
            fail(ErrorCode::io, "store directory does not exist: " + root_.string());
        }
        for (Table t : kTables) replay(t);
    }

    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    ~Store() {
        for (auto& [t, f] : segments_)
            if (f) std::fclose(f);
        if (lock_fd_ >= 0) ::close(lock_fd_);
    }

    const std::filesystem::path& root() const noexcept { return root_; }
    std::vector<std::string> warnings() const {
        std::lock_guard lock(mu_);
        return warnings_;
    }

    // ------------------------------------------------------------ writes

    std::size_t put_trajectories(const std::vector<StoredTrajectory>& batch, WriteMode mode = WriteMode::reject_conflicts) {
        std::vector<std::pair<nlohmann::json, nlohmann::json>> rows;
        for (const auto& s : batch) {
            if (s.site_id.empty() || s.video_id.empty()) fail(ErrorCode::schema, "trajectory row needs site and video");
            rows.emplace_back(nlohmann::json::array({s.site_id, s.video_id, s.track_id}), to_json(s));
        }
        return put(Table::trajectories, rows, mode);
    }

    std::size_t put_events(const std::vector<BrakingEvent>& batch, WriteMode mode = WriteMode::reject_conflicts) {
        std::vector<std::pair<nlohmann::json, nlohmann::json>> rows;
        for (const auto& e : batch) {
            if (e.site_id.empty() || e.video_id.empty()) fail(ErrorCode::schema, "event row needs site and video");
            rows.emplace_back(event_key(e), to_json(e));
        }
        return put(Table::events, rows, mode);
    }

    std::size_t put_videos(const std::vector<VideoRecord>& batch, WriteMode mode = WriteMode::reject_conflicts) {
        std::vector<std::pair<nlohmann::json, nlohmann::json>> rows;
        for (const auto& v : batch) rows.emplace_back(nlohmann::json::array({v.site_id, v.video_id}), to_json(v));
        return put(Table::videos, rows, mode);
    }

    /// Site records are free-form JSON objects keyed by "site_id"; only
    /// plain values are accepted, never imagery (rasters live beside the
    /// store as files).
    void put_site(const nlohmann::json& site, WriteMode mode = WriteMode::replace) {
        if (!site.is_object() || !site.contains("site_id") || !site.at("site_id").is_string())
            fail(ErrorCode::schema, "site record needs a string site_id");
        put(Table::sites, {{nlohmann::json::array({site.at("site_id")}), site}}, mode);
    }

    /// Removes every trajectory, event and video row of one video.
    void drop_video(const std::string& site_id, const std::string& video_id) {
        std::lock_guard lock(mu_);
        require_writer();
        const nlohmann::json rec = {{"op", "drop_video"}, {"site_id", site_id}, {"video_id", video_id}};
        for (Table t : {Table::trajectories, Table::events, Table::videos}) {
            append(t, {rec.dump()});
            apply_drop(t, site_id, video_id);
        }
    }

    /// Replaces a video's rows unless the stored rows are already identical,
    /// in which case nothing is written. Returns true if anything changed.
    bool replace_video(const VideoRecord& video, const std::vector<StoredTrajectory>& trajectories,
                       const std::vector<BrakingEvent>& events) {
        {
            std::lock_guard lock(mu_);
            require_writer();
        }
        if (video_rows_equal(video, trajectories, events)) return false;
        drop_video(video.site_id, video.video_id);
        put_trajectories(trajectories);
        put_events(events);
        put_videos({video});
        return true;
    }

    // ------------------------------------------------------------ reads

    std::optional<nlohmann::json> site(const std::string& site_id) const {
        std::lock_guard lock(mu_);
        const auto& idx = index_.at(Table::sites);
        const auto it = idx.find(nlohmann::json::array({site_id}).dump());
        if (it == idx.end()) return std::nullopt;
        return it->second;
    }

    std::vector<nlohmann::json> sites() const { return rows(Table::sites); }

    EventQueryResult query_events(const EventQuery& q) const {
        if (!(q.t_from <= q.t_to)) fail(ErrorCode::validation, "t_from must not exceed t_to");
        EventQueryResult out;
        if (!site(q.site_id)) out.warnings.push_back("unknown site: " + q.site_id);
        std::lock_guard lock(mu_);
        for (const auto& [key, row] : index_.at(Table::events)) {
            if (row.value("site_id", "") != q.site_id) continue;
            BrakingEvent e = braking_event_from_json(row);
            if (!(e.t_start >= q.t_from && e.t_start < q.t_to)) continue;
            if (q.severities && !q.severities->contains(e.severity)) continue;
            if (q.video_id && e.video_id != *q.video_id) continue;
            out.events.push_back(std::move(e));
        }
        sort_events(out.events);
        return out;
    }

    std::vector<StoredTrajectory> query_trajectories(const std::string& site_id,
                                                     const std::optional<std::string>& video_id = std::nullopt) const {
        std::vector<StoredTrajectory> out;
        std::lock_guard lock(mu_);
        for (const auto& [key, row] : index_.at(Table::trajectories)) {
            if (row.value("site_id", "") != site_id) continue;
            if (video_id && row.value("video_id", "") != *video_id) continue;
            out.push_back(stored_trajectory_from_json(row));
        }
        sort_trajectories(out);
        return out;
    }

    std::vector<VideoRecord> query_videos(const std::string& site_id) const {
        std::vector<VideoRecord> out;
        std::lock_guard lock(mu_);
        for (const auto& [key, row] : index_.at(Table::videos))
            if (row.value("site_id", "") == site_id) out.push_back(video_record_from_json(row));
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.video_id < b.video_id; });
        return out;
    }

    std::size_t row_count(Table t) const {
        std::lock_guard lock(mu_);
        return index_.at(t).size();
    }

    // ------------------------------------------------------------ export

    /// Rows of a table in deterministic order, one compact JSON object per
    /// line, in the analytic-database sink schema.
    std::string export_ndjson(Table t) const {
        std::string out;
        for (const auto& row : rows(t)) out += row.dump() + "\n";
        return out;
    }

    std::size_t export_ndjson(Table t, const std::filesystem::path& path) const {
        const auto text = export_ndjson(t);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + path.string());
        out << text;
        if (!out) fail(ErrorCode::io, "short write to " + path.string());
        return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    }

    /// Loads rows previously produced by export_ndjson.
    std::size_t import_ndjson(Table t, std::istream& in, WriteMode mode = WriteMode::reject_conflicts) {
        std::string line;
        std::size_t lineno = 0;
        std::vector<nlohmann::json> parsed;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                parsed.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::parse_error& e) {
                fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": " + e.what(), {{"line", lineno}});
            }
        }
        switch (t) {
            case Table::events: {
                std::vector<BrakingEvent> batch;
                for (const auto& j : parsed) batch.push_back(braking_event_from_json(j));
                return put_events(batch, mode);
            }
            case Table::trajectories: {
                std::vector<StoredTrajectory> batch;
                for (const auto& j : parsed) batch.push_back(stored_trajectory_from_json(j));
                return put_trajectories(batch, mode);
            }
            case Table::videos: {
                std::vector<VideoRecord> batch;
                for (const auto& j : parsed) batch.push_back(video_record_from_json(j));
                return put_videos(batch, mode);
            }
            case Table::sites:
                for (const auto& j : parsed) put_site(j, mode);
                return parsed.size();
        }
        return 0;
    }

    static nlohmann::json event_key(const BrakingEvent& e) {
        return nlohmann::json::array({e.site_id, e.video_id, e.track_id, e.t_start});
    }

private:
    using Index = std::map<std::string, nlohmann::json>;

    static void sort_trajectories(std::vector<StoredTrajectory>& v) {
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
            return std::tie(a.site_id, a.video_id, a.track_id) < std::tie(b.site_id, b.video_id, b.track_id);
        });
    }

    std::vector<nlohmann::json> rows(Table t) const {
        std::vector<nlohmann::json> out;
        {
            std::lock_guard lock(mu_);
            for (const auto& [key, row] : index_.at(t)) out.push_back(row);
        }
        if (t == Table::events) {
            std::vector<BrakingEvent> evs;
            for (const auto& r : out) evs.push_back(braking_event_from_json(r));
            std::stable_sort(evs.begin(), evs.end(), [](const BrakingEvent& a, const BrakingEvent& b) {
                return std::tie(a.site_id, a.t_start, a.track_id, a.video_id) <
                       std::tie(b.site_id, b.t_start, b.track_id, b.video_id);
            });
            out.clear();
            for (const auto& e : evs) out.push_back(to_json(e));
        }
        // Other tables: the index key order (site, video, track) is already canonical.
        return out;
    }

    bool video_rows_equal(const VideoRecord& video, const std::vector<StoredTrajectory>& trajectories,
                          const std::vector<BrakingEvent>& events) const {
        const auto stored_videos = query_videos(video.site_id);
        const auto vit = std::find_if(stored_videos.begin(), stored_videos.end(),
                                      [&](const auto& v) { return v.video_id == video.video_id; });
        if (vit == stored_videos.end() || !(*vit == video)) return false;
        auto want_t = trajectories;
        sort_trajectories(want_t);
        if (query_trajectories(video.site_id, video.video_id) != want_t) return false;
        EventQuery q;
        q.site_id = video.site_id;
        q.video_id = video.video_id;
        auto want_e = events;
        sort_events(want_e);
        return query_events(q).events == want_e;
    }

    void require_writer() const {
        if (access_ != Access::read_write) fail(ErrorCode::precondition, "store opened read-only");
    }

    std::size_t put(Table t, const std::vector<std::pair<nlohmann::json, nlohmann::json>>& rows, WriteMode mode) {
        std::lock_guard lock(mu_);
        require_writer();
        auto& idx = index_[t];
        std::vector<std::string> conflicts;
        std::map<std::string, const nlohmann::json*> pending;
        for (const auto& [key, row] : rows) {
            const std::string k = key.dump();
            const auto it = idx.find(k);
            const nlohmann::json* prior = it != idx.end() ? &it->second : nullptr;
            if (const auto p = pending.find(k); p != pending.end()) prior = p->second;
            if (prior && *prior != row && mode == WriteMode::reject_conflicts) conflicts.push_back(k);
            pending[k] = &row;
        }
        if (!conflicts.empty())
            fail(ErrorCode::conflict, fmt::format("{} {} key(s) already stored with a different payload",
                                                  conflicts.size(), to_string(t)),
                 {{"table", to_string(t)}, {"keys", conflicts}});

        std::vector<std::string> lines;
        for (const auto& [key, row] : rows) {
            const std::string k = key.dump();
            const auto it = idx.find(k);
            if (it != idx.end() && it->second == row) continue;
            lines.push_back(nlohmann::json{{"op", "put"}, {"key", key}, {"row", row}}.dump());
            idx[k] = row;
        }
        append(t, lines);
        return rows.size();
    }

    void apply_drop(Table t, const std::string& site_id, const std::string& video_id) {
        auto& idx = index_[t];
        for (auto it = idx.begin(); it != idx.end();) {
            if (it->second.value("site_id", "") == site_id && it->second.value("video_id", "") == video_id)
                it = idx.erase(it);
            else
                ++it;
        }
    }

    std::filesystem::path table_dir(Table t) const { return root_ / std::string(to_string(t)); }

    static std::vector<std::filesystem::path> segment_files(const std::filesystem::path& dir) {
        std::vector<std::filesystem::path> out;
        std::error_code ec;
        if (!std::filesystem::is_directory(dir, ec)) return out;
        for (const auto& entry : std::filesystem::directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == ".ndjson") out.push_back(entry.path());
        std::sort(out.begin(), out.end());
        return out;
    }

    void replay(Table t) {
        auto& idx = index_[t];
        for (const auto& path : segment_files(table_dir(t))) {
            std::ifstream in(path, std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            const std::string text = ss.str();
            std::size_t pos = 0, lineno = 0;
            while (pos < text.size()) {
                const auto nl = text.find('\n', pos);
                const bool complete = nl != std::string::npos;
                const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
                pos = complete ? nl + 1 : text.size();
                ++lineno;
                const bool last = pos >= text.size();
                if (line.empty()) continue;
                nlohmann::json rec;
                try {
                    rec = nlohmann::json::parse(line);
                } catch (const nlohmann::json::parse_error& e) {
                    if (last) {
                        warnings_.push_back(fmt::format("{}:{}: ignoring truncated final record", path.string(), lineno));
                        break;
                    }
                    fail(ErrorCode::parse, fmt::format("{}:{}: corrupt store record", path.string(), lineno));
                }
                if (!complete) {
                    warnings_.push_back(fmt::format("{}:{}: ignoring final record without newline", path.string(), lineno));
                    break;
                }
                const std::string op = rec.value("op", "");
                if (op == "put")
                    idx[rec.at("key").dump()] = rec.at("row");
                else if (op == "drop_video")
                    apply_drop(t, rec.at("site_id").get<std::string>(), rec.at("video_id").get<std::string>());
                else
                    fail(ErrorCode::parse, fmt::format("{}:{}: unknown store op", path.string(), lineno));
            }
        }
    }

    void append(Table t, const std::vector<std::string>& lines) {
        if (lines.empty()) return;
        std::FILE*& f = segments_[t];
        if (!f) {
            const auto dir = table_dir(t);
            std::filesystem::create_directories(dir);
            const auto existing = segment_files(dir);
            int next = 1;
            if (!existing.empty()) next = std::stoi(existing.back().stem().string()) + 1;
            const auto path = dir / fmt::format("{:06d}.ndjson", next);
            f = std::fopen(path.c_str(), "ab");
            if (!f) fail(ErrorCode::io, "cannot open segment " + path.string());
        }
        for (const auto& line : lines) {
            if (std::fwrite(line.data(), 1, line.size(), f) != line.size() || std::fputc('\n', f) == EOF)
                fail(ErrorCode::io, "store write failed");
        }
        if (std::fflush(f) != 0 || ::fsync(::fileno(f)) != 0) fail(ErrorCode::io, "store flush failed");
    }

    std::filesystem::path root_;
    Access access_;
    int lock_fd_ = -1;
    mutable std::mutex mu_;
    std::map<Table, Index> index_;
    std::map<Table, std::FILE*> segments_;
    std::vector<std::string> warnings_;
};

}  // namespace trafficrect
