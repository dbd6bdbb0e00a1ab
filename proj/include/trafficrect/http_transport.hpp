#pragma once

#include <string>

#include <httplib.h>

// <resolv.h>, pulled in by httplib, defines _res as a macro, which clashes
// with Eigen parameter names.
#ifdef _res
#undef _res
#endif

#include "trafficrect/error.hpp"
#include "trafficrect/ortho.hpp"

namespace trafficrect {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // path and query, at least "/"
};

inline ParsedUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) fail(ErrorCode::validation, "URL has no scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

/// Blocking GET over cpp-httplib. Connection-level failures become
/// retryable transport errors; any HTTP status is returned as-is.
class HttplibTransport final : public HttpTransport {
public:
    explicit HttplibTransport(int timeout_s = 30) : timeout_s_(timeout_s) {}

    HttpResponse get(const std::string& url) override {
        const ParsedUrl u = split_url(url);
        httplib::Client client(u.origin);
        client.set_connection_timeout(timeout_s_);
        client.set_read_timeout(timeout_s_);
        client.set_follow_location(true);
        const auto res = client.Get(u.path);
        if (!res)
            fail(ErrorCode::transport, "request failed: " + httplib::to_string(res.error()),
                 {{"url", url}, {"error", httplib::to_string(res.error())}});
        return {res->status, res->body, res->get_header_value("Content-Type")};
    }

private:
    int timeout_s_;
};

}  // namespace trafficrect
