// cpp-httplib is kept to this translation unit; it is large.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "fcdst/backend.hpp"

namespace fcdst {

namespace {

class HttplibTransport final : public HttpTransport {
public:
    HttplibTransport(std::string origin, std::chrono::seconds timeout)
        : origin_(std::move(origin)), timeout_(timeout) {}

    HttpResponse post(const std::string& path, const std::string& body,
                      const std::map<std::string, std::string>& headers) override {
        httplib::Client client(origin_);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        httplib::Headers hdrs;
        std::string content_type = "application/json";
        for (const auto& [k, v] : headers) {
            if (k == "Content-Type") {
                content_type = v;
            } else {
                hdrs.emplace(k, v);
            }
        }
        auto res = client.Post(path, hdrs, body, content_type);
        if (!res) throw TransportError("request to " + origin_ + path + " failed: " + httplib::to_string(res.error()));
        return {res->status, res->body};
    }

private:
    std::string origin_;
    std::chrono::seconds timeout_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::chrono::seconds timeout) {
    // Accept a full base URL as well as a bare origin.
    const auto scheme = base_url.find("://");
    const auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
    const auto slash = base_url.find('/', host_start);
    return std::make_unique<HttplibTransport>(base_url.substr(0, slash), timeout);
}

}  // namespace fcdst
