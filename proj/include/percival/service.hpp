#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "percival/http_server.hpp"
#include "percival/pipeline.hpp"

namespace percival::service {

enum class ServiceMode { Api, Proxy, Both };
const char* to_string(ServiceMode m);

struct ServiceConfig {
    std::string listen = "127.0.0.1:8080";  // host:port, [v6]:port
    std::filesystem::path model_path;
    float threshold = kDefaultThreshold;
    BlockingPolicy blocking_policy;
    std::size_t memo_capacity = kDefaultMemoCapacity;
    std::size_t max_body_bytes = 20 * 1024 * 1024;
    ServiceMode mode = ServiceMode::Both;
    int upstream_timeout_seconds = 30;
};

/// The TOML subset used by config files: bare keys, [tables] (flattened to
/// "table.key"), basic and literal strings, integers, floats, booleans and
/// comments. Throws ConfigError with the line number.
nlohmann::json parse_toml(const std::string& text);

/// Keys: listen, model_path, threshold, blocking_policy, memo_capacity,
/// max_body_bytes, mode, upstream_timeout_seconds. Relative paths resolve
/// against base_dir. Unknown keys are errors.
ServiceConfig parse_service_config(const std::string& toml, const std::filesystem::path& base_dir = {});
ServiceConfig load_service_config(const std::filesystem::path& file);

/// "host:port" split; throws ConfigError.
std::pair<std::string, int> split_host_port(const std::string& s);

struct StatsSnapshot {
    std::uint64_t requests = 0;
    std::uint64_t api_requests = 0;
    std::uint64_t proxy_requests = 0;
    std::uint64_t tunnels = 0;
    std::uint64_t classifications = 0;  // forward passes
    std::uint64_t cache_hits = 0;
    std::uint64_t blocks = 0;
    std::uint64_t bypassed = 0;
    std::uint64_t errors = 0;  // classification/decoding failures that failed open
    std::uint64_t upstream_failures = 0;
    std::uint64_t reloads = 0;
    double inference_p50_micros = 0;
    double inference_p95_micros = 0;
    std::string model_id;
};

nlohmann::json to_json(const StatsSnapshot& s);

/// Classification API plus filtering forward proxy. The model loads in the
/// constructor; a model that does not load is an exception.
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();

    /// Binds the configured address (port 0 picks one) and serves in the
    /// background. Returns the bound port.
    int start();
    void stop();

    http::Response handle(const http::Request& req);
    void tunnel(const http::Request& req, int client_fd);

    /// Loads path (or the configured model) and swaps it in; in-flight
    /// requests finish on the old model. Throws and keeps the old model on failure.
    std::string reload(const std::filesystem::path& path = {});

    StatsSnapshot stats() const;
    std::string model_id() const;
    const ServiceConfig& config() const { return config_; }

private:
    struct Model;
    struct Classified {
        Verdict verdict;
        bool cache_hit = false;
    };

    std::shared_ptr<const Model> current() const;
    Classified classify(const Model& m, const Bitmap& bitmap, std::span<const std::uint8_t> bytes);
    http::Response api_route(const http::Request& req);
    http::Response proxy_route(const http::Request& req);
    http::Response classify_endpoint(const http::Request& req);
    http::Response proxy(const http::Request& req);
    void record_inference(std::int64_t micros);

    ServiceConfig config_;
    mutable std::mutex model_mu_;
    std::shared_ptr<const Model> model_;
    std::unique_ptr<http::Server> server_;

    std::atomic<std::uint64_t> requests_{0}, api_requests_{0}, proxy_requests_{0}, tunnels_{0};
    std::atomic<std::uint64_t> classifications_{0}, cache_hits_{0}, blocks_{0}, bypassed_{0};
    std::atomic<std::uint64_t> errors_{0}, upstream_failures_{0}, reloads_{0};
    mutable std::mutex samples_mu_;
    std::vector<double> samples_;  // ring of recent inference times
    std::size_t next_sample_ = 0;
};

}  // namespace percival::service
