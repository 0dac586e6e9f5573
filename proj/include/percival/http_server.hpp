#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace percival::http {

using Headers = std::vector<std::pair<std::string, std::string>>;

/// Case-insensitive lookup of the first header with this name.
std::optional<std::string> find_header(const Headers& h, const std::string& name);
bool iequals(const std::string& a, const std::string& b);

struct Request {
    std::string method;
    std::string target;  // origin-form "/x?y", absolute-form "http://h/x", or "host:port"
    std::string version;
    Headers headers;
    std::string body;

    std::optional<std::string> header(const std::string& name) const { return find_header(headers, name); }
    /// Target without its query string.
    std::string path() const;
};

struct Response {
    int status = 200;
    Headers headers;
    std::string body;
    /// For HEAD: keep any Content-Length in headers and send no body.
    bool head = false;

    static Response text(int status, std::string body, std::string type = "text/plain; charset=utf-8");
};

const char* reason_phrase(int status);

struct ServerLimits {
    std::size_t max_header_bytes = 64 * 1024;
    std::size_t max_body_bytes = 20 * 1024 * 1024;
    int idle_timeout_seconds = 30;
};

/// Minimal threaded HTTP/1.1 server: keep-alive, Content-Length and chunked
/// request bodies, and raw socket hand-off for CONNECT.
class Server {
public:
    using Handler = std::function<Response(const Request&)>;
    /// Owns client_fd for the rest of the connection; must not close it.
    using ConnectHandler = std::function<void(const Request&, int client_fd)>;

    Server(Handler handler, ConnectHandler on_connect, ServerLimits limits = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and listens; port 0 picks a free port. Returns the bound port.
    /// Throws std::runtime_error.
    int bind(const std::string& host, int port);
    /// Accept loop; returns after stop().
    void run();
    void start() {
        thread_ = std::thread([this] { run(); });
    }
    /// Stops accepting, shuts down open connections and waits for them.
    void stop();
    int port() const noexcept { return port_; }

private:
    void serve(int fd);
    void track(int fd, bool add);

    Handler handler_;
    ConnectHandler on_connect_;
    ServerLimits limits_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread thread_;
    std::mutex mu_;
    std::condition_variable idle_;
    std::vector<int> open_;
};

/// Writes all bytes; false on error.
bool write_all(int fd, const char* data, std::size_t len);
/// Serialises status line, headers (Content-Length set from the body) and body.
std::string serialize(const Response& r, bool keep_alive);

}  // namespace percival::http
