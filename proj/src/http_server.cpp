#include "percival/http_server.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <stdexcept>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

namespace percival::http {

bool iequals(const std::string& a, const std::string& b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

std::optional<std::string> find_header(const Headers& h, const std::string& name) {
    for (const auto& [k, v] : h)
        if (iequals(k, name)) return v;
    return std::nullopt;
}

std::string Request::path() const { return target.substr(0, target.find('?')); }

Response Response::text(int status, std::string body, std::string type) {
    Response r;
    r.status = status;
    r.headers.emplace_back("Content-Type", std::move(type));
    r.body = std::move(body);
    return r;
}

const char* reason_phrase(int status) {
    switch (status) {
        case 100: return "Continue";
        case 200: return "OK";
        case 204: return "No Content";
        case 301: return "Moved Permanently";
        case 302: return "Found";
        case 304: return "Not Modified";
        case 400: return "Bad Request";
        case 403: return "Forbidden";
        case 404: return "Not Found";
        case 405: return "Method Not Allowed";
        case 411: return "Length Required";
        case 413: return "Payload Too Large";
        case 415: return "Unsupported Media Type";
        case 422: return "Unprocessable Content";
        case 431: return "Request Header Fields Too Large";
        case 500: return "Internal Server Error";
        case 501: return "Not Implemented";
        case 502: return "Bad Gateway";
        case 503: return "Service Unavailable";
        case 504: return "Gateway Timeout";
        default: return "";
    }
}

bool write_all(int fd, const char* data, std::size_t len) {
    while (len > 0) {
        const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return false;
        data += n;
        len -= static_cast<std::size_t>(n);
    }
    return true;
}

std::string serialize(const Response& r, bool keep_alive) {
    std::string out = "HTTP/1.1 " + std::to_string(r.status) + " " + reason_phrase(r.status) + "\r\n";
    for (const auto& [k, v] : r.headers) {
        if (iequals(k, "Connection") || iequals(k, "Transfer-Encoding")) continue;
        if (iequals(k, "Content-Length") && !r.head) continue;
        out += k + ": " + v + "\r\n";
    }
    if (!r.head) out += "Content-Length: " + std::to_string(r.body.size()) + "\r\n";
    out += keep_alive ? "Connection: keep-alive\r\n" : "Connection: close\r\n";
    out += "\r\n";
    if (!r.head) out += r.body;
    return out;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

/// Buffered reads from a socket.
class Reader {
public:
    explicit Reader(int fd) : fd_(fd) {}

    // false on EOF or error before anything was read.
    bool fill() {
        char tmp[16384];
        for (;;) {
            const ssize_t n = ::recv(fd_, tmp, sizeof tmp, 0);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) return false;
            buf_.append(tmp, static_cast<std::size_t>(n));
            return true;
        }
    }

    enum class Status { Ok, Eof, TooLarge };

    Status read_head(std::string& head, std::size_t limit) {
        for (;;) {
            const auto end = buf_.find("\r\n\r\n");
            if (end != std::string::npos) {
                head = buf_.substr(0, end);
                buf_.erase(0, end + 4);
                return Status::Ok;
            }
            if (buf_.size() > limit) return Status::TooLarge;
            if (!fill()) return Status::Eof;
        }
    }

    bool read_exact(std::string& out, std::size_t n) {
        while (buf_.size() < n)
            if (!fill()) return false;
        out.append(buf_, 0, n);
        buf_.erase(0, n);
        return true;
    }

    bool read_line(std::string& line, std::size_t limit) {
        for (;;) {
            const auto end = buf_.find("\r\n");
            if (end != std::string::npos) {
                line = buf_.substr(0, end);
                buf_.erase(0, end + 2);
                return true;
            }
            if (buf_.size() > limit || !fill()) return false;
        }
    }

private:
    int fd_;
    std::string buf_;
};

struct ParseError {
    int status;
};

Request parse_head(const std::string& head) {
    Request req;
    std::size_t pos = head.find("\r\n");
    const std::string line = head.substr(0, pos);
    const auto s1 = line.find(' ');
    const auto s2 = line.rfind(' ');
    if (s1 == std::string::npos || s2 == s1) throw ParseError{400};
    req.method = line.substr(0, s1);
    req.target = line.substr(s1 + 1, s2 - s1 - 1);
    req.version = line.substr(s2 + 1);
    if (req.method.empty() || req.target.empty() || req.version.rfind("HTTP/1.", 0) != 0) throw ParseError{400};
    while (pos != std::string::npos) {
        const std::size_t start = pos + 2;
        pos = head.find("\r\n", start);
        const std::string h = head.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
        if (h.empty()) continue;
        const auto colon = h.find(':');
        if (colon == std::string::npos || colon == 0) throw ParseError{400};
        req.headers.emplace_back(h.substr(0, colon), trim(h.substr(colon + 1)));
    }
    return req;
}

void send_error(int fd, int status) {
    const std::string out = serialize(Response::text(status, std::string(reason_phrase(status)) + "\n"), false);
    write_all(fd, out.data(), out.size());
}

}  // namespace

Server::Server(Handler handler, ConnectHandler on_connect, ServerLimits limits)
    : handler_(std::move(handler)), on_connect_(std::move(on_connect)), limits_(limits) {}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res); rc != 0)
        throw std::runtime_error("cannot resolve " + host + ": " + gai_strerror(rc));
    int fd = -1;
    std::string error = "no address";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
        if (fd < 0) continue;
        int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 128) == 0) break;
        error = std::strerror(errno);
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw std::runtime_error("cannot listen on " + host + ":" + service + ": " + error);

    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                              : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    listen_fd_ = fd;
    return port_;
}

void Server::track(int fd, bool add) {
    std::lock_guard lock(mu_);
    if (add) {
        open_.push_back(fd);
    } else {
        open_.erase(std::remove(open_.begin(), open_.end(), fd), open_.end());
        idle_.notify_all();
    }
}

void Server::run() {
    if (listen_fd_ < 0) throw std::runtime_error("server not bound");
    while (!stopping_) {
        const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) {
            if (stopping_) break;
            if (errno == EINTR || errno == ECONNABORTED || errno == EMFILE || errno == ENFILE) continue;
            break;
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        timeval tv{limits_.idle_timeout_seconds, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
        {
            std::lock_guard lock(mu_);
            if (stopping_) {
                ::close(fd);
                break;
            }
            open_.push_back(fd);
        }
        std::thread([this, fd] {
            serve(fd);
            ::close(fd);
            track(fd, false);
        }).detach();
    }
}

void Server::stop() {
    if (stopping_.exchange(true)) {
        if (thread_.joinable()) thread_.join();
        return;
    }
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    if (thread_.joinable()) thread_.join();
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    std::unique_lock lock(mu_);
    for (int fd : open_) ::shutdown(fd, SHUT_RDWR);
    idle_.wait(lock, [&] { return open_.empty(); });
}

void Server::serve(int fd) {
    Reader in(fd);
    while (!stopping_) {
        std::string head;
        const auto st = in.read_head(head, limits_.max_header_bytes);
        if (st == Reader::Status::TooLarge) return send_error(fd, 431);
        if (st == Reader::Status::Eof) return;

        Request req;
        try {
            req = parse_head(head);
        } catch (const ParseError& e) {
            return send_error(fd, e.status);
        }

        if (req.method == "CONNECT") {
            if (on_connect_) {
                on_connect_(req, fd);
            } else {
                send_error(fd, 405);
            }
            return;
        }

        const auto te = req.header("Transfer-Encoding");
        const auto cl = req.header("Content-Length");
        const bool chunked = te && te->find("chunked") != std::string::npos;
        std::size_t length = 0;
        if (!chunked && cl) {
            try {
                std::size_t used = 0;
                const unsigned long long v = std::stoull(*cl, &used);
                if (used != cl->size()) throw std::invalid_argument("length");
                if (v > limits_.max_body_bytes) return send_error(fd, 413);
                length = static_cast<std::size_t>(v);
            } catch (const std::exception&) {
                return send_error(fd, 400);
            }
        }
        if ((chunked || length > 0) && req.header("Expect") && iequals(*req.header("Expect"), "100-continue")) {
            static const char kContinue[] = "HTTP/1.1 100 Continue\r\n\r\n";
            if (!write_all(fd, kContinue, sizeof kContinue - 1)) return;
        }
        if (chunked) {
            for (;;) {
                std::string line;
                if (!in.read_line(line, 1024)) return send_error(fd, 400);
                std::size_t size = 0;
                try {
                    size = std::stoul(line.substr(0, line.find(';')), nullptr, 16);
                } catch (const std::exception&) {
                    return send_error(fd, 400);
                }
                if (req.body.size() + size > limits_.max_body_bytes) return send_error(fd, 413);
                if (size == 0) {
                    // Trailers until the blank line.
                    do {
                        if (!in.read_line(line, limits_.max_header_bytes)) return;
                    } while (!line.empty());
                    break;
                }
                std::string crlf;
                if (!in.read_exact(req.body, size) || !in.read_exact(crlf, 2) || crlf != "\r\n")
                    return send_error(fd, 400);
            }
        } else if (length > 0 && !in.read_exact(req.body, length)) {
            return;
        }

        Response resp;
        try {
            resp = handler_(req);
        } catch (const std::exception& e) {
            resp = Response::text(500, std::string("internal error: ") + e.what() + "\n");
        }
        if (req.method == "HEAD") resp.head = true;

        const auto conn = req.header("Connection");
        bool keep_alive = req.version == "HTTP/1.1" ? !(conn && iequals(*conn, "close"))
                                                    : (conn && iequals(*conn, "keep-alive"));
        if (const auto rc = find_header(resp.headers, "Connection"); rc && iequals(*rc, "close")) keep_alive = false;
        const std::string out = serialize(resp, keep_alive && !stopping_);
        if (!write_all(fd, out.data(), out.size()) || !keep_alive) return;
    }
}

}  // namespace percival::http
