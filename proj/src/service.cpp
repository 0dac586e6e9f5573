#include "percival/service.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "httplib.h"
#include "percival/evalkit.hpp"
#include "percival/hash.hpp"
#include "percival/model_io.hpp"

namespace percival::service {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* to_string(ServiceMode m) {
    switch (m) {
        case ServiceMode::Api: return "api";
        case ServiceMode::Proxy: return "proxy";
        case ServiceMode::Both: return "both";
    }
    return "?";
}

// ---- config ---------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool bare_key(const std::string& k) {
    return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

// Parses a value starting at s[0]; returns it and the unparsed tail.
json toml_value(const std::string& s, std::string& rest) {
    if (s.empty()) throw std::runtime_error("missing value");
    if (s[0] == '"') {
        std::string out;
        for (std::size_t i = 1; i < s.size(); ++i) {
            const char c = s[i];
            if (c == '"') {
                rest = s.substr(i + 1);
                return out;
            }
            if (c != '\\') {
                out += c;
                continue;
            }
            if (++i == s.size()) break;
            switch (s[i]) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case 'r': out += '\r'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                default: throw std::runtime_error(std::string("unsupported escape \\") + s[i]);
            }
        }
        throw std::runtime_error("unterminated string");
    }
    if (s[0] == '\'') {
        const auto end = s.find('\'', 1);
        if (end == std::string::npos) throw std::runtime_error("unterminated string");
        rest = s.substr(end + 1);
        return s.substr(1, end - 1);
    }
    const auto end = s.find_first_of(" \t#");
    const std::string tok = s.substr(0, end);
    rest = end == std::string::npos ? "" : s.substr(end);
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char c : tok)
        if (c != '_') digits += c;
    std::size_t used = 0;
    try {
        if (digits.find_first_of(".eE") == std::string::npos) {
            const long long v = std::stoll(digits, &used, 10);
            if (used == digits.size()) return v;
        } else {
            const double v = std::stod(digits, &used);
            if (used == digits.size()) return v;
        }
    } catch (const std::exception&) {
    }
    throw std::runtime_error("unsupported value '" + tok + "'");
}

}  // namespace

json parse_toml(const std::string& text) {
    json out = json::object();
    std::string table;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        try {
            if (line[0] == '[') {
                const auto close = line.find(']');
                if (close == std::string::npos) throw std::runtime_error("bad table header");
                const std::string after = trim(line.substr(close + 1));
                if (!after.empty() && after[0] != '#') throw std::runtime_error("trailing characters");
                table = trim(line.substr(1, close - 1));
                if (!bare_key(table)) throw std::runtime_error("bad table name");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw std::runtime_error("expected key = value");
            const std::string key = trim(line.substr(0, eq));
            if (!bare_key(key)) throw std::runtime_error("bad key '" + key + "'");
            std::string rest;
            json v = toml_value(trim(line.substr(eq + 1)), rest);
            rest = trim(rest);
            if (!rest.empty() && rest[0] != '#') throw std::runtime_error("trailing characters");
            const std::string full = table.empty() ? key : table + "." + key;
            if (out.contains(full)) throw std::runtime_error("duplicate key '" + full + "'");
            out[full] = std::move(v);
        } catch (const std::runtime_error& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::pair<std::string, int> split_host_port(const std::string& s) {
    std::string host, port;
    if (!s.empty() && s[0] == '[') {
        const auto close = s.find(']');
        if (close == std::string::npos || close + 1 >= s.size() || s[close + 1] != ':')
            throw ConfigError("bad address '" + s + "'");
        host = s.substr(1, close - 1);
        port = s.substr(close + 2);
    } else {
        const auto colon = s.rfind(':');
        if (colon == std::string::npos) throw ConfigError("address '" + s + "' needs a port");
        host = s.substr(0, colon);
        port = s.substr(colon + 1);
    }
    int p = -1;
    try {
        std::size_t used = 0;
        p = std::stoi(port, &used);
        if (used != port.size()) p = -1;
    } catch (const std::exception&) {
    }
    if (p < 0 || p > 65535) throw ConfigError("bad port in '" + s + "'");
    return {host, p};
}

ServiceConfig parse_service_config(const std::string& toml, const fs::path& base_dir) {
    const json j = parse_toml(toml);
    ServiceConfig c;
    auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() && !base_dir.empty() ? base_dir / p : fs::path(p); };
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "listen") {
                c.listen = v.get<std::string>();
                split_host_port(c.listen);
            } else if (key == "model_path") {
                c.model_path = resolve(v.get<std::string>());
            } else if (key == "threshold") {
                c.threshold = v.get<float>();
                if (!(c.threshold >= 0.0f && c.threshold <= 1.0f)) throw ConfigError("threshold must lie in [0,1]");
            } else if (key == "blocking_policy") {
                std::string spec = v.get<std::string>();
                if (spec.rfind("replace=", 0) == 0) spec = "replace=" + resolve(spec.substr(8)).string();
                c.blocking_policy = BlockingPolicy::parse(spec);
            } else if (key == "memo_capacity") {
                c.memo_capacity = v.get<std::size_t>();
            } else if (key == "max_body_bytes") {
                c.max_body_bytes = v.get<std::size_t>();
            } else if (key == "mode") {
                const std::string m = v.get<std::string>();
                if (m == "api") c.mode = ServiceMode::Api;
                else if (m == "proxy") c.mode = ServiceMode::Proxy;
                else if (m == "both") c.mode = ServiceMode::Both;
                else throw ConfigError("mode must be api, proxy or both");
            } else if (key == "upstream_timeout_seconds") {
                c.upstream_timeout_seconds = v.get<int>();
            } else {
                throw ConfigError("unknown key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("wrong value type: ") + e.what());
    }
    if (c.model_path.empty()) throw ConfigError("model_path is required");
    return c;
}

ServiceConfig load_service_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_service_config(ss.str(), file.parent_path());
}

json to_json(const StatsSnapshot& s) {
    return {{"requests", s.requests},
            {"api_requests", s.api_requests},
            {"proxy_requests", s.proxy_requests},
            {"tunnels", s.tunnels},
            {"classifications", s.classifications},
            {"cache_hits", s.cache_hits},
            {"blocks", s.blocks},
            {"bypassed", s.bypassed},
            {"errors", s.errors},
            {"upstream_failures", s.upstream_failures},
            {"reloads", s.reloads},
            {"inference_p50_us", s.inference_p50_micros},
            {"inference_p95_us", s.inference_p95_micros},
            {"model_id", s.model_id}};
}

// ---- service --------------------------------------------------------------

struct Service::Model {
    Model(NetworkPtr net, float threshold, std::string id, std::size_t memo_capacity)
        : classifier(std::move(net), threshold), model_id(std::move(id)), memo(memo_capacity) {}
    Classifier classifier;
    std::string model_id;
    mutable VerdictMemo memo;
};

namespace {

constexpr std::size_t kSampleWindow = 4096;

std::string media_type(const std::optional<std::string>& ct) {
    if (!ct) return {};
    std::string m = trim(ct->substr(0, ct->find(';')));
    std::transform(m.begin(), m.end(), m.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return m;
}

json error_json(const std::string& msg) { return {{"error", msg}}; }

http::Response json_response(int status, const json& j) {
    return http::Response::text(status, j.dump() + "\n", "application/json");
}

bool is_hop_by_hop(const std::string& name) {
    static const char* hop[] = {"Connection", "Proxy-Connection", "Keep-Alive", "Proxy-Authenticate",
                                "Proxy-Authorization", "TE", "Trailer", "Transfer-Encoding", "Upgrade"};
    for (const char* h : hop)
        if (http::iequals(name, h)) return true;
    return false;
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)) { reload(config_.model_path); }

Service::~Service() { stop(); }

std::string Service::reload(const fs::path& path) {
    const fs::path p = path.empty() ? config_.model_path : path;
    const auto bytes = model_io::read_file(p);
    NetworkPtr net = model_io::load_model(bytes);
    auto m = std::make_shared<const Model>(std::move(net), config_.threshold, sha256_hex(bytes), config_.memo_capacity);
    std::lock_guard lock(model_mu_);
    const bool first = model_ == nullptr;
    model_ = std::move(m);
    if (!first) reloads_.fetch_add(1);
    return model_->model_id;
}

std::shared_ptr<const Service::Model> Service::current() const {
    std::lock_guard lock(model_mu_);
    return model_;
}

std::string Service::model_id() const { return current()->model_id; }

int Service::start() {
    auto [host, port] = split_host_port(config_.listen);
    http::ServerLimits limits;
    limits.max_body_bytes = config_.max_body_bytes;
    server_ = std::make_unique<http::Server>([this](const http::Request& r) { return handle(r); },
                                             [this](const http::Request& r, int fd) { tunnel(r, fd); }, limits);
    const int bound = server_->bind(host, port);
    server_->start();
    return bound;
}

void Service::stop() {
    if (server_) {
        server_->stop();
        server_.reset();
    }
}

void Service::record_inference(std::int64_t micros) {
    std::lock_guard lock(samples_mu_);
    if (samples_.size() < kSampleWindow) {
        samples_.push_back(static_cast<double>(micros));
    } else {
        samples_[next_sample_] = static_cast<double>(micros);
        next_sample_ = (next_sample_ + 1) % kSampleWindow;
    }
}

StatsSnapshot Service::stats() const {
    StatsSnapshot s;
    s.requests = requests_.load();
    s.api_requests = api_requests_.load();
    s.proxy_requests = proxy_requests_.load();
    s.tunnels = tunnels_.load();
    s.classifications = classifications_.load();
    s.cache_hits = cache_hits_.load();
    s.blocks = blocks_.load();
    s.bypassed = bypassed_.load();
    s.errors = errors_.load();
    s.upstream_failures = upstream_failures_.load();
    s.reloads = reloads_.load();
    std::vector<double> samples;
    {
        std::lock_guard lock(samples_mu_);
        samples = samples_;
    }
    const eval::Summary sum = eval::summarize(samples);
    s.inference_p50_micros = sum.median;
    s.inference_p95_micros = sum.p95;
    s.model_id = model_id();
    return s;
}

Service::Classified Service::classify(const Model& m, const Bitmap& bitmap, std::span<const std::uint8_t> bytes) {
    if (should_bypass(bitmap.width, bitmap.height)) {
        bypassed_.fetch_add(1);
        return {bypass_verdict(), false};
    }
    bool computed = false;
    VerdictMemo::Result r = m.memo.get_or_compute(content_hash(bytes), [&] {
        computed = true;
        return m.classifier.classify(bitmap);
    });
    if (computed) {
        classifications_.fetch_add(1);
        record_inference(r.verdict.inference_micros);
    } else {
        cache_hits_.fetch_add(1);
    }
    return {r.verdict, !computed};
}

http::Response Service::handle(const http::Request& req) {
    const bool absolute = req.target.rfind("http://", 0) == 0 || req.target.rfind("https://", 0) == 0;
    // Counted once handled, so /stats does not see itself.
    http::Response r = absolute ? proxy_route(req) : api_route(req);
    (absolute ? proxy_requests_ : api_requests_).fetch_add(1);
    requests_.fetch_add(1);
    return r;
}

http::Response Service::proxy_route(const http::Request& req) {
    if (config_.mode == ServiceMode::Api) return json_response(403, error_json("proxying is disabled"));
    return proxy(req);
}

http::Response Service::api_route(const http::Request& req) {
    if (config_.mode == ServiceMode::Proxy) return json_response(404, error_json("api is disabled"));
    const std::string path = req.path();
    if (path == "/classify") {
        if (req.method != "POST") return json_response(405, error_json("use POST"));
        return classify_endpoint(req);
    }
    if (path == "/stats") {
        if (req.method != "GET" && req.method != "HEAD") return json_response(405, error_json("use GET"));
        return json_response(200, to_json(stats()));
    }
    if (path == "/reload") {
        if (req.method != "POST") return json_response(405, error_json("use POST"));
        fs::path p;
        if (!req.body.empty()) {
            try {
                p = json::parse(req.body).value("model_path", "");
            } catch (const json::exception& e) {
                return json_response(400, error_json(std::string("bad reload body: ") + e.what()));
            }
        }
        try {
            const std::string id = reload(p);
            return json_response(200, {{"model_id", id}});
        } catch (const std::exception& e) {
            return json_response(422, error_json(std::string("model not loaded, keeping ") + model_id() + ": " + e.what()));
        }
    }
    return json_response(404, error_json("no such endpoint"));
}

http::Response Service::classify_endpoint(const http::Request& req) {
    if (req.body.size() > config_.max_body_bytes) return json_response(413, error_json("body too large"));
    const std::string ct = media_type(req.header("Content-Type"));
    std::optional<std::string_view> hint;
    if (!ct.empty() && ct != "application/octet-stream") {
        const auto declared = format_from_hint(ct);
        if (ct.rfind("image/", 0) != 0 || !declared || *declared == ImageFormat::Unknown)
            return json_response(415, error_json("unsupported content type " + ct));
        hint = ct;
    }
    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size());
    Bitmap bitmap;
    try {
        bitmap = decode_image(bytes, hint);
    } catch (const DecodeError& e) {
        const bool unsupported = e.kind() == DecodeError::Kind::UnsupportedFormat && !hint;
        return json_response(unsupported ? 415 : 422, error_json(e.what()));
    }
    const auto model = current();
    try {
        const Classified c = classify(*model, bitmap, bytes);
        return json_response(200, {{"is_ad", c.verdict.is_ad},
                                   {"p_ad", c.verdict.p_ad},
                                   {"bypassed", c.verdict.bypassed},
                                   {"inference_micros", c.cache_hit ? 0 : c.verdict.inference_micros},
                                   {"cache_hit", c.cache_hit},
                                   {"model_id", model->model_id}});
    } catch (const std::exception& e) {
        // Fail open: the caller sees a non-ad verdict.
        errors_.fetch_add(1);
        return json_response(200, {{"is_ad", false},
                                   {"p_ad", nullptr},
                                   {"bypassed", false},
                                   {"inference_micros", 0},
                                   {"cache_hit", false},
                                   {"model_id", model->model_id},
                                   {"error", e.what()}});
    }
}

http::Response Service::proxy(const http::Request& req) {
    if (req.target.rfind("https://", 0) == 0)
        return json_response(400, error_json("https must be tunnelled with CONNECT"));
    const auto path_begin = req.target.find_first_of("/?", 7);
    const std::string origin = req.target.substr(0, path_begin);
    std::string path = path_begin == std::string::npos ? "/" : req.target.substr(path_begin);
    if (path[0] == '?') path.insert(0, "/");
    if (origin.size() <= 7) return json_response(400, error_json("missing host"));

    httplib::Client cli(origin);
    if (!cli.is_valid()) return json_response(400, error_json("bad upstream " + origin));
    cli.set_decompress(false);
    cli.set_follow_location(false);
    cli.set_keep_alive(false);
    cli.set_connection_timeout(config_.upstream_timeout_seconds);
    cli.set_read_timeout(config_.upstream_timeout_seconds);
    cli.set_write_timeout(config_.upstream_timeout_seconds);

    httplib::Request up;
    up.method = req.method;
    up.path = path;
    for (const auto& [k, v] : req.headers) {
        if (is_hop_by_hop(k) || http::iequals(k, "Host") || http::iequals(k, "Content-Length")) continue;
        up.headers.emplace(k, v);
    }
    up.body = req.body;

    auto result = cli.send(up);
    if (!result) {
        upstream_failures_.fetch_add(1);
        return http::Response::text(502, "upstream failed: " + httplib::to_string(result.error()) + "\n");
    }
    const httplib::Response& ur = result.value();

    http::Response out;
    out.status = ur.status;
    for (const auto& [k, v] : ur.headers) {
        if (is_hop_by_hop(k)) continue;
        if (http::iequals(k, "Content-Length") && req.method != "HEAD") continue;
        out.headers.emplace_back(k, v);
    }
    out.body = ur.body;

    const std::string ct = media_type(ur.get_header_value("Content-Type"));
    const std::string encoding = media_type(ur.get_header_value("Content-Encoding"));
    if (req.method != "GET" || ur.status != 200 || ct.rfind("image/", 0) != 0 || (!encoding.empty() && encoding != "identity"))
        return out;

    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(ur.body.data()), ur.body.size());
    try {
        const Bitmap bitmap = decode_image(bytes, ct);
        const Classified c = classify(*current(), bitmap, bytes);
        if (!c.verdict.is_ad) return out;
        const auto png = encode_png(apply_block(bitmap, config_.blocking_policy));
        blocks_.fetch_add(1);
        std::erase_if(out.headers, [](const auto& h) {
            return http::iequals(h.first, "Content-Type") || http::iequals(h.first, "ETag") ||
                   http::iequals(h.first, "Content-MD5") || http::iequals(h.first, "Content-Range");
        });
        out.headers.emplace_back("Content-Type", "image/png");
        out.headers.emplace_back("X-Percival", "blocked");
        out.body.assign(png.begin(), png.end());
    } catch (const DecodeError& e) {
        // Formats we cannot decode pass untouched; broken images count as errors.
        if (e.kind() == DecodeError::Kind::Corrupt) errors_.fetch_add(1);
    } catch (const std::exception&) {
        errors_.fetch_add(1);
    }
    return out;
}

namespace {

int connect_to(const std::string& host, int port, int timeout_seconds) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) return -1;
    int fd = -1;
    for (addrinfo* ai = res; ai && fd < 0; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
        if (fd < 0) continue;
        timeval tv{timeout_seconds, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) != 0) {
            ::close(fd);
            fd = -1;
        }
    }
    ::freeaddrinfo(res);
    return fd;
}

}  // namespace

void Service::tunnel(const http::Request& req, int client_fd) {
    requests_.fetch_add(1);
    proxy_requests_.fetch_add(1);
    auto reply = [&](int status) {
        const std::string msg = http::serialize(http::Response::text(status, std::string(http::reason_phrase(status)) + "\n"), false);
        http::write_all(client_fd, msg.data(), msg.size());
    };
    if (config_.mode == ServiceMode::Api) return reply(403);
    std::pair<std::string, int> hp;
    try {
        hp = split_host_port(req.target);
    } catch (const ConfigError&) {
        return reply(400);
    }
    const int up = connect_to(hp.first, hp.second, config_.upstream_timeout_seconds);
    if (up < 0) {
        upstream_failures_.fetch_add(1);
        return reply(502);
    }
    tunnels_.fetch_add(1);
    static const char kOk[] = "HTTP/1.1 200 Connection Established\r\n\r\n";
    if (!http::write_all(client_fd, kOk, sizeof kOk - 1)) {
        ::close(up);
        return;
    }
    // The client socket carries a receive timeout; poll() makes it irrelevant.
    pollfd fds[2] = {{client_fd, POLLIN, 0}, {up, POLLIN, 0}};
    char buf[16384];
    bool open[2] = {true, true};
    while (open[0] || open[1]) {
        fds[0].events = open[0] ? POLLIN : 0;
        fds[1].events = open[1] ? POLLIN : 0;
        const int n = ::poll(fds, 2, 300 * 1000);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        bool failed = false;
        for (int i = 0; i < 2; ++i) {
            if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
            const ssize_t got = ::recv(fds[i].fd, buf, sizeof buf, 0);
            const int other = fds[1 - i].fd;
            if (got <= 0) {
                open[i] = false;
                ::shutdown(other, SHUT_WR);
                if (got < 0) failed = true;
                continue;
            }
            if (!http::write_all(other, buf, static_cast<std::size_t>(got))) failed = true;
        }
        if (failed) break;
    }
    ::close(up);
}

}  // namespace percival::service
