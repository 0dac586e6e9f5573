#include "percival/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>

#include "httplib.h"
#include "json.hpp"
#include "percival/hash.hpp"

namespace percival::corpus {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* to_string(Label l) {
    switch (l) {
        case Label::Ad: return "ad";
        case Label::NonAd: return "non-ad";
        case Label::Unlabeled: return "unlabeled";
    }
    return "?";
}

const char* to_string(LabelSource s) {
    switch (s) {
        case LabelSource::None: return "none";
        case LabelSource::Human: return "human";
        case LabelSource::Rules: return "rules";
        case LabelSource::Model: return "model";
    }
    return "?";
}

Label parse_label(const std::string& s) {
    if (s == "ad") return Label::Ad;
    if (s == "non-ad" || s == "nonad" || s == "non_ad") return Label::NonAd;
    if (s == "unlabeled" || s.empty()) return Label::Unlabeled;
    throw std::invalid_argument("unknown label '" + s + "'");
}

namespace {

LabelSource parse_source(const std::string& s) {
    if (s == "human") return LabelSource::Human;
    if (s == "rules") return LabelSource::Rules;
    if (s == "model") return LabelSource::Model;
    return LabelSource::None;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json record_to_json(const CorpusRecord& r) {
    json origins = json::array();
    for (const auto& o : r.origins)
        origins.push_back({{"source", o.source}, {"source_page", o.source_page}, {"document_domain", o.document_domain}});
    return {{"sha256", r.sha256},
            {"stored_path", r.stored_path},
            {"width", r.width},
            {"height", r.height},
            {"label", to_string(r.label)},
            {"label_source", to_string(r.label_source)},
            {"origins", std::move(origins)}};
}

CorpusRecord record_from_json(const json& j) {
    CorpusRecord r;
    r.sha256 = j.at("sha256").get<std::string>();
    r.stored_path = j.value("stored_path", "objects/" + r.sha256);
    r.width = j.value("width", 0u);
    r.height = j.value("height", 0u);
    r.label = parse_label(j.value("label", "unlabeled"));
    r.label_source = parse_source(j.value("label_source", "none"));
    if (j.contains("origins")) {
        for (const auto& o : j["origins"])
            r.origins.push_back({o.value("source", ""), o.value("source_page", ""), o.value("document_domain", "")});
    }
    return r;
}

std::string host_of(const std::string& url) {
    const auto s = url.find("://");
    if (s == std::string::npos) return {};
    const auto end = url.find_first_of("/?#", s + 3);
    return url.substr(s + 3, end == std::string::npos ? std::string::npos : end - s - 3);
}

/// Counting semaphore per host.
class HostGate {
public:
    explicit HostGate(unsigned limit) : limit_(std::max(1u, limit)) {}
    void acquire(const std::string& host) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return active_[host] < limit_; });
        ++active_[host];
    }
    void release(const std::string& host) {
        {
            std::lock_guard lock(mu_);
            --active_[host];
        }
        cv_.notify_all();
    }

private:
    unsigned limit_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::unordered_map<std::string, unsigned> active_;
};

/// A human label wins over anything; between two human labels the first stays.
void merge_label(CorpusRecord& into, Label label, LabelSource source, const std::string& what,
                 std::vector<EntryError>& conflicts) {
    if (label == Label::Unlabeled) return;
    if (into.label_source == LabelSource::Human) {
        if (source == LabelSource::Human && label != into.label) {
            conflicts.push_back({what, std::string("human label ") + to_string(label) + " conflicts with existing " +
                                           to_string(into.label) + "; kept existing"});
        }
        return;
    }
    if (source == LabelSource::Human || into.label == Label::Unlabeled) {
        into.label = label;
        into.label_source = source;
    }
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open manifest " + file.string());
    const fs::path base = file.parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = file.string() + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
        ManifestEntry e;
        if (j.contains("url")) e.url = j["url"].get<std::string>();
        if (j.contains("path")) {
            fs::path p = j["path"].get<std::string>();
            e.path = p.is_relative() ? base / p : p;
        }
        if (e.url.has_value() == e.path.has_value()) throw std::runtime_error(where + ": need exactly one of url, path");
        if (j.contains("label") && !j["label"].is_null()) {
            const Label l = parse_label(j["label"].get<std::string>());
            if (l != Label::Unlabeled) e.label = l;
        }
        e.source_page = j.value("source_page", "");
        e.document_domain = j.value("document_domain", "");
        out.push_back(std::move(e));
    }
    return out;
}

Corpus Corpus::open(const fs::path& root) {
    Corpus c;
    c.root_ = root;
    fs::create_directories(root / "objects");
    std::ifstream in(root / "index.jsonl");
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        c.records_.push_back(record_from_json(json::parse(line)));
    }
    return c;
}

void Corpus::save() const {
    const fs::path tmp = root_ / "index.jsonl.tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        for (const auto& r : records_) out << record_to_json(r).dump() << '\n';
        if (!out) throw std::runtime_error("failed writing " + tmp.string());
    }
    fs::rename(tmp, root_ / "index.jsonl");
}

std::string Corpus::store_object(std::span<const std::uint8_t> bytes) const {
    const std::string sha = sha256_hex(bytes);
    const fs::path dest = root_ / "objects" / sha;
    if (!fs::exists(dest)) {
        const fs::path tmp = dest.string() + ".part";
        {
            std::ofstream out(tmp, std::ios::binary);
            out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            if (!out) throw std::runtime_error("failed writing " + tmp.string());
        }
        fs::rename(tmp, dest);
    }
    return sha;
}

std::vector<std::uint8_t> Corpus::read_object(const CorpusRecord& r) const { return read_bytes(object_path(r)); }

const CorpusRecord* Corpus::find(const std::string& sha256) const {
    for (const auto& r : records_)
        if (r.sha256 == sha256) return &r;
    return nullptr;
}

FetchResult http_get(const std::string& url, const IngestOptions& opt) {
    FetchResult res;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        res.error = "not an absolute url";
        return res;
    }
    const auto path_begin = url.find_first_of("/?#", scheme_end + 3);
    const std::string origin = url.substr(0, path_begin);
    std::string path = path_begin == std::string::npos ? "/" : url.substr(path_begin);
    if (const auto hash = path.find('#'); hash != std::string::npos) path.erase(hash);
    if (path.empty() || path[0] == '?') path.insert(0, "/");

    try {
        httplib::Client cli(origin);
        if (!cli.is_valid()) {
            res.error = "unsupported url " + url;
            return res;
        }
        cli.set_follow_location(true);
        cli.set_connection_timeout(opt.timeout);
        cli.set_read_timeout(opt.timeout);
        cli.set_write_timeout(opt.timeout);
        const auto deadline = std::chrono::steady_clock::now() + opt.timeout;
        bool timed_out = false;
        httplib::Headers headers{{"User-Agent", opt.user_agent}};
        auto r = cli.Get(path, headers, [&](const char* data, std::size_t len) {
            if (std::chrono::steady_clock::now() > deadline) {
                timed_out = true;
                return false;
            }
            res.body.insert(res.body.end(), data, data + len);
            return true;
        });
        if (timed_out) {
            res.error = "timed out";
        } else if (!r) {
            res.error = httplib::to_string(r.error());
        } else if (r->status != 200) {
            res.error = "http status " + std::to_string(r->status);
        } else {
            res.ok = true;
        }
    } catch (const std::exception& e) {
        res.error = e.what();
    }
    if (!res.ok) res.body.clear();
    return res;
}

IngestReport ingest(Corpus& corpus, const std::vector<ManifestEntry>& entries, const IngestOptions& opt) {
    IngestReport report;
    report.entries = entries.size();
    std::unordered_map<std::string, std::size_t> by_sha;
    for (std::size_t i = 0; i < corpus.records().size(); ++i) by_sha.emplace(corpus.records()[i].sha256, i);

    HostGate gate(opt.per_host_limit);
    constexpr std::size_t kChunk = 256;
    for (std::size_t base = 0; base < entries.size(); base += kChunk) {
        const std::size_t n = std::min(kChunk, entries.size() - base);
        std::vector<FetchResult> got(n);

        // Acquisition runs concurrently; the index is only touched below.
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t k = next.fetch_add(1); k < n; k = next.fetch_add(1)) {
                const ManifestEntry& e = entries[base + k];
                if (e.path) {
                    try {
                        got[k].body = read_bytes(*e.path);
                        got[k].ok = true;
                    } catch (const std::exception& ex) {
                        got[k].error = ex.what();
                    }
                } else {
                    const std::string host = host_of(*e.url);
                    gate.acquire(host);
                    got[k] = http_get(*e.url, opt);
                    gate.release(host);
                }
            }
        };
        const unsigned threads = std::max(1u, std::min<unsigned>(opt.fetch_concurrency, static_cast<unsigned>(n)));
        std::vector<std::thread> pool;
        for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();

        for (std::size_t k = 0; k < n; ++k) {
            const ManifestEntry& e = entries[base + k];
            if (!got[k].ok) {
                report.fetch_failures.push_back({e.source(), got[k].error});
                continue;
            }
            Bitmap bmp;
            try {
                bmp = decode_image(got[k].body);
            } catch (const std::exception& ex) {
                report.decode_failures.push_back({e.source(), ex.what()});
                continue;
            }
            const std::string sha = corpus.store_object(got[k].body);
            const Origin origin{e.source(), e.source_page, e.document_domain};
            auto it = by_sha.find(sha);
            if (opt.merge_duplicates && it != by_sha.end()) {
                CorpusRecord& r = corpus.records()[it->second];
                if (std::find(r.origins.begin(), r.origins.end(), origin) == r.origins.end()) r.origins.push_back(origin);
                if (e.label) merge_label(r, *e.label, LabelSource::Human, e.source(), report.label_conflicts);
                ++report.merged;
                continue;
            }
            CorpusRecord r;
            r.sha256 = sha;
            r.stored_path = "objects/" + sha;
            r.width = bmp.width;
            r.height = bmp.height;
            r.origins.push_back(origin);
            if (e.label) {
                r.label = *e.label;
                r.label_source = LabelSource::Human;
            }
            by_sha.emplace(sha, corpus.records().size());
            corpus.records().push_back(std::move(r));
            ++report.added;
        }
    }
    return report;
}

std::uint64_t difference_hash(const Bitmap& b) {
    const Bitmap small = resize_bilinear(b, 9, 8);
    auto luma = [&](std::uint32_t x, std::uint32_t y) {
        const std::uint8_t* p = small.pixel(x, y);
        return 299 * p[0] + 587 * p[1] + 114 * p[2];
    };
    std::uint64_t h = 0;
    for (std::uint32_t y = 0; y < 8; ++y)
        for (std::uint32_t x = 0; x < 8; ++x) h = (h << 1) | (luma(x, y) < luma(x + 1, y) ? 1u : 0u);
    return h;
}

DedupeReport dedupe(Corpus& corpus, bool find_near_duplicates, unsigned near_threshold) {
    DedupeReport report;
    std::vector<CorpusRecord> kept;
    std::unordered_map<std::string, std::size_t> index;
    for (auto& r : corpus.records()) {
        auto it = index.find(r.sha256);
        if (it == index.end()) {
            index.emplace(r.sha256, kept.size());
            kept.push_back(std::move(r));
            continue;
        }
        CorpusRecord& into = kept[it->second];
        for (auto& o : r.origins)
            if (std::find(into.origins.begin(), into.origins.end(), o) == into.origins.end()) into.origins.push_back(o);
        merge_label(into, r.label, r.label_source, r.sha256, report.label_conflicts);
        auto m = std::find_if(report.merges.begin(), report.merges.end(),
                              [&](const DedupeReport::Merge& x) { return x.sha256 == r.sha256; });
        if (m == report.merges.end()) {
            report.merges.push_back({r.sha256, 1});
        } else {
            ++m->removed_records;
        }
        ++report.merged_records;
    }
    corpus.records() = std::move(kept);

    if (find_near_duplicates) {
        std::vector<std::pair<std::uint64_t, std::string>> hashes;
        for (const auto& r : corpus.records()) {
            try {
                hashes.emplace_back(difference_hash(decode_image(corpus.read_object(r))), r.sha256);
            } catch (const std::exception&) {
            }
        }
        for (std::size_t i = 0; i < hashes.size(); ++i)
            for (std::size_t j = i + 1; j < hashes.size(); ++j)
                if (static_cast<unsigned>(__builtin_popcountll(hashes[i].first ^ hashes[j].first)) <= near_threshold)
                    report.near_duplicates.emplace_back(hashes[i].second, hashes[j].second);
    }
    return report;
}

namespace {

bool may_label(const CorpusRecord& r, bool relabel, LabelReport& report) {
    if (r.label_source == LabelSource::Human) {
        ++report.kept_human;
        return false;
    }
    if (r.label != Label::Unlabeled && !relabel) {
        ++report.kept_existing;
        return false;
    }
    return true;
}

void apply_label(CorpusRecord& r, bool ad, LabelSource source, LabelReport& report) {
    r.label = ad ? Label::Ad : Label::NonAd;
    r.label_source = source;
    ++(ad ? report.labeled_ad : report.labeled_non_ad);
}

}  // namespace

LabelReport auto_label(Corpus& corpus, const filter::RuleSet& rules, bool relabel) {
    LabelReport report;
    for (auto& r : corpus.records()) {
        if (!may_label(r, relabel, report)) continue;
        bool any_url = false;
        bool ad = false;
        for (const auto& o : r.origins) {
            if (o.source.find("://") == std::string::npos) continue;
            try {
                ad = ad || rules.match({o.source, o.document_domain, filter::ResourceType::Image}).blocked;
                any_url = true;
            } catch (const std::exception& e) {
                report.errors.push_back({o.source, e.what()});
            }
        }
        if (!any_url) {
            ++report.no_url;
            continue;
        }
        apply_label(r, ad, LabelSource::Rules, report);
    }
    return report;
}

LabelReport auto_label(Corpus& corpus, const Classifier& model, bool relabel) {
    LabelReport report;
    for (auto& r : corpus.records()) {
        if (!may_label(r, relabel, report)) continue;
        try {
            const Verdict v = model.classify(decode_image(corpus.read_object(r)));
            if (v.bypassed) {
                ++report.bypassed;
                continue;
            }
            apply_label(r, v.is_ad, LabelSource::Model, report);
        } catch (const std::exception& e) {
            report.errors.push_back({r.stored_path, e.what()});
        }
    }
    return report;
}

Split balance_and_split(const Corpus& corpus, std::uint64_t seed, double test_fraction) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test fraction must lie in [0,1)");
    std::vector<SplitRow> ads, non_ads;
    for (const auto& r : corpus.records()) {
        if (r.label == Label::Ad) ads.push_back({r.sha256, r.stored_path, r.label});
        if (r.label == Label::NonAd) non_ads.push_back({r.sha256, r.stored_path, r.label});
    }
    if (ads.empty() || non_ads.empty()) {
        throw std::invalid_argument("cannot balance: " + std::to_string(ads.size()) + " ads, " +
                                    std::to_string(non_ads.size()) + " non-ads");
    }
    Split split;
    split.ads_available = ads.size();
    split.non_ads_available = non_ads.size();

    std::mt19937_64 rng(seed);
    seeded_shuffle(ads, rng);
    seeded_shuffle(non_ads, rng);
    const std::size_t keep = std::min(ads.size(), non_ads.size());
    ads.resize(keep);
    non_ads.resize(keep);

    const auto n_test = static_cast<std::size_t>(static_cast<double>(keep) * test_fraction + 0.5);
    for (auto* cls : {&ads, &non_ads}) {
        for (std::size_t i = 0; i < cls->size(); ++i) (i < n_test ? split.test : split.train).push_back((*cls)[i]);
    }
    return split;
}

void write_split(const Corpus& corpus, const Split& split, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    auto write = [&](const std::vector<SplitRow>& rows, const char* name) {
        std::ofstream out(out_dir / name, std::ios::trunc);
        for (const auto& r : rows) {
            out << json{{"path", fs::absolute(corpus.root() / r.path).string()},
                        {"sha256", r.sha256},
                        {"label", to_string(r.label)}}
                       .dump()
                << '\n';
        }
        if (!out) throw std::runtime_error("failed writing " + (out_dir / name).string());
    };
    write(split.train, "train.jsonl");
    write(split.test, "test.jsonl");
}

}  // namespace percival::corpus
