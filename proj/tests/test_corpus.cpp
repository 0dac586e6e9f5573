#include "doctest.h"

#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "httplib.h"
#include "json.hpp"
#include "percival/corpus.hpp"
#include "percival/hash.hpp"
#include "percival/synth.hpp"

using namespace percival;
using namespace percival::corpus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / ("percival_corpus_" + std::to_string(::getpid()) + "_" + name);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Distinct PNG per seed: a 16x16 noise tile.
std::vector<std::uint8_t> noise_png(std::uint64_t seed, std::uint32_t side = 16) {
    std::mt19937_64 rng(seed);
    Bitmap b = Bitmap::filled(side, side, 0, 0, 0);
    for (auto& v : b.pixels) v = static_cast<std::uint8_t>(rng());
    for (std::size_t i = 3; i < b.pixels.size(); i += 4) b.pixels[i] = 255;
    return encode_png(b);
}

ManifestEntry local(const fs::path& p, std::optional<Label> label = {}) {
    ManifestEntry e;
    e.path = p;
    e.label = label;
    return e;
}

ManifestEntry remote(const std::string& url, const std::string& doc = "", std::optional<Label> label = {}) {
    ManifestEntry e;
    e.url = url;
    e.document_domain = doc;
    e.label = label;
    return e;
}

// Adds one record per (bytes, url) pair without touching the network.
void add_record(Corpus& c, const std::vector<std::uint8_t>& bytes, const std::string& source,
                Label label = Label::Unlabeled, LabelSource ls = LabelSource::None, std::uint32_t side = 16) {
    CorpusRecord r;
    r.sha256 = c.store_object(bytes);
    r.stored_path = "objects/" + r.sha256;
    r.width = r.height = side;
    r.label = label;
    r.label_source = ls;
    r.origins.push_back({source, "", ""});
    c.records().push_back(r);
}

}  // namespace

TEST_CASE("three local images give three records") {
    TempDir t("three");
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 3; ++i) {
        write_file(t.path / ("img" + std::to_string(i) + ".png"), noise_png(static_cast<std::uint64_t>(i)));
        entries.push_back(local(t.path / ("img" + std::to_string(i) + ".png")));
    }
    Corpus c = Corpus::open(t.path / "corpus");
    IngestReport r = ingest(c, entries);
    CHECK(r.added == 3);
    REQUIRE(c.records().size() == 3);
    for (const auto& rec : c.records()) {
        CHECK(fs::exists(c.object_path(rec)));
        CHECK(rec.sha256 == sha256_hex(c.read_object(rec)));
        CHECK(rec.width == 16);
        CHECK(rec.label == Label::Unlabeled);
    }
    c.save();
    Corpus again = Corpus::open(t.path / "corpus");
    CHECK(again.records().size() == 3);
    CHECK(again.records()[1].origins == c.records()[1].origins);
}

TEST_CASE("a corrupt image is reported and skipped") {
    TempDir t("corrupt");
    write_file(t.path / "a.png", noise_png(1));
    write_file(t.path / "b.png", noise_png(2));
    auto bad = noise_png(3);
    bad.resize(bad.size() / 2);
    write_file(t.path / "c.png", bad);
    Corpus c = Corpus::open(t.path / "corpus");
    IngestReport r = ingest(c, {local(t.path / "a.png"), local(t.path / "b.png"), local(t.path / "c.png"),
                                local(t.path / "missing.png")});
    CHECK(c.records().size() == 2);
    REQUIRE(r.decode_failures.size() == 1);
    CHECK(r.decode_failures[0].source == (t.path / "c.png").string());
    CHECK(r.fetch_failures.size() == 1);
}

TEST_CASE("identical bytes from two sources share one record") {
    TempDir t("dup");
    write_file(t.path / "a.png", noise_png(7));
    write_file(t.path / "b.png", noise_png(7));
    Corpus c = Corpus::open(t.path / "corpus");
    IngestReport r = ingest(c, {local(t.path / "a.png"), local(t.path / "b.png")});
    REQUIRE(c.records().size() == 1);
    CHECK(r.added == 1);
    CHECK(r.merged == 1);
    CHECK(c.records()[0].origins.size() == 2);
    std::size_t objects = 0;
    for ([[maybe_unused]] const auto& f : fs::directory_iterator(t.path / "corpus" / "objects")) ++objects;
    CHECK(objects == 1);
}

TEST_CASE("manifest parsing") {
    TempDir t("manifest");
    {
        std::ofstream m(t.path / "m.jsonl");
        m << R"({"path": "x.png", "label": "ad"})" << "\n\n"
          << R"({"url": "http://a.com/1.png", "document_domain": "news.com", "source_page": "http://news.com/"})" << "\n";
    }
    auto entries = load_manifest(t.path / "m.jsonl");
    REQUIRE(entries.size() == 2);
    CHECK(*entries[0].path == t.path / "x.png");
    CHECK(*entries[0].label == Label::Ad);
    CHECK(entries[1].document_domain == "news.com");
    CHECK_FALSE(entries[1].label.has_value());

    std::ofstream(t.path / "bad.jsonl") << R"({"url": "http://a", "path": "b"})" << "\n";
    CHECK_THROWS(load_manifest(t.path / "bad.jsonl"));
    std::ofstream(t.path / "bad2.jsonl") << "{nope\n";
    CHECK_THROWS(load_manifest(t.path / "bad2.jsonl"));
}

TEST_CASE("dedupe removes exactly the planted duplicates") {
    TempDir t("dedupe");
    Corpus c = Corpus::open(t.path);
    std::mt19937_64 rng(99);
    const std::size_t unique = 900, planted = 100;
    std::vector<std::vector<std::uint8_t>> images;
    for (std::size_t i = 0; i < unique; ++i) images.push_back(noise_png(1000 + i, 8));
    for (std::size_t i = 0; i < unique; ++i) add_record(c, images[i], "u" + std::to_string(i));
    std::set<std::size_t> copied;
    for (std::size_t i = 0; i < planted; ++i) {
        const std::size_t src = rng() % unique;
        copied.insert(src);
        add_record(c, images[src], "d" + std::to_string(i));
    }
    std::shuffle(c.records().begin(), c.records().end(), rng);

    DedupeReport r = dedupe(c);
    CHECK(r.merged_records == planted);
    CHECK(r.merges.size() == copied.size());
    CHECK(c.records().size() == unique);
    std::size_t origins = 0;
    std::set<std::string> shas;
    for (const auto& rec : c.records()) {
        origins += rec.origins.size();
        shas.insert(rec.sha256);
    }
    CHECK(origins == unique + planted);
    CHECK(shas.size() == unique);

    DedupeReport second = dedupe(c);
    CHECK(second.merged_records == 0);
    CHECK(c.records().size() == unique);
}

TEST_CASE("ingest without merging then dedupe gives the same corpus") {
    TempDir t("nomerge");
    for (int i = 0; i < 4; ++i) write_file(t.path / ("f" + std::to_string(i)), noise_png(static_cast<std::uint64_t>(i % 2)));
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 4; ++i) entries.push_back(local(t.path / ("f" + std::to_string(i))));
    IngestOptions opt;
    opt.merge_duplicates = false;
    Corpus c = Corpus::open(t.path / "c");
    ingest(c, entries, opt);
    CHECK(c.records().size() == 4);
    DedupeReport r = dedupe(c);
    CHECK(r.merged_records == 2);
    REQUIRE(c.records().size() == 2);
    CHECK(c.records()[0].origins.size() == 2);
}

TEST_CASE("human labels survive merging and automatic labelling") {
    TempDir t("human");
    write_file(t.path / "a.png", noise_png(5));
    Corpus c = Corpus::open(t.path / "c");
    IngestReport r = ingest(c, {local(t.path / "a.png", Label::NonAd), local(t.path / "a.png", Label::Ad)});
    REQUIRE(c.records().size() == 1);
    CHECK(c.records()[0].label == Label::NonAd);
    CHECK(r.label_conflicts.size() == 1);

    c.records()[0].origins.push_back({"http://ads.example.com/a.png", "", ""});
    filter::RuleSet rules = filter::RuleSet::parse("||ads.example.com^\n");
    LabelReport lr = auto_label(c, rules, true);
    CHECK(lr.kept_human == 1);
    CHECK(c.records()[0].label == Label::NonAd);
    CHECK(c.records()[0].label_source == LabelSource::Human);

    Classifier zero(std::make_shared<const Network>(reference_network()));
    auto_label(c, zero, true);
    CHECK(c.records()[0].label == Label::NonAd);
}

TEST_CASE("rule labelling agrees with the filter engine") {
    TempDir t("rules");
    filter::RuleSet rules = filter::RuleSet::parse("||ads.example.com^\n/banner/*$image,third-party\n@@||ads.example.com/ok/\n");
    const std::vector<std::pair<std::string, std::string>> urls = {
        {"http://ads.example.com/a.png", ""},        {"http://ads.example.com/ok/a.png", ""},
        {"http://cdn.net/banner/1.png", "news.com"}, {"http://cdn.net/banner/1.png", "cdn.net"},
        {"http://cdn.net/img/1.png", "news.com"},
    };
    Corpus c = Corpus::open(t.path);
    for (std::size_t i = 0; i < urls.size(); ++i) {
        add_record(c, noise_png(50 + i), urls[i].first);
        c.records().back().origins[0].document_domain = urls[i].second;
    }
    add_record(c, noise_png(60), (t.path / "local.png").string());
    LabelReport lr = auto_label(c, rules);
    CHECK(lr.no_url == 1);
    for (std::size_t i = 0; i < urls.size(); ++i) {
        const bool blocked = rules.match({urls[i].first, urls[i].second, filter::ResourceType::Image}).blocked;
        CHECK(c.records()[i].label == (blocked ? Label::Ad : Label::NonAd));
        CHECK(c.records()[i].label_source == LabelSource::Rules);
    }
    CHECK(lr.labeled_ad + lr.labeled_non_ad == urls.size());
    CHECK(lr.labeled_ad == 2);
    CHECK(c.records().back().label == Label::Unlabeled);

    // Existing machine labels stay unless relabel is asked for.
    filter::RuleSet none = filter::RuleSet::parse("");
    CHECK(auto_label(c, none).kept_existing == urls.size());
    CHECK(c.records()[0].label == Label::Ad);
    auto_label(c, none, true);
    CHECK(c.records()[0].label == Label::NonAd);
}

TEST_CASE("model labelling") {
    TempDir t("model");
    Corpus c = Corpus::open(t.path);
    add_record(c, encode_png(Bitmap::filled(120, 120, 250, 0, 0)), "red", Label::Unlabeled, LabelSource::None, 120);
    add_record(c, encode_png(Bitmap::filled(120, 120, 0, 0, 250)), "blue", Label::Unlabeled, LabelSource::None, 120);
    add_record(c, encode_png(Bitmap::filled(40, 40, 250, 0, 0)), "small", Label::Unlabeled, LabelSource::None, 40);
    Classifier probe(red_probe_model());
    LabelReport lr = auto_label(c, probe);
    CHECK(lr.labeled_ad == 1);
    CHECK(lr.labeled_non_ad == 1);
    CHECK(lr.bypassed == 1);
    CHECK(c.records()[0].label == Label::Ad);
    CHECK(c.records()[1].label == Label::NonAd);
    CHECK(c.records()[2].label == Label::Unlabeled);
    CHECK(c.records()[0].label_source == LabelSource::Model);

    Classifier zero(std::make_shared<const Network>(reference_network()));
    auto_label(c, zero, true);
    CHECK(c.records()[1].label == Label::Ad);
}

namespace {

Corpus labelled_corpus(const fs::path& root, std::size_t ads, std::size_t non_ads) {
    Corpus c = Corpus::open(root);
    for (std::size_t i = 0; i < ads; ++i) add_record(c, noise_png(10000 + i, 4), "a", Label::Ad, LabelSource::Human);
    for (std::size_t i = 0; i < non_ads; ++i) add_record(c, noise_png(20000 + i, 4), "n", Label::NonAd, LabelSource::Human);
    add_record(c, noise_png(30000, 4), "u");
    return c;
}

std::size_t count(const std::vector<SplitRow>& rows, Label l) {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const SplitRow& r) { return r.label == l; }));
}

}  // namespace

TEST_CASE("balance 50 ads and 200 non-ads") {
    TempDir t("balance");
    Corpus c = labelled_corpus(t.path, 50, 200);
    Split s = balance_and_split(c, 7, 0.2);
    CHECK(s.ads_available == 50);
    CHECK(s.non_ads_available == 200);
    CHECK(count(s.train, Label::Ad) + count(s.test, Label::Ad) == 50);
    CHECK(count(s.train, Label::NonAd) + count(s.test, Label::NonAd) == 50);
    CHECK(count(s.test, Label::Ad) == 10);
    CHECK(count(s.test, Label::NonAd) == 10);

    std::set<std::string> train, test;
    for (const auto& r : s.train) train.insert(r.sha256);
    for (const auto& r : s.test) test.insert(r.sha256);
    CHECK(train.size() == s.train.size());
    for (const auto& h : test) CHECK(train.count(h) == 0);

    Split again = balance_and_split(c, 7, 0.2);
    CHECK(again.train.size() == s.train.size());
    for (std::size_t i = 0; i < s.train.size(); ++i) CHECK(again.train[i].sha256 == s.train[i].sha256);
    Split other = balance_and_split(c, 8, 0.2);
    bool differs = false;
    for (std::size_t i = 0; i < s.train.size(); ++i) differs = differs || other.train[i].sha256 != s.train[i].sha256;
    CHECK(differs);

    CHECK_THROWS_AS(balance_and_split(labelled_corpus(t.path / "x", 0, 5), 1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(balance_and_split(c, 1, 1.0), std::invalid_argument);
}

TEST_CASE("split manifests are byte-identical across runs") {
    TempDir t("splitfiles");
    Corpus c = labelled_corpus(t.path / "c", 30, 40);
    write_split(c, balance_and_split(c, 3, 0.25), t.path / "one");
    write_split(c, balance_and_split(c, 3, 0.25), t.path / "two");
    CHECK(slurp(t.path / "one" / "train.jsonl") == slurp(t.path / "two" / "train.jsonl"));
    CHECK(slurp(t.path / "one" / "test.jsonl") == slurp(t.path / "two" / "test.jsonl"));
    std::ifstream in(t.path / "one" / "test.jsonl");
    std::string line;
    std::getline(in, line);
    auto j = nlohmann::json::parse(line);
    CHECK(fs::path(j["path"].get<std::string>()).is_absolute());
    CHECK(fs::exists(j["path"].get<std::string>()));
}

TEST_CASE("seeded shuffle is a fixed permutation") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    std::mt19937_64 rng(1);
    auto a = v;
    seeded_shuffle(a, rng);
    std::mt19937_64 rng2(1);
    auto b = v;
    seeded_shuffle(b, rng2);
    CHECK(a == b);
    std::sort(a.begin(), a.end());
    CHECK(a == v);
}

TEST_CASE("re-ingesting the same manifest changes nothing") {
    TempDir t("reingest");
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < 5; ++i) {
        write_file(t.path / (std::to_string(i) + ".png"), noise_png(static_cast<std::uint64_t>(i + 40)));
        entries.push_back(local(t.path / (std::to_string(i) + ".png"), i % 2 ? Label::Ad : Label::NonAd));
    }
    Corpus c = Corpus::open(t.path / "c");
    ingest(c, entries);
    c.save();
    const std::string first = slurp(t.path / "c" / "index.jsonl");
    Corpus again = Corpus::open(t.path / "c");
    IngestReport r = ingest(again, entries);
    CHECK(r.added == 0);
    CHECK(r.merged == 5);
    again.save();
    CHECK(slurp(t.path / "c" / "index.jsonl") == first);
}

TEST_CASE("near-duplicates are reported, not merged") {
    TempDir t("near");
    Corpus c = Corpus::open(t.path);
    Bitmap grad = Bitmap::filled(64, 64, 0, 0, 0);
    for (std::uint32_t y = 0; y < 64; ++y)
        for (std::uint32_t x = 0; x < 64; ++x) grad.pixel(x, y)[0] = grad.pixel(x, y)[1] = static_cast<std::uint8_t>(x * 4);
    Bitmap tweaked = grad;
    tweaked.pixel(3, 3)[2] = 9;
    add_record(c, encode_png(grad), "a", Label::Unlabeled, LabelSource::None, 64);
    add_record(c, encode_png(tweaked), "b", Label::Unlabeled, LabelSource::None, 64);
    add_record(c, noise_png(1, 64), "c", Label::Unlabeled, LabelSource::None, 64);
    DedupeReport r = dedupe(c, true);
    CHECK(r.merged_records == 0);
    CHECK(c.records().size() == 3);
    REQUIRE(r.near_duplicates.size() == 1);
    CHECK(r.near_duplicates[0].first == c.records()[0].sha256);
    CHECK(r.near_duplicates[0].second == c.records()[1].sha256);
    CHECK(difference_hash(grad) == difference_hash(tweaked));
}

TEST_CASE("fetching over http") {
    httplib::Server srv;
    const auto png = noise_png(77);
    const auto same = png;
    std::string seen_agent;
    std::mutex mu;
    srv.Get("/a.png", [&](const httplib::Request& req, httplib::Response& res) {
        {
            std::lock_guard lock(mu);
            seen_agent = req.get_header_value("User-Agent");
        }
        res.set_content(std::string(png.begin(), png.end()), "image/png");
    });
    srv.Get("/copy.png", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(std::string(same.begin(), same.end()), "image/png");
    });
    srv.Get("/moved.png", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/a.png"); });
    srv.Get("/text", [](const httplib::Request&, httplib::Response& res) { res.set_content("hello", "text/plain"); });
    const int port = srv.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread th([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    TempDir t("http");
    Corpus c = Corpus::open(t.path);
    IngestOptions opt;
    opt.timeout = std::chrono::seconds(5);
    IngestReport r = ingest(c, {remote(base + "/a.png", "news.com", Label::Ad), remote(base + "/copy.png"),
                                remote(base + "/moved.png"), remote(base + "/missing.png"), remote(base + "/text"),
                                remote("http://127.0.0.1:1/nothing.png")},
                            opt);
    srv.stop();
    th.join();

    CHECK(seen_agent == "percival-corpus/1.0");
    REQUIRE(c.records().size() == 1);
    CHECK(c.records()[0].origins.size() == 3);
    CHECK(c.records()[0].origins[0].document_domain == "news.com");
    CHECK(c.records()[0].label == Label::Ad);
    CHECK(r.fetch_failures.size() == 2);
    CHECK(r.decode_failures.size() == 1);
}
