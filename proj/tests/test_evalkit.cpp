#include "doctest.h"

#include <fstream>
#include <unistd.h>

#include "json.hpp"
#include "percival/evalkit.hpp"
#include "percival/synth.hpp"

using namespace percival;
using namespace percival::eval;
namespace fs = std::filesystem;

namespace {

std::vector<bool> ads(const std::string& s) {
    std::vector<bool> out;
    for (char c : s) out.push_back(c == 'A');
    return out;
}

NetworkPtr zero_model() { return std::make_shared<const Network>(reference_network()); }

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / ("percival_eval_" + std::to_string(::getpid()) + "_" + name);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_png(const fs::path& p, const Bitmap& b) {
    const auto bytes = encode_png(b);
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("confusion counts") {
    CHECK(confusion(ads("AAAAAAAAAA"), ads("AAAAAAAAAA")) == ConfusionCounts{10, 0, 0, 0});

    // Hand-counted 20-pair fixture.
    const auto pred = ads("AANANNAAANNNANAANNAN");
    const auto label = ads("ANNAANAANNANNAAANNNA");
    CHECK(confusion(pred, label) == ConfusionCounts{6, 4, 4, 6});

    // Inverting the labels turns tp into fp and fn into tn.
    std::vector<bool> inverted;
    for (bool b : label) inverted.push_back(!b);
    const ConfusionCounts a = confusion(pred, label), b = confusion(pred, inverted);
    CHECK(b.tp == a.fp);
    CHECK(b.fp == a.tp);
    CHECK(b.tn == a.fn);
    CHECK(b.fn == a.tn);

    CHECK_THROWS_AS(confusion(ads("AA"), ads("A")), std::invalid_argument);
    CHECK(confusion({}, {}).total() == 0);
}

TEST_CASE("metrics from the published confusion counts") {
    const ConfusionCounts c{248, 68, 106, 1762};
    CHECK(c.tp + c.fn == 354);
    CHECK(c.fp + c.tn == 1830);
    MetricsReport m = metrics(c);
    CHECK(*m.accuracy == doctest::Approx(2010.0 / 2184.0));
    CHECK(*m.precision == doctest::Approx(248.0 / 316.0));
    CHECK(*m.recall == doctest::Approx(248.0 / 354.0));
    CHECK(std::abs(*m.accuracy - 0.920) <= 0.0005);
    CHECK(format_metric(m.accuracy) == "0.920");
    CHECK(format_metric(m.precision) == "0.785");
    CHECK(format_metric(m.recall) == "0.701");
}

TEST_CASE("undefined metrics stay undefined") {
    MetricsReport m = metrics({0, 0, 0, 5});
    CHECK(*m.accuracy == 1.0);
    CHECK_FALSE(m.precision.has_value());
    CHECK_FALSE(m.recall.has_value());
    auto j = nlohmann::json::parse(metrics_to_json({0, 0, 0, 5}, m));
    CHECK(j["precision"] == "undefined");
    CHECK(j["accuracy"] == 1.0);
    CHECK(format_metric(m.recall) == "undefined");
    CHECK_FALSE(metrics({}).accuracy.has_value());

    MetricsReport half = metrics({1, 1, 1, 1});
    CHECK(*half.accuracy == 0.5);
    CHECK(*half.precision == 0.5);
    CHECK(*half.recall == 0.5);
}

TEST_CASE("summaries") {
    Summary s = summarize({5, 1, 3, 2, 4});
    CHECK(s.median == 3);
    CHECK(s.mean == 3);
    CHECK(s.p95 == 5);
    CHECK(summarize({1, 2, 3, 4}).median == 2.5);
    std::vector<double> hundred;
    for (int i = 1; i <= 100; ++i) hundred.push_back(i);
    CHECK(summarize(hundred).p95 == 95);
    CHECK(overhead_percent(100, 110) == doctest::Approx(10));
    CHECK(overhead_percent(100, 100) == 0);
}

TEST_CASE("bench config parsing") {
    auto cfgs = parse_bench_configs(R"([{"mode":"off"},{"name":"s4","mode":"sync","lanes":4,"added_delay_us":10}])");
    REQUIRE(cfgs.size() == 2);
    CHECK(cfgs[0].name == "off/1");
    CHECK(cfgs[1].pipeline.lanes == 4);
    CHECK(cfgs[1].pipeline.added_inference_delay.count() == 10);
    CHECK_THROWS_AS(parse_bench_configs("[]"), ConfigError);
    CHECK_THROWS_AS(parse_bench_configs(R"([{"mode":"fast"}])"), ConfigError);
    CHECK_THROWS_AS(parse_bench_configs(R"([{"lanes":2}])"), ConfigError);
    CHECK_THROWS_AS(parse_bench_configs("{"), ConfigError);
}

TEST_CASE("bench: self comparison and structure") {
    SynthOptions so;
    so.frames = 100;
    PageFixture page = synth_page(so);
    BenchConfig off{"off", {}};
    off.pipeline.mode = PipelineMode::Off;
    BenchOptions opt{5, 1};
    BenchReport r = bench_pipeline(page, {off, off}, red_probe_model(), opt);
    REQUIRE(r.configs.size() == 2);
    CHECK(r.configs[0].completion_micros.size() == 5);
    CHECK(r.configs[0].overhead_percent == 0);
    CHECK(std::abs(r.configs[1].overhead_percent) <= 5.0);
    CHECK(r.configs[1].forward_passes == 0);

    so.frames = 30;
    PageFixture small = synth_page(so);
    BenchConfig sync{"sync", {}};
    BenchReport s = bench_pipeline(small, {off, sync}, red_probe_model(), {3, 1});
    CHECK(s.configs[1].overhead_percent > 0);
    CHECK(s.configs[1].forward_passes == 30);
    CHECK(s.configs[1].classified_frames == 30);
    CHECK(s.configs[1].inference.median > 0);
    auto j = nlohmann::json::parse(bench_to_json(s));
    CHECK(j["configs"][1]["forward_passes"] == 30);
    CHECK(bench_to_csv(s).find("sync,sync,1,") != std::string::npos);
}

TEST_CASE("bench medians grow with added per-image delay") {
    SynthOptions so;
    so.frames = 8;
    PageFixture page = synth_page(so);
    std::vector<BenchConfig> cfgs;
    for (int us : {0, 5000, 20000}) {
        BenchConfig c{"d" + std::to_string(us), {}};
        c.pipeline.added_inference_delay = std::chrono::microseconds(us);
        cfgs.push_back(c);
    }
    BenchReport r = bench_pipeline(page, cfgs, red_probe_model(), {3, 1});
    CHECK(r.configs[0].completion.median < r.configs[1].completion.median);
    CHECK(r.configs[1].completion.median < r.configs[2].completion.median);
    CHECK(r.configs[2].completion.median - r.configs[0].completion.median >= 8 * 20000 * 0.9);
}

TEST_CASE("evaluate_model") {
    TempDir t("model");
    std::ofstream m(t.path / "split.jsonl");
    for (int i = 0; i < 6; ++i) {
        const bool ad = i < 2;
        const std::string name = "img" + std::to_string(i) + ".png";
        write_png(t.path / name, ad ? Bitmap::filled(120, 110, 240, 10, 10) : Bitmap::filled(130, 100, 10, 10, 240));
        m << nlohmann::json{{"path", name}, {"label", ad ? "ad" : "non-ad"}}.dump() << '\n';
    }
    m << R"({"path": "gone.png", "label": "ad"})" << '\n';
    m << R"({"stored_path": "img0.png", "label": "unlabeled"})" << '\n';
    m.close();

    auto images = load_labeled_manifest(t.path / "split.jsonl");
    REQUIRE(images.size() == 8);
    CHECK(images[0].path == t.path / "img0.png");

    EvalResult probe = evaluate_model(Classifier(red_probe_model()), images);
    CHECK(probe.counts == ConfusionCounts{2, 0, 0, 4});
    CHECK(*probe.metrics.accuracy == 1.0);
    CHECK(probe.excluded == 1);
    CHECK(probe.skipped_unlabeled == 1);

    EvalResult zero = evaluate_model(Classifier(zero_model()), images);
    CHECK(*zero.metrics.recall == 1.0);
    CHECK(*zero.metrics.precision == doctest::Approx(2.0 / 6.0));

    EvalResult again = evaluate_model(Classifier(red_probe_model()), images);
    CHECK(again.counts == probe.counts);
    for (std::size_t i = 0; i < again.rows.size(); ++i) CHECK(again.rows[i].p_ad == probe.rows[i].p_ad);

    const std::string csv = eval_to_csv(probe);
    CHECK(csv.rfind("path,label,predicted,p_ad,bypassed,inference_us,error\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
    auto j = nlohmann::json::parse(eval_to_json(probe));
    CHECK(j["excluded"] == 1);
    CHECK(j["errors"].size() == 1);
}
