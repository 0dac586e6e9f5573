#include "percival/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace percival::eval {

namespace fs = std::filesystem;
using json = nlohmann::json;

ConfusionCounts confusion(const std::vector<bool>& predicted_ad, const std::vector<bool>& actual_ad) {
    if (predicted_ad.size() != actual_ad.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(predicted_ad.size()) + " predictions vs " +
                                    std::to_string(actual_ad.size()) + " labels");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < predicted_ad.size(); ++i) {
        if (predicted_ad[i]) {
            ++(actual_ad[i] ? c.tp : c.fp);
        } else {
            ++(actual_ad[i] ? c.fn : c.tn);
        }
    }
    return c;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

json metric_json(const std::optional<double>& v) { return v ? json(*v) : json("undefined"); }

}  // namespace

MetricsReport metrics(const ConfusionCounts& c) {
    return {ratio(c.tp + c.tn, c.total()), ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn)};
}

std::string format_metric(const std::optional<double>& v, int decimals) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
    return buf;
}

std::string metrics_to_json(const ConfusionCounts& c, const MetricsReport& m) {
    return json{{"tp", c.tp},
                {"fp", c.fp},
                {"fn", c.fn},
                {"tn", c.tn},
                {"accuracy", metric_json(m.accuracy)},
                {"precision", metric_json(m.precision)},
                {"recall", metric_json(m.recall)}}
        .dump();
}

std::vector<BenchConfig> parse_bench_configs(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bench configs: ") + e.what());
    }
    if (!j.is_array() || j.empty()) throw ConfigError("bench configs: expected a nonempty JSON array");
    std::vector<BenchConfig> out;
    try {
        for (const auto& item : j) {
            BenchConfig c;
            c.pipeline.mode = parse_mode(item.at("mode").get<std::string>());
            c.pipeline.lanes = item.value("lanes", 1u);
            c.pipeline.memo_capacity = item.value("memo_capacity", kDefaultMemoCapacity);
            c.pipeline.threshold = item.value("threshold", kDefaultThreshold);
            if (item.contains("policy")) c.pipeline.policy = BlockingPolicy::parse(item["policy"].get<std::string>());
            c.pipeline.added_inference_delay = std::chrono::microseconds(item.value("added_delay_us", 0));
            c.name = item.value("name", std::string(to_string(c.pipeline.mode)) + "/" +
                                             std::to_string(c.pipeline.lanes));
            if (c.pipeline.lanes == 0) throw ConfigError("bench configs: lanes must be >= 1");
            out.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bench configs: ") + e.what());
    }
    return out;
}

Summary summarize(std::vector<double> s) {
    Summary out;
    if (s.empty()) return out;
    std::sort(s.begin(), s.end());
    const std::size_t n = s.size();
    out.median = n % 2 ? s[n / 2] : (s[n / 2 - 1] + s[n / 2]) / 2.0;
    out.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(n);
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    out.p95 = s[std::max<std::size_t>(rank, 1) - 1];
    return out;
}

double overhead_percent(double baseline, double treatment) {
    if (baseline <= 0) return 0;
    return (treatment - baseline) / baseline * 100.0;
}

BenchReport bench_pipeline(const PageFixture& fixture, const std::vector<BenchConfig>& configs,
                           const NetworkPtr& model, const BenchOptions& opt) {
    if (configs.empty()) throw std::invalid_argument("bench_pipeline: no configs");
    BenchReport report;
    report.frames = fixture.frames.size();
    report.options = opt;
    for (const auto& bc : configs) {
        ConfigTiming t;
        t.name = bc.name;
        t.config = bc.pipeline;
        t.config.keep_output = false;
        std::vector<double> inference;
        for (unsigned rep = 0; rep < opt.warmups + opt.repetitions; ++rep) {
            PageResult r = run_page(fixture, t.config, model);
            if (rep < opt.warmups) continue;
            std::int64_t last_final = 0;
            for (const auto& f : r.stats.frames) last_final = std::max(last_final, f.final_event_micros);
            t.completion_micros.push_back(static_cast<double>(last_final));
            t.first_render_micros.push_back(static_cast<double>(r.stats.time_to_all_first_render_micros));
            t.forward_passes = r.stats.forward_passes;
            t.classified_frames = 0;
            for (const auto& f : r.stats.frames) {
                if (f.verdict && !f.verdict->bypassed) ++t.classified_frames;
                if (f.classified) inference.push_back(static_cast<double>(f.inference_micros));
            }
        }
        t.completion = summarize(t.completion_micros);
        t.first_render = summarize(t.first_render_micros);
        t.inference = summarize(inference);
        report.configs.push_back(std::move(t));
    }
    const ConfigTiming& base = report.configs.front();
    for (auto& t : report.configs) {
        t.overhead_percent = overhead_percent(base.completion.median, t.completion.median);
        t.first_render_overhead_percent = overhead_percent(base.first_render.median, t.first_render.median);
    }
    return report;
}

namespace {

json summary_json(const Summary& s) { return {{"median", s.median}, {"mean", s.mean}, {"p95", s.p95}}; }

}  // namespace

std::string bench_to_json(const BenchReport& r) {
    json configs = json::array();
    for (const auto& t : r.configs) {
        configs.push_back({{"name", t.name},
                           {"mode", to_string(t.config.mode)},
                           {"lanes", t.config.lanes},
                           {"completion_us", summary_json(t.completion)},
                           {"first_render_us", summary_json(t.first_render)},
                           {"inference_us", summary_json(t.inference)},
                           {"forward_passes", t.forward_passes},
                           {"classified_frames", t.classified_frames},
                           {"overhead_percent", t.overhead_percent},
                           {"first_render_overhead_percent", t.first_render_overhead_percent},
                           {"completion_samples_us", t.completion_micros}});
    }
    return json{{"frames", r.frames},
                {"repetitions", r.options.repetitions},
                {"warmups", r.options.warmups},
                {"configs", std::move(configs)}}
        .dump(2);
}

std::string bench_to_csv(const BenchReport& r) {
    std::ostringstream out;
    out << "name,mode,lanes,completion_median_us,completion_mean_us,completion_p95_us,first_render_median_us,"
           "inference_median_us,forward_passes,classified_frames,overhead_percent,first_render_overhead_percent\n";
    for (const auto& t : r.configs) {
        out << t.name << ',' << to_string(t.config.mode) << ',' << t.config.lanes << ',' << t.completion.median << ','
            << t.completion.mean << ',' << t.completion.p95 << ',' << t.first_render.median << ','
            << t.inference.median << ',' << t.forward_passes << ',' << t.classified_frames << ','
            << t.overhead_percent << ',' << t.first_render_overhead_percent << '\n';
    }
    return out.str();
}

std::vector<LabeledImage> load_labeled_manifest(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    const fs::path base = file.parent_path();
    std::vector<LabeledImage> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            LabeledImage img;
            img.path = j.contains("path") ? j["path"].get<std::string>() : j.at("stored_path").get<std::string>();
            if (img.path.is_relative()) img.path = base / img.path;
            const std::string label = j.value("label", "unlabeled");
            if (label == "ad") img.is_ad = true;
            else if (label == "non-ad") img.is_ad = false;
            else if (label != "unlabeled") throw std::runtime_error("unknown label '" + label + "'");
            out.push_back(std::move(img));
        } catch (const std::exception& e) {
            throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

EvalResult evaluate_model(const Classifier& model, const std::vector<LabeledImage>& images) {
    EvalResult r;
    std::vector<bool> predicted, actual;
    for (const auto& img : images) {
        if (!img.is_ad) {
            ++r.skipped_unlabeled;
            continue;
        }
        EvalRow row;
        row.path = img.path.string();
        row.actual_ad = *img.is_ad;
        try {
            std::ifstream in(img.path, std::ios::binary);
            if (!in) throw std::runtime_error("missing file");
            const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
            const Verdict v = model.classify(decode_image(bytes, img.path.extension().string()));
            row.predicted_ad = v.is_ad;
            row.p_ad = v.p_ad;
            row.bypassed = v.bypassed;
            row.inference_micros = v.inference_micros;
            predicted.push_back(v.is_ad);
            actual.push_back(row.actual_ad);
        } catch (const std::exception& e) {
            row.error = e.what();
            ++r.excluded;
        }
        r.rows.push_back(std::move(row));
    }
    r.counts = confusion(predicted, actual);
    r.metrics = metrics(r.counts);
    return r;
}

std::string eval_to_json(const EvalResult& r) {
    json j = json::parse(metrics_to_json(r.counts, r.metrics));
    j["evaluated"] = r.counts.total();
    j["excluded"] = r.excluded;
    j["skipped_unlabeled"] = r.skipped_unlabeled;
    json errors = json::array();
    for (const auto& row : r.rows)
        if (!row.error.empty()) errors.push_back({{"path", row.path}, {"error", row.error}});
    j["errors"] = std::move(errors);
    return j.dump(2);
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string eval_to_csv(const EvalResult& r) {
    std::ostringstream out;
    out << "path,label,predicted,p_ad,bypassed,inference_us,error\n";
    for (const auto& row : r.rows) {
        out << csv_field(row.path) << ',' << (row.actual_ad ? "ad" : "non-ad") << ',';
        if (row.error.empty()) {
            out << (row.predicted_ad ? "ad" : "non-ad") << ',' << row.p_ad << ',' << (row.bypassed ? 1 : 0) << ','
                << row.inference_micros << ',';
        } else {
            out << ",,,," << csv_field(row.error);
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace percival::eval
