#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "percival/classifier.hpp"
#include "percival/pipeline.hpp"

namespace percival::eval {

/// Positive class is "ad".
struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Throws std::invalid_argument when the sequences differ in length.
ConfusionCounts confusion(const std::vector<bool>& predicted_ad, const std::vector<bool>& actual_ad);

/// nullopt means the denominator was zero.
struct MetricsReport {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
};

MetricsReport metrics(const ConfusionCounts& c);

/// {"tp",..,"accuracy": 0.92 | "undefined", ...}
std::string metrics_to_json(const ConfusionCounts& c, const MetricsReport& m);
std::string format_metric(const std::optional<double>& v, int decimals = 3);

struct BenchConfig {
    std::string name;
    PipelineConfig pipeline;
};

/// JSON array of {"name"?, "mode", "lanes"?, "memo_capacity"?, "threshold"?,
/// "policy"?, "added_delay_us"?}. Throws ConfigError.
std::vector<BenchConfig> parse_bench_configs(const std::string& json_text);

struct BenchOptions {
    unsigned repetitions = 10;
    unsigned warmups = 2;
};

struct Summary {
    double median = 0;
    double mean = 0;
    double p95 = 0;
};

/// Nearest-rank p95; median averages the middle pair.
Summary summarize(std::vector<double> samples);

struct ConfigTiming {
    std::string name;
    PipelineConfig config;
    std::vector<double> completion_micros;    // one per measured repetition
    std::vector<double> first_render_micros;  // time until every frame showed its first event
    Summary completion;
    Summary first_render;
    Summary inference;  // over every forward pass of every measured repetition
    std::uint64_t forward_passes = 0;     // per run (identical across runs)
    std::uint64_t classified_frames = 0;  // frames that needed a verdict (not bypassed, decoded)
    /// Relative to the first config; 0 for the first config itself.
    double overhead_percent = 0;
    double first_render_overhead_percent = 0;
};

struct BenchReport {
    std::size_t frames = 0;
    BenchOptions options;
    std::vector<ConfigTiming> configs;
};

/// Runs configs strictly one after another. Each repetition starts with a
/// cold memo. Throws std::invalid_argument on an empty config list.
BenchReport bench_pipeline(const PageFixture& fixture, const std::vector<BenchConfig>& configs,
                           const NetworkPtr& model, const BenchOptions& opt = {});

double overhead_percent(double baseline, double treatment);

std::string bench_to_json(const BenchReport& r);
std::string bench_to_csv(const BenchReport& r);

struct EvalRow {
    std::string path;
    bool actual_ad = false;
    bool predicted_ad = false;
    float p_ad = 0;
    bool bypassed = false;
    std::int64_t inference_micros = 0;
    std::string error;  // nonempty => excluded from counts
};

struct EvalResult {
    ConfusionCounts counts;
    MetricsReport metrics;
    std::vector<EvalRow> rows;
    std::size_t excluded = 0;
    std::size_t skipped_unlabeled = 0;
};

struct LabeledImage {
    std::filesystem::path path;
    std::optional<bool> is_ad;  // nullopt = unlabeled
};

/// Accepts split manifests ({"path", "label"}) and corpus indexes
/// ({"stored_path", "label"}); relative paths resolve against the file's directory.
std::vector<LabeledImage> load_labeled_manifest(const std::filesystem::path& file);

/// Classifies each labelled image. Bypassed images count as predicted
/// non-ad, matching what the pipeline would display.
EvalResult evaluate_model(const Classifier& model, const std::vector<LabeledImage>& images);

std::string eval_to_json(const EvalResult& r);
std::string eval_to_csv(const EvalResult& r);

}  // namespace percival::eval
