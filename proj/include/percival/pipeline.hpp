#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "percival/classifier.hpp"
#include "percival/hash.hpp"
#include "percival/image.hpp"
#include "percival/memo.hpp"

namespace percival {

struct ImageFrame {
    std::int64_t frame_id = 0;
    std::vector<std::uint8_t> bytes;
    std::string origin_url;
    std::string file;  // name on disk; its extension doubles as a format hint
    ContentHash content_hash{};

    static ImageFrame make(std::int64_t id, std::vector<std::uint8_t> bytes, std::string origin_url = {},
                           std::string file = {});
};

struct PageFixture {
    std::vector<ImageFrame> frames;
};

/// Reads DIR/manifest.jsonl ({"frame_id", "file", "origin_url"} per line).
PageFixture load_fixture(const std::filesystem::path& dir);
void save_fixture(const std::filesystem::path& dir, const PageFixture& fixture);

enum class EventKind { Rendered, Blocked, Retracted };
const char* to_string(EventKind k);

struct RenderEvent {
    std::int64_t frame_id = 0;
    EventKind kind = EventKind::Rendered;
    std::int64_t timestamp_micros = 0;  // since the start of the run
    bool cache_hit = false;
};

enum class PipelineMode { Sync, Async, Off };
const char* to_string(PipelineMode m);
PipelineMode parse_mode(const std::string& s);

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BlockingPolicy {
    enum class Kind { Clear, Replace } kind = Kind::Clear;
    Bitmap replacement;

    static BlockingPolicy clear() { return {}; }
    /// Decodes the replacement now; unreadable bytes are a ConfigError.
    static BlockingPolicy replace_with(std::span<const std::uint8_t> image_bytes);
    /// "clear" or "replace=PATH".
    static BlockingPolicy parse(const std::string& spec);
};

Bitmap apply_block(const Bitmap& frame, const BlockingPolicy& policy);

struct PipelineConfig {
    PipelineMode mode = PipelineMode::Sync;
    unsigned lanes = 1;
    std::size_t memo_capacity = kDefaultMemoCapacity;
    BlockingPolicy policy;
    float threshold = kDefaultThreshold;
    bool keep_output = false;  // retain the displayed bitmap of every frame
    /// Extra sleep after every forward pass; benchmark harness checks only.
    std::chrono::microseconds added_inference_delay{0};
};

struct FrameStats {
    std::int64_t frame_id = 0;
    bool decoded = false;
    std::string decode_error;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    bool bypassed = false;
    bool classified = false;  // a forward pass ran for this frame
    bool cache_hit = false;
    std::optional<Verdict> verdict;
    std::int64_t decode_micros = 0;
    std::int64_t inference_micros = 0;
    std::int64_t verdict_at_micros = -1;
    std::int64_t first_event_micros = -1;
    std::int64_t final_event_micros = -1;
};

struct PipelineStats {
    std::vector<FrameStats> frames;  // fixture order
    std::uint64_t forward_passes = 0;
    std::uint64_t memo_hits = 0;
    std::uint64_t decode_failures = 0;
    std::uint64_t classifier_failures = 0;
    std::int64_t time_to_all_first_render_micros = 0;
    std::int64_t total_micros = 0;
};

struct PageResult {
    std::vector<RenderEvent> events;  // sink order
    PipelineStats stats;
    std::vector<std::optional<Bitmap>> output;  // fixture order, if keep_output
};

/// Runs every frame of the page through the choke point. The memo overload
/// shares a cache across runs; the other starts cold with config.memo_capacity.
PageResult run_page(const PageFixture& fixture, const PipelineConfig& config, const NetworkPtr& model);
PageResult run_page(const PageFixture& fixture, const PipelineConfig& config, const NetworkPtr& model,
                    VerdictMemo& memo);

enum class Outcome { Shown, Blocked };

/// Final outcome per frame: Shown iff the last event is Rendered.
std::map<std::int64_t, Outcome> final_outcomes(const std::vector<RenderEvent>& events);

/// Empty when every frame has exactly one of [Rendered], [Blocked],
/// [Rendered, Retracted]; otherwise a description of the first violation.
std::string check_event_sequences(const PageFixture& fixture, const std::vector<RenderEvent>& events);

std::string event_to_json(const RenderEvent& e);
std::string stats_to_json(const PipelineStats& s);

}  // namespace percival
