#include "percival/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

#include "json.hpp"

#ifdef __linux__
#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>
#endif

namespace percival {

namespace fs = std::filesystem;
using json = nlohmann::json;

ImageFrame ImageFrame::make(std::int64_t id, std::vector<std::uint8_t> bytes, std::string origin_url, std::string file) {
    ImageFrame f;
    f.frame_id = id;
    f.content_hash = percival::content_hash(bytes);
    f.bytes = std::move(bytes);
    f.origin_url = std::move(origin_url);
    f.file = std::move(file);
    return f;
}

PageFixture load_fixture(const fs::path& dir) {
    std::ifstream manifest(dir / "manifest.jsonl");
    if (!manifest) throw std::runtime_error("cannot open " + (dir / "manifest.jsonl").string());
    PageFixture page;
    std::set<std::int64_t> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(manifest, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!rec.contains("frame_id") || !rec.contains("file")) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": needs frame_id and file");
        }
        const auto id = rec["frame_id"].get<std::int64_t>();
        if (!ids.insert(id).second) throw std::runtime_error("duplicate frame_id " + std::to_string(id));
        const std::string file = rec["file"].get<std::string>();
        std::ifstream in(dir / file, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read frame file " + (dir / file).string());
        std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        page.frames.push_back(ImageFrame::make(id, std::move(bytes), rec.value("origin_url", ""), file));
    }
    return page;
}

void save_fixture(const fs::path& dir, const PageFixture& fixture) {
    fs::create_directories(dir);
    std::ofstream manifest(dir / "manifest.jsonl");
    for (const auto& f : fixture.frames) {
        const std::string file = f.file.empty() ? "frame_" + std::to_string(f.frame_id) + ".img" : f.file;
        std::ofstream out(dir / file, std::ios::binary);
        out.write(reinterpret_cast<const char*>(f.bytes.data()), static_cast<std::streamsize>(f.bytes.size()));
        manifest << json{{"frame_id", f.frame_id}, {"file", file}, {"origin_url", f.origin_url}}.dump() << '\n';
    }
    if (!manifest) throw std::runtime_error("failed writing fixture to " + dir.string());
}

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::Rendered: return "Rendered";
        case EventKind::Blocked: return "Blocked";
        case EventKind::Retracted: return "Retracted";
    }
    return "?";
}

const char* to_string(PipelineMode m) {
    switch (m) {
        case PipelineMode::Sync: return "sync";
        case PipelineMode::Async: return "async";
        case PipelineMode::Off: return "off";
    }
    return "?";
}

PipelineMode parse_mode(const std::string& s) {
    if (s == "sync") return PipelineMode::Sync;
    if (s == "async") return PipelineMode::Async;
    if (s == "off") return PipelineMode::Off;
    throw ConfigError("unknown mode '" + s + "' (expected sync, async or off)");
}

BlockingPolicy BlockingPolicy::replace_with(std::span<const std::uint8_t> image_bytes) {
    BlockingPolicy p;
    p.kind = Kind::Replace;
    try {
        p.replacement = decode_image(image_bytes);
    } catch (const DecodeError& e) {
        throw ConfigError(std::string("replacement image unreadable: ") + e.what());
    }
    return p;
}

BlockingPolicy BlockingPolicy::parse(const std::string& spec) {
    if (spec == "clear") return clear();
    if (spec.rfind("replace=", 0) == 0) {
        const std::string path = spec.substr(8);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot read replacement image " + path);
        std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        return replace_with(bytes);
    }
    throw ConfigError("unknown blocking policy '" + spec + "' (expected clear or replace=PATH)");
}

Bitmap apply_block(const Bitmap& frame, const BlockingPolicy& policy) {
    if (policy.kind == BlockingPolicy::Kind::Clear || !policy.replacement.valid()) {
        return Bitmap(frame.width, frame.height);
    }
    return resize_bilinear(policy.replacement, frame.width, frame.height);
}

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t micros_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration_cast<std::chrono::microseconds>(b - a).count();
}

/// Single ordered event sink; also stamps per-frame first/final event times.
class EventSink {
public:
    EventSink(Clock::time_point start, PipelineStats& stats) : start_(start), stats_(stats) {}

    void emit(std::size_t index, EventKind kind, bool cache_hit) {
        std::lock_guard lock(mu_);
        const std::int64_t t = micros_between(start_, Clock::now());
        FrameStats& fs = stats_.frames[index];
        if (fs.first_event_micros < 0) fs.first_event_micros = t;
        fs.final_event_micros = t;
        events_.push_back({fs.frame_id, kind, t, cache_hit});
    }

    std::vector<RenderEvent> take() { return std::move(events_); }

private:
    Clock::time_point start_;
    PipelineStats& stats_;
    std::mutex mu_;
    std::vector<RenderEvent> events_;
};

class JobQueue {
public:
    explicit JobQueue(unsigned workers) {
        for (unsigned i = 0; i < workers; ++i) threads_.emplace_back([this] { work(); });
    }
    ~JobQueue() { finish(); }

    void submit(std::function<void()> job) {
        {
            std::lock_guard lock(mu_);
            jobs_.push_back(std::move(job));
        }
        cv_.notify_one();
    }

    /// Runs every queued job, then joins the workers.
    void finish() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_)
            if (t.joinable()) t.join();
    }

private:
    void work() {
#ifdef __linux__
        // Background verdicts must not compete with lanes that are still
        // producing first renders.
        setpriority(PRIO_PROCESS, static_cast<id_t>(syscall(SYS_gettid)), 10);
#endif
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [this] { return closed_ || !jobs_.empty(); });
                if (jobs_.empty()) return;
                job = std::move(jobs_.front());
                jobs_.pop_front();
            }
            job();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::function<void()>> jobs_;
    bool closed_ = false;
    std::vector<std::thread> threads_;
};

std::optional<std::string_view> hint_for(const ImageFrame& f) {
    const auto dot = f.file.rfind('.');
    if (dot == std::string::npos) return std::nullopt;
    return std::string_view(f.file).substr(dot);
}

struct Run {
    const PageFixture& fixture;
    const PipelineConfig& config;
    std::optional<Classifier> classifier;
    VerdictMemo& memo;
    Clock::time_point start;
    PipelineStats stats;
    EventSink sink;
    std::vector<std::optional<Bitmap>> output;
    std::atomic<std::uint64_t> forward_passes{0};
    std::atomic<std::uint64_t> memo_hits{0};
    std::atomic<std::uint64_t> decode_failures{0};
    std::atomic<std::uint64_t> classifier_failures{0};
    JobQueue* background = nullptr;

    Run(const PageFixture& f, const PipelineConfig& c, VerdictMemo& m)
        : fixture(f), config(c), memo(m), start(Clock::now()), sink(start, stats) {
        stats.frames.resize(f.frames.size());
        for (std::size_t i = 0; i < f.frames.size(); ++i) stats.frames[i].frame_id = f.frames[i].frame_id;
        if (c.keep_output) output.resize(f.frames.size());
    }

    std::int64_t now() const { return micros_between(start, Clock::now()); }

    void keep(std::size_t i, Bitmap b) {
        if (config.keep_output) output[i] = std::move(b);
    }

    Verdict forward(std::size_t i, const Bitmap& bitmap) {
        Verdict v = classifier->classify(bitmap);
        if (config.added_inference_delay.count() > 0) std::this_thread::sleep_for(config.added_inference_delay);
        forward_passes.fetch_add(1);
        stats.frames[i].classified = true;
        stats.frames[i].inference_micros = v.inference_micros;
        return v;
    }

    void record(std::size_t i, const Verdict& v, bool cache_hit) {
        FrameStats& fs = stats.frames[i];
        fs.verdict = v;
        fs.cache_hit = cache_hit;
        fs.verdict_at_micros = now();
        if (cache_hit) memo_hits.fetch_add(1);
    }

    void settle(std::size_t i, const Verdict& v, bool cache_hit, Bitmap bitmap) {
        record(i, v, cache_hit);
        if (v.is_ad) {
            keep(i, apply_block(bitmap, config.policy));
            sink.emit(i, EventKind::Blocked, cache_hit);
        } else {
            keep(i, std::move(bitmap));
            sink.emit(i, EventKind::Rendered, cache_hit);
        }
    }

    void fail_open(std::size_t i, Bitmap bitmap) {
        classifier_failures.fetch_add(1);
        keep(i, std::move(bitmap));
        sink.emit(i, EventKind::Rendered, false);
    }

    void process(std::size_t i) {
        const ImageFrame& frame = fixture.frames[i];
        FrameStats& fs = stats.frames[i];
        Bitmap bitmap;
        const auto t0 = Clock::now();
        try {
            bitmap = decode_image(frame.bytes, hint_for(frame));
        } catch (const std::exception& e) {
            fs.decode_micros = micros_between(t0, Clock::now());
            fs.decode_error = e.what();
            decode_failures.fetch_add(1);
            sink.emit(i, EventKind::Rendered, false);
            return;
        }
        fs.decode_micros = micros_between(t0, Clock::now());
        fs.decoded = true;
        fs.width = bitmap.width;
        fs.height = bitmap.height;

        if (config.mode == PipelineMode::Off) {
            keep(i, std::move(bitmap));
            sink.emit(i, EventKind::Rendered, false);
            return;
        }
        if (should_bypass(bitmap.width, bitmap.height)) {
            fs.bypassed = true;
            keep(i, std::move(bitmap));
            sink.emit(i, EventKind::Rendered, false);
            return;
        }

        if (config.mode == PipelineMode::Sync) {
            VerdictMemo::Result r;
            try {
                r = memo.get_or_compute(frame.content_hash, [&] { return forward(i, bitmap); });
            } catch (const std::exception&) {
                fail_open(i, std::move(bitmap));
                return;
            }
            settle(i, r.verdict, r.cache_hit, std::move(bitmap));
            return;
        }

        VerdictMemo::Claim claim = memo.claim(frame.content_hash);
        switch (claim.kind) {
            case VerdictMemo::Claim::Kind::Hit:
                settle(i, claim.verdict, true, std::move(bitmap));
                return;
            case VerdictMemo::Claim::Kind::Pending: {
                // The first occurrence is already being classified; waiting
                // for it lets this frame go straight to its final event.
                Verdict v;
                try {
                    v = claim.pending.get();
                } catch (const std::exception&) {
                    fail_open(i, std::move(bitmap));
                    return;
                }
                settle(i, v, true, std::move(bitmap));
                return;
            }
            case VerdictMemo::Claim::Kind::Owner:
                break;
        }
        // Render now, classify in the background, retract if it was an ad.
        if (config.keep_output) output[i] = bitmap;
        sink.emit(i, EventKind::Rendered, false);
        background->submit([this, i, bitmap = std::move(bitmap)] {
            const ContentHash& key = fixture.frames[i].content_hash;
            Verdict v;
            try {
                v = forward(i, bitmap);
            } catch (const std::exception&) {
                memo.abandon(key, std::current_exception());
                classifier_failures.fetch_add(1);
                return;
            }
            memo.fulfil(key, v);
            record(i, v, false);
            if (v.is_ad) {
                keep(i, apply_block(bitmap, config.policy));
                sink.emit(i, EventKind::Retracted, false);
            }
        });
    }
};

}  // namespace

PageResult run_page(const PageFixture& fixture, const PipelineConfig& config, const NetworkPtr& model) {
    VerdictMemo memo(config.memo_capacity);
    return run_page(fixture, config, model, memo);
}

PageResult run_page(const PageFixture& fixture, const PipelineConfig& config, const NetworkPtr& model,
                    VerdictMemo& memo) {
    if (config.lanes < 1) throw ConfigError("lanes must be at least 1");
    if (!(config.threshold >= 0.0f && config.threshold <= 1.0f)) throw ConfigError("threshold must lie in [0,1]");
    if (config.mode != PipelineMode::Off && !model) throw ConfigError("a model is required unless mode is off");
    {
        std::set<std::int64_t> ids;
        for (const auto& f : fixture.frames)
            if (!ids.insert(f.frame_id).second) throw ConfigError("duplicate frame_id " + std::to_string(f.frame_id));
    }

    Run run(fixture, config, memo);
    if (config.mode != PipelineMode::Off) run.classifier.emplace(model, config.threshold);

    std::optional<JobQueue> background;
    if (config.mode == PipelineMode::Async) {
        background.emplace(config.lanes);
        run.background = &*background;
    }

    std::atomic<std::size_t> next{0};
    auto lane = [&] {
        for (std::size_t i = next.fetch_add(1); i < fixture.frames.size(); i = next.fetch_add(1)) run.process(i);
    };
    std::vector<std::thread> lanes;
    for (unsigned l = 1; l < config.lanes; ++l) lanes.emplace_back(lane);
    lane();
    for (auto& t : lanes) t.join();
    if (background) background->finish();

    PageResult result;
    result.stats = std::move(run.stats);
    result.events = run.sink.take();
    result.output = std::move(run.output);
    PipelineStats& s = result.stats;
    s.forward_passes = run.forward_passes.load();
    s.memo_hits = run.memo_hits.load();
    s.decode_failures = run.decode_failures.load();
    s.classifier_failures = run.classifier_failures.load();
    s.total_micros = run.now();
    for (const auto& f : s.frames) s.time_to_all_first_render_micros = std::max(s.time_to_all_first_render_micros, f.first_event_micros);
    return result;
}

std::map<std::int64_t, Outcome> final_outcomes(const std::vector<RenderEvent>& events) {
    std::map<std::int64_t, Outcome> out;
    for (const auto& e : events) out[e.frame_id] = e.kind == EventKind::Rendered ? Outcome::Shown : Outcome::Blocked;
    return out;
}

std::string check_event_sequences(const PageFixture& fixture, const std::vector<RenderEvent>& events) {
    std::map<std::int64_t, std::vector<EventKind>> seqs;
    for (const auto& e : events) seqs[e.frame_id].push_back(e.kind);
    for (const auto& f : fixture.frames) {
        auto it = seqs.find(f.frame_id);
        if (it == seqs.end()) return "frame " + std::to_string(f.frame_id) + " has no events";
        const auto& s = it->second;
        const bool legal = (s.size() == 1 && s[0] != EventKind::Retracted) ||
                           (s.size() == 2 && s[0] == EventKind::Rendered && s[1] == EventKind::Retracted);
        if (!legal) {
            std::string seq;
            for (auto k : s) seq += std::string(seq.empty() ? "" : ",") + to_string(k);
            return "frame " + std::to_string(f.frame_id) + " has illegal sequence [" + seq + "]";
        }
        seqs.erase(it);
    }
    if (!seqs.empty()) return "event for unknown frame " + std::to_string(seqs.begin()->first);
    return {};
}

std::string event_to_json(const RenderEvent& e) {
    return json{{"frame_id", e.frame_id},
                {"kind", to_string(e.kind)},
                {"timestamp_us", e.timestamp_micros},
                {"cache_hit", e.cache_hit}}
        .dump();
}

std::string stats_to_json(const PipelineStats& s) {
    json frames = json::array();
    for (const auto& f : s.frames) {
        json j{{"frame_id", f.frame_id},
               {"decoded", f.decoded},
               {"width", f.width},
               {"height", f.height},
               {"bypassed", f.bypassed},
               {"classified", f.classified},
               {"cache_hit", f.cache_hit},
               {"decode_us", f.decode_micros},
               {"inference_us", f.inference_micros},
               {"verdict_at_us", f.verdict_at_micros},
               {"first_event_us", f.first_event_micros},
               {"final_event_us", f.final_event_micros}};
        if (!f.decode_error.empty()) j["decode_error"] = f.decode_error;
        if (f.verdict) {
            j["is_ad"] = f.verdict->is_ad;
            j["p_ad"] = f.verdict->p_ad;
        }
        frames.push_back(std::move(j));
    }
    return json{{"forward_passes", s.forward_passes},
                {"memo_hits", s.memo_hits},
                {"decode_failures", s.decode_failures},
                {"classifier_failures", s.classifier_failures},
                {"time_to_all_first_render_us", s.time_to_all_first_render_micros},
                {"total_us", s.total_micros},
                {"frames", std::move(frames)}}
        .dump(1);
}

}  // namespace percival
