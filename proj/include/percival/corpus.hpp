#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "percival/classifier.hpp"
#include "percival/filter.hpp"

namespace percival::corpus {

enum class Label { Ad, NonAd, Unlabeled };
enum class LabelSource { None, Human, Rules, Model };

const char* to_string(Label l);
const char* to_string(LabelSource s);
Label parse_label(const std::string& s);  // "ad" | "non-ad" | "unlabeled"

struct ManifestEntry {
    std::optional<std::string> url;
    std::optional<std::filesystem::path> path;
    std::optional<Label> label;  // human label
    std::string source_page;
    std::string document_domain;

    std::string source() const { return url ? *url : path ? path->string() : std::string(); }
};

/// JSONL, one {"url"|"path", "label"?, "source_page"?, "document_domain"?}
/// per line. Relative paths resolve against the manifest's directory.
/// Throws on a line that is not valid JSON or has neither/both of url, path.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& file);

struct Origin {
    std::string source;  // url or local path
    std::string source_page;
    std::string document_domain;
    bool operator==(const Origin&) const = default;
};

struct CorpusRecord {
    std::string sha256;
    std::string stored_path;  // "objects/<sha256>", relative to the corpus root
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    Label label = Label::Unlabeled;
    LabelSource label_source = LabelSource::None;
    std::vector<Origin> origins;
};

/// Content-addressed image store: ROOT/objects/<sha256> plus ROOT/index.jsonl.
class Corpus {
public:
    /// Opens (or starts) a corpus at root; reads index.jsonl when present.
    static Corpus open(const std::filesystem::path& root);

    void save() const;

    const std::filesystem::path& root() const { return root_; }
    std::vector<CorpusRecord>& records() { return records_; }
    const std::vector<CorpusRecord>& records() const { return records_; }
    std::filesystem::path object_path(const CorpusRecord& r) const { return root_ / r.stored_path; }

    /// Stores bytes under their hash (no-op if present) and returns the hash.
    std::string store_object(std::span<const std::uint8_t> bytes) const;
    std::vector<std::uint8_t> read_object(const CorpusRecord& r) const;

    const CorpusRecord* find(const std::string& sha256) const;

private:
    std::filesystem::path root_;
    std::vector<CorpusRecord> records_;
};

struct IngestOptions {
    unsigned fetch_concurrency = 8;
    unsigned per_host_limit = 4;
    std::chrono::seconds timeout{60};
    std::string user_agent = "percival-corpus/1.0";
    /// Merge entries whose bytes already exist in the corpus. When false every
    /// entry gets its own record and dedupe() merges them later.
    bool merge_duplicates = true;
};

struct EntryError {
    std::string source;
    std::string error;
};

struct IngestReport {
    std::size_t entries = 0;
    std::size_t added = 0;
    std::size_t merged = 0;  // bytes already present; origin appended
    std::vector<EntryError> fetch_failures;
    std::vector<EntryError> decode_failures;
    std::vector<EntryError> label_conflicts;
};

IngestReport ingest(Corpus& corpus, const std::vector<ManifestEntry>& entries, const IngestOptions& opt = {});

struct FetchResult {
    bool ok = false;
    std::vector<std::uint8_t> body;
    std::string error;
};

/// Single HTTP(S) GET with redirects followed and an overall deadline.
FetchResult http_get(const std::string& url, const IngestOptions& opt);

struct DedupeReport {
    struct Merge {
        std::string sha256;
        std::size_t removed_records = 0;
    };
    std::vector<Merge> merges;
    std::size_t merged_records = 0;
    std::vector<EntryError> label_conflicts;
    /// Visually near-identical but byte-distinct pairs (64-bit difference hash
    /// within near_threshold bits). Reported only, never merged.
    std::vector<std::pair<std::string, std::string>> near_duplicates;
};

DedupeReport dedupe(Corpus& corpus, bool find_near_duplicates = false, unsigned near_threshold = 4);

/// 64-bit difference hash of a bitmap (9x8 grayscale gradient signs).
std::uint64_t difference_hash(const Bitmap& b);

struct LabelReport {
    std::size_t labeled_ad = 0;
    std::size_t labeled_non_ad = 0;
    std::size_t kept_human = 0;
    std::size_t kept_existing = 0;
    std::size_t no_url = 0;
    std::size_t bypassed = 0;
    std::vector<EntryError> errors;
};

/// Labels records that are unlabeled (or, with relabel, labelled by a
/// machine). Human labels are never touched. A record is an ad when any of
/// its url origins is blocked by the rules, as an image request.
LabelReport auto_label(Corpus& corpus, const filter::RuleSet& rules, bool relabel = false);
/// Model labelling; frames under the bypass size cannot be judged and stay as they are.
LabelReport auto_label(Corpus& corpus, const Classifier& model, bool relabel = false);

struct SplitRow {
    std::string sha256;
    std::string path;  // stored path relative to the corpus root
    Label label;
};

struct Split {
    std::vector<SplitRow> train;
    std::vector<SplitRow> test;
    std::size_t ads_available = 0;
    std::size_t non_ads_available = 0;
};

/// Down-samples the majority class to the minority count (seeded), then
/// splits each class with the same test fraction. Throws if a class is empty.
Split balance_and_split(const Corpus& corpus, std::uint64_t seed, double test_fraction);

/// Writes train.jsonl and test.jsonl ({"path", "sha256", "label"}; paths
/// absolute so the manifests are usable from anywhere).
void write_split(const Corpus& corpus, const Split& split, const std::filesystem::path& out_dir);

/// Unbiased seeded Fisher-Yates, stable across standard libraries.
template <class T, class Rng>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r;
        do r = rng(); while (r >= limit);
        std::swap(v[i - 1], v[static_cast<std::size_t>(r % bound)]);
    }
}

}  // namespace percival::corpus
