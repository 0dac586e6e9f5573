#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace percival::filter {

/// Public suffix list (publicsuffix.org format) for registrable-domain lookup.
class PublicSuffixList {
public:
    static PublicSuffixList parse(std::string_view text);
    static PublicSuffixList load(const std::filesystem::path& path);
    /// The bundled snapshot: $PERCIVAL_DATA_DIR or the source tree's data/.
    static const PublicSuffixList& bundled();

    /// eTLD+1 of a lowercase host. IP literals and hosts that are themselves
    /// public suffixes come back unchanged.
    std::string registrable_domain(std::string_view host) const;
    std::string public_suffix(std::string_view host) const;
    std::size_t size() const { return exact_.size() + wildcard_.size() + exception_.size(); }

private:
    std::unordered_set<std::string> exact_;
    std::unordered_set<std::string> wildcard_;   // "*.x" stored as "x"
    std::unordered_set<std::string> exception_;  // "!x" stored as "x"
};

class UrlError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ParsedUrl {
    std::string url;          // scheme and host lowercased, rest untouched
    std::size_t host_begin = 0;
    std::size_t host_end = 0;
    std::string_view host() const { return std::string_view(url).substr(host_begin, host_end - host_begin); }
};

/// Requires scheme "://" host. Strips nothing but lowercases scheme and host.
ParsedUrl parse_url(std::string_view url);

enum class TokenKind { Literal, Wildcard, Separator, DomainAnchor, StartAnchor, EndAnchor };

struct Token {
    TokenKind kind;
    std::string text;  // Literal only
    bool operator==(const Token&) const = default;
};

std::vector<Token> tokenize_pattern(std::string_view pattern);
/// Inverse of tokenize_pattern (runs of '*' collapse to one).
std::string render_pattern(const std::vector<Token>& tokens);

enum class ResourceType { Image, Other };

struct FilterRule {
    std::string raw;
    bool exception = false;
    std::vector<Token> tokens;
    std::optional<bool> image;        // $image / $~image
    std::optional<bool> third_party;  // $third-party / $~third-party
    std::vector<std::string> include_domains;
    std::vector<std::string> exclude_domains;
    bool supported = true;
    std::string unsupported_reason;
};

enum class LineKind { Blank, Comment, Css, Rule };

struct ParsedLine {
    LineKind kind = LineKind::Blank;
    std::optional<FilterRule> rule;  // kind == Rule
};

ParsedLine parse_line(std::string_view line);

struct RequestContext {
    std::string url;
    std::string document_domain;
    ResourceType type = ResourceType::Image;
};

struct Decision {
    bool blocked = false;
    std::optional<std::string> matched_rule;    // first block rule that matched
    std::optional<std::string> exception_rule;  // set when an exception overrode it
};

struct ListStats {
    std::size_t lines = 0;
    std::size_t blank = 0;
    std::size_t comments = 0;
    std::size_t css = 0;
    std::size_t block_rules = 0;
    std::size_t exception_rules = 0;
    std::size_t unsupported = 0;
    std::size_t total() const { return blank + comments + css + block_rules + exception_rules + unsupported; }
};

/// Immutable after construction; match() is thread-safe.
class RuleSet {
public:
    RuleSet();
    explicit RuleSet(const PublicSuffixList& psl);

    static RuleSet parse(std::string_view text);
    static RuleSet parse(std::string_view text, const PublicSuffixList& psl);
    static RuleSet load(const std::filesystem::path& path);

    /// Appends one line as if it were part of the parsed list.
    void add_line(std::string_view line);

    Decision match(const RequestContext& ctx) const;

    const ListStats& stats() const { return stats_; }
    const std::vector<FilterRule>& block_rules() const { return block_.rules; }
    const std::vector<FilterRule>& exception_rules() const { return exceptions_.rules; }
    std::vector<FilterRule> unsupported_rules() const { return unsupported_; }

private:
    struct Bucketed {
        std::vector<FilterRule> rules;
        std::unordered_map<std::uint32_t, std::vector<std::size_t>> by_gram;
        std::vector<std::size_t> fallback;
        void add(FilterRule rule);
        /// Index of the first matching rule, if any.
        std::optional<std::size_t> first_match(const ParsedUrl& url, const std::string& lowered,
                                               const RequestContext& ctx, bool third_party) const;
    };

    const PublicSuffixList* psl_;
    ListStats stats_;
    Bucketed block_;
    Bucketed exceptions_;
    std::vector<FilterRule> unsupported_;
};

/// Pattern match of a single rule's tokens against a parsed URL (options ignored).
bool pattern_matches(const std::vector<Token>& tokens, const ParsedUrl& url);

/// Options of a single rule against a request context.
bool options_match(const FilterRule& rule, const RequestContext& ctx, bool third_party);

bool is_third_party(const ParsedUrl& url, std::string_view document_domain, const PublicSuffixList& psl);

enum class Label { Ad, NonAd };
const char* to_string(Label l);
Label label_url(const RuleSet& rules, const RequestContext& ctx);

}  // namespace percival::filter
