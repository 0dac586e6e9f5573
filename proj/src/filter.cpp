#include "percival/filter.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace percival::filter {

namespace fs = std::filesystem;

namespace {

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = lower(c);
    return out;
}

std::string_view trim(std::string_view s) {
    const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
    while (!s.empty() && ws(s.front())) s.remove_prefix(1);
    while (!s.empty() && ws(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) return parts;
        start = pos + 1;
    }
}

bool is_separator(char c) {
    const auto u = static_cast<unsigned char>(c);
    return !(std::isalnum(u) || c == '_' || c == '-' || c == '.' || c == '%');
}

bool is_ip_literal(std::string_view host) {
    if (host.empty()) return false;
    if (host.front() == '[' || host.find(':') != std::string_view::npos) return true;
    return std::all_of(host.begin(), host.end(), [](char c) { return c == '.' || std::isdigit(static_cast<unsigned char>(c)); });
}

bool domain_covers(std::string_view host, std::string_view domain) {
    if (host == domain) return true;
    return host.size() > domain.size() && host.ends_with(domain) && host[host.size() - domain.size() - 1] == '.';
}

/// Element-hiding and its relatives: "##", "#@#", "#?#", "#$#", "#@?#", "#@$#".
bool is_cosmetic(std::string_view line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] != '#') continue;
        std::size_t j = i + 1;
        while (j < line.size() && (line[j] == '@' || line[j] == '?' || line[j] == '$') && j - i <= 2) ++j;
        if (j < line.size() && line[j] == '#') return true;
    }
    return false;
}

std::uint32_t gram_at(std::string_view s, std::size_t i) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[i + 1])) << 8 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[i + 2])) << 16 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[i + 3])) << 24;
}

}  // namespace

// ---- public suffix list ----

PublicSuffixList PublicSuffixList::parse(std::string_view text) {
    PublicSuffixList psl;
    for (auto line : split(text, '\n')) {
        line = trim(line);
        if (line.empty() || line.starts_with("//")) continue;
        line = line.substr(0, line.find_first_of(" \t"));
        std::string rule = lowercase(line);
        if (rule.starts_with("!")) {
            psl.exception_.insert(rule.substr(1));
        } else if (rule.starts_with("*.")) {
            psl.wildcard_.insert(rule.substr(2));
        } else {
            psl.exact_.insert(std::move(rule));
        }
    }
    return psl;
}

PublicSuffixList PublicSuffixList::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read public suffix list " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const PublicSuffixList& PublicSuffixList::bundled() {
    static const PublicSuffixList psl = [] {
        fs::path dir;
        if (const char* env = std::getenv("PERCIVAL_DATA_DIR")) {
            dir = env;
        } else {
#ifdef PERCIVAL_DATA_DIR
            dir = PERCIVAL_DATA_DIR;
#endif
        }
        return load(dir / "public_suffix_list.dat");
    }();
    return psl;
}

std::string PublicSuffixList::public_suffix(std::string_view host) const {
    std::string h = lowercase(host);
    while (!h.empty() && h.back() == '.') h.pop_back();
    if (h.empty() || is_ip_literal(h)) return h;

    std::vector<std::size_t> starts{0};  // offsets of each label
    for (std::size_t i = 0; i < h.size(); ++i)
        if (h[i] == '.') starts.push_back(i + 1);
    const std::size_t n = starts.size();
    auto suffix = [&](std::size_t labels) { return std::string_view(h).substr(starts[n - labels]); };

    for (std::size_t k = n; k >= 1; --k) {
        if (exception_.count(std::string(suffix(k)))) return std::string(k > 1 ? suffix(k - 1) : suffix(k));
    }
    std::size_t best = 1;  // implicit "*" rule
    for (std::size_t k = 1; k <= n; ++k) {
        if (exact_.count(std::string(suffix(k)))) best = std::max(best, k);
        if (k >= 2 && wildcard_.count(std::string(suffix(k - 1)))) best = std::max(best, k);
    }
    return std::string(suffix(best));
}

std::string PublicSuffixList::registrable_domain(std::string_view host) const {
    std::string h = lowercase(host);
    while (!h.empty() && h.back() == '.') h.pop_back();
    if (h.empty() || is_ip_literal(h)) return h;
    const std::string ps = public_suffix(h);
    if (ps.size() >= h.size()) return h;
    // one more label to the left of the suffix
    const std::size_t dot = h.size() - ps.size() - 1;
    const std::size_t begin = h.rfind('.', dot - 1);
    return begin == std::string::npos || dot == 0 ? h : h.substr(begin + 1);
}

// ---- urls and patterns ----

ParsedUrl parse_url(std::string_view url) {
    const auto sep = url.find("://");
    if (sep == std::string_view::npos || sep == 0) throw UrlError("url needs a scheme: " + std::string(url));
    for (std::size_t i = 0; i < sep; ++i) {
        const auto c = static_cast<unsigned char>(url[i]);
        const bool ok = std::isalpha(c) || (i > 0 && (std::isdigit(c) || c == '+' || c == '-' || c == '.'));
        if (!ok) throw UrlError("bad url scheme: " + std::string(url));
    }
    const std::size_t auth_begin = sep + 3;
    std::size_t auth_end = url.find_first_of("/?#", auth_begin);
    if (auth_end == std::string_view::npos) auth_end = url.size();
    std::size_t host_begin = auth_begin;
    if (const auto at = url.substr(auth_begin, auth_end - auth_begin).rfind('@'); at != std::string_view::npos) {
        host_begin = auth_begin + at + 1;
    }
    std::size_t host_end = auth_end;
    if (host_begin < auth_end && url[host_begin] == '[') {
        const auto close = url.find(']', host_begin);
        if (close == std::string_view::npos || close > auth_end) throw UrlError("bad ipv6 host: " + std::string(url));
        host_end = close + 1;
    } else if (const auto colon = url.substr(host_begin, auth_end - host_begin).find(':');
               colon != std::string_view::npos) {
        host_end = host_begin + colon;
    }
    if (host_end == host_begin) throw UrlError("url has no host: " + std::string(url));

    ParsedUrl out;
    out.url = std::string(url);
    for (std::size_t i = 0; i < sep; ++i) out.url[i] = lower(out.url[i]);
    for (std::size_t i = host_begin; i < host_end; ++i) out.url[i] = lower(out.url[i]);
    out.host_begin = host_begin;
    out.host_end = host_end;
    return out;
}

std::vector<Token> tokenize_pattern(std::string_view p) {
    std::vector<Token> tokens;
    if (p.starts_with("||")) {
        tokens.push_back({TokenKind::DomainAnchor, {}});
        p.remove_prefix(2);
    } else if (p.starts_with("|")) {
        tokens.push_back({TokenKind::StartAnchor, {}});
        p.remove_prefix(1);
    }
    bool end_anchor = false;
    if (p.ends_with("|")) {
        end_anchor = true;
        p.remove_suffix(1);
    }
    for (char c : p) {
        if (c == '*') {
            if (tokens.empty() || tokens.back().kind != TokenKind::Wildcard) tokens.push_back({TokenKind::Wildcard, {}});
        } else if (c == '^') {
            tokens.push_back({TokenKind::Separator, {}});
        } else if (!tokens.empty() && tokens.back().kind == TokenKind::Literal) {
            tokens.back().text.push_back(c);
        } else {
            tokens.push_back({TokenKind::Literal, std::string(1, c)});
        }
    }
    if (end_anchor) tokens.push_back({TokenKind::EndAnchor, {}});
    return tokens;
}

std::string render_pattern(const std::vector<Token>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        switch (t.kind) {
            case TokenKind::Literal: out += t.text; break;
            case TokenKind::Wildcard: out += '*'; break;
            case TokenKind::Separator: out += '^'; break;
            case TokenKind::DomainAnchor: out += "||"; break;
            case TokenKind::StartAnchor:
            case TokenKind::EndAnchor: out += '|'; break;
        }
    }
    return out;
}

bool pattern_matches(const std::vector<Token>& tokens, const ParsedUrl& parsed) {
    const std::string& url = parsed.url;
    const std::size_t n = url.size();
    const std::size_t t_count = tokens.size();
    std::vector<std::int8_t> memo((t_count + 1) * (n + 1), -1);

    auto literal_at = [&](const std::string& lit, std::size_t p) {
        if (p + lit.size() > n) return false;
        for (std::size_t i = 0; i < lit.size(); ++i) {
            const char u = url[p + i];
            const char c = p + i < parsed.host_end ? lower(lit[i]) : lit[i];
            if (u != c) return false;
        }
        return true;
    };

    auto rec = [&](auto& self, std::size_t t, std::size_t p) -> bool {
        if (t == t_count) return true;
        std::int8_t& slot = memo[t * (n + 1) + p];
        if (slot >= 0) return slot != 0;
        bool ok = false;
        const Token& tok = tokens[t];
        switch (tok.kind) {
            case TokenKind::Literal:
                ok = literal_at(tok.text, p) && self(self, t + 1, p + tok.text.size());
                break;
            case TokenKind::Wildcard:
                for (std::size_t q = p; q <= n && !ok; ++q) ok = self(self, t + 1, q);
                break;
            case TokenKind::Separator:
                ok = p == n ? self(self, t + 1, p) : is_separator(url[p]) && self(self, t + 1, p + 1);
                break;
            case TokenKind::EndAnchor:
                ok = p == n && self(self, t + 1, p);
                break;
            case TokenKind::DomainAnchor:
            case TokenKind::StartAnchor:
                ok = false;  // only meaningful as the first token
                break;
        }
        slot = ok ? 1 : 0;
        return ok;
    };

    if (t_count > 0 && tokens[0].kind == TokenKind::DomainAnchor) {
        if (rec(rec, 1, parsed.host_begin)) return true;
        for (std::size_t i = parsed.host_begin; i < parsed.host_end; ++i)
            if (url[i] == '.' && rec(rec, 1, i + 1)) return true;
        return false;
    }
    if (t_count > 0 && tokens[0].kind == TokenKind::StartAnchor) return rec(rec, 1, 0);
    for (std::size_t p = 0; p <= n; ++p)
        if (rec(rec, 0, p)) return true;
    return false;
}

// ---- rules ----

ParsedLine parse_line(std::string_view line) {
    line = trim(line);
    ParsedLine out;
    if (line.empty()) return out;
    if (line.front() == '!' || (line.front() == '[' && line.back() == ']')) {
        out.kind = LineKind::Comment;
        return out;
    }
    if (is_cosmetic(line)) {
        out.kind = LineKind::Css;
        return out;
    }
    out.kind = LineKind::Rule;
    FilterRule rule;
    rule.raw = std::string(line);
    std::string_view body = line;
    if (body.starts_with("@@")) {
        rule.exception = true;
        body.remove_prefix(2);
    }
    auto reject = [&](std::string why) {
        rule.supported = false;
        if (rule.unsupported_reason.empty()) rule.unsupported_reason = std::move(why);
    };

    std::string_view pattern = body;
    if (const auto dollar = body.rfind('$'); dollar != std::string_view::npos) {
        pattern = body.substr(0, dollar);
        const std::string_view opts = body.substr(dollar + 1);
        if (opts.empty()) reject("empty option list");
        for (auto opt : split(opts, ',')) {
            const std::string o = lowercase(trim(opt));
            if (o == "image") {
                rule.image = true;
            } else if (o == "~image") {
                rule.image = false;
            } else if (o == "third-party") {
                rule.third_party = true;
            } else if (o == "~third-party") {
                rule.third_party = false;
            } else if (o.starts_with("domain=")) {
                for (auto d : split(std::string_view(o).substr(7), '|')) {
                    d = trim(d);
                    if (d.starts_with("~") && d.size() > 1) {
                        rule.exclude_domains.emplace_back(d.substr(1));
                    } else if (!d.empty() && d != "~") {
                        rule.include_domains.emplace_back(d);
                    } else {
                        reject("empty domain in option");
                    }
                }
            } else {
                reject("option " + (o.empty() ? std::string("(empty)") : o));
            }
        }
    }
    if (pattern.size() >= 2 && pattern.front() == '/' && pattern.back() == '/') reject("regular expression rule");
    rule.tokens = tokenize_pattern(pattern);
    out.rule = std::move(rule);
    return out;
}

bool is_third_party(const ParsedUrl& url, std::string_view document_domain, const PublicSuffixList& psl) {
    if (document_domain.empty()) return false;
    return psl.registrable_domain(url.host()) != psl.registrable_domain(lowercase(document_domain));
}

bool options_match(const FilterRule& rule, const RequestContext& ctx, bool third_party) {
    if (rule.image && *rule.image != (ctx.type == ResourceType::Image)) return false;
    if (rule.third_party && *rule.third_party != third_party) return false;
    if (!rule.include_domains.empty() || !rule.exclude_domains.empty()) {
        std::string doc = lowercase(ctx.document_domain);
        while (!doc.empty() && doc.back() == '.') doc.pop_back();
        if (!rule.include_domains.empty() &&
            std::none_of(rule.include_domains.begin(), rule.include_domains.end(),
                         [&](const std::string& d) { return domain_covers(doc, d); })) {
            return false;
        }
        if (std::any_of(rule.exclude_domains.begin(), rule.exclude_domains.end(),
                        [&](const std::string& d) { return domain_covers(doc, d); })) {
            return false;
        }
    }
    return true;
}

void RuleSet::Bucketed::add(FilterRule rule) {
    const std::string* longest = nullptr;
    for (const auto& t : rule.tokens)
        if (t.kind == TokenKind::Literal && (!longest || t.text.size() > longest->size())) longest = &t.text;
    const std::size_t index = rules.size();
    if (longest && longest->size() >= 4) {
        by_gram[gram_at(lowercase(*longest), 0)].push_back(index);
    } else {
        fallback.push_back(index);
    }
    rules.push_back(std::move(rule));
}

std::optional<std::size_t> RuleSet::Bucketed::first_match(const ParsedUrl& url, const std::string& lowered,
                                                          const RequestContext& ctx, bool third_party) const {
    if (rules.empty()) return std::nullopt;
    std::vector<std::size_t> candidates = fallback;
    if (!by_gram.empty()) {
        for (std::size_t i = 0; i + 4 <= lowered.size(); ++i) {
            if (auto it = by_gram.find(gram_at(lowered, i)); it != by_gram.end()) {
                candidates.insert(candidates.end(), it->second.begin(), it->second.end());
            }
        }
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (std::size_t i : candidates) {
        const FilterRule& r = rules[i];
        if (options_match(r, ctx, third_party) && pattern_matches(r.tokens, url)) return i;
    }
    return std::nullopt;
}

RuleSet::RuleSet() : RuleSet(PublicSuffixList::bundled()) {}
RuleSet::RuleSet(const PublicSuffixList& psl) : psl_(&psl) {}

RuleSet RuleSet::parse(std::string_view text) { return parse(text, PublicSuffixList::bundled()); }

RuleSet RuleSet::parse(std::string_view text, const PublicSuffixList& psl) {
    RuleSet set(psl);
    if (text.empty()) return set;
    if (text.ends_with('\n')) text.remove_suffix(1);
    for (auto line : split(text, '\n')) set.add_line(line);
    return set;
}

RuleSet RuleSet::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read filter list " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void RuleSet::add_line(std::string_view line) {
    ++stats_.lines;
    ParsedLine parsed = parse_line(line);
    switch (parsed.kind) {
        case LineKind::Blank: ++stats_.blank; return;
        case LineKind::Comment: ++stats_.comments; return;
        case LineKind::Css: ++stats_.css; return;
        case LineKind::Rule: break;
    }
    FilterRule& rule = *parsed.rule;
    if (!rule.supported) {
        ++stats_.unsupported;
        unsupported_.push_back(std::move(rule));
    } else if (rule.exception) {
        ++stats_.exception_rules;
        exceptions_.add(std::move(rule));
    } else {
        ++stats_.block_rules;
        block_.add(std::move(rule));
    }
}

Decision RuleSet::match(const RequestContext& ctx) const {
    const ParsedUrl url = parse_url(ctx.url);
    Decision d;
    if (block_.rules.empty()) return d;
    const std::string lowered = lowercase(url.url);
    const bool third = is_third_party(url, ctx.document_domain, *psl_);
    auto hit = block_.first_match(url, lowered, ctx, third);
    if (!hit) return d;
    d.matched_rule = block_.rules[*hit].raw;
    if (auto ex = exceptions_.first_match(url, lowered, ctx, third)) {
        d.exception_rule = exceptions_.rules[*ex].raw;
        return d;
    }
    d.blocked = true;
    return d;
}

const char* to_string(Label l) { return l == Label::Ad ? "ad" : "non-ad"; }

Label label_url(const RuleSet& rules, const RequestContext& ctx) {
    return rules.match(ctx).blocked ? Label::Ad : Label::NonAd;
}

}  // namespace percival::filter
