#pragma once

// Hand-annotated filter syntax conformance corpus. Expected values follow the
// documented ad-block filter semantics; host matching is case-insensitive and
// path matching case-sensitive.

#include <string>
#include <vector>

#include "percival/filter.hpp"

namespace cases {

struct FilterCase {
    const char* what;
    std::vector<std::string> rules;
    std::string url;
    std::string document_domain;
    percival::filter::ResourceType type;
    bool blocked;
};

inline std::vector<FilterCase> filter_conformance() {
    using percival::filter::ResourceType;
    const auto img = ResourceType::Image;
    const auto other = ResourceType::Other;
    return {
        {"domain anchor + separator", {"||ads.example.com^"}, "http://ads.example.com/banner.png", "", img, true},
        {"exception wins", {"||example.com^", "@@||example.com/ok.png"}, "http://example.com/ok.png", "", img, false},
        {"exception is path specific", {"||example.com^", "@@||example.com/ok.png"}, "http://example.com/no.png", "", img, true},
        {"empty rule set", {}, "http://ads.example.com/banner.png", "", img, false},
        {"|| never mid-label", {"||ad.com"}, "http://myad.com/x.png", "", img, false},
        {"|| at subdomain boundary", {"||ad.com"}, "http://sub.ad.com/x.png", "", img, true},
        {"|| then ^ rejects longer host", {"||ad.com^"}, "http://ad.com.evil.net/x", "", img, false},
        {"|| without ^ is a prefix", {"||ad.com"}, "http://ad.com.evil.net/x", "", img, true},
        {"|| does not match in path", {"||ad.com^"}, "http://x.net/ad.com/x", "", img, false},
        {"|| with port", {"||ad.com^"}, "http://ad.com:8080/x", "", img, true},
        {"|| with userinfo", {"||ad.com^"}, "http://user@ad.com/x", "", img, true},
        {"plain substring", {"/banner/*"}, "http://x.com/img/banner/1.png", "", img, true},
        {"plain substring miss", {"/banner/*"}, "http://x.com/img/banners/1.png", "", img, false},
        {"slash-delimited pattern is a regex", {"/banner/"}, "http://x.com/img/banner/1.png", "", img, false},
        {"start anchor", {"|http://ads."}, "http://ads.x.com/a.gif", "", img, true},
        {"start anchor other scheme", {"|http://ads."}, "https://ads.x.com/a.gif", "", img, false},
        {"end anchor", {"swf|"}, "http://x.com/movie.swf", "", other, true},
        {"end anchor with query", {"swf|"}, "http://x.com/movie.swf?x=1", "", other, false},
        {"wildcard", {"/ad*.gif"}, "http://x.com/ad/banner.gif", "", img, true},
        {"wildcard miss", {"/ad*.gif"}, "http://x.com/ad/banner.png", "", img, false},
        {"^ matches ?", {"/ad^"}, "http://x.com/ad?x=1", "", img, true},
        {"^ matches end", {"/ad^"}, "http://x.com/ad", "", img, true},
        {"^ matches /", {"/ad^"}, "http://x.com/ad/1.png", "", img, true},
        {"^ rejects .", {"/ad^"}, "http://x.com/ad.png", "", img, false},
        {"^ rejects -", {"/ad^"}, "http://x.com/ad-1", "", img, false},
        {"^ rejects _", {"/ad^"}, "http://x.com/ad_1", "", img, false},
        {"^ rejects %", {"/ad^"}, "http://x.com/ad%20x", "", img, false},
        {"^ matches =", {"/ad^"}, "http://x.com/ad=1", "", img, true},
        {"anchor, separator and wildcard", {"||x.com^*/ads/"}, "http://x.com/a/b/ads/c.png", "", img, true},
        {"anchored wildcard with end", {"||x.com/ads/*.gif|"}, "http://x.com/ads/p/q.gif", "", img, true},
        {"anchored wildcard with end miss", {"||x.com/ads/*.gif|"}, "http://x.com/ads/p/q.gif?1", "", img, false},
        {"$image on image", {"/ads/*$image"}, "http://x.com/ads/a.png", "", img, true},
        {"$image on other", {"/ads/*$image"}, "http://x.com/ads/a.js", "", other, false},
        {"$~image on image", {"/ads/*$~image"}, "http://x.com/ads/a.png", "", img, false},
        {"$~image on other", {"/ads/*$~image"}, "http://x.com/ads/a.js", "", other, true},
        {"third-party, other site", {"||tracker.net^$third-party"}, "http://tracker.net/p.gif", "news.com", img, true},
        {"third-party, same site", {"||tracker.net^$third-party"}, "http://tracker.net/p.gif", "tracker.net", img, false},
        {"third-party, same registrable domain", {"||tracker.net^$third-party"}, "http://img.tracker.net/p.gif", "www.tracker.net", img, false},
        {"third-party across public suffix", {"||cdn.example.co.uk^$third-party"}, "http://cdn.example.co.uk/a.png", "other.co.uk", img, true},
        {"same site under public suffix", {"||cdn.example.co.uk^$third-party"}, "http://cdn.example.co.uk/a.png", "www.example.co.uk", img, false},
        {"~third-party, same site", {"/ads/*$~third-party"}, "http://x.com/ads/a.png", "x.com", img, true},
        {"~third-party, other site", {"/ads/*$~third-party"}, "http://x.com/ads/a.png", "y.com", img, false},
        {"domain= exact", {"/ads/*$domain=news.com"}, "http://cdn.net/ads/a.png", "news.com", img, true},
        {"domain= subdomain", {"/ads/*$domain=news.com"}, "http://cdn.net/ads/a.png", "sub.news.com", img, true},
        {"domain= not a suffix label", {"/ads/*$domain=news.com"}, "http://cdn.net/ads/a.png", "othernews.com", img, false},
        {"domain=~ excluded", {"/ads/*$domain=~news.com"}, "http://cdn.net/ads/a.png", "news.com", img, false},
        {"domain=~ elsewhere", {"/ads/*$domain=~news.com"}, "http://cdn.net/ads/a.png", "other.com", img, true},
        {"domain= with nested exclusion", {"/ads/*$domain=news.com|~sport.news.com"}, "http://cdn.net/ads/a.png", "sport.news.com", img, false},
        {"domain= with nested exclusion, parent", {"/ads/*$domain=news.com|~sport.news.com"}, "http://cdn.net/ads/a.png", "news.com", img, true},
        {"unsupported option is inactive", {"/ads/*$script"}, "http://x.com/ads/a.png", "", img, false},
        {"unsupported exception is inactive", {"/ads/*", "@@/ads/*$script"}, "http://x.com/ads/a.png", "", img, true},
        {"exception with options", {"/ads/*", "@@||x.com^$image"}, "http://x.com/ads/a.png", "", img, false},
        {"exception with options, other type", {"/ads/*", "@@||x.com^$image"}, "http://x.com/ads/a.js", "", other, true},
        {"exception alone blocks nothing", {"@@||example.com^"}, "http://example.com/a.png", "", img, false},
        {"path is case-sensitive", {"/Banner."}, "http://x.com/banner.gif", "", img, false},
        {"path case match", {"/Banner."}, "http://x.com/Banner.gif", "", img, true},
        {"host is case-insensitive", {"||EXAMPLE.com^"}, "http://Example.COM/a.png", "", img, true},
        {"regex rules are unsupported", {"/^https?://ads/"}, "http://ads/x.png", "", img, false},
        {"ip host", {"||192.168.0.1^"}, "http://192.168.0.1/ad.png", "", img, true},
        {"comment line is not a rule", {"! /ads/"}, "http://x.com/ads/a.png", "", img, false},
        {"element hiding is not a rule", {"x.com##.ads"}, "http://x.com/ads/a.png", "", img, false},
    };
}

}  // namespace cases
