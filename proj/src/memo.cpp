#include "percival/memo.hpp"

namespace percival {

VerdictMemo::Claim VerdictMemo::claim(const ContentHash& key) {
    std::lock_guard lock(mu_);
    if (auto hit = cache_.get(key)) return {Claim::Kind::Hit, *hit, {}};
    if (auto it = pending_.find(key); it != pending_.end()) return {Claim::Kind::Pending, {}, it->second};
    auto& promise = owners_[key];
    pending_.emplace(key, promise.get_future().share());
    return {Claim::Kind::Owner, {}, {}};
}

void VerdictMemo::fulfil(const ContentHash& key, const Verdict& v) {
    std::lock_guard lock(mu_);
    cache_.put(key, v);
    auto it = owners_.find(key);
    if (it == owners_.end()) return;
    it->second.set_value(v);
    owners_.erase(it);
    pending_.erase(key);
}

void VerdictMemo::abandon(const ContentHash& key, std::exception_ptr error) {
    std::lock_guard lock(mu_);
    auto it = owners_.find(key);
    if (it == owners_.end()) return;
    it->second.set_exception(error);
    owners_.erase(it);
    pending_.erase(key);
}

VerdictMemo::Result VerdictMemo::get_or_compute(const ContentHash& key, const std::function<Verdict()>& compute) {
    Claim c = claim(key);
    switch (c.kind) {
        case Claim::Kind::Hit:
            return {c.verdict, true};
        case Claim::Kind::Pending:
            return {c.pending.get(), true};
        case Claim::Kind::Owner:
            break;
    }
    try {
        Verdict v = compute();
        fulfil(key, v);
        return {v, false};
    } catch (...) {
        abandon(key, std::current_exception());
        throw;
    }
}

}  // namespace percival
