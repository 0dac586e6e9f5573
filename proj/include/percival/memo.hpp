#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <future>
#include <list>
#include <mutex>
#include <optional>
#include <unordered_map>

#include "percival/classifier.hpp"
#include "percival/hash.hpp"

namespace percival {

/// Fixed-capacity least-recently-used map. Both get() and put() count as a
/// use. Capacity 0 stores nothing. Thread-safe.
template <class Key, class Value, class Hasher = std::hash<Key>>
class LruCache {
public:
    explicit LruCache(std::size_t capacity) : capacity_(capacity) {}

    std::optional<Value> get(const Key& key) {
        std::lock_guard lock(mu_);
        auto it = index_.find(key);
        if (it == index_.end()) return std::nullopt;
        order_.splice(order_.begin(), order_, it->second);
        return it->second->second;
    }

    void put(const Key& key, Value value) {
        std::lock_guard lock(mu_);
        if (capacity_ == 0) return;
        if (auto it = index_.find(key); it != index_.end()) {
            it->second->second = std::move(value);
            order_.splice(order_.begin(), order_, it->second);
            return;
        }
        if (index_.size() == capacity_) {
            index_.erase(order_.back().first);
            order_.pop_back();
        }
        order_.emplace_front(key, std::move(value));
        index_.emplace(key, order_.begin());
    }

    bool contains(const Key& key) const {
        std::lock_guard lock(mu_);
        return index_.count(key) != 0;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return index_.size();
    }

    std::size_t capacity() const noexcept { return capacity_; }

    void clear() {
        std::lock_guard lock(mu_);
        index_.clear();
        order_.clear();
    }

private:
    using Entry = std::pair<Key, Value>;
    const std::size_t capacity_;
    mutable std::mutex mu_;
    std::list<Entry> order_;  // front = most recent
    std::unordered_map<Key, typename std::list<Entry>::iterator, Hasher> index_;
};

inline constexpr std::size_t kDefaultMemoCapacity = 10'000;

/// Verdict cache keyed by content hash, with single-flight: while one caller
/// computes the verdict for a hash, other callers for the same hash get the
/// pending result instead of starting another forward pass.
class VerdictMemo {
public:
    explicit VerdictMemo(std::size_t capacity = kDefaultMemoCapacity) : cache_(capacity) {}

    std::optional<Verdict> lookup(const ContentHash& key) { return cache_.get(key); }
    void insert(const ContentHash& key, const Verdict& v) { cache_.put(key, v); }

    struct Claim {
        enum class Kind { Hit, Pending, Owner } kind;
        Verdict verdict;                        // Hit
        std::shared_future<Verdict> pending;    // Pending
    };

    /// Hit when cached; Pending when another caller owns the computation;
    /// otherwise the caller becomes Owner and must call fulfil() or abandon().
    Claim claim(const ContentHash& key);
    void fulfil(const ContentHash& key, const Verdict& v);
    void abandon(const ContentHash& key, std::exception_ptr error);

    struct Result {
        Verdict verdict;
        bool cache_hit = false;  // true when no forward pass ran for this call
    };

    /// Blocking convenience over claim/fulfil/abandon.
    Result get_or_compute(const ContentHash& key, const std::function<Verdict()>& compute);

    std::size_t size() const { return cache_.size(); }
    std::size_t capacity() const noexcept { return cache_.capacity(); }
    void clear() { cache_.clear(); }

private:
    LruCache<ContentHash, Verdict, ContentHashHasher> cache_;
    std::mutex mu_;
    std::unordered_map<ContentHash, std::promise<Verdict>, ContentHashHasher> owners_;
    std::unordered_map<ContentHash, std::shared_future<Verdict>, ContentHashHasher> pending_;
};

}  // namespace percival
