#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace chbr {

/// 64-bit FNV-1a over the raw bytes of `s`. Stable across platforms.
std::uint64_t fnv1a64(std::string_view s);

/// 16 lowercase hex digits of fnv1a64(s); used as the embedding id of a text.
std::string content_id(std::string_view s);

std::string trim(std::string_view s);

/// Derives an independent generator seed from a run seed, a named stream and
/// integer coordinates (class index, sample index, trial index, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::initializer_list<std::uint64_t> coords = {});

/// Unbiased integer in [0, n) from a 64-bit Mersenne twister. Rejection
/// sampling keeps the sequence identical across standard library vendors,
/// which std::uniform_int_distribution does not guarantee.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

/// Double in [0, 1) with 53 random bits.
double uniform_unit(std::mt19937_64& rng);

template <typename T>
void portable_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace chbr

#include <functional>

namespace chbr {

/// Calls fn(i) for i in [0, n) on up to `max_workers` threads. Every index is
/// attempted; if any call throws, the exception of the lowest failing index is
/// rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t max_workers, const std::function<void(std::size_t)>& fn);

}  // namespace chbr
