#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace oscar {

// Counter-based random stream. Output number k is a pure function of
// (seed, label, k); no state is shared between streams, so callers running
// in parallel only need distinct labels.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::string label);

    std::uint64_t seed() const noexcept { return seed_; }
    const std::string& label() const noexcept { return label_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept;
    // Uniform in the open interval (0, 1).
    double uniform() noexcept;
    // Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;
    // Standard normal via Box-Muller; the second value of each pair is kept.
    double normal() noexcept;

    // Independent stream with label "<label>/<name>" under the same seed.
    RngStream child(std::string_view name) const;

private:
    std::uint64_t seed_;
    std::string label_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::optional<double> spare_;
};

// 64-bit finalizer from SplitMix64; bijective.
std::uint64_t mix64(std::uint64_t x) noexcept;

// FNV-1a over the label bytes.
std::uint64_t hash_label(std::string_view label) noexcept;

}  // namespace oscar
