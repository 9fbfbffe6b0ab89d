#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace oscar {

inline constexpr std::uint32_t kCategoryVocabulary = 8;
inline constexpr std::uint32_t kCommonDomainPool = 6;
inline constexpr std::uint32_t kDomainPool = 12;
// domain_id carried by server-synthesized images; never produced by render_image.
inline constexpr std::uint32_t kSyntheticDomain = 0xFFFFFFFFu;

std::string_view category_name(std::uint32_t category_id);
std::string_view domain_name(std::uint32_t domain_id);

// Single-channel square image with pixels in [0, 1], row-major.
struct Image {
    std::uint32_t category = 0;
    std::uint32_t domain = 0;
    std::uint64_t instance_seed = 0;
    std::vector<float> pixels;

    bool synthetic() const noexcept { return domain == kSyntheticDomain; }
    friend bool operator==(const Image&, const Image&) = default;
};

struct Dataset {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 1;
    std::vector<Image> images;

    std::size_t size() const noexcept { return images.size(); }
    std::size_t pixel_count() const noexcept { return std::size_t{height} * width * channels; }
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class SplitMode { common, unique };

SplitMode parse_split_mode(std::string_view text);
std::string_view to_string(SplitMode mode);

struct CorpusConfig {
    std::uint32_t n_categories = 8;
    std::uint32_t n_domains = 6;
    std::uint32_t n_clients = 6;
    std::uint32_t images_per_category = 30;
    std::uint32_t test_images_per_category = 20;
    std::uint32_t image_size = 16;
    std::uint64_t master_seed = 0;

    // Throws ConfigError when counts or the mode's domain constraints are violated.
    void validate(SplitMode mode) const;
};

// Deterministic procedural image: shape from `category_id`, jittered by the
// seed (position +-2 px, scale +-20%), then the domain's style transform.
Image render_image(std::uint32_t category_id, std::uint32_t domain_id, std::uint64_t instance_seed,
                   std::uint32_t size);

struct FederatedSplit {
    SplitMode mode = SplitMode::common;
    std::vector<Dataset> train;
    std::vector<Dataset> test;
    // domain_of[client][category]
    std::vector<std::vector<std::uint32_t>> domain_of;

    std::size_t client_count() const noexcept { return train.size(); }
};

FederatedSplit build_federated_split(const CorpusConfig& config, SplitMode mode);

// Every (category, domain) cell the mode can place at a client, images_per_cell each.
Dataset build_pretrain_corpus(const CorpusConfig& config, SplitMode mode, std::uint32_t images_per_cell);

// Instance-seed roles; the top four bits of every seed hold the role, so seed
// sets of different roles are disjoint by construction.
enum class SeedRole : std::uint64_t { pretrain = 1, train = 2, test = 3, synthetic = 4 };
SeedRole seed_role(std::uint64_t instance_seed) noexcept;
// index-th seed of a role's consecutive range.
std::uint64_t role_seed(std::uint64_t master_seed, SeedRole role, std::uint64_t index) noexcept;

// OSFD container: "OSFD", u32 version, u32 n, height, width, channels, then
// per image u32 category, u32 domain, u64 seed, f32 pixels (all little-endian).
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);

}  // namespace oscar
