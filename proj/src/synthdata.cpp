#include "oscar/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "oscar/binary_io.hpp"
#include "oscar/error.hpp"
#include "oscar/numerics/rng.hpp"

namespace oscar {

namespace {

constexpr std::array<std::string_view, kCategoryVocabulary> kCategoryNames = {
    "disc", "ring", "square", "hollow-square", "triangle", "cross", "h-bars", "checker"};

// The first six are the shared (common-mode) domains.
constexpr std::array<std::string_view, kDomainPool> kDomainNames = {
    "clean",    "dim",          "noisy",   "gradient-lit", "striped-bg", "textured-bg",
    "inverted", "low-contrast", "blurred", "dotted-bg",    "vignette",   "salt-pepper"};

constexpr int kSupersample = 4;
constexpr std::uint64_t kRoleShift = 60;
constexpr std::uint64_t kLowMask = (std::uint64_t{1} << kRoleShift) - 1;

// Shape membership in coordinates normalized by the shape radius.
bool inside(std::uint32_t category, double u, double v) {
    const double au = std::abs(u), av = std::abs(v);
    switch (category) {
        case 0:  // disc
            return u * u + v * v <= 1.0;
        case 1: {  // ring
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.55 * 0.55;
        }
        case 2:  // square
            return au <= 0.85 && av <= 0.85;
        case 3: {  // hollow square
            const double m = std::max(au, av);
            return m <= 0.95 && m >= 0.5;
        }
        case 4:  // upward triangle, apex at v = -0.95, base at v = 0.9
            return v >= -0.95 && v <= 0.9 && au <= (v + 0.95) / 1.85;
        case 5:  // cross
            return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
        case 6:  // three horizontal bars
            return au <= 1.0 && (av <= 0.2 || (av >= 0.6 && av <= 1.0));
        case 7: {  // 4x4 checker inside the unit square
            if (au > 1.0 || av > 1.0) return false;
            const int cu = std::min(3, static_cast<int>(std::floor((u + 1.0) / 0.5)));
            const int cv = std::min(3, static_cast<int>(std::floor((v + 1.0) / 0.5)));
            return (cu + cv) % 2 == 0;
        }
        default:
            return false;
    }
}

std::vector<float> shape_mask(std::uint32_t category, std::uint64_t seed, std::uint32_t size) {
    RngStream geo(seed, "geometry");
    const double dx = -2.0 + 4.0 * geo.uniform();
    const double dy = -2.0 + 4.0 * geo.uniform();
    const double scale = 0.8 + 0.4 * geo.uniform();
    const double radius = 0.3 * size * scale;
    const double cx = size / 2.0 + dx, cy = size / 2.0 + dy;

    std::vector<float> mask(std::size_t{size} * size);
    for (std::uint32_t y = 0; y < size; ++y) {
        for (std::uint32_t x = 0; x < size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double px = x + (sx + 0.5) / kSupersample;
                    const double py = y + (sy + 0.5) / kSupersample;
                    if (inside(category, (px - cx) / radius, (py - cy) / radius)) ++hits;
                }
            }
            mask[std::size_t{y} * size + x] = static_cast<float>(hits) / (kSupersample * kSupersample);
        }
    }
    return mask;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void apply_style(std::uint32_t domain, std::uint64_t seed, std::uint32_t size, std::vector<float>& px) {
    RngStream style(seed, "style");
    const double last = size > 1 ? size - 1.0 : 1.0;
    auto over = [&](auto background) {
        for (std::uint32_t y = 0; y < size; ++y)
            for (std::uint32_t x = 0; x < size; ++x) {
                float& p = px[std::size_t{y} * size + x];
                p = clamp01(p + (1.0 - p) * background(x, y));
            }
    };
    switch (domain) {
        case 0:  // clean
            break;
        case 1:  // dim
            for (auto& p : px) p *= 0.4f;
            break;
        case 2:  // noisy
            for (auto& p : px) p = clamp01(p + 0.15 * style.normal());
            break;
        case 3:  // gradient-lit: foreground lit left to right, faint vertical background ramp
            for (std::uint32_t y = 0; y < size; ++y)
                for (std::uint32_t x = 0; x < size; ++x) {
                    float& p = px[std::size_t{y} * size + x];
                    p = clamp01(p * (0.3 + 0.7 * x / last) + (1.0 - p) * 0.25 * (y / last));
                }
            break;
        case 4:  // vertical stripes two pixels wide
            over([](std::uint32_t x, std::uint32_t) { return (x / 2) % 2 == 0 ? 0.35 : 0.0; });
            break;
        case 5: {  // blocky random texture
            const std::uint32_t cells = (size + 1) / 2;
            std::vector<double> tex(std::size_t{cells} * cells);
            for (auto& t : tex) t = 0.4 * style.uniform();
            over([&](std::uint32_t x, std::uint32_t y) { return tex[std::size_t{y / 2} * cells + x / 2]; });
            break;
        }
        case 6:  // inverted
            for (auto& p : px) p = 1.0f - p;
            break;
        case 7:  // low contrast
            for (auto& p : px) p = static_cast<float>(0.35 + 0.3 * p);
            break;
        case 8: {  // 3x3 box blur, edge-clamped
            const std::vector<float> src = px;
            const int n = static_cast<int>(size);
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    double s = 0.0;
                    for (int oy = -1; oy <= 1; ++oy)
                        for (int ox = -1; ox <= 1; ++ox) {
                            const int yy = std::clamp(y + oy, 0, n - 1), xx = std::clamp(x + ox, 0, n - 1);
                            s += src[static_cast<std::size_t>(yy * n + xx)];
                        }
                    px[static_cast<std::size_t>(y * n + x)] = static_cast<float>(s / 9.0);
                }
            break;
        }
        case 9:  // dotted background
            over([](std::uint32_t x, std::uint32_t y) { return (x % 4 == 1 && y % 4 == 1) ? 0.5 : 0.0; });
            break;
        case 10: {  // vignette
            const double c = (size - 1) / 2.0;
            const double r_max2 = 2.0 * c * c;
            for (std::uint32_t y = 0; y < size; ++y)
                for (std::uint32_t x = 0; x < size; ++x) {
                    float& p = px[std::size_t{y} * size + x];
                    const double r2 = (x - c) * (x - c) + (y - c) * (y - c);
                    p = clamp01(p * (1.0 - 0.6 * r2 / r_max2) + 0.1 * (1.0 - p));
                }
            break;
        }
        case 11:  // salt and pepper
            for (auto& p : px) {
                const double u = style.uniform();
                if (u < 0.03)
                    p = 0.0f;
                else if (u < 0.06)
                    p = 1.0f;
            }
            break;
        default:
            throw Error("unknown domain id " + std::to_string(domain));
    }
}

std::uint64_t seed_base(std::uint64_t master_seed, SeedRole role) {
    return mix64(master_seed ^ mix64(static_cast<std::uint64_t>(role))) & kLowMask;
}

// Seeds for one role are consecutive (mod 2^60) from a master-seed-dependent base.
class SeedAllocator {
public:
    SeedAllocator(std::uint64_t master_seed, SeedRole role)
        : role_bits_(static_cast<std::uint64_t>(role) << kRoleShift), next_(seed_base(master_seed, role)) {}

    std::uint64_t next() {
        const std::uint64_t s = role_bits_ | (next_ & kLowMask);
        ++next_;
        return s;
    }

private:
    std::uint64_t role_bits_;
    std::uint64_t next_;
};

std::vector<std::vector<std::uint32_t>> assign_domains(const CorpusConfig& config, SplitMode mode) {
    std::vector<std::vector<std::uint32_t>> domain_of(config.n_clients,
                                                      std::vector<std::uint32_t>(config.n_categories));
    for (std::uint32_t c = 0; c < config.n_categories; ++c) {
        std::vector<std::uint32_t> pool(mode == SplitMode::common ? config.n_domains : kDomainPool);
        std::iota(pool.begin(), pool.end(), 0u);
        if (mode == SplitMode::unique) {
            RngStream rng(config.master_seed, "unique-domains/" + std::to_string(c));
            for (std::size_t i = pool.size() - 1; i > 0; --i) std::swap(pool[i], pool[rng.uniform_index(i + 1)]);
        }
        for (std::uint32_t r = 0; r < config.n_clients; ++r) domain_of[r][c] = pool[r];
    }
    return domain_of;
}

Dataset empty_dataset(std::uint32_t size) {
    Dataset d;
    d.height = d.width = size;
    return d;
}

}  // namespace

std::string_view category_name(std::uint32_t category_id) {
    if (category_id >= kCategoryVocabulary) throw Error("unknown category id " + std::to_string(category_id));
    return kCategoryNames[category_id];
}

std::string_view domain_name(std::uint32_t domain_id) {
    if (domain_id == kSyntheticDomain) return "synthetic";
    if (domain_id >= kDomainPool) throw Error("unknown domain id " + std::to_string(domain_id));
    return kDomainNames[domain_id];
}

SplitMode parse_split_mode(std::string_view text) {
    if (text == "common") return SplitMode::common;
    if (text == "unique") return SplitMode::unique;
    throw ConfigError("mode must be 'common' or 'unique', got '" + std::string(text) + "'");
}

std::string_view to_string(SplitMode mode) { return mode == SplitMode::common ? "common" : "unique"; }

void CorpusConfig::validate(SplitMode mode) const {
    if (n_categories < 1 || n_domains < 1 || n_clients < 1 || images_per_category < 1 ||
        test_images_per_category < 1)
        throw ConfigError("corpus counts must all be >= 1");
    if (n_categories > kCategoryVocabulary)
        throw ConfigError("n_categories must be <= " + std::to_string(kCategoryVocabulary));
    if (image_size < 8 || image_size % 4 != 0) throw ConfigError("image_size must be >= 8 and a multiple of 4");
    if (n_clients != n_domains)
        throw ConfigError("n_clients (" + std::to_string(n_clients) + ") must equal n_domains (" +
                          std::to_string(n_domains) + ")");
    const std::uint32_t pool = mode == SplitMode::common ? kCommonDomainPool : kDomainPool;
    if (n_domains > pool)
        throw ConfigError("n_domains must be <= " + std::to_string(pool) + " in " + std::string(to_string(mode)) +
                          " mode");
}

Image render_image(std::uint32_t category_id, std::uint32_t domain_id, std::uint64_t instance_seed,
                   std::uint32_t size) {
    if (category_id >= kCategoryVocabulary) throw Error("unknown category id " + std::to_string(category_id));
    if (domain_id >= kDomainPool) throw Error("unknown domain id " + std::to_string(domain_id));
    if (size < 8) throw Error("image size must be >= 8");
    Image img;
    img.category = category_id;
    img.domain = domain_id;
    img.instance_seed = instance_seed;
    img.pixels = shape_mask(category_id, instance_seed, size);
    apply_style(domain_id, instance_seed, size, img.pixels);
    return img;
}

std::uint64_t role_seed(std::uint64_t master_seed, SeedRole role, std::uint64_t index) noexcept {
    return (static_cast<std::uint64_t>(role) << kRoleShift) | ((seed_base(master_seed, role) + index) & kLowMask);
}

SeedRole seed_role(std::uint64_t instance_seed) noexcept {
    return static_cast<SeedRole>(instance_seed >> kRoleShift);
}

FederatedSplit build_federated_split(const CorpusConfig& config, SplitMode mode) {
    config.validate(mode);
    FederatedSplit split;
    split.mode = mode;
    split.domain_of = assign_domains(config, mode);
    SeedAllocator train_seeds(config.master_seed, SeedRole::train);
    SeedAllocator test_seeds(config.master_seed, SeedRole::test);
    for (std::uint32_t r = 0; r < config.n_clients; ++r) {
        Dataset train = empty_dataset(config.image_size);
        Dataset test = empty_dataset(config.image_size);
        for (std::uint32_t c = 0; c < config.n_categories; ++c) {
            const std::uint32_t d = split.domain_of[r][c];
            for (std::uint32_t n = 0; n < config.images_per_category; ++n)
                train.images.push_back(render_image(c, d, train_seeds.next(), config.image_size));
            for (std::uint32_t n = 0; n < config.test_images_per_category; ++n)
                test.images.push_back(render_image(c, d, test_seeds.next(), config.image_size));
        }
        split.train.push_back(std::move(train));
        split.test.push_back(std::move(test));
    }
    return split;
}

Dataset build_pretrain_corpus(const CorpusConfig& config, SplitMode mode, std::uint32_t images_per_cell) {
    config.validate(mode);
    if (images_per_cell < 1) throw ConfigError("pretrain images_per_cell must be >= 1");
    const std::uint32_t domains = mode == SplitMode::common ? config.n_domains : kDomainPool;
    Dataset corpus = empty_dataset(config.image_size);
    corpus.images.reserve(std::size_t{config.n_categories} * domains * images_per_cell);
    SeedAllocator seeds(config.master_seed, SeedRole::pretrain);
    for (std::uint32_t c = 0; c < config.n_categories; ++c)
        for (std::uint32_t d = 0; d < domains; ++d)
            for (std::uint32_t n = 0; n < images_per_cell; ++n)
                corpus.images.push_back(render_image(c, d, seeds.next(), config.image_size));
    return corpus;
}

namespace {
constexpr std::uint32_t kOsfdVersion = 1;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
    ByteWriter w;
    w.magic("OSFD");
    w.u32(kOsfdVersion);
    w.u32(static_cast<std::uint32_t>(dataset.images.size()));
    w.u32(dataset.height);
    w.u32(dataset.width);
    w.u32(dataset.channels);
    for (const auto& img : dataset.images) {
        if (img.pixels.size() != dataset.pixel_count()) throw ShapeError("image pixel count does not match dataset");
        w.u32(img.category);
        w.u32(img.domain);
        w.u64(img.instance_seed);
        w.f32s(img.pixels);
    }
    return w.take();
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "OSFD");
    r.expect_magic("OSFD");
    const std::uint32_t version = r.u32();
    if (version != kOsfdVersion) throw FormatError("unsupported OSFD version " + std::to_string(version));
    Dataset d;
    const std::uint32_t n = r.u32();
    d.height = r.u32();
    d.width = r.u32();
    d.channels = r.u32();
    const std::size_t record = 16 + 4 * d.pixel_count();
    if (r.remaining() < record * n) throw FormatError("truncated OSFD file");
    d.images.resize(n);
    for (auto& img : d.images) {
        img.category = r.u32();
        img.domain = r.u32();
        img.instance_seed = r.u64();
        img.pixels.resize(d.pixel_count());
        r.f32s(img.pixels);
    }
    r.expect_end();
    return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    write_file_bytes(path, encode_dataset(dataset));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

}  // namespace oscar
