#include "oscar/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "oscar/error.hpp"
#include "oscar/numerics/rng.hpp"

namespace oscar {

namespace {
constexpr std::uint32_t kGrid = 4;
constexpr std::uint64_t kProjectionSeed = 0x0E5CA9D5EEDULL;
}  // namespace

std::vector<double> raw_features(const Image& image, std::uint32_t size) {
    if (image.pixels.size() != std::size_t{size} * size)
        throw ShapeError("image has " + std::to_string(image.pixels.size()) + " pixels, encoder expects " +
                         std::to_string(size) + "x" + std::to_string(size));
    if (size % kGrid != 0) throw ShapeError("image size must be a multiple of 4");
    const std::uint32_t cell = size / kGrid;
    const double inv = 1.0 / (cell * cell);
    std::vector<double> f(kRawFeatureDim, 0.0);
    const auto& px = image.pixels;
    for (std::uint32_t y = 0; y < size; ++y) {
        for (std::uint32_t x = 0; x < size; ++x) {
            const std::size_t slot = (y / cell) * kGrid + x / cell;
            const double v = px[std::size_t{y} * size + x];
            const double grad = x + 1 < size ? std::abs(px[std::size_t{y} * size + x + 1] - v) : 0.0;
            f[slot] += v * inv;
            f[kGrid * kGrid + slot] += grad * inv;
        }
    }
    return f;
}

Standardizer fit_standardizer(const Dataset& corpus) {
    if (corpus.images.empty()) throw Error("cannot fit a standardizer on an empty corpus");
    if (corpus.height != corpus.width) throw ShapeError("encoder expects square images");
    Standardizer s;
    s.image_size = corpus.height;
    s.mean.assign(kRawFeatureDim, 0.0);
    s.stddev.assign(kRawFeatureDim, 0.0);
    const double n = static_cast<double>(corpus.images.size());
    std::vector<std::vector<double>> feats;
    feats.reserve(corpus.images.size());
    for (const auto& img : corpus.images) feats.push_back(raw_features(img, s.image_size));
    for (const auto& f : feats)
        for (std::size_t k = 0; k < kRawFeatureDim; ++k) s.mean[k] += f[k];
    for (auto& m : s.mean) m /= n;
    for (const auto& f : feats)
        for (std::size_t k = 0; k < kRawFeatureDim; ++k) s.stddev[k] += (f[k] - s.mean[k]) * (f[k] - s.mean[k]);
    for (auto& sd : s.stddev) sd = std::max(std::sqrt(sd / n), Standardizer::kStdFloor);
    return s;
}

EmbeddingVector embed(const Image& image, const Standardizer& standardizer) {
    const auto f = raw_features(image, standardizer.image_size);
    EmbeddingVector e;
    e.values.resize(kRawFeatureDim);
    for (std::size_t k = 0; k < kRawFeatureDim; ++k)
        e.values[k] = static_cast<float>((f[k] - standardizer.mean[k]) / standardizer.stddev[k]);
    return e;
}

std::vector<double> orthonormal_projection(std::size_t dim) {
    if (dim == 0) throw Error("embedding dimension must be positive");
    // Orthonormalize the columns of a tall Gaussian matrix, then orient it as dim x 32.
    const std::size_t tall = std::max(dim, kRawFeatureDim), thin = std::min(dim, kRawFeatureDim);
    RngStream rng(kProjectionSeed, "embedding-projection/" + std::to_string(dim));
    std::vector<double> m(tall * thin);
    for (auto& v : m) v = rng.normal();
    for (std::size_t j = 0; j < thin; ++j) {
        for (std::size_t pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < j; ++i) {
                double dot = 0.0;
                for (std::size_t r = 0; r < tall; ++r) dot += m[r * thin + i] * m[r * thin + j];
                for (std::size_t r = 0; r < tall; ++r) m[r * thin + j] -= dot * m[r * thin + i];
            }
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < tall; ++r) norm += m[r * thin + j] * m[r * thin + j];
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < tall; ++r) m[r * thin + j] /= norm;
    }
    if (dim >= kRawFeatureDim) return m;
    std::vector<double> t(dim * kRawFeatureDim);
    for (std::size_t r = 0; r < tall; ++r)
        for (std::size_t c = 0; c < thin; ++c) t[c * kRawFeatureDim + r] = m[r * thin + c];
    return t;
}

Encoder::Encoder(Standardizer standardizer, std::size_t dim) : standardizer_(std::move(standardizer)), dim_(dim) {
    if (standardizer_.mean.size() != kRawFeatureDim || standardizer_.stddev.size() != kRawFeatureDim)
        throw ShapeError("standardizer must have 32 dimensions");
    if (dim_ != kRawFeatureDim) projection_ = orthonormal_projection(dim_);
}

EmbeddingVector Encoder::embed(const Image& image) const {
    auto base = oscar::embed(image, standardizer_);
    if (projection_.empty()) return base;
    EmbeddingVector out;
    out.values.resize(dim_);
    for (std::size_t r = 0; r < dim_; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < kRawFeatureDim; ++k) s += projection_[r * kRawFeatureDim + k] * base.values[k];
        out.values[r] = static_cast<float>(s);
    }
    return out;
}

std::string Encoder::to_json() const {
    nlohmann::ordered_json j;
    j["dim"] = dim_;
    j["image_size"] = standardizer_.image_size;
    j["mean"] = standardizer_.mean;
    j["stddev"] = standardizer_.stddev;
    return j.dump(2) + "\n";
}

Encoder Encoder::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Standardizer s;
    s.image_size = j.at("image_size").get<std::uint32_t>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("stddev").get<std::vector<double>>();
    return Encoder(std::move(s), j.at("dim").get<std::size_t>());
}

EmbeddingVector category_representation(std::span<const EmbeddingVector> embeddings) {
    if (embeddings.empty()) throw Error("category representation needs at least one embedding");
    const std::size_t d = embeddings.front().dim();
    for (const auto& e : embeddings)
        if (e.dim() != d) throw ShapeError("embeddings have mixed dimensions");
    // Summing each dimension in sorted order makes the mean exactly permutation invariant.
    EmbeddingVector out;
    out.values.resize(d);
    std::vector<float> column(embeddings.size());
    const double n = static_cast<double>(embeddings.size());
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i < embeddings.size(); ++i) column[i] = embeddings[i].values[k];
        std::sort(column.begin(), column.end());
        double acc = 0.0;
        for (float v : column) acc += v;
        out.values[k] = static_cast<float>(acc / n);
    }
    return out;
}

}  // namespace oscar
