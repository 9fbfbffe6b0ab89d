#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oscar/synthdata.hpp"

namespace oscar {

inline constexpr std::size_t kRawFeatureDim = 32;

struct EmbeddingVector {
    std::vector<float> values;

    std::size_t dim() const noexcept { return values.size(); }
    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

// Per-dimension statistics of the raw features on the pretraining corpus.
struct Standardizer {
    static constexpr double kStdFloor = 1e-6;

    std::uint32_t image_size = 0;
    std::vector<double> mean;
    std::vector<double> stddev;

    friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

// 4x4 average-pooled intensities followed by 4x4 average-pooled
// horizontal-gradient magnitudes |I(x+1, y) - I(x, y)|.
std::vector<double> raw_features(const Image& image, std::uint32_t size);

Standardizer fit_standardizer(const Dataset& corpus);

// Standardized 32-dim embedding.
EmbeddingVector embed(const Image& image, const Standardizer& standardizer);

// Frozen image encoder: standardized raw features, then a fixed seeded
// orthonormal projection when the embedding size is not 32.
class Encoder {
public:
    Encoder(Standardizer standardizer, std::size_t dim);

    std::size_t dim() const noexcept { return dim_; }
    const Standardizer& standardizer() const noexcept { return standardizer_; }
    EmbeddingVector embed(const Image& image) const;

    std::string to_json() const;
    static Encoder from_json(const std::string& text);

private:
    Standardizer standardizer_;
    std::size_t dim_;
    std::vector<double> projection_;  // dim x 32, row-major; empty when dim == 32
};

// Row-major (dim x 32) matrix with orthonormal rows (dim <= 32) or columns (dim > 32).
std::vector<double> orthonormal_projection(std::size_t dim);

// Arithmetic mean of the vectors; no renormalization.
EmbeddingVector category_representation(std::span<const EmbeddingVector> embeddings);

}  // namespace oscar
