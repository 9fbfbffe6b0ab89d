#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oscar/encoder.hpp"
#include "oscar/error.hpp"
#include "oscar/numerics/rng.hpp"

using namespace oscar;

namespace {

const Dataset& corpus() {
    static const Dataset d = [] {
        CorpusConfig cfg;
        cfg.master_seed = 21;
        return build_pretrain_corpus(cfg, SplitMode::common, 40);
    }();
    return d;
}

double dist(const EmbeddingVector& a, const EmbeddingVector& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("raw features: pooled intensities then pooled horizontal gradients") {
    // Independent recomputation for one image.
    const auto img = render_image(2, 3, 17, 16);
    const auto f = raw_features(img, 16);
    REQUIRE(f.size() == kRawFeatureDim);
    for (int by = 0; by < 4; ++by)
        for (int bx = 0; bx < 4; ++bx) {
            double s = 0;
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) s += img.pixels[(by * 4 + y) * 16 + bx * 4 + x];
            CHECK(f[by * 4 + bx] == doctest::Approx(s / 16).epsilon(1e-9));
        }
    // A vertical edge produces gradient energy only in the blocks containing it.
    Image edge;
    edge.pixels.assign(256, 0.0f);
    for (int y = 0; y < 16; ++y)
        for (int x = 8; x < 16; ++x) edge.pixels[y * 16 + x] = 1.0f;
    const auto fe = raw_features(edge, 16);
    double grad_total = 0;
    for (int i = 16; i < 32; ++i) grad_total += fe[i];
    CHECK(grad_total > 0.0);
}

TEST_CASE("standardizer: pretraining features come out standardized") {
    const auto s = fit_standardizer(corpus());
    CHECK(s == fit_standardizer(corpus()));
    std::vector<double> mean(kRawFeatureDim, 0), sq(kRawFeatureDim, 0);
    for (const auto& img : corpus().images) {
        const auto e = embed(img, s);
        for (std::size_t i = 0; i < kRawFeatureDim; ++i) {
            mean[i] += e.values[i];
            sq[i] += double{e.values[i]} * e.values[i];
        }
    }
    const double n = static_cast<double>(corpus().size());
    for (std::size_t i = 0; i < kRawFeatureDim; ++i) {
        const double m = mean[i] / n;
        const double sd = std::sqrt(sq[i] / n - m * m);
        if (s.stddev[i] <= Standardizer::kStdFloor) continue;
        CHECK(std::abs(m) < 0.01);
        CHECK(sd == doctest::Approx(1.0).epsilon(0.01));
    }
}

TEST_CASE("standardizer: constant feature gets the floor; empty corpus is an error") {
    Dataset flat;
    flat.height = flat.width = 16;
    for (int i = 0; i < 3; ++i) {
        Image img;
        img.pixels.assign(256, 0.25f);
        flat.images.push_back(img);
    }
    const auto s = fit_standardizer(flat);
    for (double sd : s.stddev) CHECK(sd == Standardizer::kStdFloor);
    Dataset empty;
    empty.height = empty.width = 16;
    CHECK_THROWS_AS(fit_standardizer(empty), Error);
}

TEST_CASE("embed: determinism, all-zero image formula, size mismatch") {
    const auto s = fit_standardizer(corpus());
    const auto img = corpus().images[17];
    CHECK(embed(img, s) == embed(img, s));
    Image zero;
    zero.pixels.assign(256, 0.0f);
    const auto e = embed(zero, s);
    for (std::size_t i = 0; i < kRawFeatureDim; ++i)
        CHECK(e.values[i] == doctest::Approx((0.0 - s.mean[i]) / s.stddev[i]).epsilon(1e-6));
    Image small;
    small.pixels.assign(64, 0.0f);
    CHECK_THROWS_AS(embed(small, s), ShapeError);
}

TEST_CASE("embed: same-cell images are closer than different-category images (100 pairs)") {
    const auto s = fit_standardizer(corpus());
    RngStream rng(4, "separation");
    double intra = 0, inter = 0;
    for (int i = 0; i < 100; ++i) {
        const auto cat = static_cast<std::uint32_t>(rng.uniform_index(8));
        const auto dom = static_cast<std::uint32_t>(rng.uniform_index(6));
        const auto other = static_cast<std::uint32_t>((cat + 1 + rng.uniform_index(7)) % 8);
        const auto a = embed(render_image(cat, dom, 1000 + i, 16), s);
        const auto b = embed(render_image(cat, dom, 5000 + i, 16), s);
        const auto c = embed(render_image(other, dom, 9000 + i, 16), s);
        intra += dist(a, b);
        inter += dist(a, c);
    }
    CHECK(intra < inter);
}

TEST_CASE("projection: orthonormal for d < 32 and d > 32") {
    for (std::size_t d : {8u, 16u, 64u}) {
        const auto p = orthonormal_projection(d);
        REQUIRE(p.size() == d * 32);
        if (d <= 32) {
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    double dot = 0;
                    for (std::size_t k = 0; k < 32; ++k) dot += p[i * 32 + k] * p[j * 32 + k];
                    CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9).scale(1.0));
                }
        } else {
            for (std::size_t i = 0; i < 32; ++i)
                for (std::size_t j = 0; j < 32; ++j) {
                    double dot = 0;
                    for (std::size_t k = 0; k < d; ++k) dot += p[k * 32 + i] * p[k * 32 + j];
                    CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9).scale(1.0));
                }
        }
    }
}

TEST_CASE("encoder: projected dimension and JSON round trip") {
    const Encoder enc(fit_standardizer(corpus()), 16);
    const auto img = corpus().images[3];
    CHECK(enc.embed(img).dim() == 16);
    const auto back = Encoder::from_json(enc.to_json());
    CHECK(back.embed(img) == enc.embed(img));
    CHECK(back.to_json() == enc.to_json());
    const Encoder full(fit_standardizer(corpus()), 32);
    CHECK(full.embed(img) == embed(img, full.standardizer()));
}

TEST_CASE("category representation: mean, identity, permutation, linearity, errors") {
    const EmbeddingVector a{{0.0f, 2.0f}}, b{{2.0f, 0.0f}}, c{{4.0f, -1.0f}};
    CHECK(category_representation(std::vector{a, b}) == EmbeddingVector{{1.0f, 1.0f}});
    CHECK(category_representation(std::vector{a}) == a);
    CHECK(category_representation(std::vector{a, b, c}) == category_representation(std::vector{c, a, b}));
    // Size-weighted mean of sub-list means.
    const auto ab = category_representation(std::vector{a, b});
    const auto all = category_representation(std::vector{a, b, c});
    for (int i = 0; i < 2; ++i)
        CHECK(all.values[i] == doctest::Approx((2 * ab.values[i] + c.values[i]) / 3).epsilon(1e-6));
    CHECK_THROWS_AS(category_representation(std::vector<EmbeddingVector>{}), Error);
    CHECK_THROWS_AS(category_representation(std::vector{a, EmbeddingVector{{1.0f}}}), ShapeError);
}
