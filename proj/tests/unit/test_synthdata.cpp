#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <iterator>
#include <map>
#include <numeric>
#include <set>

#include "oscar/error.hpp"
#include "oscar/binary_io.hpp"
#include "oscar/synthdata.hpp"

using namespace oscar;

namespace {

double mean_of(const Image& img) {
    return std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0) / static_cast<double>(img.pixels.size());
}

std::set<std::uint64_t> seeds_of(const Dataset& d) {
    std::set<std::uint64_t> s;
    for (const auto& img : d.images) s.insert(img.instance_seed);
    return s;
}

}  // namespace

TEST_CASE("render: deterministic, seed-sensitive, dim darker than clean") {
    const auto a = render_image(0, 0, 7, 16);
    CHECK(a == render_image(0, 0, 7, 16));
    CHECK(a.pixels != render_image(0, 0, 8, 16).pixels);
    CHECK(mean_of(render_image(0, 1, 7, 16)) < mean_of(a));
    for (float p : a.pixels) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
    }
    CHECK_THROWS_AS(render_image(kCategoryVocabulary, 0, 1, 16), Error);
    CHECK_THROWS_AS(render_image(0, kDomainPool, 1, 16), Error);
    CHECK_THROWS_AS(render_image(0, 0, 1, 4), Error);
}

TEST_CASE("render: every domain style changes the clean image") {
    const auto clean = render_image(3, 0, 11, 16);
    for (std::uint32_t d = 1; d < kDomainPool; ++d) {
        CAPTURE(d);
        CHECK(render_image(3, d, 11, 16).pixels != clean.pixels);
    }
}

TEST_CASE("split: common mode, 6 clients x 8 categories x 30 images") {
    CorpusConfig cfg;
    cfg.master_seed = 3;
    const auto split = build_federated_split(cfg, SplitMode::common);
    REQUIRE(split.client_count() == 6);
    for (std::uint32_t k = 0; k < 6; ++k) {
        const auto& tr = split.train[k];
        CHECK(tr.size() == 240);
        CHECK(split.test[k].size() == 160);
        std::set<std::uint32_t> domains, cats;
        std::map<std::uint32_t, int> per_cat;
        for (const auto& img : tr.images) {
            domains.insert(img.domain);
            cats.insert(img.category);
            ++per_cat[img.category];
        }
        CHECK(domains == std::set<std::uint32_t>{k});  // feature skew: one nonzero histogram bin
        CHECK(cats.size() == 8);
        for (auto& [c, n] : per_cat) CHECK(n == 30);
        for (const auto& img : split.test[k].images) CHECK(img.domain == k);

        const auto a = seeds_of(tr), b = seeds_of(split.test[k]);
        std::vector<std::uint64_t> both;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
        CHECK(both.empty());
    }
}

TEST_CASE("split: unique mode draws different domain sets per category") {
    CorpusConfig cfg;
    cfg.master_seed = 3;
    const auto split = build_federated_split(cfg, SplitMode::unique);
    std::set<std::set<std::uint32_t>> distinct;
    for (std::uint32_t c = 0; c < cfg.n_categories; ++c) {
        std::set<std::uint32_t> ds;
        for (std::uint32_t k = 0; k < split.client_count(); ++k) {
            ds.insert(split.domain_of[k][c]);
            for (const auto& img : split.train[k].images)
                if (img.category == c) CHECK(img.domain == split.domain_of[k][c]);
        }
        CHECK(ds.size() == split.client_count());
        distinct.insert(ds);
    }
    CHECK(distinct.size() >= 2);
}

TEST_CASE("split: config validation") {
    CorpusConfig cfg;
    cfg.n_clients = 5;
    CHECK_THROWS_AS(build_federated_split(cfg, SplitMode::common), ConfigError);
    cfg = CorpusConfig{};
    cfg.images_per_category = 0;
    CHECK_THROWS_AS(cfg.validate(SplitMode::common), ConfigError);
    cfg = CorpusConfig{};
    cfg.image_size = 10;
    CHECK_THROWS_AS(cfg.validate(SplitMode::common), ConfigError);
    CHECK_THROWS_AS(parse_split_mode("mixed"), ConfigError);
}

TEST_CASE("pretrain corpus: size, coverage, determinism, seed disjointness") {
    CorpusConfig cfg;
    cfg.master_seed = 5;
    const auto corpus = build_pretrain_corpus(cfg, SplitMode::common, 200);
    CHECK(corpus.size() == 8 * 6 * 200);
    std::set<std::pair<std::uint32_t, std::uint32_t>> cells;
    for (const auto& img : corpus.images) {
        cells.insert({img.category, img.domain});
        CHECK(seed_role(img.instance_seed) == SeedRole::pretrain);
    }
    CHECK(cells.size() == 48);
    CHECK(corpus == build_pretrain_corpus(cfg, SplitMode::common, 200));

    const auto split = build_federated_split(cfg, SplitMode::common);
    const auto pre = seeds_of(corpus);
    for (std::uint32_t k = 0; k < 6; ++k)
        for (const auto* d : {&split.train[k], &split.test[k]})
            for (const auto& img : d->images) CHECK(pre.count(img.instance_seed) == 0);
}

TEST_CASE("seed roles are disjoint by construction") {
    for (auto role : {SeedRole::pretrain, SeedRole::train, SeedRole::test, SeedRole::synthetic})
        for (std::uint64_t i : {0ull, 1ull, 123456789ull})
            CHECK(seed_role(role_seed(99, role, i)) == role);
    CHECK(role_seed(1, SeedRole::train, 0) != role_seed(1, SeedRole::test, 0));
}

TEST_CASE("OSFD: round trip, empty dataset, bad magic, truncation, version") {
    CorpusConfig cfg;
    cfg.master_seed = 1;
    const auto d = build_federated_split(cfg, SplitMode::common).train[2];
    const auto bytes = encode_dataset(d);
    CHECK(decode_dataset(bytes) == d);

    const auto dir = std::filesystem::temp_directory_path() / "oscar_test_osfd";
    std::filesystem::create_directories(dir);
    write_dataset(dir / "d.osfd", d);
    CHECK(read_dataset(dir / "d.osfd") == d);

    Dataset empty;
    empty.height = empty.width = 16;
    const auto eb = encode_dataset(empty);
    CHECK(eb.size() == 24);
    CHECK(decode_dataset(eb) == empty);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_dataset(bad), "not an OSFD file", FormatError);
    auto cut = bytes;
    cut.resize(cut.size() - 3);
    CHECK_THROWS_AS(decode_dataset(cut), FormatError);
    auto ver = bytes;
    ver[4] = 9;
    CHECK_THROWS_AS(decode_dataset(ver), FormatError);
    std::filesystem::remove_all(dir);
}
