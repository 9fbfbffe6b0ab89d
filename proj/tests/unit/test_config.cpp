#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "oscar/config.hpp"
#include "oscar/error.hpp"

using namespace oscar;

TEST_CASE("config: defaults from an almost empty file") {
    const auto c = parse_config("[run]\nseed = 4\n");
    CHECK(c.master_seed() == 4);
    CHECK(c.corpus.n_categories == 8);
    CHECK(c.corpus.n_clients == 6);
    CHECK(c.embedding_dim == 32);
    CHECK(c.n_per_rep == 10);
    CHECK(c.guidance_scale == 7.5);
    CHECK(c.methods == kAllMethods);
}

TEST_CASE("config: errors name the offending key") {
    CHECK_THROWS_WITH_AS(parse_config("[diffusion]\nguidance_scal = 2\n"),
                         doctest::Contains("unknown key 'guidance_scal' in [diffusion]"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[diffusion]\nguidance_scale = -1\n"),
                         doctest::Contains("guidance scale must be"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("[corpus]\nn_clients = six\n"), doctest::Contains("n_clients"), ConfigError);
    CHECK_THROWS_AS(parse_config("[nope]\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[run\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[federation]\nmethods = oscar,bogus\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[diffusion]\nsampling_steps = 500\n"), ConfigError);
}

TEST_CASE("config: missing seed only fails when required") {
    const auto c = parse_config("# nothing\n");
    CHECK_FALSE(c.seed.has_value());
    CHECK_THROWS_WITH_AS(require_seed(c), doctest::Contains("missing required key 'seed'"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/x.ini"), ConfigError);
}

TEST_CASE("config: echo round trips") {
    const auto c = parse_config(
        "[corpus]\nn_categories = 4\nmode = unique\n[diffusion]\nbeta_end = 0.05\nvariance = posterior\n"
        "pilot_scales = 0.5, 2\n[federation]\nmethods = cado, oscar\n[run]\nseed = 9\n");
    const auto text = to_ini(c);
    CHECK(to_ini(parse_config(text)) == text);
    const auto back = parse_config(text);
    CHECK(back.mode == SplitMode::unique);
    CHECK(back.methods == std::vector<std::string>{"oscar", "cado"});
    CHECK(back.pilot_scales == std::vector<double>{0.5, 2.0});
    CHECK(back.beta_end == 0.05);
}

TEST_CASE("config: shipped presets parse; toy preset has the benchmark shape") {
    const std::filesystem::path dir = std::filesystem::path(OSCAR_SOURCE_DIR) / "configs";
    CHECK_NOTHROW(require_seed(load_config(dir / "smoke.ini")));
    const auto toy = load_config(dir / "toy.ini");
    require_seed(toy);
    CHECK(toy.corpus.n_categories == 8);
    CHECK(toy.corpus.n_clients == 6);
    CHECK(toy.mode == SplitMode::common);
    CHECK(toy.corpus.images_per_category == 30);
    CHECK(toy.embedding_dim == 32);
    CHECK(toy.n_per_rep == 10);
    CHECK(toy.ablation_counts == std::vector<std::uint32_t>{5, 10, 20, 30});
    // The frozen scale must be one of the piloted candidates.
    CHECK(std::find(toy.pilot_scales.begin(), toy.pilot_scales.end(), toy.guidance_scale) != toy.pilot_scales.end());
}
