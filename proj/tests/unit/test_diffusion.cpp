#include <doctest.h>

#include <cmath>

#include "oscar/error.hpp"
#include "oscar/diffusion.hpp"
#include "oscar/encoder.hpp"
#include "oscar/classifier.hpp"

using namespace oscar;

namespace {

DenoiserModel small_model(std::uint32_t data_dim = 16, std::uint32_t cond_dim = 4) {
    DenoiserSpec spec;
    spec.data_dim = data_dim;
    spec.cond_dim = cond_dim;
    spec.time_dim = 8;
    spec.hidden = {16, 16};
    RngStream rng(1, "small-model");
    return make_denoiser(spec, make_schedule(50, 1e-3, 0.2), rng);
}

}  // namespace

TEST_CASE("schedule: definitions and monotonicity") {
    const auto s = make_schedule(200, 5e-4, 0.1);
    double prod = 1.0;
    for (std::uint32_t t = 1; t <= 200; ++t) {
        CHECK(s.alpha(t) == 1.0 - s.beta(t));
        prod *= s.alpha(t);
        CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
        CHECK(s.sigma(t) == doctest::Approx(std::sqrt(s.beta(t))));
        if (t > 1) {
            CHECK(s.beta(t) > s.beta(t - 1));
            CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }
    CHECK(s.alpha_bar(200) < 0.05);
    CHECK_THROWS_AS(s.beta(0), Error);
    CHECK_THROWS_AS(s.beta(201), Error);
    CHECK_THROWS_AS(make_schedule(10, 0.1, 0.01), Error);
    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), Error);
}

TEST_CASE("schedule: T=1000 linear 1e-4..0.02 ends near 4e-5") {
    const auto s = make_schedule(1000, 1e-4, 0.02);
    long double prod = 1.0L;
    for (int t = 1; t <= 1000; ++t) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L);
    CHECK(s.alpha_bar(1000) == doctest::Approx(static_cast<double>(prod)).epsilon(0.1));
    CHECK(s.alpha_bar(1000) == doctest::Approx(4.0e-5).epsilon(0.1));
}

TEST_CASE("schedule: strided timesteps") {
    const auto s = make_schedule(200, 5e-4, 0.1);
    const auto ts = s.strided_timesteps(50);
    REQUIRE(ts.size() == 50);
    CHECK(ts.back() == 200);
    CHECK(std::is_sorted(ts.begin(), ts.end()));
    CHECK(std::adjacent_find(ts.begin(), ts.end()) == ts.end());
    CHECK(s.strided_timesteps(1) == std::vector<std::uint32_t>{200});
    CHECK(s.strided_timesteps(200).front() == 1);
    CHECK_THROWS_AS(s.strided_timesteps(0), Error);
    CHECK_THROWS_AS(s.strided_timesteps(201), Error);
}

TEST_CASE("q_sample: zero noise and variance preservation") {
    const auto s = make_schedule(200, 5e-4, 0.1);
    RngStream rng(3, "q");
    const Tensor x0 = seeded_normal(rng, {1, 10000});
    const Tensor zero({1, 10000});
    const auto xt0 = q_sample(x0, 50, zero, s);
    for (std::size_t i = 0; i < 10; ++i) CHECK(xt0[i] == doctest::Approx(std::sqrt(s.alpha_bar(50)) * x0[i]));
    for (std::uint32_t t : {1u, 50u, 120u, 200u}) {
        const Tensor eps = seeded_normal(rng, {1, 10000});
        const auto xt = q_sample(x0, t, eps, s);
        double m = 0, v = 0;
        for (float x : xt.data()) m += x;
        m /= 10000;
        for (float x : xt.data()) v += (x - m) * (x - m);
        CHECK(v / 10000 == doctest::Approx(1.0).epsilon(0.05));
    }
    CHECK_THROWS_AS(q_sample(x0, 0, zero, s), Error);
}

TEST_CASE("time embedding: sin/cos pairs") {
    const auto e = time_embedding(10, 8);
    REQUIRE(e.size() == 8);
    for (int k = 0; k < 4; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / 4.0);
        CHECK(e[k] == doctest::Approx(std::sin(10 * w)).epsilon(1e-6));
        CHECK(e[4 + k] == doctest::Approx(std::cos(10 * w)).epsilon(1e-6));
    }
}

TEST_CASE("cfg_epsilon: identities, worked value, linearity in s") {
    const Tensor c({1, 3}, std::vector<float>{1.0f, -2.0f, 0.25f});
    const Tensor u({1, 3}, std::vector<float>{0.5f, 3.0f, 0.25f});
    CHECK(cfg_epsilon(c, u, 0.0) == c);
    for (double s : {0.5, 7.5, 100.0}) CHECK(cfg_epsilon(c, c, s) == c);
    const Tensor one({1, 1}, std::vector<float>{1.0f}), half({1, 1}, std::vector<float>{0.5f});
    CHECK(cfg_epsilon(one, half, 7.5)[0] == 4.75f);
    const auto a = cfg_epsilon(c, u, 1.0), b = cfg_epsilon(c, u, 3.0), mid = cfg_epsilon(c, u, 2.0);
    for (int i = 0; i < 3; ++i) CHECK((a[i] + b[i]) / 2 == doctest::Approx(mid[i]).epsilon(1e-6));
    CHECK_THROWS_AS(cfg_epsilon(c, one, 1.0), ShapeError);
    CHECK_THROWS_AS(cfg_epsilon(c, u, -1.0), Error);
}

TEST_CASE("classifier_guided_epsilon: identities and worked value") {
    const Tensor e({1, 2}, std::vector<float>{0.2f, -0.7f});
    const Tensor g({1, 2}, std::vector<float>{0.3f, 0.9f});
    CHECK(classifier_guided_epsilon(e, Tensor({1, 2}), 5.0, 0.5) == e);
    CHECK(classifier_guided_epsilon(e, g, 0.0, 0.5) == e);
    CHECK(classifier_guided_epsilon(e, g, 2.0, 0.5)[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK_THROWS_AS(classifier_guided_epsilon(e, Tensor({1, 3}), 1.0, 0.5), ShapeError);
}

TEST_CASE("denoiser: untrained network predicts zero noise; first-batch loss is E[eps^2] = 1") {
    auto model = small_model(256, 32);
    RngStream rng(5, "x");
    const Tensor x = seeded_normal(rng, {64, 256});
    const std::vector<std::uint32_t> t(64, 17);
    const auto eps = predict_epsilon(model, x, t, Conditioning::null(64, 32));
    for (float v : eps.data()) CHECK(v == 0.0f);

    AdamState st;
    const Tensor cond = seeded_normal(rng, {64, 32});
    const auto r = diffusion_train_step(model, x, cond, 0.1, rng, st, AdamConfig{});
    CHECK(r.loss == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("denoiser: p_uncond = 1 nulls every example, p_uncond = 0 none") {
    auto model = small_model();
    RngStream rng(6, "p");
    const Tensor x = seeded_normal(rng, {32, 16}), cond = seeded_normal(rng, {32, 4});
    AdamState st;
    CHECK(diffusion_train_step(model, x, cond, 1.0, rng, st, AdamConfig{}).unconditional_rows == 32);
    CHECK(diffusion_train_step(model, x, cond, 0.0, rng, st, AdamConfig{}).unconditional_rows == 0);
    CHECK_THROWS_AS(diffusion_train_step(model, x, cond, 1.5, rng, st, AdamConfig{}), Error);
}

TEST_CASE("denoiser: null flag hides the condition") {
    auto model = small_model();
    RngStream rng(8, "null");
    for (std::size_t i = 0; i < model.params.count(); ++i)
        for (auto& v : model.params.tensor(i).data()) v = static_cast<float>(0.3 * rng.normal());
    const Tensor x = seeded_normal(rng, {2, 16});
    const std::vector<std::uint32_t> t{5, 5};
    Conditioning a{seeded_normal(rng, {2, 4}), {1.0f, 1.0f}};
    Conditioning b{seeded_normal(rng, {2, 4}), {1.0f, 1.0f}};
    CHECK(predict_epsilon(model, x, t, a) == predict_epsilon(model, x, t, b));
    a.null_flag = {0.0f, 0.0f};
    b.null_flag = {0.0f, 0.0f};
    CHECK_FALSE(predict_epsilon(model, x, t, a) == predict_epsilon(model, x, t, b));
    a.null_flag = {0.5f, 0.0f};
    CHECK_THROWS_AS(predict_epsilon(model, x, t, a), Error);
}

TEST_CASE("sampler: untrained model is flagged; negative scale rejected") {
    auto model = small_model();
    SampleRequest r;
    r.condition.assign(4, 0.0f);
    CHECK_THROWS_AS(sample_batch(model, std::span(&r, 1), 1), Error);
    model.trained_steps = 1;
    r.guidance_scale = -1.0;
    CHECK_THROWS_WITH(sample_batch(model, std::span(&r, 1), 1), "guidance scale must be ≥ 0");
}

TEST_CASE("sampler: one step from pure noise is the clamped x0 estimate, no added noise") {
    auto model = small_model();  // zero head: eps_hat = 0
    model.trained_steps = 1;
    SampleRequest r;
    r.condition.assign(4, 0.0f);
    r.sampling_steps = 1;
    r.rng_label = "one-step";
    const Tensor x = sample_batch(model, std::span(&r, 1), 77);
    RngStream replay(77, "one-step");
    const double sa = std::sqrt(model.schedule.alpha_bar(model.schedule.steps()));
    for (std::size_t k = 0; k < 16; ++k) {
        const double xt = static_cast<float>(replay.normal());
        CHECK(x[k] == doctest::Approx(std::clamp(xt / sa, -1.1, 1.1)).epsilon(1e-5));
    }
}

TEST_CASE("sampler: deterministic and independent of batch composition") {
    auto model = small_model();
    RngStream rng(9, "w");
    for (std::size_t i = 0; i < model.params.count(); ++i)
        for (auto& v : model.params.tensor(i).data()) v = static_cast<float>(0.2 * rng.normal());
    model.trained_steps = 1;
    std::vector<SampleRequest> reqs(5);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        reqs[i].condition = {float(i), 1.0f, -1.0f, 0.5f};
        reqs[i].guidance_scale = 2.0;
        reqs[i].sampling_steps = 10;
        reqs[i].rng_label = "req/" + std::to_string(i);
    }
    const Tensor all = sample_batch(model, reqs, 3);
    CHECK(all == sample_batch(model, reqs, 3));
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        const Tensor one = sample_batch(model, std::span(&reqs[i], 1), 3);
        for (std::size_t k = 0; k < 16; ++k) CHECK(one[k] == all.at(i, k));
    }
    SamplerOptions post;
    post.variance = ReverseVariance::posterior;
    CHECK_FALSE(sample_batch(model, reqs, 3, post) == all);
}

TEST_CASE("sampler: classifier mode with zero gradient or s = 0 equals unconditional sampling") {
    auto model = small_model();
    RngStream rng(10, "w");
    for (std::size_t i = 0; i < model.params.count(); ++i)
        for (auto& v : model.params.tensor(i).data()) v = static_cast<float>(0.2 * rng.normal());
    model.trained_steps = 1;
    std::vector<SampleRequest> reqs(3);
    for (std::size_t i = 0; i < 3; ++i) {
        reqs[i].sampling_steps = 8;
        reqs[i].guidance_scale = 0.0;
        reqs[i].rng_label = "c/" + std::to_string(i);
        reqs[i].label = 1;
    }
    SamplerOptions unc;
    unc.mode = GuidanceMode::unconditional;
    SamplerOptions cls;
    cls.mode = GuidanceMode::classifier;
    cls.grad_log_prob = [](const Tensor& x, std::uint32_t, std::span<const int>) {
        Tensor g(x.shape(), 1.0f);
        return g;
    };
    CHECK(sample_batch(model, reqs, 4, cls) == sample_batch(model, reqs, 4, unc));
    SamplerOptions none = cls;
    none.grad_log_prob = {};
    CHECK_THROWS_AS(sample_batch(model, reqs, 4, none), Error);
}

TEST_CASE("training: grouped conditioning needs cell ids") {
    auto model = small_model();
    RngStream rng(12, "g");
    const Tensor x = seeded_normal(rng, {8, 16}), cond = seeded_normal(rng, {8, 4});
    DenoiserTraining opt;
    opt.steps = 3;
    opt.group_fraction = 0.5;
    CHECK_THROWS_AS(train_denoiser(model, x, cond, opt, rng), ShapeError);
    const std::vector<std::uint32_t> cells{0, 0, 0, 0, 1, 1, 1, 1};
    CHECK_NOTHROW(train_denoiser(model, x, cond, opt, rng, cells));
    CHECK(model.trained_steps == 3);
    opt.group_fraction = 2.0;
    CHECK_THROWS_AS(train_denoiser(model, x, cond, opt, rng, cells), Error);
}

TEST_CASE("training: 2,000 steps on the default pretraining corpus halve the loss") {
    CorpusConfig cfg;
    cfg.master_seed = 7;
    const auto corpus = build_pretrain_corpus(cfg, SplitMode::common, 200);
    const Encoder enc(fit_standardizer(corpus), 32);
    const Tensor x0 = images_to_tensor(corpus);
    Tensor cond({corpus.size(), 32});
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto e = enc.embed(corpus.images[i]);
        std::copy(e.values.begin(), e.values.end(), cond.row(i).begin());
    }
    RngStream rng(7, "halve");
    auto model = make_denoiser(DenoiserSpec{}, make_schedule(200, 5e-4, 0.1), rng);
    DenoiserTraining opt;
    opt.steps = 2000;
    const auto [first, last] = train_denoiser(model, x0, cond, opt, rng);
    CHECK(last < 0.5 * first);
}

TEST_CASE("OSDM: round trip and malformed files") {
    auto model = small_model();
    model.trained_steps = 12;
    const auto bytes = encode_denoiser(model);
    const auto back = decode_denoiser(bytes);
    CHECK(back.spec == model.spec);
    CHECK(back.schedule == model.schedule);
    CHECK(back.params == model.params);
    CHECK(back.trained_steps == 12);
    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(decode_denoiser(bad), FormatError);
    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS_AS(decode_denoiser(cut), FormatError);
}
