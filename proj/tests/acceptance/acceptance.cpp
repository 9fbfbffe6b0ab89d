// End-to-end acceptance checks. Prints one line per criterion and exits
// non-zero if any of them fails.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "oscar/config.hpp"
#include "oscar/diffusion.hpp"
#include "oscar/error.hpp"
#include "oscar/federation.hpp"
#include "oscar/pipeline.hpp"
#include "support/gradcheck.hpp"

using namespace oscar;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

bool same(const Tensor& a, const Tensor& b) { return std::ranges::equal(a.data(), b.data()); }

// ---- 1
Outcome guidance_algebra() {
    const Tensor ec({1, 3}, std::vector<float>{1.0f, -2.0f, 0.25f});
    const Tensor eu({1, 3}, std::vector<float>{0.5f, 3.0f, -1.0f});
    bool ok = same(cfg_epsilon(ec, eu, 0.0), ec);
    ok = ok && same(cfg_epsilon(ec, ec, 7.5), ec);
    const Tensor one({1, 1}, std::vector<float>{1.0f}), half({1, 1}, std::vector<float>{0.5f});
    const float worked = cfg_epsilon(one, half, 7.5)[0];
    ok = ok && worked == 4.75f;
    const Tensor zero({1, 3}, 0.0f);
    ok = ok && same(classifier_guided_epsilon(ec, zero, 5.0, 0.3), ec);
    ok = ok && same(classifier_guided_epsilon(ec, eu, 0.0, 0.3), ec);
    return {ok, fmt("s=7.5 worked value %.4f (want 4.75); identities exact", worked)};
}

// ---- 2
Outcome gradients() {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
        for (Kernels k : {Kernels::batch_invariant, Kernels::blas})
            worst = std::max(worst, testing::gradcheck_worst(seed, k));
    return {worst < 1e-4, fmt("worst relative error %.2e over 5 networks (limit 1e-4)", worst)};
}

// ---- 3
Outcome schedule_and_forward() {
    const auto s = make_schedule(1000, 1e-4, 0.02);
    bool decreasing = true;
    for (std::uint32_t t = 2; t <= 1000; ++t) decreasing = decreasing && s.alpha_bar(t) < s.alpha_bar(t - 1);
    long double prod = 1.0L;
    for (int i = 0; i < 1000; ++i) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * i / 999.0L);
    const double rel = std::abs(s.alpha_bar(1000) - static_cast<double>(prod)) / static_cast<double>(prod);

    RngStream rng(3, "acceptance/q_sample");
    const std::size_t n = 10000;
    const Tensor x0 = seeded_normal<float>(rng, {n, 1});
    const Tensor eps = seeded_normal<float>(rng, {n, 1});
    double worst_var = 0.0;
    for (std::uint32_t t : {1u, 100u, 500u, 1000u}) {
        const Tensor xt = q_sample(x0, t, eps, s);
        double m = 0, q = 0;
        for (float v : xt.data()) {
            m += v;
            q += double{v} * v;
        }
        m /= n;
        worst_var = std::max(worst_var, std::abs(q / n - m * m - 1.0));
    }
    const bool ok = decreasing && rel < 0.10 && worst_var < 0.05;
    return {ok, fmt("abar_T %.3e vs product %.3e (rel %.1e); max |var-1| %.3f", s.alpha_bar(1000),
                    static_cast<double>(prod), rel, worst_var)};
}

// ---- 4
DenoiserModel train_vector_model(const Tensor& x0, const Tensor& cond, double p_uncond, const char* label) {
    DenoiserSpec spec;
    spec.data_dim = 2;
    spec.cond_dim = static_cast<std::uint32_t>(cond.cols());
    spec.time_dim = 16;
    spec.hidden = {64, 64};
    RngStream rng(4, label);
    auto model = make_denoiser(spec, make_schedule(200, 5e-4, 0.1), rng);
    DenoiserTraining opt;
    opt.steps = 6000;
    opt.batch_size = 128;
    opt.learning_rate = 2e-3;
    opt.p_uncond = p_uncond;
    opt.ema_decay = 0.995;
    train_denoiser(model, x0, cond, opt, rng);
    return model;
}

Outcome vector_sampler() {
    RngStream rng(4, "acceptance/vector-data");
    const std::size_t n = 4000;

    // Unconditional: one Gaussian.
    const double mx = 0.3, my = -0.2, sd = 0.25;
    Tensor g({n, 2}), no_cond({n, 1}, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        g.row(i)[0] = static_cast<float>(mx + sd * rng.normal());
        g.row(i)[1] = static_cast<float>(my + sd * rng.normal());
    }
    const auto uncond = train_vector_model(g, no_cond, 1.0, "acceptance/vector-uncond");
    SamplerOptions so;
    so.mode = GuidanceMode::unconditional;
    so.clip_x0.reset();
    std::vector<SampleRequest> reqs(500);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        reqs[i].condition = {0.0f};
        reqs[i].sampling_steps = 200;
        reqs[i].rng_label = "u/" + std::to_string(i);
    }
    const Tensor xs = sample_batch(uncond, reqs, 4, so);
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < xs.rows(); ++i) {
        sx += xs.row(i)[0];
        sy += xs.row(i)[1];
    }
    const double ex = std::abs(sx / 500 - mx), ey = std::abs(sy / 500 - my);

    // Conditional: two modes, one-hot condition.
    const std::array<std::array<double, 2>, 2> centers{{{-0.5, -0.5}, {0.5, 0.5}}};
    Tensor m({n, 2}), onehot({n, 2}, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = i % 2;
        m.row(i)[0] = static_cast<float>(centers[k][0] + 0.15 * rng.normal());
        m.row(i)[1] = static_cast<float>(centers[k][1] + 0.15 * rng.normal());
        onehot.row(i)[k] = 1.0f;
    }
    const auto cond = train_vector_model(m, onehot, 0.1, "acceptance/vector-cond");
    SamplerOptions co;
    co.clip_x0.reset();
    double worst_frac = 1.0;
    for (std::size_t k = 0; k < 2; ++k) {
        std::vector<SampleRequest> rq(200);
        for (std::size_t i = 0; i < rq.size(); ++i) {
            rq[i].condition = {k == 0 ? 1.0f : 0.0f, k == 1 ? 1.0f : 0.0f};
            rq[i].guidance_scale = 2.0;
            rq[i].sampling_steps = 200;
            rq[i].rng_label = "c/" + std::to_string(k) + "/" + std::to_string(i);
        }
        const Tensor ys = sample_batch(cond, rq, 4, co);
        std::size_t hit = 0;
        for (std::size_t i = 0; i < ys.rows(); ++i) {
            double best = 1e30;
            std::size_t arg = 0;
            for (std::size_t c = 0; c < 2; ++c) {
                const double dx = ys.row(i)[0] - centers[c][0], dy = ys.row(i)[1] - centers[c][1];
                if (dx * dx + dy * dy < best) {
                    best = dx * dx + dy * dy;
                    arg = c;
                }
            }
            hit += arg == k;
        }
        worst_frac = std::min(worst_frac, static_cast<double>(hit) / 200.0);
    }
    const bool ok = ex < 0.1 && ey < 0.1 && worst_frac >= 0.95;
    return {ok, fmt("mean error (%.3f, %.3f) (limit 0.1); conditioned-mode fraction %.3f (need 0.95)", ex, ey,
                    worst_frac)};
}

// ---- 5, 6: from the toy run's message log
MessageLog toy_log(const fs::path& run) { return MessageLog::from_jsonl(slurp(run / artifacts::messages)); }

Outcome accounting(const fs::path& run) {
    const auto a = oscar_upload_params(60, 512);
    const auto b = fedavg_upload_millions(11.69, 20);
    std::uint64_t oscar = 0, fedavg = 0;
    for (const auto& r : account_messages(toy_log(run))) {
        if (r.method == "oscar") oscar = std::max(oscar, r.uploaded_params);
        if (r.method == "fedavg") fedavg = std::max(fedavg, r.uploaded_params);
    }
    const double red = fedavg ? reduction_ratio(oscar, fedavg) : 0.0;
    const bool ok = a == 30720 && std::abs(b - 233.8) < 1e-9 && std::llround(b) == 234 && oscar > 0 && red >= 0.99;
    return {ok, fmt("60x512 = %llu; 11.69M x 20 = %.1fM; toy oscar %llu vs fedavg %llu params, reduction %.4f",
                    static_cast<unsigned long long>(a), b, static_cast<unsigned long long>(oscar),
                    static_cast<unsigned long long>(fedavg), red)};
}

Outcome one_shot(const fs::path& run, const ExperimentConfig& cfg) {
    const auto log = toy_log(run);
    bool ok = true;
    std::size_t worst_oscar = 0, worst_fedavg = 0;
    for (std::uint32_t k = 0; k < cfg.corpus.n_clients; ++k) {
        const auto o = log.upstream_count("oscar", client_name(k));
        const auto f = log.upstream_count("fedavg", client_name(k));
        ok = ok && o == 1 && f == cfg.fedavg.rounds;
        worst_oscar = std::max(worst_oscar, o);
        worst_fedavg = std::max(worst_fedavg, f);
    }
    return {ok, fmt("oscar %zu upstream message per client; fedavg %zu (rounds %u)", worst_oscar, worst_fedavg,
                    cfg.fedavg.rounds)};
}

// ---- 7
Outcome toy_benchmark(const fs::path& run, const fs::path& thresholds_file) {
    const auto th = json::parse(slurp(thresholds_file));
    const double margin = th.at("min_gain_over_local").get<double>();
    const double gap = th.at("max_gap_to_oracle").get<double>();
    const auto metrics = json::parse(slurp(run / artifacts::metrics));
    std::map<std::string, double> avg;
    for (const auto& m : metrics.at("methods")) avg[m.at("method").get<std::string>()] = m.at("average").get<double>();
    const double o = avg.at("oscar"), l = avg.at("local"), c = avg.at("central");
    const bool ok = o - l >= margin && c - o <= gap;
    return {ok, fmt("oscar %.3f, local %.3f (gain %.3f, need %.2f), oracle %.3f (gap %.3f, limit %.2f)", o, l, o - l,
                    margin, c, c - o, gap)};
}

// ---- 8
Outcome ablation(const fs::path& run, const ExperimentConfig& cfg) {
    std::istringstream in(slurp(run / artifacts::ablation));
    std::string line;
    std::vector<std::uint32_t> seen;
    std::getline(in, line);
    const bool header = line.rfind("n_per_rep,", 0) == 0;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') seen.push_back(static_cast<std::uint32_t>(std::stoul(line)));
    const std::vector<std::uint32_t> want{5, 10, 20, 30};
    const bool ok = header && seen == want && cfg.ablation_counts == want;
    std::string got;
    for (auto n : seen) got += (got.empty() ? "" : ",") + std::to_string(n);
    return {ok, "rows for n = " + got};
}

// ---- 9
Outcome determinism(const fs::path& smoke_cfg, const fs::path& work) {
    const auto cfg = load_config(smoke_cfg);
    std::vector<fs::path> dirs{work / "determinism_a", work / "determinism_b"};
    for (const auto& d : dirs) {
        fs::remove_all(d);
        run_pipeline(cfg, Stage::all, d, nullptr);
    }
    std::vector<std::string> files{std::string(artifacts::manifest), std::string(artifacts::results),
                                   std::string(artifacts::accounting), std::string(artifacts::ablation)};
    std::string differing;
    for (const auto& f : files)
        if (slurp(dirs[0] / f) != slurp(dirs[1] / f)) differing += " " + f;
    const auto n = json::parse(slurp(dirs[0] / artifacts::manifest)).at("artifacts").size();
    return {differing.empty(), differing.empty() ? fmt("manifest (%zu artifacts) and CSVs byte-identical", n)
                                                 : "differs:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string source = OSCAR_SOURCE_DIR;
    std::string work = (fs::temp_directory_path() / "oscar_acceptance").string();
    std::string toy = "configs/toy.ini";
    std::string reuse;
    std::set<int> only;
    app.add_option("--source-dir", source, "repository root");
    app.add_option("--work-dir", work, "scratch directory for pipeline runs");
    app.add_option("--toy-config", toy, "toy preset, relative to the source dir");
    app.add_option("--reuse-toy-run", reuse, "read an existing toy run instead of running it");
    app.add_option("--only", only, "criteria to run (default all)");
    CLI11_PARSE(app, argc, argv);

    const fs::path root(source);
    const fs::path work_dir(work);
    fs::create_directories(work_dir);
    auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

    int failed = 0;
    auto report = [&](int n, const std::function<Outcome()>& fn) {
        if (!wanted(n)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("criterion %d: %s (%.1fs) %s\n", n, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
        std::fflush(stdout);
    };

    report(1, guidance_algebra);
    report(2, gradients);
    report(3, schedule_and_forward);
    report(4, vector_sampler);

    const bool need_toy = wanted(5) || wanted(6) || wanted(7) || wanted(8);
    ExperimentConfig toy_cfg;
    fs::path toy_run = reuse.empty() ? work_dir / "toy" : fs::path(reuse);
    std::string toy_error;
    if (need_toy) {
        try {
            toy_cfg = load_config(root / toy);
            if (reuse.empty()) {
                fs::remove_all(toy_run);
                const auto t0 = std::chrono::steady_clock::now();
                run_pipeline(toy_cfg, Stage::all, toy_run,
                             [](const std::string& m) { std::fprintf(stderr, "[toy] %s\n", m.c_str()); });
                std::printf("toy pipeline: %.0fs\n",
                            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            }
        } catch (const std::exception& e) {
            toy_error = e.what();
        }
    }
    auto toy_step = [&](auto fn) {
        return [&, fn]() -> Outcome {
            if (!toy_error.empty()) return {false, "toy run failed: " + toy_error};
            return fn();
        };
    };
    report(5, toy_step([&] { return accounting(toy_run); }));
    report(6, toy_step([&] { return one_shot(toy_run, toy_cfg); }));
    report(7, toy_step([&] { return toy_benchmark(toy_run, root / "configs" / "toy_thresholds.json"); }));
    report(8, toy_step([&] { return ablation(toy_run, toy_cfg); }));
    report(9, [&] { return determinism(root / "configs" / "smoke.ini", work_dir); });

    std::printf("%s\n", failed ? "acceptance: FAIL" : "acceptance: PASS");
    return failed ? 1 : 0;
}
