#include "oscar/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oscar/binary_io.hpp"

namespace oscar {

NoiseSchedule::NoiseSchedule(std::uint32_t steps, double beta_start, double beta_end)
    : beta_start_(beta_start), beta_end_(beta_end) {
    if (steps < 1) throw Error("noise schedule needs at least one timestep");
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
        throw Error("noise schedule requires 0 < beta_start < beta_end < 1");
    beta_.resize(steps);
    alpha_bar_.resize(steps);
    double prod = 1.0;
    for (std::uint32_t i = 0; i < steps; ++i) {
        beta_[i] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1.0);
        prod *= 1.0 - beta_[i];
        alpha_bar_[i] = prod;
    }
}

std::size_t NoiseSchedule::index(std::uint32_t t) const {
    if (t < 1 || t > steps())
        throw Error("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    return t - 1;
}

double NoiseSchedule::sigma(std::uint32_t t) const { return std::sqrt(beta(t)); }

std::vector<std::uint32_t> NoiseSchedule::strided_timesteps(std::uint32_t count) const {
    if (count < 1 || count > steps())
        throw Error("sampling steps must be in [1, " + std::to_string(steps()) + "], got " + std::to_string(count));
    std::vector<std::uint32_t> ts(count);
    for (std::uint32_t i = 1; i <= count; ++i)
        ts[i - 1] = static_cast<std::uint32_t>((std::uint64_t{i} * steps()) / count);
    return ts;
}

NoiseSchedule make_schedule(std::uint32_t steps, double beta_start, double beta_end) {
    return NoiseSchedule(steps, beta_start, beta_end);
}

Tensor q_sample(const Tensor& x0, std::uint32_t t, const Tensor& eps, const NoiseSchedule& schedule) {
    std::vector<std::uint32_t> ts(x0.rows(), t);
    return q_sample(x0, ts, eps, schedule);
}

Tensor q_sample(const Tensor& x0, std::span<const std::uint32_t> t, const Tensor& eps,
                const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "q_sample");
    if (t.size() != x0.rows()) throw ShapeError("q_sample: one timestep per row required");
    Tensor out(x0.shape());
    const std::size_t cols = x0.cols();
    for (std::size_t i = 0; i < x0.rows(); ++i) {
        const double ab = schedule.alpha_bar(t[i]);
        const float a = static_cast<float>(std::sqrt(ab)), b = static_cast<float>(std::sqrt(1.0 - ab));
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a * x0[i * cols + j] + b * eps[i * cols + j];
    }
    return out;
}

std::vector<float> time_embedding(std::uint32_t t, std::size_t dim) {
    std::vector<float> e(dim, 0.0f);
    const std::size_t half = dim / 2;
    for (std::size_t k = 0; k < half; ++k) {
        const double w = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        e[k] = static_cast<float>(std::sin(t * w));
        e[half + k] = static_cast<float>(std::cos(t * w));
    }
    return e;
}

MlpSpec DenoiserSpec::mlp() const {
    MlpSpec m{input_dim(), hidden, data_dim, Activation::silu, Head::mean_squared_error};
    m.side_dim = input_dim() - data_dim;
    return m;
}

DenoiserModel make_denoiser(const DenoiserSpec& spec, NoiseSchedule schedule, RngStream& stream) {
    if (spec.data_dim == 0 || spec.time_dim % 2 != 0) throw ShapeError("invalid denoiser dimensions");
    return DenoiserModel{spec, std::move(schedule), init_params<float>(spec.mlp(), stream), 0};
}

Conditioning Conditioning::null(std::size_t rows, std::size_t cond_dim) {
    return Conditioning{Tensor({rows, std::max<std::size_t>(cond_dim, 1)}), std::vector<float>(rows, 1.0f)};
}

namespace {

struct DenoiserInputs {
    Tensor x;
    Tensor time;
    Tensor cond;
    Tensor flag;
};

DenoiserInputs make_inputs(const DenoiserModel& model, const Tensor& x_t, std::span<const std::uint32_t> t,
                           const Conditioning& c) {
    const auto& spec = model.spec;
    const std::size_t rows = x_t.rows();
    if (x_t.cols() != spec.data_dim)
        throw ShapeError("denoiser expects " + std::to_string(spec.data_dim) + " data values per row");
    if (t.size() != rows || c.null_flag.size() != rows) throw ShapeError("denoiser inputs disagree on row count");
    DenoiserInputs in{x_t, Tensor({rows, spec.time_dim}), Tensor({rows, std::max<std::uint32_t>(spec.cond_dim, 1)}),
                      Tensor({rows, 1})};
    for (std::size_t i = 0; i < rows; ++i) {
        const auto te = time_embedding(t[i], spec.time_dim);
        std::copy(te.begin(), te.end(), in.time.row(i).begin());
        const float flag = c.null_flag[i];
        if (flag != 0.0f && flag != 1.0f) throw Error("null flag must be 0 or 1");
        in.flag[i] = flag;
        if (flag == 0.0f) {
            if (c.condition.cols() != spec.cond_dim || c.condition.rows() != rows)
                throw ShapeError("condition rows must have " + std::to_string(spec.cond_dim) + " values");
            const auto src = c.condition.row(i);
            std::copy(src.begin(), src.end(), in.cond.row(i).begin());
        }
    }
    return in;
}

typename Graph<float>::Var denoiser_graph(Graph<float>& g, const DenoiserModel& model, const BoundParams<float>& bound,
                                          DenoiserInputs in) {
    std::vector<Graph<float>::Var> ctx{g.constant(std::move(in.time), "time")};
    if (model.spec.cond_dim > 0) ctx.push_back(g.constant(std::move(in.cond), "condition"));
    ctx.push_back(g.constant(std::move(in.flag), "null_flag"));
    const auto side = g.concat(std::move(ctx), "context");
    const auto input = g.concat({g.constant(std::move(in.x), "x_t"), side}, "denoiser_input");
    return mlp_forward(g, model.spec.mlp(), bound, input, side);
}

}  // namespace

Tensor predict_epsilon(const DenoiserModel& model, const Tensor& x_t, std::span<const std::uint32_t> t,
                       const Conditioning& cond) {
    Graph<float> g;
    const auto bound = bind_params(g, model.params);
    return g.value(denoiser_graph(g, model, bound, make_inputs(model, x_t, t, cond)));
}

DiffusionStepResult diffusion_train_step(DenoiserModel& model, const Tensor& x0, const Tensor& condition,
                                         double p_uncond, RngStream& rng, AdamState& state,
                                         const AdamConfig& adam) {
    if (p_uncond < 0.0 || p_uncond > 1.0) throw Error("p_uncond must be in [0, 1]");
    const std::size_t rows = x0.rows();
    const std::uint32_t T = model.schedule.steps();
    std::vector<std::uint32_t> ts(rows);
    Tensor eps(x0.shape());
    Conditioning cond{condition, std::vector<float>(rows, 0.0f)};
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        ts[i] = 1 + static_cast<std::uint32_t>(rng.uniform_index(T));
        for (auto& v : eps.row(i)) v = static_cast<float>(rng.normal());
        if (rng.uniform() < p_uncond) {
            cond.null_flag[i] = 1.0f;
            ++dropped;
        }
    }
    const Tensor x_t = q_sample(x0, ts, eps, model.schedule);

    Graph<float> g(Kernels::blas);
    const auto bound = bind_params(g, model.params);
    const auto pred = denoiser_graph(g, model, bound, make_inputs(model, x_t, ts, cond));
    const auto loss = g.mean_squared_error(pred, eps, "noise_mse");
    g.backward(loss);
    const float value = g.value(loss)[0];
    if (!std::isfinite(value)) throw NumericError("non-finite diffusion loss");
    adam_step(model.params, collect_grads(g, model.params, bound), state, adam);
    ++model.trained_steps;
    return {value, dropped};
}

std::pair<float, float> train_denoiser(DenoiserModel& model, const Tensor& x0, const Tensor& condition,
                                       const DenoiserTraining& options, RngStream& rng,
                                       std::span<const std::uint32_t> cell_of_row,
                                       const std::function<void(std::uint64_t, float)>& progress) {
    if (x0.rows() != condition.rows()) throw ShapeError("training data and conditions disagree on row count");
    if (options.steps == 0 || options.batch_size == 0) throw Error("training needs positive steps and batch size");
    if (options.group_fraction < 0.0 || options.group_fraction > 1.0) throw Error("group fraction must be in [0, 1]");
    const bool grouped = options.group_fraction > 0.0;
    std::vector<std::vector<std::size_t>> members;
    if (grouped) {
        if (cell_of_row.size() != x0.rows()) throw ShapeError("grouped conditioning needs one cell id per row");
        if (options.group_size == 0) throw Error("group size must be positive");
        for (std::size_t r = 0; r < cell_of_row.size(); ++r) {
            if (cell_of_row[r] >= members.size()) members.resize(cell_of_row[r] + 1);
            members[cell_of_row[r]].push_back(r);
        }
    }
    std::vector<double> acc(condition.cols());
    AdamState state;
    const std::size_t n = x0.rows(), dcols = x0.cols(), ccols = condition.cols();
    const std::uint64_t window = std::max<std::uint64_t>(1, options.steps / 100);
    double head = 0.0, tail = 0.0;
    const bool use_ema = options.ema_decay > 0.0;
    ParamSet ema = use_ema ? model.params : ParamSet{};
    const float decay = static_cast<float>(options.ema_decay);
    Tensor xb({options.batch_size, dcols});
    Tensor cb({options.batch_size, ccols});
    for (std::uint64_t step = 0; step < options.steps; ++step) {
        for (std::size_t b = 0; b < options.batch_size; ++b) {
            const std::size_t k = rng.uniform_index(n);
            std::copy_n(x0.row(k).begin(), dcols, xb.row(b).begin());
            std::copy_n(condition.row(k).begin(), ccols, cb.row(b).begin());
            if (grouped && rng.uniform() < options.group_fraction) {
                const auto& cell = members[cell_of_row[k]];
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t m = 0; m < options.group_size; ++m) {
                    const auto src = condition.row(m == 0 ? k : cell[rng.uniform_index(cell.size())]);
                    for (std::size_t j = 0; j < ccols; ++j) acc[j] += src[j];
                }
                auto dst = cb.row(b);
                for (std::size_t j = 0; j < ccols; ++j)
                    dst[j] = static_cast<float>(acc[j] / static_cast<double>(options.group_size));
            }
        }
        const double progress_frac = static_cast<double>(step) / static_cast<double>(options.steps);
        const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress_frac));
        AdamConfig adam;
        adam.lr = options.learning_rate * (options.final_lr_fraction + (1.0 - options.final_lr_fraction) * cosine);
        const auto r = diffusion_train_step(model, xb, cb, options.p_uncond, rng, state, adam);
        if (use_ema) {
            for (std::size_t i = 0; i < ema.count(); ++i) {
                auto e = ema.tensor(i).data();
                const auto p = model.params.tensor(i).data();
                for (std::size_t k = 0; k < e.size(); ++k) e[k] = decay * e[k] + (1.0f - decay) * p[k];
            }
        }
        if (step < window) head += r.loss;
        if (step >= options.steps - window) tail += r.loss;
        if (progress) progress(step + 1, r.loss);
    }
    if (use_ema) model.params = std::move(ema);
    return {static_cast<float>(head / window), static_cast<float>(tail / window)};
}

Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, double s) {
    require_same_shape(eps_cond, eps_uncond, "cfg_epsilon");
    if (s < 0.0) throw Error("guidance scale must be ≥ 0");
    Tensor out(eps_cond.shape());
    const float a = static_cast<float>(1.0 + s), b = static_cast<float>(s);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * eps_cond[i] - b * eps_uncond[i];
    return out;
}

Tensor classifier_guided_epsilon(const Tensor& eps, const Tensor& grad_log_p, double s, double sigma_t) {
    require_same_shape(eps, grad_log_p, "classifier_guided_epsilon");
    if (s < 0.0) throw Error("guidance scale must be ≥ 0");
    Tensor out(eps.shape());
    const float k = static_cast<float>(s * sigma_t);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps[i] - k * grad_log_p[i];
    return out;
}

Tensor sample_batch(const DenoiserModel& model, std::span<const SampleRequest> requests, std::uint64_t seed,
                    const SamplerOptions& options) {
    if (model.trained_steps == 0) throw Error("diffusion model is untrained");
    if (requests.empty()) return Tensor();
    const auto& first = requests.front();
    if (first.guidance_scale < 0.0) throw Error("guidance scale must be ≥ 0");
    for (const auto& r : requests)
        if (r.guidance_scale != first.guidance_scale || r.sampling_steps != first.sampling_steps)
            throw Error("batched sample requests must share guidance scale and step count");
    if (options.mode == GuidanceMode::classifier && !options.grad_log_prob)
        throw Error("classifier guidance needs a gradient function");

    const std::size_t n = requests.size();
    const std::size_t dim = model.spec.data_dim;
    const std::size_t cdim = std::max<std::uint32_t>(model.spec.cond_dim, 1);
    const auto ts = model.schedule.strided_timesteps(first.sampling_steps);
    const double s = first.guidance_scale;

    std::vector<RngStream> streams;
    streams.reserve(n);
    Tensor x({n, dim});
    Conditioning cond{Tensor({n, cdim}), std::vector<float>(n, 0.0f)};
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        streams.emplace_back(seed, requests[i].rng_label);
        for (auto& v : x.row(i)) v = static_cast<float>(streams[i].normal());
        labels[i] = requests[i].label;
        if (options.mode == GuidanceMode::classifier_free) {
            if (requests[i].condition.size() != model.spec.cond_dim)
                throw ShapeError("condition has " + std::to_string(requests[i].condition.size()) +
                                 " values, model expects " + std::to_string(model.spec.cond_dim));
            std::copy(requests[i].condition.begin(), requests[i].condition.end(), cond.condition.row(i).begin());
        }
    }
    const Conditioning null = Conditioning::null(n, model.spec.cond_dim);

    for (std::size_t step = ts.size(); step-- > 0;) {
        const std::uint32_t t = ts[step];
        const double abar = model.schedule.alpha_bar(t);
        const double abar_prev = step > 0 ? model.schedule.alpha_bar(ts[step - 1]) : 1.0;
        const double alpha = abar / abar_prev;
        const double beta = 1.0 - alpha;
        const double sigma = options.variance == ReverseVariance::beta
                                 ? std::sqrt(beta)
                                 : std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
        const std::vector<std::uint32_t> trow(n, t);

        Tensor eps;
        switch (options.mode) {
            case GuidanceMode::classifier_free: {
                // Conditional and unconditional rows share one forward pass.
                Tensor both({2 * n, dim});
                std::copy(x.data().begin(), x.data().end(), both.data().begin());
                std::copy(x.data().begin(), x.data().end(), both.data().begin() + static_cast<std::ptrdiff_t>(n * dim));
                Conditioning bc{Tensor({2 * n, cdim}), std::vector<float>(2 * n, 1.0f)};
                std::copy(cond.condition.data().begin(), cond.condition.data().end(), bc.condition.data().begin());
                std::fill_n(bc.null_flag.begin(), n, 0.0f);
                const std::vector<std::uint32_t> t2(2 * n, t);
                const Tensor out = predict_epsilon(model, both, t2, bc);
                Tensor ec({n, dim}), eu({n, dim});
                std::copy_n(out.data().begin(), n * dim, ec.data().begin());
                std::copy_n(out.data().begin() + static_cast<std::ptrdiff_t>(n * dim), n * dim, eu.data().begin());
                eps = cfg_epsilon(ec, eu, s);
                break;
            }
            case GuidanceMode::unconditional:
                eps = predict_epsilon(model, x, trow, null);
                break;
            case GuidanceMode::classifier: {
                const Tensor eu = predict_epsilon(model, x, trow, null);
                const Tensor grad = options.grad_log_prob(x, t, labels);
                eps = classifier_guided_epsilon(eu, grad, s, sigma);
                break;
            }
        }

        const double sa = std::sqrt(abar), sb = std::sqrt(1.0 - abar);
        if (options.clip_x0) {
            const float bound = *options.clip_x0;
            for (std::size_t k = 0; k < x.size(); ++k) {
                const double x0_hat = std::clamp((x[k] - sb * eps[k]) / sa, -double{bound}, double{bound});
                eps[k] = static_cast<float>((x[k] - sa * x0_hat) / sb);
            }
        }
        const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
        const double eps_coef = beta / sb;
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = static_cast<float>(inv_sqrt_alpha * (x[k] - eps_coef * eps[k]));
        if (step > 0) {
            for (std::size_t i = 0; i < n; ++i)
                for (auto& v : x.row(i)) v += static_cast<float>(sigma * streams[i].normal());
        }
        if (!x.all_finite()) throw NumericError("non-finite sampler state at timestep " + std::to_string(t));
    }
    return x;
}

std::vector<float> sample(const DenoiserModel& model, const SampleRequest& request, std::uint64_t seed,
                          const SamplerOptions& options) {
    const Tensor x = sample_batch(model, std::span(&request, 1), seed, options);
    std::vector<float> out(x.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = to_pixel_space(x[k]);
    return out;
}

namespace {
constexpr std::uint32_t kOsdmVersion = 1;
}

std::vector<std::uint8_t> encode_denoiser(const DenoiserModel& model) {
    ByteWriter w;
    w.magic("OSDM");
    w.u32(kOsdmVersion);
    w.u32(model.spec.data_dim);
    w.u32(model.spec.cond_dim);
    w.u32(model.spec.time_dim);
    w.u32(static_cast<std::uint32_t>(model.spec.hidden.size()));
    for (auto h : model.spec.hidden) w.u32(static_cast<std::uint32_t>(h));
    w.u32(model.schedule.steps());
    w.f64(model.schedule.beta_start());
    w.f64(model.schedule.beta_end());
    w.u64(model.trained_steps);
    const auto flat = model.params.flatten();
    w.u64(flat.size());
    w.f32s(flat);
    return w.take();
}

DenoiserModel decode_denoiser(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "OSDM");
    r.expect_magic("OSDM");
    const std::uint32_t version = r.u32();
    if (version != kOsdmVersion) throw FormatError("unsupported OSDM version " + std::to_string(version));
    DenoiserSpec spec;
    spec.data_dim = r.u32();
    spec.cond_dim = r.u32();
    spec.time_dim = r.u32();
    spec.hidden.resize(r.u32());
    for (auto& h : spec.hidden) h = r.u32();
    const std::uint32_t steps = r.u32();
    const double b0 = r.f64();
    const double b1 = r.f64();
    DenoiserModel model;
    model.spec = spec;
    model.schedule = NoiseSchedule(steps, b0, b1);
    model.trained_steps = r.u64();
    RngStream unused(0, "decode");
    model.params = init_params<float>(spec.mlp(), unused);
    const std::uint64_t count = r.u64();
    if (count != model.params.scalar_count()) throw FormatError("OSDM parameter count does not match architecture");
    std::vector<float> flat(count);
    r.f32s(flat);
    r.expect_end();
    model.params.assign_flat(flat);
    return model;
}

void save_denoiser(const std::filesystem::path& path, const DenoiserModel& model) {
    write_file_bytes(path, encode_denoiser(model));
}

DenoiserModel load_denoiser(const std::filesystem::path& path) { return decode_denoiser(read_file_bytes(path)); }

}  // namespace oscar
