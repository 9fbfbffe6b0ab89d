#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oscar/numerics/adam.hpp"
#include "oscar/numerics/mlp.hpp"
#include "oscar/numerics/tensor.hpp"

namespace oscar {

// Linear beta schedule. Timesteps are 1-based: t in [1, steps()].
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    NoiseSchedule(std::uint32_t steps, double beta_start, double beta_end);

    std::uint32_t steps() const noexcept { return static_cast<std::uint32_t>(beta_.size()); }
    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }

    double beta(std::uint32_t t) const { return beta_.at(index(t)); }
    double alpha(std::uint32_t t) const { return 1.0 - beta(t); }
    double alpha_bar(std::uint32_t t) const { return alpha_bar_.at(index(t)); }
    double sigma(std::uint32_t t) const;

    // Evenly strided ascending subset of `count` timesteps ending at steps().
    std::vector<std::uint32_t> strided_timesteps(std::uint32_t count) const;

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

private:
    std::size_t index(std::uint32_t t) const;

    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

NoiseSchedule make_schedule(std::uint32_t steps, double beta_start, double beta_end);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, one timestep for the whole tensor.
Tensor q_sample(const Tensor& x0, std::uint32_t t, const Tensor& eps, const NoiseSchedule& schedule);
// Per-row timesteps.
Tensor q_sample(const Tensor& x0, std::span<const std::uint32_t> t, const Tensor& eps,
                const NoiseSchedule& schedule);

// Sinusoidal embedding [sin(t w_k), cos(t w_k)] with w_k = 10000^(-k / (dim / 2)).
std::vector<float> time_embedding(std::uint32_t t, std::size_t dim);

struct DenoiserSpec {
    std::uint32_t data_dim = 256;
    std::uint32_t cond_dim = 32;
    std::uint32_t time_dim = 32;
    std::vector<std::size_t> hidden{512, 512};

    // Input layout: x_t | time embedding | condition | null flag.
    std::size_t input_dim() const noexcept { return data_dim + time_dim + cond_dim + 1; }
    MlpSpec mlp() const;

    friend bool operator==(const DenoiserSpec&, const DenoiserSpec&) = default;
};

struct DenoiserModel {
    DenoiserSpec spec;
    NoiseSchedule schedule;
    ParamSet params;
    std::uint64_t trained_steps = 0;
};

DenoiserModel make_denoiser(const DenoiserSpec& spec, NoiseSchedule schedule, RngStream& stream);

// One row per example. A row with null_flag = 1 ignores its condition (it is zeroed).
struct Conditioning {
    Tensor condition;
    std::vector<float> null_flag;

    static Conditioning null(std::size_t rows, std::size_t cond_dim);
};

Tensor predict_epsilon(const DenoiserModel& model, const Tensor& x_t, std::span<const std::uint32_t> t,
                       const Conditioning& cond);

struct DiffusionStepResult {
    float loss;
    std::size_t unconditional_rows;
};

// One Adam step on the noise-prediction MSE. t ~ U{1..T} and eps ~ N(0, I)
// per example; each condition is replaced by the null token with
// probability p_uncond.
DiffusionStepResult diffusion_train_step(DenoiserModel& model, const Tensor& x0, const Tensor& condition,
                                         double p_uncond, RngStream& rng, AdamState& state,
                                         const AdamConfig& adam);

struct DenoiserTraining {
    std::uint64_t steps = 20000;
    std::size_t batch_size = 64;
    double learning_rate = 5e-4;
    double final_lr_fraction = 0.1;  // cosine decay floor
    double p_uncond = 0.1;
    // Exponential moving average of the weights, copied into the model at the
    // end; 0 keeps the raw final weights.
    double ema_decay = 0.0;
    // Fraction of examples whose condition is replaced by the mean condition
    // of group_size rows from the same cell (the example itself plus
    // group_size - 1 drawn with replacement). Needs cell ids; 0 disables.
    double group_fraction = 0.0;
    std::size_t group_size = 30;
};

// Minibatch training over (x0, condition) rows drawn with replacement.
// `cell_of_row` (one id per row, e.g. category x domain) is required when
// group_fraction > 0. Returns the mean loss over the first and last 1% of steps.
std::pair<float, float> train_denoiser(DenoiserModel& model, const Tensor& x0, const Tensor& condition,
                                       const DenoiserTraining& options, RngStream& rng,
                                       std::span<const std::uint32_t> cell_of_row = {},
                                       const std::function<void(std::uint64_t, float)>& progress = {});

// (1 + s) eps_cond - s eps_uncond
Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, double s);
// eps - s sigma_t grad_log_p
Tensor classifier_guided_epsilon(const Tensor& eps, const Tensor& grad_log_p, double s, double sigma_t);

enum class GuidanceMode { classifier_free, unconditional, classifier };

// Reverse-step noise: beta (sigma^2 = beta_t) or the posterior variance
// beta_t (1 - abar_{t-1}) / (1 - abar_t).
enum class ReverseVariance { beta, posterior };

// Gradient of sum_i log p(label_i | x_t[i]) with respect to x_t.
using GradLogProb = std::function<Tensor(const Tensor& x_t, std::uint32_t t, std::span<const int> labels)>;

struct SampleRequest {
    std::vector<float> condition;
    double guidance_scale = 7.5;
    std::uint32_t sampling_steps = 50;
    std::string rng_label = "sample";
    int label = -1;  // class for classifier guidance
};

struct SamplerOptions {
    GuidanceMode mode = GuidanceMode::classifier_free;
    // Bound for the implied x0 estimate at every step; empty disables it.
    std::optional<float> clip_x0 = 1.1f;
    ReverseVariance variance = ReverseVariance::beta;
    GradLogProb grad_log_prob;
};

// Ancestral sampling of a batch of requests that share guidance scale and
// step count. Row i draws all of its noise from RngStream(seed, requests[i].rng_label),
// so results do not depend on how requests are grouped into batches.
// Returns x0 in model space (one row per request).
Tensor sample_batch(const DenoiserModel& model, std::span<const SampleRequest> requests, std::uint64_t seed,
                    const SamplerOptions& options = {});

// Single image in [0, 1].
std::vector<float> sample(const DenoiserModel& model, const SampleRequest& request, std::uint64_t seed,
                          const SamplerOptions& options = {});

// Pixel conversions between [0, 1] storage and the [-1, 1] model space.
inline float to_model_space(float p) { return 2.0f * p - 1.0f; }
inline float to_pixel_space(float v) { return std::clamp(0.5f * (v + 1.0f), 0.0f, 1.0f); }

// OSDM checkpoint: "OSDM", u32 version, u32 data_dim, cond_dim, time_dim,
// u32 hidden count + widths, u32 T, f64 beta_start, f64 beta_end,
// u64 trained_steps, u64 float count, then f32 parameters in declared order.
std::vector<std::uint8_t> encode_denoiser(const DenoiserModel& model);
DenoiserModel decode_denoiser(const std::vector<std::uint8_t>& bytes);
void save_denoiser(const std::filesystem::path& path, const DenoiserModel& model);
DenoiserModel load_denoiser(const std::filesystem::path& path);

}  // namespace oscar
