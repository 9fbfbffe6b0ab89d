#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "oscar/classifier.hpp"
#include "oscar/diffusion.hpp"
#include "oscar/federation.hpp"
#include "oscar/synthdata.hpp"

namespace oscar {

inline const std::vector<std::string> kAllMethods{"oscar", "local", "fedavg", "cado"};

struct ExperimentConfig {
    // [corpus]
    CorpusConfig corpus;
    SplitMode mode = SplitMode::common;
    std::uint32_t pretrain_images_per_cell = 200;

    // [diffusion]
    std::uint32_t timesteps = 200;
    double beta_start = 5e-4;
    double beta_end = 0.1;
    std::vector<std::size_t> denoiser_hidden{512, 512};
    DenoiserTraining training;
    double guidance_scale = 7.5;
    std::uint32_t sampling_steps = 50;
    ReverseVariance variance = ReverseVariance::beta;
    double clip_x0 = 1.1;  // 0 disables
    std::size_t sample_batch = 256;
    // Guidance pilot: the smallest candidate whose samples a server-side
    // reference classifier recognizes at >= pilot_agreement is selected.
    std::vector<double> pilot_scales{1.0, 2.0, 3.0, 5.0, 7.5};
    double pilot_agreement = 0.95;

    // [federation]
    std::vector<std::string> methods = kAllMethods;
    std::uint32_t embedding_dim = 32;
    std::uint32_t n_per_rep = 10;
    FedAvgOptions fedavg;
    std::uint32_t cado_epochs = 40;
    double cado_guidance_scale = 20.0;
    std::vector<std::uint32_t> ablation_counts{5, 10, 20, 30};

    // [classifier]
    ClassifierConfig classifier;

    // [run]
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";  // relative paths resolve against the working directory

    bool has_method(std::string_view m) const;
    std::uint64_t master_seed() const;  // throws if unset
    SynthesisOptions synthesis() const;
    NoiseSchedule schedule() const;
};

// Flat key = value pairs under [section] headers; '#' or ';' start a comment.
// Unknown sections or keys, malformed values and out-of-range values throw
// ConfigError naming the offending key. A missing seed is only reported by
// require_seed, so the CLI can supply it.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void require_seed(const ExperimentConfig& config);

// Every key with its effective value, in the same layout parse_config reads.
// out_dir is left out so the echo written inside it does not depend on where
// the run was placed.
std::string to_ini(const ExperimentConfig& config);

}  // namespace oscar
