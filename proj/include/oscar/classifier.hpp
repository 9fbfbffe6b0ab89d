#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "oscar/numerics/adam.hpp"
#include "oscar/numerics/mlp.hpp"
#include "oscar/synthdata.hpp"

namespace oscar {

struct ClassifierConfig {
    std::vector<std::size_t> hidden{128, 64};
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::uint32_t max_epochs = 200;
    std::uint32_t patience = 20;
    double val_fraction = 0.1;
    // Random translation of each training example by up to this many pixels
    // per axis (edge-replicated); 0 disables.
    std::uint32_t max_shift = 0;

    friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

// Dense classifier over flattened pixels mapped to [-1, 1].
struct ClassifierModel {
    MlpSpec spec;
    ParamSet params;

    std::uint32_t n_classes() const noexcept { return static_cast<std::uint32_t>(spec.output_dim); }
};

MlpSpec classifier_spec(std::size_t input_dim, std::uint32_t n_classes, const std::vector<std::size_t>& hidden);
ClassifierModel make_classifier(std::size_t input_dim, std::uint32_t n_classes, const ClassifierConfig& config,
                                RngStream& stream);

// Rows of pixels in model space.
Tensor images_to_tensor(const Dataset& data);
std::vector<int> labels_of(const Dataset& data);

// One pass over `data` in a seeded shuffled order; used by the FedAvg clients.
void train_epochs(ClassifierModel& model, const Tensor& x, std::span<const int> labels, std::uint32_t epochs,
                  const ClassifierConfig& config, RngStream& rng, AdamState& state);

// Adam with early stopping on a held-out validation split (val_fraction of
// `data`); returns the best-validation checkpoint, the latest one on ties. Every class in
// [0, n_classes) must be present, otherwise the error names the missing
// class and `data_description`.
ClassifierModel train_classifier(const Dataset& data, std::uint32_t n_classes, const ClassifierConfig& config,
                                 RngStream& rng, std::string_view data_description = "training data");

// Argmax prediction; ties go to the lowest class index.
std::vector<int> predict(const ClassifierModel& model, const Tensor& x);
int argmax_row(std::span<const float> logits);

double top1_accuracy(const ClassifierModel& model, const Dataset& test);
double top1_accuracy(std::span<const int> predictions, std::span<const int> labels);

// OSCM container: "OSCM", u32 version, u32 input_dim, u32 hidden count +
// widths, u32 classes, u64 float count, then f32 parameters.
std::vector<std::uint8_t> encode_classifier(const ClassifierModel& model);
ClassifierModel decode_classifier(const std::vector<std::uint8_t>& bytes);

}  // namespace oscar
