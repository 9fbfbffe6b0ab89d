#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "oscar/config.hpp"

namespace oscar {

// `all` runs pretrain through report, then ablate. `pilot` is the guidance
// sweep used to pick the shipped scale; it is not part of `all`.
enum class Stage { pretrain, federate, synthesize, train, evaluate, report, ablate, pilot, all };

Stage parse_stage(std::string_view name);  // ConfigError on unknown names
std::string_view to_string(Stage stage);

using LogFn = std::function<void(const std::string&)>;

// Runs `stage` against `out_dir`. Missing inputs raise PipelineError naming
// the stage to run first. Writes config.ini and refreshes manifest.json
// after every stage.
void run_pipeline(const ExperimentConfig& config, Stage stage, const std::filesystem::path& out_dir,
                  const LogFn& log = {});

// Every file under out_dir except the manifest itself, sorted by relative
// path, with SHA-256 and size. No timestamps.
std::string build_manifest(const std::filesystem::path& out_dir);

// Artifact locations relative to the output directory.
namespace artifacts {
inline constexpr std::string_view config = "config.ini";
inline constexpr std::string_view manifest = "manifest.json";
inline constexpr std::string_view corpus = "pretrain/corpus.osfd";
inline constexpr std::string_view encoder = "pretrain/encoder.json";
inline constexpr std::string_view denoiser = "pretrain/denoiser.osdm";
inline constexpr std::string_view uploads = "federate/oscar_uploads.json";
inline constexpr std::string_view cado_uploads = "federate/cado_uploads.json";
inline constexpr std::string_view messages = "federate/messages.jsonl";
inline constexpr std::string_view fedavg_model = "federate/fedavg_global.oscm";
inline constexpr std::string_view oscar_syn = "synthesize/oscar_dsyn.osfd";
inline constexpr std::string_view cado_syn = "synthesize/cado_dsyn.osfd";
inline constexpr std::string_view metrics = "evaluate/metrics.json";
inline constexpr std::string_view results = "report/results.csv";
inline constexpr std::string_view accounting = "report/accounting.csv";
inline constexpr std::string_view ablation = "ablate/ablation.csv";
inline constexpr std::string_view pilot = "pilot/guidance_sweep.csv";

std::string client_train(std::uint32_t k);  // federate/client_1_train.osfd
std::string client_test(std::uint32_t k);
std::string local_model(std::uint32_t k);  // federate/local_client_1.oscm
std::string cado_classifier(std::uint32_t k);
std::string global_model(std::string_view method);  // train/<method>_global.oscm
}  // namespace artifacts

}  // namespace oscar
