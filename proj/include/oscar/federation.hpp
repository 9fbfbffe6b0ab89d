#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oscar/classifier.hpp"
#include "oscar/diffusion.hpp"
#include "oscar/encoder.hpp"
#include "oscar/synthdata.hpp"

namespace oscar {

// The only thing an OSCAR client sends: one averaged embedding per category it holds.
struct OscarUpload {
    std::uint32_t client_id = 0;
    std::uint32_t dim = 0;
    std::map<std::uint32_t, EmbeddingVector> representations;

    std::size_t category_count() const noexcept { return representations.size(); }
    std::uint64_t parameter_count() const noexcept { return std::uint64_t{dim} * representations.size(); }
    // Vectors concatenated in ascending category order.
    std::vector<float> payload() const;
};

struct ClassifierUpload {
    std::uint32_t client_id = 0;
    ClassifierModel classifier;
    std::vector<std::uint32_t> categories;  // metadata: classes the server should sample

    std::uint64_t parameter_count() const noexcept { return classifier.params.scalar_count(); }
};

struct ModelUpdate {
    std::uint32_t round = 0;
    std::uint32_t client_id = 0;
    std::uint64_t sample_count = 0;
    ParamSet weights;  // full weights, not a delta
};

enum class Direction { upstream, downstream };
std::string_view to_string(Direction d);

struct Message {
    std::string method;
    std::string sender;
    std::string receiver;
    std::uint32_t round = 0;
    Direction direction = Direction::upstream;
    std::string payload_kind;
    std::uint64_t float_count = 0;
    std::string digest;  // SHA-256 of the little-endian f32 payload
};

// Append-only record of every protocol message of one experiment.
class MessageLog {
public:
    void append(Message m);
    const std::vector<Message>& messages() const noexcept { return messages_; }

    std::size_t upstream_count(std::string_view method, std::string_view sender) const;
    // One JSON object per line with a fixed key order.
    std::string to_jsonl() const;
    static MessageLog from_jsonl(const std::string& text);

private:
    std::vector<Message> messages_;
};

std::string client_name(std::uint32_t client_id);  // "client_1" for id 0

OscarUpload client_oscar_upload(std::uint32_t client_id, const Dataset& data, const Encoder& encoder);
// Logs one upstream message for the upload.
void send_upload(const OscarUpload& upload, MessageLog& log);

struct SynthesisOptions {
    std::uint32_t n_per_rep = 10;
    double guidance_scale = 7.5;
    std::uint32_t sampling_steps = 50;
    std::size_t batch_size = 256;
    SamplerOptions sampler;
};

// Server side of OSCAR: sees only uploads. Images are labeled with the
// conditioning category and tagged with the synthetic domain id.
Dataset server_synthesize(const std::vector<OscarUpload>& uploads, const DenoiserModel& model,
                          const SynthesisOptions& options, std::uint64_t seed);

struct LocalResult {
    std::vector<ClassifierModel> models;
};

LocalResult run_local(const FederatedSplit& split, std::uint32_t n_classes, const ClassifierConfig& config,
                      std::uint64_t seed);

struct FedAvgOptions {
    std::uint32_t rounds = 20;
    std::uint32_t local_epochs = 10;
};

// Broadcast, local training, full-weight upload, sample-weighted average.
ClassifierModel run_fedavg(const FederatedSplit& split, std::uint32_t n_classes, const ClassifierConfig& config,
                           const FedAvgOptions& options, std::uint64_t seed, MessageLog& log);

// Weighted average of full-weight updates; weights are the sample counts.
ParamSet average_updates(const std::vector<ModelUpdate>& updates);

// Timestep-conditioned classifier for classifier guidance: input is x_t
// followed by the sinusoidal embedding of t.
struct NoiseAwareClassifier {
    ClassifierModel net;
    std::uint32_t time_dim = 32;

    std::uint64_t parameter_count() const noexcept { return net.params.scalar_count(); }
    // d/dx_t of sum_i log p(label_i | x_t[i], t).
    Tensor grad_log_prob(const Tensor& x_t, std::uint32_t t, std::span<const int> labels) const;
};

struct CadoOptions {
    std::uint32_t epochs = 40;
    double guidance_scale = 20.0;
    SynthesisOptions synthesis;
};

NoiseAwareClassifier train_noise_aware_classifier(const Dataset& data, std::uint32_t n_classes,
                                                  const NoiseSchedule& schedule, const ClassifierConfig& config,
                                                  std::uint32_t epochs, RngStream& rng);

// Client side of CADO: train on noised local data and log the single upload.
ClassifierUpload cado_client_upload(std::uint32_t client_id, const Dataset& data, std::uint32_t n_classes,
                                    const NoiseSchedule& schedule, const ClassifierConfig& config,
                                    std::uint32_t epochs, std::uint64_t seed, MessageLog& log);
// Server side: each (client, category) pair guided by that client's classifier.
Dataset cado_server_synthesize(const std::vector<ClassifierUpload>& uploads, const DenoiserModel& model,
                               const CadoOptions& options, std::uint64_t seed);

// Clients upload noise-aware classifiers once; the server samples every
// (client, category) pair with that client's classifier gradient guiding
// the unconditional denoiser.
Dataset run_cado(const FederatedSplit& split, const DenoiserModel& model, std::uint32_t n_classes,
                 const ClassifierConfig& config, const CadoOptions& options, std::uint64_t seed, MessageLog& log);

struct AccountingRecord {
    std::string method;
    std::uint32_t client_id = 0;
    std::uint64_t uploaded_params = 0;
    std::uint64_t uploaded_bytes = 0;
    std::uint32_t rounds = 0;
};

// Per (method, client) totals over upstream messages, ordered by method then client.
std::vector<AccountingRecord> account_messages(const MessageLog& log);
// 1 - params(oscar) / params(other)
double reduction_ratio(std::uint64_t oscar_params, std::uint64_t other_params);

// Full-scale arithmetic without running anything.
std::uint64_t oscar_upload_params(std::uint64_t categories, std::uint64_t dim);
double fedavg_upload_millions(double model_millions, std::uint32_t rounds);

}  // namespace oscar
