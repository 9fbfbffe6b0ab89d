#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oscar/classifier.hpp"
#include "oscar/federation.hpp"
#include "oscar/synthdata.hpp"

namespace oscar {

// Server-side training on D_syn; early stopping uses a split of D_syn itself.
ClassifierModel train_global_classifier(const Dataset& synthetic, std::uint32_t n_classes,
                                        const ClassifierConfig& config, RngStream& rng);

struct MethodResult {
    std::string method;
    std::vector<double> per_client;  // accuracy on each client's real test set
    double pooled = 0.0;             // accuracy over the union of test sets
    std::uint64_t uploaded_params = 0;  // per client
    std::uint32_t rounds = 0;
    std::string test_digest;  // digest of the test sets the numbers come from

    double average() const;
};

// SHA-256 over the concatenated OSFD encodings of the client test sets.
std::string test_sets_digest(const FederatedSplit& split);

// One model for every client. Test images must be real (not synthetic).
MethodResult evaluate_model(const std::string& method, const ClassifierModel& model, const FederatedSplit& split);
// Local models: client k's column is the mean accuracy of all local models on
// client k's test set; pooled averages the local models' pooled accuracies.
MethodResult evaluate_local(const std::vector<ClassifierModel>& models, const FederatedSplit& split);
// Each local model on its own client's test set.
std::vector<double> own_domain_accuracy(const std::vector<ClassifierModel>& models, const FederatedSplit& split);

// Fills uploaded_params and rounds from the per-client accounting of `method`
// (largest client value; all clients send the same amount in these protocols).
void attach_accounting(MethodResult& result, const std::vector<AccountingRecord>& records);

struct ResultTable {
    std::uint64_t seed = 0;
    std::vector<MethodResult> rows;

    // method, client_1..client_R, avg, pooled, uploaded_params, uploaded_bytes, rounds, seed
    std::string to_csv() const;
};

// Rejects results computed on different test sets or with differing client counts.
ResultTable build_report(std::vector<MethodResult> results, std::uint64_t seed);

std::string format_accuracy(double v);

struct AblationRow {
    std::uint32_t n_per_rep = 0;
    MethodResult result;
};

// Synthesize with each n in `counts` and train/evaluate a global classifier.
std::vector<AblationRow> sample_count_ablation(const std::vector<OscarUpload>& uploads, const DenoiserModel& model,
                                               const FederatedSplit& split, std::uint32_t n_classes,
                                               const SynthesisOptions& synthesis, const ClassifierConfig& config,
                                               const std::vector<std::uint32_t>& counts, std::uint64_t seed);
// n_per_rep, client_1..client_R, avg, pooled, seed
std::string ablation_csv(const std::vector<AblationRow>& rows, std::uint64_t seed);

}  // namespace oscar
