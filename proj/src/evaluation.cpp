#include "oscar/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "oscar/binary_io.hpp"

namespace oscar {

ClassifierModel train_global_classifier(const Dataset& synthetic, std::uint32_t n_classes,
                                        const ClassifierConfig& config, RngStream& rng) {
    if (synthetic.size() < n_classes)
        throw Error("synthesized data has " + std::to_string(synthetic.size()) + " images for " +
                    std::to_string(n_classes) + " classes");
    return train_classifier(synthetic, n_classes, config, rng, "synthesized data");
}

double MethodResult::average() const {
    if (per_client.empty()) throw Error("no per-client accuracies");
    return std::accumulate(per_client.begin(), per_client.end(), 0.0) / static_cast<double>(per_client.size());
}

std::string test_sets_digest(const FederatedSplit& split) {
    std::vector<std::uint8_t> all;
    for (const auto& t : split.test) {
        const auto b = encode_dataset(t);
        all.insert(all.end(), b.begin(), b.end());
    }
    return sha256_hex(std::span<const std::uint8_t>(all));
}

namespace {

void require_real(const Dataset& test) {
    if (test.images.empty()) throw Error("accuracy of an empty test set is undefined");
    for (const auto& img : test.images)
        if (img.synthetic()) throw Error("test set contains synthesized images");
}

struct Counts {
    std::vector<double> per_client;
    double pooled;
};

Counts score(const ClassifierModel& model, const FederatedSplit& split) {
    Counts c{{}, 0.0};
    std::size_t correct = 0, total = 0;
    for (const auto& test : split.test) {
        require_real(test);
        const auto pred = predict(model, images_to_tensor(test));
        const auto labels = labels_of(test);
        const double acc = top1_accuracy(pred, labels);
        c.per_client.push_back(acc);
        correct += static_cast<std::size_t>(std::llround(acc * static_cast<double>(labels.size())));
        total += labels.size();
    }
    c.pooled = static_cast<double>(correct) / static_cast<double>(total);
    return c;
}

}  // namespace

MethodResult evaluate_model(const std::string& method, const ClassifierModel& model, const FederatedSplit& split) {
    const auto c = score(model, split);
    MethodResult r;
    r.method = method;
    r.per_client = c.per_client;
    r.pooled = c.pooled;
    r.test_digest = test_sets_digest(split);
    return r;
}

MethodResult evaluate_local(const std::vector<ClassifierModel>& models, const FederatedSplit& split) {
    if (models.size() != split.client_count()) throw Error("one local model per client required");
    MethodResult r;
    r.method = "local";
    r.per_client.assign(split.client_count(), 0.0);
    const double inv = 1.0 / static_cast<double>(models.size());
    for (const auto& m : models) {
        const auto c = score(m, split);
        for (std::size_t k = 0; k < c.per_client.size(); ++k) r.per_client[k] += inv * c.per_client[k];
        r.pooled += inv * c.pooled;
    }
    r.test_digest = test_sets_digest(split);
    return r;
}

std::vector<double> own_domain_accuracy(const std::vector<ClassifierModel>& models, const FederatedSplit& split) {
    if (models.size() != split.client_count()) throw Error("one local model per client required");
    std::vector<double> out;
    for (std::size_t k = 0; k < models.size(); ++k) {
        require_real(split.test[k]);
        out.push_back(top1_accuracy(models[k], split.test[k]));
    }
    return out;
}

void attach_accounting(MethodResult& result, const std::vector<AccountingRecord>& records) {
    result.uploaded_params = 0;
    result.rounds = 0;
    for (const auto& r : records) {
        if (r.method != result.method) continue;
        result.uploaded_params = std::max(result.uploaded_params, r.uploaded_params);
        result.rounds = std::max(result.rounds, r.rounds);
    }
}

std::string format_accuracy(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

ResultTable build_report(std::vector<MethodResult> results, std::uint64_t seed) {
    if (results.empty()) throw Error("no results to report");
    for (const auto& r : results) {
        if (r.test_digest != results.front().test_digest)
            throw Error("method '" + r.method + "' was evaluated on different test sets");
        if (r.per_client.size() != results.front().per_client.size())
            throw Error("method '" + r.method + "' has a different client count");
        for (double a : r.per_client)
            if (!(a >= 0.0 && a <= 1.0)) throw Error("accuracy outside [0, 1] for '" + r.method + "'");
    }
    return ResultTable{seed, std::move(results)};
}

std::string ResultTable::to_csv() const {
    std::string out = "method";
    const std::size_t clients = rows.empty() ? 0 : rows.front().per_client.size();
    for (std::size_t k = 0; k < clients; ++k) out += ",client_" + std::to_string(k + 1);
    out += ",avg,pooled,uploaded_params,uploaded_bytes,rounds,seed\n";
    for (const auto& r : rows) {
        out += r.method;
        for (double a : r.per_client) out += "," + format_accuracy(a);
        out += "," + format_accuracy(r.average()) + "," + format_accuracy(r.pooled);
        out += "," + std::to_string(r.uploaded_params) + "," + std::to_string(4 * r.uploaded_params);
        out += "," + std::to_string(r.rounds) + "," + std::to_string(seed) + "\n";
    }
    return out;
}

std::vector<AblationRow> sample_count_ablation(const std::vector<OscarUpload>& uploads, const DenoiserModel& model,
                                               const FederatedSplit& split, std::uint32_t n_classes,
                                               const SynthesisOptions& synthesis, const ClassifierConfig& config,
                                               const std::vector<std::uint32_t>& counts, std::uint64_t seed) {
    if (counts.empty()) throw Error("sample-count ablation needs at least one count");
    for (auto n : counts)
        if (n == 0) throw Error("sample count must be at least 1");
    std::vector<AblationRow> rows;
    for (auto n : counts) {
        SynthesisOptions so = synthesis;
        so.n_per_rep = n;
        const Dataset syn = server_synthesize(uploads, model, so, seed);
        RngStream rng(seed, "ablation/global/" + std::to_string(n));
        const auto global = train_global_classifier(syn, n_classes, config, rng);
        rows.push_back(AblationRow{n, evaluate_model("oscar", global, split)});
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, std::uint64_t seed) {
    std::string out = "n_per_rep";
    const std::size_t clients = rows.empty() ? 0 : rows.front().result.per_client.size();
    for (std::size_t k = 0; k < clients; ++k) out += ",client_" + std::to_string(k + 1);
    out += ",avg,pooled,seed\n";
    for (const auto& r : rows) {
        out += std::to_string(r.n_per_rep);
        for (double a : r.result.per_client) out += "," + format_accuracy(a);
        out += "," + format_accuracy(r.result.average()) + "," + format_accuracy(r.result.pooled);
        out += "," + std::to_string(seed) + "\n";
    }
    return out;
}

}  // namespace oscar
