#include "oscar/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include <json.hpp>

#include "oscar/binary_io.hpp"

namespace oscar {

std::vector<float> OscarUpload::payload() const {
    std::vector<float> out;
    out.reserve(parameter_count());
    for (const auto& [c, rep] : representations) out.insert(out.end(), rep.values.begin(), rep.values.end());
    return out;
}

std::string_view to_string(Direction d) { return d == Direction::upstream ? "upstream" : "downstream"; }

void MessageLog::append(Message m) {
    if (m.method.empty() || m.sender.empty()) throw Error("message needs a method and a sender");
    messages_.push_back(std::move(m));
}

std::size_t MessageLog::upstream_count(std::string_view method, std::string_view sender) const {
    return static_cast<std::size_t>(std::count_if(messages_.begin(), messages_.end(), [&](const Message& m) {
        return m.direction == Direction::upstream && m.method == method && m.sender == sender;
    }));
}

std::string MessageLog::to_jsonl() const {
    std::string out;
    for (const auto& m : messages_) {
        nlohmann::ordered_json j;
        j["method"] = m.method;
        j["sender"] = m.sender;
        j["receiver"] = m.receiver;
        j["round"] = m.round;
        j["direction"] = to_string(m.direction);
        j["payload_kind"] = m.payload_kind;
        j["float_count"] = m.float_count;
        j["digest"] = m.digest;
        out += j.dump() + "\n";
    }
    return out;
}

MessageLog MessageLog::from_jsonl(const std::string& text) {
    MessageLog log;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        Message m;
        m.method = j.at("method").get<std::string>();
        m.sender = j.at("sender").get<std::string>();
        m.receiver = j.at("receiver").get<std::string>();
        m.round = j.at("round").get<std::uint32_t>();
        const auto dir = j.at("direction").get<std::string>();
        if (dir != "upstream" && dir != "downstream") throw FormatError("bad message direction '" + dir + "'");
        m.direction = dir == "upstream" ? Direction::upstream : Direction::downstream;
        m.payload_kind = j.at("payload_kind").get<std::string>();
        m.float_count = j.at("float_count").get<std::uint64_t>();
        m.digest = j.at("digest").get<std::string>();
        log.append(std::move(m));
    }
    return log;
}

std::string client_name(std::uint32_t client_id) { return "client_" + std::to_string(client_id + 1); }

OscarUpload client_oscar_upload(std::uint32_t client_id, const Dataset& data, const Encoder& encoder) {
    if (data.images.empty()) throw Error(client_name(client_id) + " has no images");
    std::map<std::uint32_t, std::vector<EmbeddingVector>> by_category;
    for (const auto& img : data.images) by_category[img.category].push_back(encoder.embed(img));
    OscarUpload up;
    up.client_id = client_id;
    up.dim = static_cast<std::uint32_t>(encoder.dim());
    for (const auto& [c, es] : by_category) up.representations.emplace(c, category_representation(es));
    return up;
}

void send_upload(const OscarUpload& upload, MessageLog& log) {
    const auto payload = upload.payload();
    log.append(Message{"oscar", client_name(upload.client_id), "server", 0, Direction::upstream,
                       "category_representations", payload.size(), sha256_hex(std::span<const float>(payload))});
}

namespace {

// Samples the requests in fixed-size chunks; per-row rng labels make the
// result independent of the chunking.
Tensor sample_in_chunks(const DenoiserModel& model, const std::vector<SampleRequest>& requests, std::uint64_t seed,
                        const SamplerOptions& options, std::size_t batch_size) {
    Tensor out({requests.size(), model.spec.data_dim});
    const std::size_t bs = std::max<std::size_t>(batch_size, 1);
    for (std::size_t start = 0; start < requests.size(); start += bs) {
        const std::size_t n = std::min(bs, requests.size() - start);
        const Tensor x = sample_batch(model, std::span(requests).subspan(start, n), seed, options);
        std::copy(x.data().begin(), x.data().end(), out.row(start).begin());
    }
    return out;
}

Dataset to_synthetic_dataset(const Tensor& x, const std::vector<SampleRequest>& requests, std::uint32_t side,
                             std::uint64_t seed) {
    Dataset d;
    d.height = d.width = side;
    d.images.reserve(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
        Image img;
        img.category = static_cast<std::uint32_t>(requests[i].label);
        img.domain = kSyntheticDomain;
        img.instance_seed = role_seed(seed, SeedRole::synthetic, i);
        img.pixels.reserve(x.cols());
        for (float v : x.row(i)) img.pixels.push_back(to_pixel_space(v));
        d.images.push_back(std::move(img));
    }
    return d;
}

std::uint32_t image_side(const DenoiserModel& model) {
    const auto side = static_cast<std::uint32_t>(std::lround(std::sqrt(static_cast<double>(model.spec.data_dim))));
    if (side * side != model.spec.data_dim) throw ShapeError("denoiser data is not a square image");
    return side;
}

std::string rep_label(std::string_view method, std::uint32_t client, std::uint32_t category, std::uint32_t n) {
    return std::string(method) + "/" + std::to_string(client) + "/" + std::to_string(category) + "/" +
           std::to_string(n);
}

}  // namespace

Dataset server_synthesize(const std::vector<OscarUpload>& uploads, const DenoiserModel& model,
                          const SynthesisOptions& options, std::uint64_t seed) {
    if (model.trained_steps == 0) throw Error("diffusion model is untrained");
    if (options.n_per_rep == 0) throw Error("n_per_rep must be at least 1");
    std::vector<SampleRequest> requests;
    for (const auto& up : uploads) {
        if (up.dim != model.spec.cond_dim)
            throw ShapeError("upload dimension " + std::to_string(up.dim) + " does not match the denoiser");
        for (const auto& [c, rep] : up.representations)
            for (std::uint32_t n = 0; n < options.n_per_rep; ++n) {
                SampleRequest r;
                r.condition = rep.values;
                r.guidance_scale = options.guidance_scale;
                r.sampling_steps = options.sampling_steps;
                r.rng_label = rep_label("oscar", up.client_id, c, n);
                r.label = static_cast<int>(c);
                requests.push_back(std::move(r));
            }
    }
    SamplerOptions so = options.sampler;
    so.mode = GuidanceMode::classifier_free;
    const Tensor x = sample_in_chunks(model, requests, seed, so, options.batch_size);
    return to_synthetic_dataset(x, requests, image_side(model), seed);
}

LocalResult run_local(const FederatedSplit& split, std::uint32_t n_classes, const ClassifierConfig& config,
                      std::uint64_t seed) {
    LocalResult out;
    for (std::uint32_t k = 0; k < split.client_count(); ++k) {
        RngStream rng(seed, "local/" + std::to_string(k));
        out.models.push_back(
            train_classifier(split.train[k], n_classes, config, rng, client_name(k) + " data"));
    }
    return out;
}

ParamSet average_updates(const std::vector<ModelUpdate>& updates) {
    if (updates.empty()) throw Error("nothing to average");
    double total = 0.0;
    for (const auto& u : updates) {
        if (!u.weights.same_layout(updates.front().weights)) throw ShapeError("model updates differ in layout");
        total += static_cast<double>(u.sample_count);
    }
    if (total <= 0.0) throw Error("model updates carry no samples");
    const std::size_t n = updates.front().weights.scalar_count();
    std::vector<double> acc(n, 0.0);
    for (const auto& u : updates) {
        const double w = static_cast<double>(u.sample_count) / total;
        const auto flat = u.weights.flatten();
        for (std::size_t i = 0; i < n; ++i) acc[i] += w * flat[i];
    }
    std::vector<float> out(acc.begin(), acc.end());
    ParamSet avg = updates.front().weights;
    avg.assign_flat(out);
    return avg;
}

ClassifierModel run_fedavg(const FederatedSplit& split, std::uint32_t n_classes, const ClassifierConfig& config,
                           const FedAvgOptions& options, std::uint64_t seed, MessageLog& log) {
    if (options.rounds == 0) throw Error("fedavg needs at least one round");
    const auto classes = n_classes;
    RngStream init(seed, "fedavg/init");
    ClassifierModel global = make_classifier(split.train.front().pixel_count(), classes, config, init);
    std::vector<Tensor> xs;
    std::vector<std::vector<int>> ys;
    for (const auto& d : split.train) {
        xs.push_back(images_to_tensor(d));
        ys.push_back(labels_of(d));
    }
    for (std::uint32_t round = 1; round <= options.rounds; ++round) {
        const auto broadcast = global.params.flatten();
        const auto broadcast_digest = sha256_hex(std::span<const float>(broadcast));
        std::vector<ModelUpdate> updates;
        for (std::uint32_t k = 0; k < split.client_count(); ++k) {
            log.append(Message{"fedavg", "server", client_name(k), round, Direction::downstream, "global_weights",
                               broadcast.size(), broadcast_digest});
            ClassifierModel local = global;
            AdamState state;
            // Keyed by round only: clients holding identical data train identically.
            RngStream rng(seed, "fedavg/" + std::to_string(round));
            train_epochs(local, xs[k], ys[k], options.local_epochs, config, rng, state);
            const auto flat = local.params.flatten();
            log.append(Message{"fedavg", client_name(k), "server", round, Direction::upstream, "model_weights",
                               flat.size(), sha256_hex(std::span<const float>(flat))});
            updates.push_back(ModelUpdate{round, k, split.train[k].size(), std::move(local.params)});
        }
        global.params = average_updates(updates);
    }
    return global;
}

namespace {

Tensor with_time(const Tensor& x_t, std::span<const std::uint32_t> t, std::uint32_t time_dim) {
    Tensor out({x_t.rows(), x_t.cols() + time_dim});
    for (std::size_t i = 0; i < x_t.rows(); ++i) {
        auto row = out.row(i);
        std::copy(x_t.row(i).begin(), x_t.row(i).end(), row.begin());
        const auto te = time_embedding(t[i], time_dim);
        std::copy(te.begin(), te.end(), row.begin() + static_cast<std::ptrdiff_t>(x_t.cols()));
    }
    return out;
}

}  // namespace

Tensor NoiseAwareClassifier::grad_log_prob(const Tensor& x_t, std::uint32_t t, std::span<const int> labels) const {
    if (labels.size() != x_t.rows()) throw ShapeError("one label per row required");
    Graph<float> g;
    const auto bound = bind_params(g, net.params);
    const auto x = g.variable(x_t, "x_t");
    Tensor te({x_t.rows(), time_dim});
    const auto emb = time_embedding(t, time_dim);
    for (std::size_t i = 0; i < x_t.rows(); ++i) std::copy(emb.begin(), emb.end(), te.row(i).begin());
    const auto input = g.concat({x, g.constant(std::move(te), "time")}, "classifier_input");
    const auto logits = mlp_forward(g, net.spec, bound, input);
    const auto lp = g.sum_log_prob(logits, std::vector<int>(labels.begin(), labels.end()));
    g.backward(lp);
    return g.grad(x);
}

NoiseAwareClassifier train_noise_aware_classifier(const Dataset& data, std::uint32_t n_classes,
                                                  const NoiseSchedule& schedule, const ClassifierConfig& config,
                                                  std::uint32_t epochs, RngStream& rng) {
    if (data.images.empty()) throw Error("noise-aware classifier needs data");
    NoiseAwareClassifier out;
    out.net = make_classifier(data.pixel_count() + out.time_dim, n_classes, config, rng);
    const Tensor x0 = images_to_tensor(data);
    const auto y = labels_of(data);
    AdamState state;
    AdamConfig adam;
    adam.lr = config.learning_rate;
    std::vector<std::size_t> order(x0.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t cols = x0.cols();
    for (std::uint32_t e = 0; e < epochs; ++e) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t b = std::min(config.batch_size, order.size() - start);
            Tensor xb({b, cols}), eps({b, cols});
            std::vector<std::uint32_t> ts(b);
            Targets<float> targets;
            targets.labels.resize(b);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t k = order[start + i];
                std::copy(x0.row(k).begin(), x0.row(k).end(), xb.row(i).begin());
                ts[i] = 1 + static_cast<std::uint32_t>(rng.uniform_index(schedule.steps()));
                for (auto& v : eps.row(i)) v = static_cast<float>(rng.normal());
                targets.labels[i] = y[k];
            }
            const Tensor input = with_time(q_sample(xb, ts, eps, schedule), ts, out.time_dim);
            auto lg = forward_backward(out.net.spec, out.net.params, input, targets);
            adam_step(out.net.params, lg.grads, state, adam);
        }
    }
    return out;
}

ClassifierUpload cado_client_upload(std::uint32_t client_id, const Dataset& data, std::uint32_t n_classes,
                                    const NoiseSchedule& schedule, const ClassifierConfig& config,
                                    std::uint32_t epochs, std::uint64_t seed, MessageLog& log) {
    if (data.images.empty()) throw Error(client_name(client_id) + " has no images");
    RngStream rng(seed, "cado/classifier/" + std::to_string(client_id));
    auto nac = train_noise_aware_classifier(data, n_classes, schedule, config, epochs, rng);
    const auto flat = nac.net.params.flatten();
    log.append(Message{"cado", client_name(client_id), "server", 0, Direction::upstream, "noise_aware_classifier",
                       flat.size(), sha256_hex(std::span<const float>(flat))});
    std::set<std::uint32_t> categories;
    for (const auto& img : data.images) categories.insert(img.category);
    return ClassifierUpload{client_id, std::move(nac.net), {categories.begin(), categories.end()}};
}

Dataset cado_server_synthesize(const std::vector<ClassifierUpload>& uploads, const DenoiserModel& model,
                               const CadoOptions& options, std::uint64_t seed) {
    if (model.trained_steps == 0) throw Error("diffusion model is untrained");
    if (options.synthesis.n_per_rep == 0) throw Error("n_per_rep must be at least 1");
    std::vector<SampleRequest> all_requests;
    std::vector<std::vector<float>> rows;
    for (const auto& up : uploads) {
        if (up.classifier.spec.input_dim != std::size_t{model.spec.data_dim} + 32)
            throw ShapeError("noise-aware classifier input does not match the denoiser");
        std::vector<SampleRequest> requests;
        for (std::uint32_t c : up.categories)
            for (std::uint32_t n = 0; n < options.synthesis.n_per_rep; ++n) {
                SampleRequest r;
                r.guidance_scale = options.guidance_scale;
                r.sampling_steps = options.synthesis.sampling_steps;
                r.rng_label = rep_label("cado", up.client_id, c, n);
                r.label = static_cast<int>(c);
                requests.push_back(std::move(r));
            }
        NoiseAwareClassifier nac{up.classifier, 32};
        SamplerOptions so = options.synthesis.sampler;
        so.mode = GuidanceMode::classifier;
        so.grad_log_prob = [&nac](const Tensor& x_t, std::uint32_t t, std::span<const int> labels) {
            return nac.grad_log_prob(x_t, t, labels);
        };
        const Tensor x = sample_in_chunks(model, requests, seed, so, options.synthesis.batch_size);
        for (std::size_t i = 0; i < requests.size(); ++i) rows.emplace_back(x.row(i).begin(), x.row(i).end());
        for (auto& r : requests) all_requests.push_back(std::move(r));
    }
    Tensor x({rows.size(), model.spec.data_dim});
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), x.row(i).begin());
    return to_synthetic_dataset(x, all_requests, image_side(model), seed);
}

Dataset run_cado(const FederatedSplit& split, const DenoiserModel& model, std::uint32_t n_classes,
                 const ClassifierConfig& config, const CadoOptions& options, std::uint64_t seed, MessageLog& log) {
    if (model.trained_steps == 0) throw Error("diffusion model is untrained");
    std::vector<ClassifierUpload> uploads;
    for (std::uint32_t k = 0; k < split.client_count(); ++k)
        uploads.push_back(
            cado_client_upload(k, split.train[k], n_classes, model.schedule, config, options.epochs, seed, log));
    return cado_server_synthesize(uploads, model, options, seed);
}

std::vector<AccountingRecord> account_messages(const MessageLog& log) {
    std::map<std::pair<std::string, std::string>, AccountingRecord> acc;
    std::map<std::pair<std::string, std::string>, std::set<std::uint32_t>> rounds;
    for (const auto& m : log.messages()) {
        if (m.direction != Direction::upstream) continue;
        const auto key = std::make_pair(m.method, m.sender);
        auto& r = acc[key];
        r.method = m.method;
        r.uploaded_params += m.float_count;
        r.uploaded_bytes += 4 * m.float_count;
        rounds[key].insert(m.round);
    }
    std::vector<AccountingRecord> out;
    for (auto& [key, r] : acc) {
        const auto& sender = key.second;
        const auto pos = sender.rfind('_');
        r.client_id = pos == std::string::npos ? 0 : static_cast<std::uint32_t>(std::stoul(sender.substr(pos + 1)) - 1);
        r.rounds = static_cast<std::uint32_t>(rounds[key].size());
        out.push_back(r);
    }
    std::sort(out.begin(), out.end(), [](const AccountingRecord& a, const AccountingRecord& b) {
        return std::tie(a.method, a.client_id) < std::tie(b.method, b.client_id);
    });
    return out;
}

double reduction_ratio(std::uint64_t oscar_params, std::uint64_t other_params) {
    if (other_params == 0) throw Error("reduction ratio against a method that uploads nothing");
    return 1.0 - static_cast<double>(oscar_params) / static_cast<double>(other_params);
}

std::uint64_t oscar_upload_params(std::uint64_t categories, std::uint64_t dim) { return categories * dim; }

double fedavg_upload_millions(double model_millions, std::uint32_t rounds) { return model_millions * rounds; }

}  // namespace oscar
