#include "oscar/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include <json.hpp>

#include "oscar/binary_io.hpp"
#include "oscar/encoder.hpp"
#include "oscar/evaluation.hpp"

namespace oscar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::pair<Stage, std::string_view>, 9> kStageNames{{
    {Stage::pretrain, "pretrain"},
    {Stage::federate, "federate"},
    {Stage::synthesize, "synthesize"},
    {Stage::train, "train"},
    {Stage::evaluate, "evaluate"},
    {Stage::report, "report"},
    {Stage::ablate, "ablate"},
    {Stage::pilot, "pilot"},
    {Stage::all, "all"},
}};

// Reference classifier trained on the pooled real client data. It is the
// oracle for the toy benchmark; its accounting is the raw-data upload.
constexpr std::string_view kCentral = "central";

}  // namespace

Stage parse_stage(std::string_view name) {
    for (const auto& [s, n] : kStageNames)
        if (n == name) return s;
    std::string known;
    for (const auto& [s, n] : kStageNames) known += (known.empty() ? "" : ", ") + std::string(n);
    throw ConfigError("unknown stage '" + std::string(name) + "' (expected one of " + known + ")");
}

std::string_view to_string(Stage stage) {
    for (const auto& [s, n] : kStageNames)
        if (s == stage) return n;
    return "?";
}

namespace artifacts {
std::string client_train(std::uint32_t k) { return "federate/" + client_name(k) + "_train.osfd"; }
std::string client_test(std::uint32_t k) { return "federate/" + client_name(k) + "_test.osfd"; }
std::string local_model(std::uint32_t k) { return "federate/local_" + client_name(k) + ".oscm"; }
std::string cado_classifier(std::uint32_t k) { return "federate/cado_" + client_name(k) + ".oscm"; }
std::string global_model(std::string_view method) { return "train/" + std::string(method) + "_global.oscm"; }
}  // namespace artifacts

std::string build_manifest(const fs::path& out_dir) {
    std::vector<std::pair<std::string, fs::path>> files;
    for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), out_dir).generic_string();
        if (rel == artifacts::manifest) continue;
        files.emplace_back(rel, e.path());
    }
    std::sort(files.begin(), files.end());
    json list = json::array();
    for (const auto& [rel, path] : files) {
        const auto bytes = read_file_bytes(path);
        list.push_back(json{{"path", rel}, {"bytes", bytes.size()}, {"sha256", sha256_hex(std::span(bytes))}});
    }
    return json{{"artifacts", list}}.dump(2) + "\n";
}

namespace {

class Runner {
public:
    Runner(const ExperimentConfig& config, fs::path out, LogFn log)
        : c_(config), out_(std::move(out)), log_(std::move(log)), seed_(config.master_seed()) {
        corpus_ = c_.corpus;
        corpus_.master_seed = seed_;
    }

    void run(Stage stage) {
        switch (stage) {
            case Stage::pretrain: return pretrain();
            case Stage::federate: return federate();
            case Stage::synthesize: return synthesize();
            case Stage::train: return train();
            case Stage::evaluate: return evaluate();
            case Stage::report: return report();
            case Stage::ablate: return ablate();
            case Stage::pilot: return pilot();
            case Stage::all:
                for (Stage s : {Stage::pretrain, Stage::federate, Stage::synthesize, Stage::train, Stage::evaluate,
                                Stage::report, Stage::ablate})
                    run(s);
                return;
        }
    }

private:
    fs::path at(std::string_view rel) const { return out_ / fs::path(std::string(rel)); }

    fs::path require(std::string_view rel, Stage producer) const {
        const auto p = at(rel);
        if (!fs::exists(p))
            throw PipelineError("missing " + std::string(rel) + ": run stage '" + std::string(to_string(producer)) +
                                "' first");
        return p;
    }

    void info(const std::string& msg) const {
        if (log_) log_(msg);
    }

    void write_bytes(std::string_view rel, std::span<const std::uint8_t> bytes) const {
        fs::create_directories(at(rel).parent_path());
        write_file_bytes(at(rel), bytes);
    }
    void write_text(std::string_view rel, std::string_view text) const {
        fs::create_directories(at(rel).parent_path());
        write_text_file(at(rel), text);
    }
    void write_model(std::string_view rel, const ClassifierModel& m) const { write_bytes(rel, encode_classifier(m)); }
    ClassifierModel read_model(std::string_view rel, Stage producer) const {
        return decode_classifier(read_file_bytes(require(rel, producer)));
    }

    std::uint32_t n_classes() const { return c_.corpus.n_categories; }
    std::uint32_t n_clients() const { return c_.corpus.n_clients; }

    Encoder load_encoder() const { return Encoder::from_json(read_text_file(require(artifacts::encoder, Stage::pretrain))); }
    DenoiserModel load_model() const { return load_denoiser(require(artifacts::denoiser, Stage::pretrain)); }

    FederatedSplit load_split() const {
        FederatedSplit split;
        split.mode = c_.mode;
        for (std::uint32_t k = 0; k < n_clients(); ++k) {
            split.train.push_back(read_dataset(require(artifacts::client_train(k), Stage::federate)));
            split.test.push_back(read_dataset(require(artifacts::client_test(k), Stage::federate)));
        }
        return split;
    }

    // ---- pretrain: server-side corpus, frozen encoder, denoiser checkpoint
    void pretrain() {
        const Dataset corpus = build_pretrain_corpus(corpus_, c_.mode, c_.pretrain_images_per_cell);
        write_bytes(artifacts::corpus, encode_dataset(corpus));
        const Encoder encoder(fit_standardizer(corpus), c_.embedding_dim);
        write_text(artifacts::encoder, encoder.to_json());

        const Tensor x0 = images_to_tensor(corpus);
        Tensor cond({corpus.size(), c_.embedding_dim});
        std::vector<std::uint32_t> cells(corpus.size());
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            const auto e = encoder.embed(corpus.images[i]);
            std::copy(e.values.begin(), e.values.end(), cond.row(i).begin());
            cells[i] = corpus.images[i].category * kDomainPool + corpus.images[i].domain;
        }
        DenoiserSpec spec;
        spec.data_dim = c_.corpus.image_size * c_.corpus.image_size;
        spec.cond_dim = c_.embedding_dim;
        spec.hidden = c_.denoiser_hidden;
        RngStream init(seed_, "pretrain/denoiser/init");
        DenoiserModel model = make_denoiser(spec, c_.schedule(), init);
        RngStream rng(seed_, "pretrain/denoiser/train");
        info("pretrain: " + std::to_string(corpus.size()) + " images, " + std::to_string(c_.training.steps) +
             " denoiser steps");
        const std::uint64_t every = std::max<std::uint64_t>(c_.training.steps / 10, 1);
        const auto [first, last] =
            train_denoiser(model, x0, cond, c_.training, rng, cells, [&](std::uint64_t step, float loss) {
                if (step % every == 0) {
                    char buf[96];
                    std::snprintf(buf, sizeof buf, "pretrain: step %llu loss %.4f",
                                  static_cast<unsigned long long>(step), loss);
                    info(buf);
                }
            });
        char buf[96];
        std::snprintf(buf, sizeof buf, "pretrain: loss %.4f -> %.4f", first, last);
        info(buf);
        fs::create_directories(at(artifacts::denoiser).parent_path());
        save_denoiser(at(artifacts::denoiser), model);
    }

    // ---- federate: client data, every client->server message, local and FedAvg baselines
    void federate() {
        const Encoder encoder = load_encoder();
        const FederatedSplit split = build_federated_split(corpus_, c_.mode);
        for (std::uint32_t k = 0; k < split.client_count(); ++k) {
            write_bytes(artifacts::client_train(k), encode_dataset(split.train[k]));
            write_bytes(artifacts::client_test(k), encode_dataset(split.test[k]));
        }
        MessageLog log;

        if (c_.has_method("oscar")) {
            json ups = json::array();
            for (std::uint32_t k = 0; k < split.client_count(); ++k) {
                const auto up = client_oscar_upload(k, split.train[k], encoder);
                send_upload(up, log);
                json reps = json::object();
                for (const auto& [cat, v] : up.representations) reps[std::to_string(cat)] = v.values;
                ups.push_back(json{{"client_id", up.client_id}, {"dim", up.dim}, {"representations", reps}});
            }
            write_text(artifacts::uploads, ups.dump() + "\n");
            info("federate: oscar uploads from " + std::to_string(split.client_count()) + " clients");
        }

        if (c_.has_method("cado")) {
            json ups = json::array();
            const auto schedule = c_.schedule();
            for (std::uint32_t k = 0; k < split.client_count(); ++k) {
                const auto up = cado_client_upload(k, split.train[k], n_classes(), schedule, c_.classifier,
                                                   c_.cado_epochs, seed_, log);
                write_model(artifacts::cado_classifier(k), up.classifier);
                ups.push_back(json{{"client_id", k},
                                   {"categories", up.categories},
                                   {"classifier", artifacts::cado_classifier(k)}});
            }
            write_text(artifacts::cado_uploads, ups.dump(2) + "\n");
            info("federate: cado noise-aware classifiers trained");
        }

        if (c_.has_method("local")) {
            const auto local = run_local(split, n_classes(), c_.classifier, seed_);
            for (std::uint32_t k = 0; k < local.models.size(); ++k) write_model(artifacts::local_model(k), local.models[k]);
            info("federate: local models trained");
        }

        if (c_.has_method("fedavg")) {
            const auto global = run_fedavg(split, n_classes(), c_.classifier, c_.fedavg, seed_, log);
            write_model(artifacts::fedavg_model, global);
            info("federate: fedavg finished " + std::to_string(c_.fedavg.rounds) + " rounds");
        }

        // The central reference needs every client's raw images at the server.
        for (std::uint32_t k = 0; k < split.client_count(); ++k) {
            std::vector<float> flat;
            for (const auto& img : split.train[k].images) flat.insert(flat.end(), img.pixels.begin(), img.pixels.end());
            log.append(Message{std::string(kCentral), client_name(k), "server", 0, Direction::upstream, "raw_images",
                               flat.size(), sha256_hex(std::span<const float>(flat))});
        }
        write_text(artifacts::messages, log.to_jsonl());
    }

    std::vector<OscarUpload> load_uploads() const {
        const json ups = json::parse(read_text_file(require(artifacts::uploads, Stage::federate)));
        std::vector<OscarUpload> out;
        for (const auto& u : ups) {
            OscarUpload up;
            up.client_id = u.at("client_id").get<std::uint32_t>();
            up.dim = u.at("dim").get<std::uint32_t>();
            for (const auto& [cat, v] : u.at("representations").items())
                up.representations[static_cast<std::uint32_t>(std::stoul(cat))] =
                    EmbeddingVector{v.get<std::vector<float>>()};
            out.push_back(std::move(up));
        }
        return out;
    }

    CadoOptions cado_options() const {
        CadoOptions o;
        o.epochs = c_.cado_epochs;
        o.guidance_scale = c_.cado_guidance_scale;
        o.synthesis = c_.synthesis();
        return o;
    }

    // ---- synthesize: the server's D_syn for each generative method
    void synthesize() {
        if (!c_.has_method("oscar") && !c_.has_method("cado")) return;
        const DenoiserModel model = load_model();
        if (c_.has_method("oscar")) {
            const auto uploads = load_uploads();
            const Dataset syn = server_synthesize(uploads, model, c_.synthesis(), seed_);
            write_bytes(artifacts::oscar_syn, encode_dataset(syn));
            info("synthesize: oscar D_syn has " + std::to_string(syn.size()) + " images");
        }
        if (c_.has_method("cado")) {
            const json ups = json::parse(read_text_file(require(artifacts::cado_uploads, Stage::federate)));
            std::vector<ClassifierUpload> uploads;
            for (const auto& u : ups)
                uploads.push_back(ClassifierUpload{u.at("client_id").get<std::uint32_t>(),
                                                   read_model(u.at("classifier").get<std::string>(), Stage::federate),
                                                   u.at("categories").get<std::vector<std::uint32_t>>()});
            const Dataset syn = cado_server_synthesize(uploads, model, cado_options(), seed_);
            write_bytes(artifacts::cado_syn, encode_dataset(syn));
            info("synthesize: cado D_syn has " + std::to_string(syn.size()) + " images");
        }
    }

    // ---- train: server-side global classifiers and the central reference
    void train() {
        for (std::string_view m : {"oscar", "cado"}) {
            if (!c_.has_method(m)) continue;
            const auto rel = m == "oscar" ? artifacts::oscar_syn : artifacts::cado_syn;
            const Dataset syn = read_dataset(require(rel, Stage::synthesize));
            RngStream rng(seed_, "train/" + std::string(m));
            write_model(artifacts::global_model(m), train_global_classifier(syn, n_classes(), c_.classifier, rng));
            info("train: " + std::string(m) + " global classifier done");
        }
        const FederatedSplit split = load_split();
        Dataset pooled;
        pooled.height = pooled.width = c_.corpus.image_size;
        for (const auto& d : split.train) pooled.images.insert(pooled.images.end(), d.images.begin(), d.images.end());
        RngStream rng(seed_, "train/central");
        write_model(artifacts::global_model(kCentral),
                    train_classifier(pooled, n_classes(), c_.classifier, rng, "pooled client data"));
        info("train: central reference done");
    }

    // ---- evaluate: every method on the real per-client test sets
    void evaluate() {
        const FederatedSplit split = load_split();
        json methods = json::array();
        auto add = [&](const MethodResult& r) {
            methods.push_back(json{{"method", r.method},
                                   {"per_client", r.per_client},
                                   {"average", r.average()},
                                   {"pooled", r.pooled},
                                   {"test_digest", r.test_digest}});
        };
        json extra = json::object();
        for (const auto& m : c_.methods) {
            if (m == "local") {
                std::vector<ClassifierModel> models;
                for (std::uint32_t k = 0; k < n_clients(); ++k)
                    models.push_back(read_model(artifacts::local_model(k), Stage::federate));
                add(evaluate_local(models, split));
                extra["local_own_domain"] = own_domain_accuracy(models, split);
            } else if (m == "fedavg") {
                add(evaluate_model(m, read_model(artifacts::fedavg_model, Stage::federate), split));
            } else {
                add(evaluate_model(m, read_model(artifacts::global_model(m), Stage::train), split));
            }
        }
        add(evaluate_model(std::string(kCentral), read_model(artifacts::global_model(kCentral), Stage::train), split));
        json doc{{"methods", methods}, {"test_digest", test_sets_digest(split)}};
        for (auto& [k, v] : extra.items()) doc[k] = v;
        write_text(artifacts::metrics, doc.dump(2) + "\n");
        for (const auto& m : methods) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "evaluate: %-8s avg %.4f pooled %.4f", m["method"].get<std::string>().c_str(),
                          m["average"].get<double>(), m["pooled"].get<double>());
            info(buf);
        }
    }

    // ---- report: results table and communication accounting
    void report() {
        const json doc = json::parse(read_text_file(require(artifacts::metrics, Stage::evaluate)));
        const MessageLog log = MessageLog::from_jsonl(read_text_file(require(artifacts::messages, Stage::federate)));
        const auto records = account_messages(log);
        std::vector<MethodResult> results;
        for (const auto& m : doc.at("methods")) {
            MethodResult r;
            r.method = m.at("method").get<std::string>();
            r.per_client = m.at("per_client").get<std::vector<double>>();
            r.pooled = m.at("pooled").get<double>();
            r.test_digest = m.at("test_digest").get<std::string>();
            attach_accounting(r, records);
            results.push_back(std::move(r));
        }
        const ResultTable table = build_report(results, seed_);
        write_text(artifacts::results, table.to_csv());

        std::string acc = "method,client,uploaded_params,uploaded_bytes,rounds\n";
        for (const auto& r : records)
            acc += r.method + "," + client_name(r.client_id) + "," + std::to_string(r.uploaded_params) + "," +
                   std::to_string(r.uploaded_bytes) + "," + std::to_string(r.rounds) + "\n";
        auto params_of = [&](std::string_view method) -> std::uint64_t {
            for (const auto& r : results)
                if (r.method == method) return r.uploaded_params;
            return 0;
        };
        if (c_.has_method("oscar"))
            for (std::string_view other : {"fedavg", "cado"}) {
                if (!c_.has_method(other) || params_of(other) == 0) continue;
                char buf[96];
                std::snprintf(buf, sizeof buf, "%.6f", reduction_ratio(params_of("oscar"), params_of(other)));
                acc += "# reduction oscar vs " + std::string(other) + " = " + buf + "\n";
            }
        write_text(artifacts::accounting, acc);
        info("report: wrote " + std::string(artifacts::results) + " and " + std::string(artifacts::accounting));
    }

    // ---- ablate: D_syn size sweep for OSCAR
    void ablate() {
        if (!c_.has_method("oscar")) {
            info("ablate: skipped, oscar is not among the methods");
            return;
        }
        const auto uploads = load_uploads();
        const DenoiserModel model = load_model();
        const FederatedSplit split = load_split();
        const auto rows = sample_count_ablation(uploads, model, split, n_classes(), c_.synthesis(), c_.classifier,
                                                c_.ablation_counts, seed_);
        write_text(artifacts::ablation, ablation_csv(rows, seed_));
        for (const auto& r : rows)
            info("ablate: n=" + std::to_string(r.n_per_rep) + " avg " + format_accuracy(r.result.average()));
    }

    // ---- pilot: guidance sweep. Selection uses only server-side data: a
    // reference classifier trained on the pretraining corpus labels each
    // candidate's D_syn, and the smallest s whose agreement with the
    // conditioning labels reaches pilot_agreement wins (highest agreement if
    // none does). Test accuracies are recorded next to it, not used.
    void pilot() {
        const auto uploads = load_uploads();
        const DenoiserModel model = load_model();
        const Dataset server_data = read_dataset(require(artifacts::corpus, Stage::pretrain));
        const FederatedSplit split = load_split();
        RngStream ref_rng(seed_, "pilot/reference");
        const auto reference = train_classifier(server_data, n_classes(), c_.classifier, ref_rng, "pretraining corpus");
        struct Row {
            double s, agreement;
            MethodResult r;
        };
        std::vector<Row> rows;
        for (double s : c_.pilot_scales) {
            SynthesisOptions so = c_.synthesis();
            so.guidance_scale = s;
            const Dataset syn = server_synthesize(uploads, model, so, seed_);
            RngStream rng(seed_, "pilot/global/" + format_accuracy(s));
            const auto g = train_global_classifier(syn, n_classes(), c_.classifier, rng);
            rows.push_back(Row{s, top1_accuracy(reference, syn), evaluate_model("oscar", g, split)});
            info("pilot: s=" + format_accuracy(s) + " agreement " + format_accuracy(rows.back().agreement) +
                 " test avg " + format_accuracy(rows.back().r.average()));
        }
        std::vector<std::size_t> order(rows.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rows[a].s < rows[b].s; });
        std::size_t best = order.front();
        bool passed = false;
        for (auto i : order)
            if (rows[i].agreement >= c_.pilot_agreement) {
                best = i;
                passed = true;
                break;
            }
        if (!passed)
            for (auto i : order)
                if (rows[i].agreement > rows[best].agreement) best = i;
        std::string csv = "guidance_scale,agreement,avg,pooled,selected,seed\n";
        for (std::size_t i = 0; i < rows.size(); ++i)
            csv += format_accuracy(rows[i].s) + "," + format_accuracy(rows[i].agreement) + "," +
                   format_accuracy(rows[i].r.average()) + "," + format_accuracy(rows[i].r.pooled) + "," +
                   (i == best ? "1" : "0") + "," + std::to_string(seed_) + "\n";
        write_text(artifacts::pilot, csv);
        info("pilot: selected guidance scale " + format_accuracy(rows[best].s) +
             (passed ? "" : " (no candidate reached the agreement threshold)"));
    }

    const ExperimentConfig& c_;
    fs::path out_;
    LogFn log_;
    std::uint64_t seed_;
    CorpusConfig corpus_;
};

}  // namespace

void run_pipeline(const ExperimentConfig& config, Stage stage, const fs::path& out_dir, const LogFn& log) {
    require_seed(config);
    fs::create_directories(out_dir);
    write_text_file(out_dir / std::string(artifacts::config), to_ini(config));
    Runner runner(config, out_dir, log);
    // The manifest is refreshed even when a stage fails halfway, so it always
    // describes what is on disk.
    try {
        runner.run(stage);
    } catch (...) {
        write_text_file(out_dir / std::string(artifacts::manifest), build_manifest(out_dir));
        throw;
    }
    write_text_file(out_dir / std::string(artifacts::manifest), build_manifest(out_dir));
}

}  // namespace oscar
