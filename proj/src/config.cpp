#include "oscar/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>

#include "oscar/binary_io.hpp"

namespace oscar {

bool ExperimentConfig::has_method(std::string_view m) const {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
}

std::uint64_t ExperimentConfig::master_seed() const {
    if (!seed) throw ConfigError("missing required key 'seed' in [run] (or pass --seed)");
    return *seed;
}

SynthesisOptions ExperimentConfig::synthesis() const {
    SynthesisOptions s;
    s.n_per_rep = n_per_rep;
    s.guidance_scale = guidance_scale;
    s.sampling_steps = sampling_steps;
    s.batch_size = sample_batch;
    s.sampler.variance = variance;
    s.sampler.clip_x0 = clip_x0 > 0.0 ? std::optional<float>(static_cast<float>(clip_x0)) : std::nullopt;
    return s;
}

NoiseSchedule ExperimentConfig::schedule() const { return make_schedule(timesteps, beta_start, beta_end); }

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = v.find(',', start);
        out.push_back(trim(std::string_view(v).substr(start, comma == std::string::npos ? std::string::npos
                                                                                       : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename U>
std::string join(const std::vector<U>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_same_v<U, std::string>)
            out += xs[i];
        else
            out += std::to_string(xs[i]);
    }
    return out;
}

struct Key {
    std::string section;
    std::string name;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

class KeyTable {
public:
    explicit KeyTable(ExperimentConfig& c) {
        // [corpus]
        u32("corpus", "n_categories", c.corpus.n_categories);
        u32("corpus", "n_domains", c.corpus.n_domains);
        u32("corpus", "n_clients", c.corpus.n_clients);
        u32("corpus", "images_per_category", c.corpus.images_per_category);
        u32("corpus", "test_images_per_category", c.corpus.test_images_per_category);
        u32("corpus", "image_size", c.corpus.image_size);
        add("corpus", "mode", [&c, this](const std::string& v) { c.mode = parse_mode(v); },
            [&c] { return std::string(to_string(c.mode)); });
        u32("corpus", "pretrain_images_per_cell", c.pretrain_images_per_cell);

        // [diffusion]
        u32("diffusion", "timesteps", c.timesteps);
        real("diffusion", "beta_start", c.beta_start);
        real("diffusion", "beta_end", c.beta_end);
        sizes("diffusion", "hidden", c.denoiser_hidden);
        u64("diffusion", "train_steps", c.training.steps);
        size("diffusion", "batch_size", c.training.batch_size);
        real("diffusion", "learning_rate", c.training.learning_rate);
        real("diffusion", "final_lr_fraction", c.training.final_lr_fraction);
        real("diffusion", "ema_decay", c.training.ema_decay);
        real("diffusion", "p_uncond", c.training.p_uncond);
        real("diffusion", "group_fraction", c.training.group_fraction);
        size("diffusion", "group_size", c.training.group_size);
        real("diffusion", "guidance_scale", c.guidance_scale);
        u32("diffusion", "sampling_steps", c.sampling_steps);
        add("diffusion", "variance",
            [&c, this](const std::string& v) {
                if (v == "beta")
                    c.variance = ReverseVariance::beta;
                else if (v == "posterior")
                    c.variance = ReverseVariance::posterior;
                else
                    bad(v, "beta or posterior");
            },
            [&c] { return std::string(c.variance == ReverseVariance::beta ? "beta" : "posterior"); });
        real("diffusion", "clip_x0", c.clip_x0);
        size("diffusion", "sample_batch", c.sample_batch);
        real("diffusion", "pilot_agreement", c.pilot_agreement);
        add("diffusion", "pilot_scales",
            [&c, this](const std::string& v) {
                c.pilot_scales.clear();
                for (auto& x : split_list(v)) c.pilot_scales.push_back(parse_real(x));
            },
            [&c] {
                std::string out;
                for (std::size_t i = 0; i < c.pilot_scales.size(); ++i) out += (i ? "," : "") + fmt(c.pilot_scales[i]);
                return out;
            });

        // [federation]
        add("federation", "methods",
            [&c, this](const std::string& v) {
                std::vector<std::string> ms;
                for (auto& m : split_list(v)) {
                    if (std::find(kAllMethods.begin(), kAllMethods.end(), m) == kAllMethods.end())
                        bad(m, "a subset of oscar,local,fedavg,cado");
                    if (std::find(ms.begin(), ms.end(), m) == ms.end()) ms.push_back(m);
                }
                // Canonical order keeps reports independent of how the list was written.
                c.methods.clear();
                for (const auto& m : kAllMethods)
                    if (std::find(ms.begin(), ms.end(), m) != ms.end()) c.methods.push_back(m);
            },
            [&c] { return join(c.methods); });
        u32("federation", "embedding_dim", c.embedding_dim);
        u32("federation", "n_per_rep", c.n_per_rep);
        u32("federation", "fedavg_rounds", c.fedavg.rounds);
        u32("federation", "fedavg_local_epochs", c.fedavg.local_epochs);
        u32("federation", "cado_epochs", c.cado_epochs);
        real("federation", "cado_guidance_scale", c.cado_guidance_scale);
        add("federation", "ablation_counts",
            [&c, this](const std::string& v) {
                c.ablation_counts.clear();
                for (auto& x : split_list(v)) c.ablation_counts.push_back(parse_unsigned<std::uint32_t>(x));
            },
            [&c] { return join(c.ablation_counts); });

        // [classifier]
        sizes("classifier", "hidden", c.classifier.hidden);
        real("classifier", "learning_rate", c.classifier.learning_rate);
        size("classifier", "batch_size", c.classifier.batch_size);
        u32("classifier", "max_epochs", c.classifier.max_epochs);
        u32("classifier", "patience", c.classifier.patience);
        real("classifier", "val_fraction", c.classifier.val_fraction);
        u32("classifier", "max_shift", c.classifier.max_shift);

        // [run]
        add("run", "seed", [&c, this](const std::string& v) { c.seed = parse_unsigned<std::uint64_t>(v); },
            [&c] { return c.seed ? std::to_string(*c.seed) : std::string(); });
        add("run", "out_dir",
            [&c, this](const std::string& v) {
                if (v.empty()) bad(v, "a directory path");
                c.out_dir = v;
            },
            [&c] { return c.out_dir; });
    }

    Key* find(const std::string& section, const std::string& name) {
        for (auto& k : keys_)
            if (k.section == section && k.name == name) return &k;
        return nullptr;
    }
    bool has_section(const std::string& section) const {
        return std::any_of(keys_.begin(), keys_.end(), [&](const Key& k) { return k.section == section; });
    }
    const std::vector<Key>& keys() const { return keys_; }

    // Set while a value is being parsed, for error messages.
    const Key* current = nullptr;

private:
    void add(std::string section, std::string name, std::function<void(const std::string&)> set,
             std::function<std::string()> get) {
        keys_.push_back(Key{std::move(section), std::move(name), std::move(set), std::move(get)});
    }

    [[noreturn]] void bad(const std::string& v, const std::string& expected) const {
        throw ConfigError("invalid value '" + v + "' for key '" + current->name + "' in [" + current->section +
                          "]: expected " + expected);
    }

    template <typename U>
    U parse_unsigned(const std::string& v) const {
        U out{};
        const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
        if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(v, "an unsigned integer");
        return out;
    }

    SplitMode parse_mode(const std::string& v) const {
        if (v != "common" && v != "unique") bad(v, "common or unique");
        return parse_split_mode(v);
    }

    void u32(const char* s, const char* n, std::uint32_t& f) {
        add(s, n, [&f, this](const std::string& v) { f = parse_unsigned<std::uint32_t>(v); },
            [&f] { return std::to_string(f); });
    }
    void u64(const char* s, const char* n, std::uint64_t& f) {
        add(s, n, [&f, this](const std::string& v) { f = parse_unsigned<std::uint64_t>(v); },
            [&f] { return std::to_string(f); });
    }
    void size(const char* s, const char* n, std::size_t& f) {
        add(s, n, [&f, this](const std::string& v) { f = parse_unsigned<std::size_t>(v); },
            [&f] { return std::to_string(f); });
    }
    double parse_real(const std::string& v) const {
        double out = 0.0;
        const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
        if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out))
            bad(v, "a number");
        return out;
    }

    void real(const char* s, const char* n, double& f) {
        add(s, n, [&f, this](const std::string& v) { f = parse_real(v); }, [&f] { return fmt(f); });
    }
    void sizes(const char* s, const char* n, std::vector<std::size_t>& f) {
        add(s, n,
            [&f, this](const std::string& v) {
                f.clear();
                for (auto& x : split_list(v)) f.push_back(parse_unsigned<std::size_t>(x));
            },
            [&f] { return join(f); });
    }

    std::vector<Key> keys_;
};

void validate(const ExperimentConfig& c) {
    c.corpus.validate(c.mode);
    if (c.guidance_scale < 0.0) throw ConfigError("guidance scale must be ≥ 0");
    if (c.pilot_agreement < 0.0 || c.pilot_agreement > 1.0) throw ConfigError("pilot_agreement must be in [0, 1]");
    if (c.pilot_scales.empty()) throw ConfigError("pilot_scales must not be empty");
    for (double v : c.pilot_scales)
        if (v < 0.0) throw ConfigError("guidance scale must be ≥ 0");
    if (c.cado_guidance_scale < 0.0) throw ConfigError("cado guidance scale must be ≥ 0");
    if (!(c.beta_start > 0.0 && c.beta_start < c.beta_end && c.beta_end < 1.0))
        throw ConfigError("beta range must satisfy 0 < beta_start < beta_end < 1");
    if (c.timesteps == 0) throw ConfigError("timesteps must be at least 1");
    if (c.sampling_steps == 0 || c.sampling_steps > c.timesteps)
        throw ConfigError("sampling_steps must be in [1, timesteps]");
    if (c.denoiser_hidden.empty() || std::count(c.denoiser_hidden.begin(), c.denoiser_hidden.end(), 0u))
        throw ConfigError("denoiser hidden widths must be positive");
    if (c.classifier.hidden.empty() || std::count(c.classifier.hidden.begin(), c.classifier.hidden.end(), 0u))
        throw ConfigError("classifier hidden widths must be positive");
    if (c.training.steps == 0 || c.training.batch_size == 0) throw ConfigError("train_steps and batch_size must be positive");
    if (!(c.training.learning_rate > 0.0) || !(c.classifier.learning_rate > 0.0))
        throw ConfigError("learning rates must be positive");
    if (c.training.p_uncond < 0.0 || c.training.p_uncond > 1.0) throw ConfigError("p_uncond must be in [0, 1]");
    if (c.training.group_fraction < 0.0 || c.training.group_fraction > 1.0)
        throw ConfigError("group_fraction must be in [0, 1]");
    if (c.training.ema_decay < 0.0 || c.training.ema_decay >= 1.0) throw ConfigError("ema_decay must be in [0, 1)");
    if (c.training.final_lr_fraction < 0.0 || c.training.final_lr_fraction > 1.0)
        throw ConfigError("final_lr_fraction must be in [0, 1]");
    if (c.clip_x0 < 0.0) throw ConfigError("clip_x0 must be ≥ 0");
    if (c.embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
    if (c.n_per_rep == 0) throw ConfigError("n_per_rep must be at least 1");
    if (c.fedavg.rounds == 0) throw ConfigError("fedavg_rounds must be at least 1");
    if (c.methods.empty()) throw ConfigError("at least one method is required");
    if (c.ablation_counts.empty()) throw ConfigError("ablation_counts must not be empty");
    for (auto n : c.ablation_counts)
        if (n == 0) throw ConfigError("ablation counts must be at least 1");
    if (c.classifier.batch_size == 0 || c.classifier.max_epochs == 0 || c.sample_batch == 0)
        throw ConfigError("batch sizes and epochs must be positive");
    if (!(c.classifier.val_fraction >= 0.0 && c.classifier.val_fraction < 1.0))
        throw ConfigError("val_fraction must be in [0, 1)");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    KeyTable table(c);
    std::string section;
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (!table.has_section(section)) throw ConfigError("unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (section.empty()) throw ConfigError("key '" + key + "' appears before any section header");
        Key* k = table.find(section, key);
        if (!k) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
        table.current = k;
        k->set(value);
    }
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
    return parse_config(read_text_file(path));
}

void require_seed(const ExperimentConfig& config) { (void)config.master_seed(); }

std::string to_ini(const ExperimentConfig& config) {
    ExperimentConfig copy = config;
    KeyTable table(copy);
    std::string out, section;
    for (const auto& k : table.keys()) {
        if (k.section == "run" && k.name == "seed" && !config.seed) continue;
        if (k.section == "run" && k.name == "out_dir") continue;
        if (k.section != section) {
            if (!out.empty()) out += "\n";
            out += "[" + k.section + "]\n";
            section = k.section;
        }
        out += k.name + " = " + k.get() + "\n";
    }
    return out;
}

}  // namespace oscar
