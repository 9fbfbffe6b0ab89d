#include "oscar/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oscar/binary_io.hpp"
#include "oscar/diffusion.hpp"

namespace oscar {

MlpSpec classifier_spec(std::size_t input_dim, std::uint32_t n_classes, const std::vector<std::size_t>& hidden) {
    return MlpSpec{input_dim, hidden, n_classes, Activation::silu, Head::softmax_cross_entropy};
}

ClassifierModel make_classifier(std::size_t input_dim, std::uint32_t n_classes, const ClassifierConfig& config,
                                RngStream& stream) {
    auto spec = classifier_spec(input_dim, n_classes, config.hidden);
    auto params = init_params<float>(spec, stream);
    return ClassifierModel{std::move(spec), std::move(params)};
}

Tensor images_to_tensor(const Dataset& data) {
    if (data.images.empty()) throw Error("dataset is empty");
    Tensor x({data.size(), data.pixel_count()});
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& px = data.images[i].pixels;
        if (px.size() != data.pixel_count()) throw ShapeError("image pixel count does not match dataset");
        auto row = x.row(i);
        for (std::size_t k = 0; k < px.size(); ++k) row[k] = to_model_space(px[k]);
    }
    return x;
}

std::vector<int> labels_of(const Dataset& data) {
    std::vector<int> y(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) y[i] = static_cast<int>(data.images[i].category);
    return y;
}

namespace {

void shuffle(std::vector<std::size_t>& idx, RngStream& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

// Translates a square row-major image by (dx, dy), replicating edge pixels.
void shift_into(std::span<const float> src, std::span<float> dst, int dx, int dy) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(src.size()))));
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const int sx = std::clamp(x - dx, 0, side - 1), sy = std::clamp(y - dy, 0, side - 1);
            dst[static_cast<std::size_t>(y * side + x)] = src[static_cast<std::size_t>(sy * side + sx)];
        }
}

void run_epoch(ClassifierModel& model, const Tensor& x, std::span<const int> labels, std::vector<std::size_t> order,
               const ClassifierConfig& config, RngStream& rng, AdamState& state) {
    shuffle(order, rng);
    AdamConfig adam;
    adam.lr = config.learning_rate;
    const std::size_t cols = x.cols();
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t b = std::min(config.batch_size, order.size() - start);
        Tensor xb({b, cols});
        Targets<float> t;
        t.labels.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t k = order[start + i];
            if (config.max_shift > 0) {
                const auto span = static_cast<std::uint64_t>(2 * config.max_shift + 1);
                const int m = static_cast<int>(config.max_shift);
                const int dx = static_cast<int>(rng.uniform_index(span)) - m;
                const int dy = static_cast<int>(rng.uniform_index(span)) - m;
                shift_into(x.row(k), xb.row(i), dx, dy);
            } else {
                std::copy_n(x.row(k).begin(), cols, xb.row(i).begin());
            }
            t.labels[i] = labels[k];
        }
        auto lg = forward_backward(model.spec, model.params, xb, t);
        adam_step(model.params, lg.grads, state, adam);
    }
}

}  // namespace

void train_epochs(ClassifierModel& model, const Tensor& x, std::span<const int> labels, std::uint32_t epochs,
                  const ClassifierConfig& config, RngStream& rng, AdamState& state) {
    if (labels.size() != x.rows()) throw ShapeError("label count does not match rows");
    std::vector<std::size_t> order(x.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::uint32_t e = 0; e < epochs; ++e) run_epoch(model, x, labels, order, config, rng, state);
}

ClassifierModel train_classifier(const Dataset& data, std::uint32_t n_classes, const ClassifierConfig& config,
                                 RngStream& rng, std::string_view data_description) {
    if (config.batch_size == 0 || config.max_epochs == 0) throw Error("classifier training needs positive batch size and epochs");
    std::vector<std::size_t> per_class(n_classes, 0);
    for (const auto& img : data.images) {
        if (img.category >= n_classes) throw Error("label " + std::to_string(img.category) + " out of range");
        ++per_class[img.category];
    }
    for (std::uint32_t c = 0; c < n_classes; ++c)
        if (per_class[c] == 0)
            throw Error("class " + std::to_string(c) + " absent from " + std::string(data_description));

    const Tensor x = images_to_tensor(data);
    const auto y = labels_of(data);
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    shuffle(idx, rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    else n_val = 0;
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());

    Tensor xv;
    std::vector<int> yv;
    if (!val.empty()) {
        xv = Tensor({val.size(), x.cols()});
        for (std::size_t i = 0; i < val.size(); ++i) {
            std::copy_n(x.row(val[i]).begin(), x.cols(), xv.row(i).begin());
            yv.push_back(y[val[i]]);
        }
    }

    auto model = make_classifier(data.pixel_count(), n_classes, config, rng);
    AdamState state;
    ClassifierModel best = model;
    double best_acc = -1.0;
    std::uint32_t since_best = 0;
    for (std::uint32_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        run_epoch(model, x, y, train, config, rng, state);
        if (val.empty()) {
            best = model;
            continue;
        }
        const double acc = top1_accuracy(predict(model, xv), yv);
        // Ties keep the later checkpoint: small validation sets saturate early.
        if (acc >= best_acc) {
            best_acc = acc;
            best = model;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return best;
}

int argmax_row(std::span<const float> logits) {
    int best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
        if (logits[j] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    return best;
}

std::vector<int> predict(const ClassifierModel& model, const Tensor& x) {
    const Tensor logits = mlp_predict(model.spec, model.params, x);
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(logits.row(i));
    return out;
}

double top1_accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (labels.empty()) throw Error("accuracy of an empty test set is undefined");
    if (predictions.size() != labels.size()) throw ShapeError("prediction count does not match labels");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double top1_accuracy(const ClassifierModel& model, const Dataset& test) {
    if (test.images.empty()) throw Error("accuracy of an empty test set is undefined");
    return top1_accuracy(predict(model, images_to_tensor(test)), labels_of(test));
}

namespace {
constexpr std::uint32_t kOscmVersion = 1;
}

std::vector<std::uint8_t> encode_classifier(const ClassifierModel& model) {
    ByteWriter w;
    w.magic("OSCM");
    w.u32(kOscmVersion);
    w.u32(static_cast<std::uint32_t>(model.spec.input_dim));
    w.u32(static_cast<std::uint32_t>(model.spec.hidden.size()));
    for (auto h : model.spec.hidden) w.u32(static_cast<std::uint32_t>(h));
    w.u32(model.n_classes());
    const auto flat = model.params.flatten();
    w.u64(flat.size());
    w.f32s(flat);
    return w.take();
}

ClassifierModel decode_classifier(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "OSCM");
    r.expect_magic("OSCM");
    const std::uint32_t version = r.u32();
    if (version != kOscmVersion) throw FormatError("unsupported OSCM version " + std::to_string(version));
    const std::size_t input_dim = r.u32();
    std::vector<std::size_t> hidden(r.u32());
    for (auto& h : hidden) h = r.u32();
    const std::uint32_t classes = r.u32();
    ClassifierModel model;
    model.spec = classifier_spec(input_dim, classes, hidden);
    RngStream unused(0, "decode");
    model.params = init_params<float>(model.spec, unused);
    const std::uint64_t count = r.u64();
    if (count != model.params.scalar_count()) throw FormatError("OSCM parameter count does not match architecture");
    std::vector<float> flat(count);
    r.f32s(flat);
    r.expect_end();
    model.params.assign_flat(flat);
    return model;
}

}  // namespace oscar
