#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "oscar/numerics/graph.hpp"
#include "oscar/numerics/params.hpp"
#include "oscar/numerics/rng.hpp"

namespace oscar {

enum class Activation { silu, relu };
enum class Head { mean_squared_error, softmax_cross_entropy };

// Architecture descriptor for a stack of dense layers.
struct MlpSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    std::size_t output_dim = 0;
    Activation activation = Activation::silu;
    Head head = Head::mean_squared_error;
    // Width of a side input re-concatenated to every layer after the first
    // (conditioning that should not wash out with depth). 0 = plain stack.
    std::size_t side_dim = 0;

    std::size_t layer_count() const noexcept { return hidden.size() + 1; }
    std::size_t fan_in(std::size_t layer) const { return layer == 0 ? input_dim : hidden.at(layer - 1) + side_dim; }
    std::size_t fan_out(std::size_t layer) const { return layer == hidden.size() ? output_dim : hidden.at(layer); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < layer_count(); ++l) n += (fan_in(l) + 1) * fan_out(l);
        return n;
    }

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

inline std::string weight_name(std::size_t layer) { return "dense" + std::to_string(layer) + ".weight"; }
inline std::string bias_name(std::size_t layer) { return "dense" + std::to_string(layer) + ".bias"; }

// He-normal hidden layers (std = sqrt(2 / fan_in)), zero biases, zero output head.
template <typename T = float>
BasicParamSet<T> init_params(const MlpSpec& spec, RngStream& stream) {
    if (spec.input_dim == 0 || spec.output_dim == 0) throw ShapeError("MLP dimensions must be positive");
    BasicParamSet<T> params;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t in = spec.fan_in(l), out = spec.fan_out(l);
        BasicTensor<T> w({in, out});
        if (l + 1 < spec.layer_count()) {
            const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
            for (auto& v : w.data()) v = static_cast<T>(stream.normal() * std_dev);
        }
        params.add(weight_name(l), std::move(w));
        params.add(bias_name(l), BasicTensor<T>({out}));
    }
    return params;
}

template <typename T>
struct BoundParams {
    std::vector<typename Graph<T>::Var> vars;
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& graph, const BasicParamSet<T>& params) {
    BoundParams<T> bound;
    for (std::size_t i = 0; i < params.count(); ++i)
        bound.vars.push_back(graph.parameter(params.tensor(i), params.name(i)));
    return bound;
}

// Logits / predictions before the loss head.
template <typename T>
typename Graph<T>::Var mlp_forward(Graph<T>& graph, const MlpSpec& spec, const BoundParams<T>& bound,
                                   typename Graph<T>::Var input, std::optional<typename Graph<T>::Var> side = {}) {
    if (bound.vars.size() != 2 * spec.layer_count())
        throw ShapeError("parameter set does not match the MLP architecture");
    if ((spec.side_dim > 0) != side.has_value()) throw ShapeError("side input does not match the MLP architecture");
    auto h = input;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        if (l > 0 && side) h = graph.concat({h, *side}, "dense" + std::to_string(l) + ".side");
        h = graph.linear(h, bound.vars[2 * l], bound.vars[2 * l + 1], "dense" + std::to_string(l));
        if (l + 1 < spec.layer_count()) {
            const std::string act = "dense" + std::to_string(l) + ".act";
            h = spec.activation == Activation::silu ? graph.silu(h, act) : graph.relu(h, act);
        }
    }
    return h;
}

template <typename T>
BasicParamSet<T> collect_grads(const Graph<T>& graph, const BasicParamSet<T>& params, const BoundParams<T>& bound) {
    BasicParamSet<T> grads;
    for (std::size_t i = 0; i < params.count(); ++i) grads.add(params.name(i), graph.grad(bound.vars[i]));
    return grads;
}

// Regression targets for the MSE head, class labels for the softmax head.
template <typename T>
struct Targets {
    BasicTensor<T> values;
    std::vector<int> labels;
};

template <typename T>
struct LossAndGrads {
    T loss;
    BasicParamSet<T> grads;
};

template <typename T>
LossAndGrads<T> forward_backward(const MlpSpec& spec, const BasicParamSet<T>& params, const BasicTensor<T>& batch,
                                 const Targets<T>& targets) {
    if (batch.cols() != spec.input_dim)
        throw ShapeError("batch has " + std::to_string(batch.cols()) + " features, network expects " +
                         std::to_string(spec.input_dim));
    Graph<T> g(Kernels::blas);
    const auto bound = bind_params(g, params);
    const auto x = g.constant(batch, "batch");
    const auto out = mlp_forward(g, spec, bound, x);
    typename Graph<T>::Var loss{};
    if (spec.head == Head::mean_squared_error) {
        loss = g.mean_squared_error(out, targets.values);
    } else {
        loss = g.softmax_cross_entropy(out, targets.labels);
    }
    g.backward(loss);
    return {g.value(loss)[0], collect_grads(g, params, bound)};
}

// Inference-only forward pass.
template <typename T>
BasicTensor<T> mlp_predict(const MlpSpec& spec, const BasicParamSet<T>& params, const BasicTensor<T>& batch) {
    Graph<T> g;
    const auto bound = bind_params(g, params);
    return g.value(mlp_forward(g, spec, bound, g.constant(batch, "batch")));
}

}  // namespace oscar
