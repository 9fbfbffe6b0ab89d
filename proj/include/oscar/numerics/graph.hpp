#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "oscar/numerics/blas_kernels.hpp"
#include "oscar/numerics/kernels.hpp"
#include "oscar/numerics/tensor.hpp"

namespace oscar {

// Tape-based reverse-mode differentiation over 2-D (rows x cols) tensors.
// Nodes are appended in evaluation order, so the tape is already a
// topological order and backward() walks it in reverse.
// Which dense kernels linear() uses: the batch-invariant loops, or BLAS
// (training, where rows are never compared across batch shapes).
enum class Kernels { batch_invariant, blas };

template <typename T>
class Graph {
public:
    struct Var {
        std::size_t id;
    };

    explicit Graph(Kernels kernels = Kernels::batch_invariant) : kernels_(kernels) {}

    // Leaf that never receives a gradient.
    Var constant(BasicTensor<T> value, std::string name = "constant") {
        return push_owned(std::move(value), false, std::move(name), {});
    }

    // Leaf that receives a gradient (e.g. the input x_t for guidance).
    Var variable(BasicTensor<T> value, std::string name = "input") {
        return push_owned(std::move(value), true, std::move(name), {});
    }

    // Leaf bound by reference; `value` must outlive the graph.
    Var parameter(const BasicTensor<T>& value, std::string name) {
        Node n;
        n.ref = &value;
        n.requires_grad = true;
        n.name = std::move(name);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    // x[b, in] * w[in, out] + bias[out]
    Var linear(Var x, Var w, Var bias, std::string name) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        const auto& bv = value(bias);
        const std::size_t batch = xv.rows(), in = xv.cols();
        if (wv.rank() != 2 || wv.extent(0) != in || bv.size() != wv.extent(1)) {
            throw ShapeError("layer '" + name + "': input " + shape_string(xv.shape()) + " incompatible with weight " +
                             shape_string(wv.shape()) + " and bias " + shape_string(bv.shape()));
        }
        const std::size_t out = wv.extent(1);
        BasicTensor<T> y({batch, out});
        const bool fast = kernels_ == Kernels::blas;
        if (fast)
            blas::linear_forward(xv.data(), wv.data(), bv.data(), y.data(), batch, in, out);
        else
            kernels::linear_forward<T>(xv.data(), wv.data(), bv.data(), y.data(), batch, in, out);
        return push_owned(std::move(y), needs_grad(x) || needs_grad(w) || needs_grad(bias), std::move(name),
                          [x, w, bias, batch, in, out, fast](Graph& g, std::size_t self) {
                              const auto& dy = g.nodes_[self].grad;
                              if (g.needs_grad(x)) {
                                  const std::span<const T> dyv = dy.data(), wv = g.value(w).data();
                                  if (fast)
                                      blas::linear_backward_input(dyv, wv, g.grad_span(x), batch, in, out);
                                  else
                                      kernels::linear_backward_input<T>(dyv, wv, g.grad_span(x), batch, in, out);
                              }
                              if (g.needs_grad(w) || g.needs_grad(bias)) {
                                  auto dw = g.grad_span(w);
                                  auto db = g.grad_span(bias);
                                  const std::span<const T> xv = g.value(x).data(), dyv = dy.data();
                                  if (fast)
                                      blas::linear_backward_params(xv, dyv, dw, db, batch, in, out);
                                  else
                                      kernels::linear_backward_params<T>(xv, dyv, dw, db, batch, in, out);
                              }
                          });
    }

    Var silu(Var x, std::string name = "silu") {
        const auto& xv = value(x);
        BasicTensor<T> y(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] / (T{1} + std::exp(-xv[i]));
        return push_owned(std::move(y), needs_grad(x), std::move(name), [x](Graph& g, std::size_t self) {
            const auto& xv = g.value(x);
            const auto& dy = g.nodes_[self].grad;
            auto dx = g.grad_span(x);
            for (std::size_t i = 0; i < xv.size(); ++i) {
                const T s = T{1} / (T{1} + std::exp(-xv[i]));
                dx[i] += dy[i] * s * (T{1} + xv[i] * (T{1} - s));
            }
        });
    }

    Var relu(Var x, std::string name = "relu") {
        const auto& xv = value(x);
        BasicTensor<T> y(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
        return push_owned(std::move(y), needs_grad(x), std::move(name), [x](Graph& g, std::size_t self) {
            const auto& xv = g.value(x);
            const auto& dy = g.nodes_[self].grad;
            auto dx = g.grad_span(x);
            for (std::size_t i = 0; i < xv.size(); ++i)
                if (xv[i] > T{0}) dx[i] += dy[i];
        });
    }

    Var square(Var x, std::string name = "square") {
        const auto& xv = value(x);
        BasicTensor<T> y(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] * xv[i];
        return push_owned(std::move(y), needs_grad(x), std::move(name), [x](Graph& g, std::size_t self) {
            const auto& xv = g.value(x);
            const auto& dy = g.nodes_[self].grad;
            auto dx = g.grad_span(x);
            for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += T{2} * xv[i] * dy[i];
        });
    }

    // Column-wise concatenation of tensors sharing the row count.
    Var concat(std::vector<Var> parts, std::string name = "concat") {
        if (parts.empty()) throw ShapeError("concat of zero tensors");
        const std::size_t batch = value(parts[0]).rows();
        std::size_t total = 0;
        bool grad = false;
        for (Var p : parts) {
            if (value(p).rows() != batch)
                throw ShapeError("layer '" + name + "': row count mismatch in concatenation");
            total += value(p).cols();
            grad = grad || needs_grad(p);
        }
        BasicTensor<T> y({batch, total});
        std::size_t off = 0;
        for (Var p : parts) {
            const auto& pv = value(p);
            const std::size_t c = pv.cols();
            for (std::size_t i = 0; i < batch; ++i)
                std::copy_n(pv.data().begin() + static_cast<std::ptrdiff_t>(i * c), c,
                            y.data().begin() + static_cast<std::ptrdiff_t>(i * total + off));
            off += c;
        }
        return push_owned(std::move(y), grad, std::move(name),
                          [parts, batch, total](Graph& g, std::size_t self) {
                              const auto& dy = g.nodes_[self].grad;
                              std::size_t off = 0;
                              for (Var p : parts) {
                                  const std::size_t c = g.value(p).cols();
                                  if (g.needs_grad(p)) {
                                      auto dp = g.grad_span(p);
                                      for (std::size_t i = 0; i < batch; ++i)
                                          for (std::size_t j = 0; j < c; ++j) dp[i * c + j] += dy[i * total + off + j];
                                  }
                                  off += c;
                              }
                          });
    }

    Var sum(Var x, std::string name = "sum") {
        const auto& xv = value(x);
        T s{0};
        for (T v : xv.data()) s += v;
        return push_owned(BasicTensor<T>({1}, std::vector<T>{s}), needs_grad(x), std::move(name),
                          [x](Graph& g, std::size_t self) {
                              const T d = g.nodes_[self].grad[0];
                              for (auto& v : g.grad_span(x)) v += d;
                          });
    }

    // Mean over all elements of (pred - target)^2.
    Var mean_squared_error(Var pred, BasicTensor<T> target, std::string name = "mse") {
        const auto& pv = value(pred);
        require_same_shape(pv, target, "mean_squared_error");
        T s{0};
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const T d = pv[i] - target[i];
            s += d * d;
        }
        const T n = static_cast<T>(pv.size());
        return push_owned(BasicTensor<T>({1}, std::vector<T>{s / n}), needs_grad(pred), std::move(name),
                          [pred, target = std::move(target), n](Graph& g, std::size_t self) {
                              const T d = g.nodes_[self].grad[0];
                              const auto& pv = g.value(pred);
                              auto dp = g.grad_span(pred);
                              for (std::size_t i = 0; i < pv.size(); ++i)
                                  dp[i] += d * T{2} * (pv[i] - target[i]) / n;
                          });
    }

    // Mean over rows of -log softmax(logits)[label].
    Var softmax_cross_entropy(Var logits, std::vector<int> labels, std::string name = "softmax_ce") {
        auto [value_sum, probs] = log_softmax_pick(logits, labels);
        const T batch = static_cast<T>(labels.size());
        return push_owned(BasicTensor<T>({1}, std::vector<T>{-value_sum / batch}), needs_grad(logits),
                          std::move(name),
                          [logits, labels = std::move(labels), probs = std::move(probs), batch](Graph& g,
                                                                                                 std::size_t self) {
                              const T d = g.nodes_[self].grad[0] / batch;
                              auto dl = g.grad_span(logits);
                              const std::size_t c = g.value(logits).cols();
                              for (std::size_t i = 0; i < labels.size(); ++i)
                                  for (std::size_t j = 0; j < c; ++j)
                                      dl[i * c + j] += d * (probs[i * c + j] -
                                                            (static_cast<int>(j) == labels[i] ? T{1} : T{0}));
                          });
    }

    // Sum over rows of log softmax(logits)[label]; its input gradient is the
    // classifier-guidance direction.
    Var sum_log_prob(Var logits, std::vector<int> labels, std::string name = "log_prob") {
        auto [value_sum, probs] = log_softmax_pick(logits, labels);
        return push_owned(BasicTensor<T>({1}, std::vector<T>{value_sum}), needs_grad(logits), std::move(name),
                          [logits, labels = std::move(labels), probs = std::move(probs)](Graph& g,
                                                                                          std::size_t self) {
                              const T d = g.nodes_[self].grad[0];
                              auto dl = g.grad_span(logits);
                              const std::size_t c = g.value(logits).cols();
                              for (std::size_t i = 0; i < labels.size(); ++i)
                                  for (std::size_t j = 0; j < c; ++j)
                                      dl[i * c + j] += d * ((static_cast<int>(j) == labels[i] ? T{1} : T{0}) -
                                                            probs[i * c + j]);
                          });
    }

    void backward(Var root) {
        if (value(root).size() != 1) throw ShapeError("backward() needs a scalar root");
        if (!needs_grad(root)) return;
        grad_span(root)[0] += T{1};
        for (std::size_t id = root.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.backward && n.grad.size() != 0) n.backward(*this, id);
        }
    }

    const BasicTensor<T>& value(Var v) const {
        const Node& n = nodes_.at(v.id);
        return n.ref ? *n.ref : n.owned;
    }

    // Gradient of the last backward() root; zeros if the node was not reached.
    BasicTensor<T> grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (n.grad.size() == 0) return BasicTensor<T>(value(v).shape());
        return n.grad;
    }

    std::size_t node_count() const noexcept { return nodes_.size(); }

private:
    struct Node {
        BasicTensor<T> owned;
        const BasicTensor<T>* ref = nullptr;
        BasicTensor<T> grad;
        bool requires_grad = false;
        std::string name;
        std::function<void(Graph&, std::size_t)> backward;
    };

    using Backward = std::function<void(Graph&, std::size_t)>;

    bool needs_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    std::span<T> grad_span(Var v) {
        Node& n = nodes_.at(v.id);
        if (n.grad.size() == 0) n.grad = BasicTensor<T>(value(v).shape());
        return n.grad.data();
    }

    Var push_owned(BasicTensor<T> value, bool requires_grad, std::string name, Backward backward) {
        if (!value.all_finite()) throw NumericError("non-finite values produced by layer '" + name + "'");
        Node n;
        n.owned = std::move(value);
        n.requires_grad = requires_grad;
        n.name = std::move(name);
        if (requires_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    std::pair<T, std::vector<T>> log_softmax_pick(Var logits, const std::vector<int>& labels) const {
        const auto& lv = value(logits);
        const std::size_t batch = lv.rows(), c = lv.cols();
        if (labels.size() != batch) throw ShapeError("label count does not match logits rows");
        std::vector<T> probs(lv.size());
        T total{0};
        for (std::size_t i = 0; i < batch; ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
                throw ShapeError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
            const T* row = lv.data().data() + i * c;
            T mx = row[0];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            T z{0};
            for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
            const T log_z = mx + std::log(z);
            for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - log_z);
            total += row[labels[i]] - log_z;
        }
        return {total, std::move(probs)};
    }

    Kernels kernels_;
    std::vector<Node> nodes_;
};

}  // namespace oscar
