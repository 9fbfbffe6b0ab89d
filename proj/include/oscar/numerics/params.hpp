#pragma once

#include <string>
#include <utility>
#include <vector>

#include "oscar/numerics/tensor.hpp"

namespace oscar {

// Named tensors in insertion order. Names are unique; shapes are fixed at add().
template <typename T>
class BasicParamSet {
public:
    void add(std::string name, BasicTensor<T> value) {
        if (index_of(name) != npos) throw Error("duplicate parameter name '" + name + "'");
        entries_.emplace_back(std::move(name), std::move(value));
    }

    std::size_t count() const noexcept { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_.at(i).first; }
    BasicTensor<T>& tensor(std::size_t i) { return entries_.at(i).second; }
    const BasicTensor<T>& tensor(std::size_t i) const { return entries_.at(i).second; }

    const BasicTensor<T>& get(const std::string& name) const {
        const auto i = index_of(name);
        if (i == npos) throw Error("no parameter named '" + name + "'");
        return entries_[i].second;
    }

    // Total scalar count across all tensors.
    std::size_t scalar_count() const noexcept {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) n += t.size();
        return n;
    }

    // Zero tensors with the same names and shapes.
    BasicParamSet zeros_like() const {
        BasicParamSet out;
        for (const auto& [n, t] : entries_) out.add(n, BasicTensor<T>(t.shape()));
        return out;
    }

    bool same_layout(const BasicParamSet& other) const {
        if (count() != other.count()) return false;
        for (std::size_t i = 0; i < count(); ++i)
            if (name(i) != other.name(i) || tensor(i).shape() != other.tensor(i).shape()) return false;
        return true;
    }

    // All scalars in declared order.
    std::vector<T> flatten() const {
        std::vector<T> out;
        out.reserve(scalar_count());
        for (const auto& [_, t] : entries_) out.insert(out.end(), t.storage().begin(), t.storage().end());
        return out;
    }

    void assign_flat(std::span<const T> values) {
        if (values.size() != scalar_count())
            throw ShapeError("parameter payload has " + std::to_string(values.size()) + " values, expected " +
                             std::to_string(scalar_count()));
        std::size_t off = 0;
        for (auto& [_, t] : entries_) {
            std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.storage().begin());
            off += t.size();
        }
    }

    template <typename U>
    BasicParamSet<U> cast() const {
        BasicParamSet<U> out;
        for (const auto& [n, t] : entries_) out.add(n, t.template cast<U>());
        return out;
    }

    friend bool operator==(const BasicParamSet&, const BasicParamSet&) = default;

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].first == name) return i;
        return npos;
    }

    std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
};

using ParamSet = BasicParamSet<float>;
using ParamSet64 = BasicParamSet<double>;

}  // namespace oscar
