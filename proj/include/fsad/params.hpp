#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsad/autograd.hpp"
#include "fsad/rng.hpp"

namespace fsad {

// Ordered (name, tensor) list. Order is the checkpoint order. Frozen entries
// take part in forward passes but never receive gradients or updates.
template <typename T>
class ParameterSet {
public:
    std::size_t add(const std::string& name, Tensor<T> value, bool frozen = false) {
        if (name.empty() || index_.count(name)) fail(ErrorKind::ConfigError, "duplicate or empty parameter name '" + name + "'");
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(value));
        frozen_.push_back(frozen);
        return names_.size() - 1;
    }

    bool frozen(std::size_t i) const { return frozen_[i]; }
    void set_frozen(std::size_t i, bool f) { frozen_[i] = f; }

    std::size_t size() const { return names_.size(); }
    bool empty() const { return names_.empty(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const std::vector<std::string>& names() const { return names_; }
    Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
    const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
    std::vector<Tensor<T>>& tensors() { return tensors_; }
    const std::vector<Tensor<T>>& tensors() const { return tensors_; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail(ErrorKind::NotFound, "no parameter named '" + name + "'");
        return it->second;
    }
    Tensor<T>& at(const std::string& name) { return tensors_[index_of(name)]; }
    const Tensor<T>& at(const std::string& name) const { return tensors_[index_of(name)]; }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& t : tensors_)
            if (!t.all_finite()) return false;
        return true;
    }

    template <typename U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>(), frozen_[i]);
        return out;
    }

    bool operator==(const ParameterSet& other) const {
        if (names_ != other.names_) return false;
        for (std::size_t i = 0; i < size(); ++i)
            if (tensors_[i].shape != other.tensors_[i].shape || tensors_[i].data != other.tensors_[i].data) return false;
        return true;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::vector<bool> frozen_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Autograd view of a ParameterSet for one forward pass. Trainable bindings
// create leaves whose gradients are collected after backward().
template <typename T>
class Binding {
public:
    Binding(const ParameterSet<T>& params, bool trainable) {
        vars_.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            vars_.push_back(trainable && !params.frozen(i) ? ag::leaf(params[i]) : ag::constant(params[i]));
        }
    }

    const ag::Var<T>& operator[](std::size_t i) const { return vars_[i]; }
    std::size_t size() const { return vars_.size(); }

    std::vector<Tensor<T>> grads() const {
        std::vector<Tensor<T>> out;
        out.reserve(vars_.size());
        for (const auto& v : vars_) out.push_back(v.grad());
        return out;
    }

private:
    std::vector<ag::Var<T>> vars_;
};

// Registers parameters with deterministic initialization.
template <typename T>
class ParamBuilder {
public:
    ParamBuilder(ParameterSet<T>& params, Rng rng) : params_(params), rng_(rng) {}

    // Parameters registered while frozen are excluded from training.
    void set_frozen(bool f) { frozen_ = f; }

    // He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    std::size_t he_uniform(const std::string& name, Shape shape, int fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        return uniform(name, std::move(shape), bound);
    }

    std::size_t uniform(const std::string& name, Shape shape, double bound) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data) v = static_cast<T>(rng_.uniform(-bound, bound));
        return params_.add(name, std::move(t), frozen_);
    }

    std::size_t normal(const std::string& name, Shape shape, double stddev) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data) v = static_cast<T>(stddev * rng_.normal());
        return params_.add(name, std::move(t), frozen_);
    }

    std::size_t fill(const std::string& name, Shape shape, T value) {
        return params_.add(name, Tensor<T>(std::move(shape), value), frozen_);
    }

    std::size_t values(const std::string& name, Shape shape, std::vector<T> v) {
        return params_.add(name, Tensor<T>(std::move(shape), std::move(v)), frozen_);
    }

private:
    ParameterSet<T>& params_;
    Rng rng_;
    bool frozen_ = false;
};

}  // namespace fsad
