#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "posebridge/tape.hpp"

namespace posebridge {

// Named, shaped parameter arrays with stable iteration order (registration
// order), so reductions and checkpoints are deterministic.
class ParameterStore {
public:
    void add(const std::string& name, Tensor value) {
        require(!index_.count(name), "duplicate parameter: " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        values_.push_back(std::move(value));
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return values_[it->second];
    }

    Tensor& get_mut(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return values_[it->second];
    }

    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return it->second;
    }

    size_t count() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const Tensor& at(size_t i) const { return values_[i]; }
    Tensor& at_mut(size_t i) { return values_[i]; }

    size_t total_scalars() const {
        size_t n = 0;
        for (const Tensor& t : values_) n += t.numel();
        return n;
    }

    ParameterStore clone() const { return *this; }

    void assign_from(const ParameterStore& other) {
        require(names_ == other.names_, "parameter store layout mismatch");
        values_ = other.values_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, size_t> index_;
};

// Per-tape view of a ParameterStore: every parameter becomes a leaf Var so
// one backward pass yields gradients for the whole store.
class TapeBinding {
public:
    TapeBinding(Tape& tape, const ParameterStore& store) : store_(&store) {
        vars_.reserve(store.count());
        for (size_t i = 0; i < store.count(); ++i)
            vars_.push_back(tape.leaf(store.at(i)));
    }

    Var operator[](const std::string& name) const {
        return vars_[store_->index_of(name)];
    }

    // Gradients in registration order (zeros for non-participating params).
    std::vector<Tensor> collect_grads(Tape& tape) const {
        std::vector<Tensor> out;
        out.reserve(vars_.size());
        for (Var v : vars_) out.push_back(tape.grad(v));
        return out;
    }

private:
    const ParameterStore* store_;
    std::vector<Var> vars_;
};

}  // namespace posebridge
