#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "promptfuse/error.hpp"
#include "promptfuse/tape.hpp"

namespace promptfuse {

using ParamId = std::size_t;

template <class S>
struct Parameter {
    std::string name;
    Matrix<S> value;
    Matrix<S> grad;  // empty until a backward pass touches it
    bool trainable = false;
};

/// Named parameters in declaration order. Order is the checkpoint order.
template <class S>
class ParameterStore {
public:
    ParamId add(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable) {
        if (index_.contains(name)) throw ValidationError("duplicate parameter name " + name);
        index_.emplace(name, params_.size());
        params_.push_back({std::move(name), Matrix<S>::Zero(rows, cols), Matrix<S>(), trainable});
        return params_.size() - 1;
    }

    Parameter<S>& operator[](ParamId id) { return params_[id]; }
    const Parameter<S>& operator[](ParamId id) const { return params_[id]; }

    std::size_t size() const noexcept { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    bool contains(const std::string& name) const { return index_.contains(name); }
    ParamId id_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("unknown parameter " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& p : params_) p.grad.resize(0, 0);
    }

    std::size_t element_count(bool trainable) const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.trainable == trainable) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

private:
    std::vector<Parameter<S>> params_;
    std::unordered_map<std::string, ParamId> index_;
};

/// Exhaustive split of parameter names into frozen and trainable sets.
struct ParameterPartition {
    std::set<std::string> frozen;
    std::set<std::string> trainable;
    std::size_t frozen_elements = 0;
    std::size_t trainable_elements = 0;
};

template <class S>
ParameterPartition partition_of(const ParameterStore<S>& store) {
    ParameterPartition part;
    for (const auto& p : store) {
        auto& set = p.trainable ? part.trainable : part.frozen;
        set.insert(p.name);
        (p.trainable ? part.trainable_elements : part.frozen_elements) += static_cast<std::size_t>(p.value.size());
    }
    return part;
}

}  // namespace promptfuse
