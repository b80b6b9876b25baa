#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmalign/autodiff.hpp"
#include "mmalign/rng.hpp"

namespace mmalign {

struct NamedTensor {
    ad::Shape shape;
    std::vector<double> values;
};

// Ordered collection of named weight arrays. Iteration order is the sorted
// name order, which the optimizer and checkpoint writer rely on.
class ParamSet {
  public:
    void add(const std::string& name, ad::Shape shape, std::vector<double> values);
    // uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    void add_uniform(const std::string& name, ad::Shape shape, std::size_t fan_in, Rng& rng);

    bool has(const std::string& name) const { return tensors_.count(name) > 0; }
    NamedTensor& at(const std::string& name);
    const NamedTensor& at(const std::string& name) const;
    std::vector<std::string> names() const;
    std::size_t size() const { return tensors_.size(); }

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

    void merge(const ParamSet& other);  // rejects duplicate names

  private:
    std::map<std::string, NamedTensor> tensors_;
};

// Tape bindings for one ParamSet, one Var per tensor.
using VarMap = std::map<std::string, ad::Var>;

VarMap bind_params(ad::Tape& tape, const ParamSet& params);
VarMap bind_params(ad::LossGraph& graph, const ParamSet& params);

}  // namespace mmalign
