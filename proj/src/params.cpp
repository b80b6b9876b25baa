#include "mmalign/params.hpp"

#include <cmath>

#include "mmalign/errors.hpp"

namespace mmalign {

void ParamSet::add(const std::string& name, ad::Shape shape, std::vector<double> values) {
    if (tensors_.count(name)) throw ConfigError("duplicate parameter: " + name);
    if (shape.numel() != values.size())
        throw DimMismatchError("parameter " + name + ": shape/value size mismatch");
    tensors_[name] = NamedTensor{std::move(shape), std::move(values)};
}

void ParamSet::add_uniform(const std::string& name, ad::Shape shape, std::size_t fan_in,
                           Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
    std::vector<double> v(shape.numel());
    for (auto& x : v) x = rng.uniform(-bound, bound);
    add(name, std::move(shape), std::move(v));
}

NamedTensor& ParamSet::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UnknownParameterError(name);
    return it->second;
}

const NamedTensor& ParamSet::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw UnknownParameterError(name);
    return it->second;
}

std::vector<std::string> ParamSet::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [k, v] : tensors_) out.push_back(k);
    return out;
}

void ParamSet::merge(const ParamSet& other) {
    for (const auto& [k, v] : other) add(k, v.shape, v.values);
}

VarMap bind_params(ad::Tape& tape, const ParamSet& params) {
    VarMap out;
    for (const auto& [k, v] : params) out[k] = tape.input(v.values, v.shape);
    return out;
}

VarMap bind_params(ad::LossGraph& graph, const ParamSet& params) {
    VarMap out;
    for (const auto& [k, v] : params) out[k] = graph.add_parameter(k, v.values, v.shape);
    return out;
}

}  // namespace mmalign
