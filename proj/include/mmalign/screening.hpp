#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mmalign/encoders.hpp"
#include "mmalign/synthdata.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign::screening {

// Flat store of (material id, unit-norm embedding) rows; queries are
// exhaustive cosine-similarity scans.
struct EmbeddingIndex {
    std::vector<std::string> ids;
    EmbeddingBatch matrix;  // M x d, each row unit norm
    std::string metadata;   // source checkpoint hash or label

    std::size_t size() const { return ids.size(); }
};

struct ScreeningResult {
    std::string target_id;
    std::vector<std::pair<std::string, double>> neighbors;  // similarity, nonincreasing
    std::string best_candidate;
    double best_mae = 0.0;
};

EmbeddingIndex build_index(const Dataset& materials, const ParamSet& crystal_params,
                           const EncoderConfig& cfg, const std::string& metadata = "");

std::vector<std::pair<std::string, double>> query_nearest(const EmbeddingIndex& idx,
                                                          const std::vector<double>& target,
                                                          std::size_t n);

using DosLookup = std::function<const DosCurve&(const std::string&)>;

ScreeningResult best_of_n(const EmbeddingIndex& idx, const DosCurve& target,
                          const DosLookup& dos_lookup, const ParamSet& dos_params,
                          const EncoderConfig& cfg, std::size_t n,
                          const std::string& target_id = "");

// "MMIX" container: header + length-prefixed UTF-8 id table + float32 matrix.
void save_index(const EmbeddingIndex& idx, const std::string& path);
EmbeddingIndex load_index(const std::string& path);

// Embedding table CSV: id, property columns, e0..e{d-1}. Rows are a seeded
// sample without replacement.
void export_embeddings(const Dataset& materials, const ParamSet& crystal_params,
                       const EncoderConfig& cfg, std::size_t sample, std::uint64_t seed,
                       const std::vector<std::string>& property_names,
                       const std::string& csv_path);

struct Projection2D {
    std::vector<std::array<double, 2>> coords;
    std::array<double, 2> eigenvalues{};  // top-2 covariance eigenvalues
};

// Mean-centered projection onto the top-2 principal directions; the sign of
// each direction is fixed by making its largest-magnitude loading positive.
Projection2D project_2d(const std::vector<std::vector<double>>& rows);

}  // namespace mmalign::screening
