#pragma once

#include <cstddef>
#include <map>
#include <tuple>
#include <vector>

#include "mmalign/encoders.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign::evalkit {

struct RetrievalReport {
    std::vector<std::size_t> k_values;
    // (query-modality, gallery-modality, k) -> accuracy in [0,1]
    std::map<std::tuple<std::string, std::string, std::size_t>, double> accuracies;
    std::size_t gallery_size = 0;
};

struct DosMaeResult {
    double value = 0.0;
    std::size_t grid_points = 0;
    double window_lo = -5.0;
    double window_hi = 5.0;
};

// Fraction of queries whose paired gallery row (same index) ranks in the
// top k by cosine similarity; ties broken by lower gallery index.
double topk_retrieval(const EmbeddingBatch& queries, const EmbeddingBatch& gallery,
                      std::size_t k);

// Both curves linearly interpolated onto an equispaced grid over [-5,+5] eV;
// MAE normalized by the target's mean height on the window (area/width).
DosMaeResult dos_mae(const DosCurve& target, const DosCurve& candidate,
                     std::size_t grid_points = 501);

void write_retrieval_csv(const RetrievalReport& report, const std::string& path);

}  // namespace mmalign::evalkit
