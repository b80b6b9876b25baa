#pragma once

#include <utility>
#include <vector>

#include "mmalign/autodiff.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign::losses {

struct ClipParams {
    double tau = 0.07;
};

struct BarlowParams {
    double lambda = 0.005;
};

// d x d x d generalized cross-correlation tensor over batch-centered,
// column-normalized features.
struct CrossCorrTensor {
    std::size_t d = 0;
    std::vector<double> entries;  // index (i*d + j)*d + k

    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return entries[(i * d + j) * d + k];
    }
};

// --- tape builders (differentiable path; inv_tau is a scalar Var) ---

ad::Var clip_loss_graph(ad::Tape& t, ad::Var a, ad::Var b, ad::Var inv_tau);
ad::Var allpairs_clip_loss_graph(ad::Tape& t, const std::vector<ad::Var>& batches,
                                 ad::Var inv_tau);
ad::Var anchored_clip_loss_graph(ad::Tape& t, ad::Var anchor,
                                 const std::vector<ad::Var>& others, ad::Var inv_tau);
ad::Var tensor_clip_loss_graph(ad::Tape& t, ad::Var a, ad::Var b, ad::Var c,
                               ad::Var inv_tau);
ad::Var barlow3d_loss_graph(ad::Tape& t, ad::Var z1, ad::Var z2, ad::Var z3,
                            double lambda);

// --- value-level API (the operation contracts) ---

double clip_loss(const EmbeddingBatch& a, const EmbeddingBatch& b, const ClipParams& p);
double allpairs_clip_loss(const std::vector<EmbeddingBatch>& batches, const ClipParams& p);
double anchored_clip_loss(const EmbeddingBatch& anchor,
                          const std::vector<EmbeddingBatch>& others, const ClipParams& p);
double tensor_clip_loss(const EmbeddingBatch& a, const EmbeddingBatch& b,
                        const EmbeddingBatch& c, const ClipParams& p);
CrossCorrTensor cross_correlation_tensor(const EmbeddingBatch& z1, const EmbeddingBatch& z2,
                                         const EmbeddingBatch& z3);
double barlow3d_loss(const EmbeddingBatch& z1, const EmbeddingBatch& z2,
                     const EmbeddingBatch& z3, const BarlowParams& p);

// Unordered modality pairs aggregated by allpairs_clip_loss; (n^2-n)/2 entries.
std::vector<std::pair<std::size_t, std::size_t>> modality_pairs(std::size_t n);

}  // namespace mmalign::losses
