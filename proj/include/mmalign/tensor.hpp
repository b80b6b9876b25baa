#pragma once

#include <cstddef>
#include <vector>

#include "mmalign/errors.hpp"

namespace mmalign {

inline constexpr double kNormEps = 1e-12;

// A batch of N embeddings of dimension d, row-major.
struct EmbeddingBatch {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> data;  // n*d, row-major

    EmbeddingBatch() = default;
    EmbeddingBatch(std::size_t n_, std::size_t d_)
        : n(n_), d(d_), data(n_ * d_, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return data[i * d + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * d + j]; }
    const double* row(std::size_t i) const { return data.data() + i * d; }
    double* row(std::size_t i) { return data.data() + i * d; }

    std::vector<double> row_vec(std::size_t i) const {
        return {data.begin() + static_cast<std::ptrdiff_t>(i * d),
                data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)};
    }
};

// An N x N x N similarity tensor (entry (i,j,k) = threeway_sim of rows i,j,k).
struct SimTensor3 {
    std::size_t n = 0;
    std::vector<double> entries;  // n^3, index (i*n + j)*n + k

    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return entries[(i * n + j) * n + k];
    }
};

double norm2(const std::vector<double>& v);

// Scales v to unit Euclidean norm. Throws ZeroNormError when ||v|| <= 1e-12.
std::vector<double> l2_normalize(const std::vector<double>& v);

double cosine_sim(const std::vector<double>& a, const std::vector<double>& b);

// Generalized three-way dot product: sum_l a_l b_l c_l / (||a|| ||b|| ||c||).
double threeway_sim(const std::vector<double>& a, const std::vector<double>& b,
                    const std::vector<double>& c);

SimTensor3 sim_tensor(const EmbeddingBatch& a, const EmbeddingBatch& b,
                      const EmbeddingBatch& c);

// Subtracts the per-column mean; requires N >= 2.
EmbeddingBatch mean_center(const EmbeddingBatch& z);

}  // namespace mmalign
