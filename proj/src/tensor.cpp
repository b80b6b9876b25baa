#include "mmalign/tensor.hpp"

#include <cmath>
#include <string>

namespace mmalign {

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::vector<double> l2_normalize(const std::vector<double>& v) {
    const double n = norm2(v);
    if (n <= kNormEps) throw ZeroNormError();
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

static void check_dims(std::size_t a, std::size_t b) {
    if (a != b) {
        throw DimMismatchError("vector dims differ: " + std::to_string(a) +
                               " vs " + std::to_string(b));
    }
}

double cosine_sim(const std::vector<double>& a, const std::vector<double>& b) {
    check_dims(a.size(), b.size());
    const double na = norm2(a), nb = norm2(b);
    if (na <= kNormEps || nb <= kNormEps) throw ZeroNormError();
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot / (na * nb);
}

double threeway_sim(const std::vector<double>& a, const std::vector<double>& b,
                    const std::vector<double>& c) {
    check_dims(a.size(), b.size());
    check_dims(a.size(), c.size());
    const double na = norm2(a), nb = norm2(b), nc = norm2(c);
    if (na <= kNormEps || nb <= kNormEps || nc <= kNormEps) throw ZeroNormError();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i] * c[i];
    return s / (na * nb * nc);
}

SimTensor3 sim_tensor(const EmbeddingBatch& a, const EmbeddingBatch& b,
                      const EmbeddingBatch& c) {
    if (a.d != b.d || a.d != c.d)
        throw DimMismatchError("sim_tensor: embedding dims differ");
    if (a.n != b.n || a.n != c.n)
        throw BatchMismatchError("sim_tensor: batch sizes differ");
    SimTensor3 t;
    t.n = a.n;
    t.entries.resize(a.n * a.n * a.n);
    for (std::size_t i = 0; i < a.n; ++i)
        for (std::size_t j = 0; j < a.n; ++j)
            for (std::size_t k = 0; k < a.n; ++k)
                t.entries[(i * a.n + j) * a.n + k] =
                    threeway_sim(a.row_vec(i), b.row_vec(j), c.row_vec(k));
    return t;
}

EmbeddingBatch mean_center(const EmbeddingBatch& z) {
    if (z.n < 2) throw BatchTooSmallError();
    EmbeddingBatch out(z.n, z.d);
    for (std::size_t j = 0; j < z.d; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < z.n; ++i) m += z.at(i, j);
        m /= static_cast<double>(z.n);
        for (std::size_t i = 0; i < z.n; ++i) out.at(i, j) = z.at(i, j) - m;
    }
    return out;
}

}  // namespace mmalign
