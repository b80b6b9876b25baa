#include "mmalign/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace mmalign::evalkit {

double topk_retrieval(const EmbeddingBatch& queries, const EmbeddingBatch& gallery,
                      std::size_t k) {
    if (queries.n != gallery.n)
        throw BatchMismatchError("topk_retrieval: queries and gallery must be paired");
    if (queries.d != gallery.d)
        throw DimMismatchError("topk_retrieval: embedding dims differ");
    if (k < 1 || k > gallery.n) throw ConfigError("topk_retrieval: k out of range");

    std::size_t hits = 0;
    for (std::size_t i = 0; i < queries.n; ++i) {
        const double s_true = cosine_sim(queries.row_vec(i), gallery.row_vec(i));
        // rank of the paired row = 1 + number of rows strictly better
        // (lower index wins ties, so earlier equal rows also count)
        std::size_t better = 0;
        for (std::size_t j = 0; j < gallery.n; ++j) {
            if (j == i) continue;
            const double s = cosine_sim(queries.row_vec(i), gallery.row_vec(j));
            if (s > s_true || (s == s_true && j < i)) ++better;
        }
        if (better < k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(queries.n);
}

namespace {

double interp_at(const DosCurve& c, double x) {
    const auto& e = c.energies;
    auto it = std::lower_bound(e.begin(), e.end(), x);
    if (it == e.begin()) return c.values.front();
    if (it == e.end()) return c.values.back();
    const std::size_t hi = static_cast<std::size_t>(it - e.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - e[lo]) / (e[hi] - e[lo]);
    return c.values[lo] + t * (c.values[hi] - c.values[lo]);
}

}  // namespace

DosMaeResult dos_mae(const DosCurve& target, const DosCurve& candidate,
                     std::size_t grid_points) {
    target.validate();
    candidate.validate();
    if (grid_points < 2) throw ConfigError("dos_mae: need at least 2 grid points");
    constexpr double lo = -5.0, hi = 5.0;
    if (target.energies.front() > lo || target.energies.back() < hi ||
        candidate.energies.front() > lo || candidate.energies.back() < hi)
        throw NumericError("dos_mae: curve does not cover the [-5,+5] eV window");

    const double step = (hi - lo) / static_cast<double>(grid_points - 1);
    double mae = 0.0;
    double area = 0.0;  // trapezoid over the equispaced grid
    double prev_t = 0.0;
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double x = lo + step * static_cast<double>(i);
        const double tv = interp_at(target, x);
        const double cv = interp_at(candidate, x);
        // trapezoid weights (half at the endpoints) so the value is stable
        // under grid refinement, matching the quadrature of the denominator
        const double w = (i == 0 || i + 1 == grid_points) ? 0.5 : 1.0;
        mae += w * std::fabs(tv - cv);
        if (i > 0) area += 0.5 * (prev_t + tv) * step;
        prev_t = tv;
    }
    mae /= static_cast<double>(grid_points - 1);
    const double mean_height = area / (hi - lo);
    if (mean_height <= 0.0)
        throw NumericError("dos_mae: target has zero area on the window");

    DosMaeResult r;
    r.value = mae / mean_height;
    r.grid_points = grid_points;
    return r;
}

void write_retrieval_csv(const RetrievalReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "query_modality,gallery_modality,k,accuracy\n";
    for (const auto& [key, acc] : report.accuracies) {
        const auto& [qm, gm, k] = key;
        f << qm << "," << gm << "," << k << "," << acc << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace mmalign::evalkit
