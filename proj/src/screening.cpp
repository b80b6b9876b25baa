#include "mmalign/screening.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "mmalign/evalkit.hpp"
#include "mmalign/rng.hpp"

namespace mmalign::screening {

EmbeddingIndex build_index(const Dataset& materials, const ParamSet& crystal_params,
                           const EncoderConfig& cfg, const std::string& metadata) {
    if (materials.records.empty()) throw ConfigError("build_index: empty dataset");
    EmbeddingIndex idx;
    idx.metadata = metadata;
    idx.matrix = EmbeddingBatch(materials.records.size(), cfg.embed_dim);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < materials.records.size(); ++i) {
        const auto& rec = materials.records[i];
        if (!rec.crystal)
            throw ConfigError("build_index: record " + rec.id + " lacks the crystal modality");
        if (!seen.insert(rec.id).second)
            throw ConfigError("build_index: duplicate material id " + rec.id);
        idx.ids.push_back(rec.id);
        auto e = l2_normalize(encoders::encode_crystal(*rec.crystal, crystal_params, cfg));
        std::copy(e.begin(), e.end(), idx.matrix.row(i));
    }
    return idx;
}

std::vector<std::pair<std::string, double>> query_nearest(const EmbeddingIndex& idx,
                                                          const std::vector<double>& target,
                                                          std::size_t n) {
    if (n < 1 || n > idx.size()) throw ConfigError("query_nearest: n out of range");
    if (target.size() != idx.matrix.d)
        throw DimMismatchError("query_nearest: target dim mismatch");
    const auto tn = l2_normalize(target);

    std::vector<std::pair<double, std::size_t>> scored(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        double dot = 0.0;
        const double* row = idx.matrix.row(i);
        for (std::size_t j = 0; j < tn.size(); ++j) dot += tn[j] * row[j];
        scored[i] = {dot, i};
    }
    // descending similarity, ties broken by lower index
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n),
                      scored.end(), [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<std::pair<std::string, double>> out;
    out.reserve(n);
    for (std::size_t r = 0; r < n; ++r)
        out.emplace_back(idx.ids[scored[r].second], scored[r].first);
    return out;
}

ScreeningResult best_of_n(const EmbeddingIndex& idx, const DosCurve& target,
                          const DosLookup& dos_lookup, const ParamSet& dos_params,
                          const EncoderConfig& cfg, std::size_t n,
                          const std::string& target_id) {
    const auto emb = encoders::encode_dos(target, dos_params, cfg);
    ScreeningResult res;
    res.target_id = target_id;
    res.neighbors = query_nearest(idx, emb, n);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [id, sim] : res.neighbors) {
        const DosCurve& cand = dos_lookup(id);
        const double mae = evalkit::dos_mae(target, cand).value;
        if (mae < best) {
            best = mae;
            res.best_candidate = id;
        }
    }
    res.best_mae = best;
    return res;
}

void save_index(const EmbeddingIndex& idx, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("MMIX", 4);
    const std::uint32_t version = 1;
    const auto m = static_cast<std::uint32_t>(idx.size());
    const auto d = static_cast<std::uint32_t>(idx.matrix.d);
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&m), 4);
    f.write(reinterpret_cast<const char*>(&d), 4);
    for (const auto& id : idx.ids) {
        const auto len = static_cast<std::uint32_t>(id.size());
        f.write(reinterpret_cast<const char*>(&len), 4);
        f.write(id.data(), static_cast<std::streamsize>(id.size()));
    }
    std::vector<float> buf(idx.matrix.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<float>(idx.matrix.data[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    const auto meta_len = static_cast<std::uint32_t>(idx.metadata.size());
    f.write(reinterpret_cast<const char*>(&meta_len), 4);
    f.write(idx.metadata.data(), static_cast<std::streamsize>(idx.metadata.size()));
    if (!f) throw IoError("write failed: " + path);
}

EmbeddingIndex load_index(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MMIX", 4) != 0) throw IoError("bad index magic: " + path);
    std::uint32_t version = 0, m = 0, d = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&m), 4);
    f.read(reinterpret_cast<char*>(&d), 4);
    if (version != 1) throw IoError("unsupported index version");
    EmbeddingIndex idx;
    idx.matrix = EmbeddingBatch(m, d);
    for (std::uint32_t i = 0; i < m; ++i) {
        std::uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), 4);
        std::string id(len, '\0');
        f.read(id.data(), len);
        idx.ids.push_back(std::move(id));
    }
    std::vector<float> buf(static_cast<std::size_t>(m) * d);
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IoError("truncated index file: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i)
        idx.matrix.data[i] = static_cast<double>(buf[i]);
    std::uint32_t meta_len = 0;
    if (f.read(reinterpret_cast<char*>(&meta_len), 4)) {
        idx.metadata.resize(meta_len);
        f.read(idx.metadata.data(), meta_len);
    }
    return idx;
}

void export_embeddings(const Dataset& materials, const ParamSet& crystal_params,
                       const EncoderConfig& cfg, std::size_t sample, std::uint64_t seed,
                       const std::vector<std::string>& property_names,
                       const std::string& csv_path) {
    if (sample > materials.records.size())
        throw ConfigError("export_embeddings: sample larger than dataset");
    std::vector<std::size_t> idx(materials.records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(mix_seed(seed, 0xe4b0));
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    idx.resize(sample);
    std::sort(idx.begin(), idx.end());  // keep dataset order in the output

    std::ofstream f(csv_path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + csv_path);
    f.precision(17);
    f << "id";
    for (const auto& p : property_names) f << "," << p;
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) f << ",e" << j;
    f << "\n";
    for (std::size_t i : idx) {
        const auto& rec = materials.records[i];
        if (!rec.crystal)
            throw ConfigError("export_embeddings: record " + rec.id + " lacks crystal data");
        const auto e = encoders::encode_crystal(*rec.crystal, crystal_params, cfg);
        f << rec.id;
        for (const auto& p : property_names) {
            auto it = rec.properties.find(p);
            f << "," << (it == rec.properties.end() ? 0.0 : it->second);
        }
        for (double x : e) f << "," << x;
        f << "\n";
    }
    if (!f) throw IoError("write failed: " + csv_path);
}

namespace {

// Jacobi eigendecomposition of a symmetric matrix; returns (values, vectors)
// with vectors stored column-major in `vecs` (vecs[i*n+j] = component i of
// eigenvector j).
void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& vals,
                  std::vector<double>& vecs) {
    vecs.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::fabs(a[p * n + q]) < 1e-18) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * a[p * n + q]);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a[i * n + p], aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a[p * n + i], aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = vecs[i * n + p], viq = vecs[i * n + q];
                    vecs[i * n + p] = c * vip - s * viq;
                    vecs[i * n + q] = s * vip + c * viq;
                }
            }
    }
    vals.resize(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = a[i * n + i];
}

}  // namespace

Projection2D project_2d(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 3) throw ConfigError("project_2d: need at least 3 rows");
    const std::size_t m = rows.size();
    const std::size_t d = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != d) throw DimMismatchError("project_2d: ragged rows");

    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    for (auto& x : mean) x /= static_cast<double>(m);

    std::vector<double> cov(d * d, 0.0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
    for (auto& x : cov) x /= static_cast<double>(m - 1);

    std::vector<double> vals, vecs;
    jacobi_eigen(cov, d, vals, vecs);

    // top-2 eigenpairs, sign fixed by the largest-magnitude loading
    std::vector<std::size_t> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });

    Projection2D out;
    out.coords.resize(m);
    for (int c = 0; c < 2; ++c) {
        const std::size_t col = order[static_cast<std::size_t>(c)];
        out.eigenvalues[static_cast<std::size_t>(c)] = vals[col];
        std::vector<double> dir(d);
        std::size_t arg = 0;
        for (std::size_t i = 0; i < d; ++i) {
            dir[i] = vecs[i * d + col];
            if (std::fabs(dir[i]) > std::fabs(dir[arg])) arg = i;
        }
        if (dir[arg] < 0.0)
            for (auto& x : dir) x = -x;
        for (std::size_t r = 0; r < m; ++r) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i) acc += (rows[r][i] - mean[i]) * dir[i];
            out.coords[r][static_cast<std::size_t>(c)] = acc;
        }
    }
    return out;
}

}  // namespace mmalign::screening
