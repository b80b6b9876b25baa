#include "mmalign/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mmalign {

void CrystalGraph::validate() const {
    if (num_nodes == 0) throw DimMismatchError("crystal graph has no nodes");
    if (node_features.size() != num_nodes * feat_dim)
        throw DimMismatchError("crystal graph: node feature size mismatch");
    for (const auto& e : edges) {
        if (e.src >= num_nodes || e.dst >= num_nodes)
            throw DimMismatchError("crystal graph: edge endpoint out of range");
        for (double x : e.disp)
            if (!std::isfinite(x))
                throw NumericError("crystal graph: non-finite displacement");
    }
    for (double x : node_features)
        if (!std::isfinite(x)) throw NumericError("crystal graph: non-finite feature");
}

void DosCurve::validate() const {
    if (energies.empty()) throw EmptyCurveError();
    if (energies.size() != values.size())
        throw DimMismatchError("DOS curve: energies/values length mismatch");
    for (std::size_t i = 1; i < energies.size(); ++i)
        if (!(energies[i] > energies[i - 1]))
            throw NumericError("DOS curve: energies must be strictly increasing");
    for (double v : values)
        if (!(v >= 0.0)) throw NumericError("DOS curve: values must be nonnegative");
}

void DensityGrid::validate() const {
    if (g == 0) throw GridSizeMismatchError("density grid: empty grid");
    if (voxels.size() != g * g * g)
        throw GridSizeMismatchError("density grid: voxel count does not match grid size");
    for (double v : voxels)
        if (!std::isfinite(v) || v < 0.0)
            throw NumericError("density grid: voxels must be finite and nonnegative");
}

void EncoderConfig::validate() const {
    if (embed_dim == 0 || embed_dim % 2 != 0)
        throw ConfigError("embed_dim must be a positive even number");
    const std::size_t h = embed_dim / 2;
    if (dos_heads == 0 || h % dos_heads != 0)
        throw ConfigError("embed_dim/2 must be divisible by dos_heads");
    if (grid_size < 4 || grid_size % 4 != 0)
        throw ConfigError("grid_size must be a positive multiple of 4");
}

namespace encoders {

using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {

Var at(const VarMap& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw UnknownParameterError(name);
    return it->second;
}

Var affine(Tape& t, Var x, const VarMap& p, const std::string& prefix) {
    return t.add_rowvec(t.matmul(x, at(p, prefix + ".w")), at(p, prefix + ".b"));
}

void add_affine(ParamSet& out, const std::string& prefix, std::size_t in, std::size_t outn,
                Rng& rng) {
    out.add_uniform(prefix + ".w", Shape{in, outn}, in, rng);
    out.add_uniform(prefix + ".b", Shape{outn}, in, rng);
}

}  // namespace

ParamSet init_crystal_params(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x11));
    const std::size_t h = cfg.embed_dim;
    ParamSet p;
    add_affine(p, "crystal.in", cfg.node_feat_dim, h, rng);
    for (int r = 0; r < 2; ++r) {
        const std::string pre = "crystal.mp" + std::to_string(r);
        add_affine(p, pre + ".edge", h + 2, h, rng);
        add_affine(p, pre + ".update", 2 * h, h, rng);
    }
    add_affine(p, "crystal.out", h, cfg.embed_dim, rng);
    return p;
}

ParamSet init_dos_params(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x22));
    const std::size_t h = cfg.embed_dim / 2;
    const std::size_t hd = h / cfg.dos_heads;
    ParamSet p;
    add_affine(p, "dos.value_embed", 1, h, rng);
    add_affine(p, "dos.energy_embed", 1, h, rng);
    add_affine(p, "dos.mix", 2 * h, 2 * h, rng);
    add_affine(p, "dos.down", 2 * h, h, rng);
    for (std::size_t b = 0; b < cfg.dos_blocks; ++b) {
        const std::string pre = "dos.block" + std::to_string(b);
        for (std::size_t hh = 0; hh < cfg.dos_heads; ++hh) {
            const std::string hp = pre + ".head" + std::to_string(hh);
            p.add_uniform(hp + ".wq", Shape{h, hd}, h, rng);
            p.add_uniform(hp + ".wk", Shape{h, hd}, h, rng);
            p.add_uniform(hp + ".wv", Shape{h, hd}, h, rng);
        }
        add_affine(p, pre + ".proj", h, h, rng);
        add_affine(p, pre + ".mlp1", h, 2 * h, rng);
        add_affine(p, pre + ".mlp2", 2 * h, h, rng);
    }
    add_affine(p, "dos.out", h, cfg.embed_dim, rng);
    return p;
}

ParamSet init_density_params(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x33));
    ParamSet p;
    p.add_uniform("density.conv1.w", Shape{cfg.conv_c1, 1, 3, 3, 3}, 27, rng);
    p.add_uniform("density.conv1.b", Shape{cfg.conv_c1}, 27, rng);
    p.add_uniform("density.conv2.w", Shape{cfg.conv_c2, cfg.conv_c1, 3, 3, 3},
                  27 * cfg.conv_c1, rng);
    p.add_uniform("density.conv2.b", Shape{cfg.conv_c2}, 27 * cfg.conv_c1, rng);
    add_affine(p, "density.out", cfg.conv_c2, cfg.embed_dim, rng);
    return p;
}

Var encode_crystal_graph(Tape& t, const CrystalGraph& g, const VarMap& p,
                         const EncoderConfig& cfg) {
    g.validate();
    if (g.feat_dim != cfg.node_feat_dim)
        throw DimMismatchError("crystal encoder: node feature dim mismatch");
    Var x = t.input(g.node_features, Shape{g.num_nodes, g.feat_dim});
    Var h = t.tanh_(affine(t, x, p, "crystal.in"));

    std::vector<std::size_t> src, dst;
    std::vector<double> efeat;
    src.reserve(g.edges.size());
    dst.reserve(g.edges.size());
    efeat.reserve(2 * g.edges.size());
    for (const auto& e : g.edges) {
        src.push_back(e.src);
        dst.push_back(e.dst);
        const double n = std::sqrt(e.disp[0] * e.disp[0] + e.disp[1] * e.disp[1] +
                                   e.disp[2] * e.disp[2]);
        efeat.push_back(n);
        efeat.push_back(1.0 / std::max(n, 1e-6));
    }

    for (int r = 0; r < 2; ++r) {
        const std::string pre = "crystal.mp" + std::to_string(r);
        Var agg;
        if (g.edges.empty()) {
            agg = t.input(std::vector<double>(g.num_nodes * cfg.embed_dim, 0.0),
                          Shape{g.num_nodes, cfg.embed_dim});
        } else {
            Var hs = t.gather_rows(h, src);
            Var ef = t.input(efeat, Shape{g.edges.size(), 2});
            Var msg = t.tanh_(affine(t, t.concat_cols(hs, ef), p, pre + ".edge"));
            agg = t.segment_mean(msg, dst, g.num_nodes);
        }
        h = t.tanh_(affine(t, t.concat_cols(h, agg), p, pre + ".update"));
    }
    return affine(t, t.mean_rows(h), p, "crystal.out");
}

Var encode_dos_graph(Tape& t, const DosCurve& c, const VarMap& p, const EncoderConfig& cfg) {
    // Tokens are an unordered set here; full curve validation (including
    // monotone energies) belongs to the data-loading boundary.
    if (c.energies.empty()) throw EmptyCurveError();
    if (c.energies.size() != c.values.size())
        throw DimMismatchError("DOS curve: energies/values length mismatch");
    for (std::size_t i = 0; i < c.energies.size(); ++i)
        if (!std::isfinite(c.energies[i]) || !std::isfinite(c.values[i]))
            throw NumericError("DOS curve: non-finite token");
    const std::size_t n_tok = c.energies.size();
    const std::size_t h = cfg.embed_dim / 2;
    const std::size_t hd = h / cfg.dos_heads;

    Var vals = t.input(c.values, Shape{n_tok, 1});
    Var ens = t.input(c.energies, Shape{n_tok, 1});
    Var ve = affine(t, vals, p, "dos.value_embed");
    Var ee = affine(t, ens, p, "dos.energy_embed");
    // concat doubles the width; mix, then down-sample halves it back
    Var x = affine(t, t.concat_cols(ve, ee), p, "dos.mix");
    x = t.tanh_(affine(t, x, p, "dos.down"));

    for (std::size_t b = 0; b < cfg.dos_blocks; ++b) {
        const std::string pre = "dos.block" + std::to_string(b);
        Var heads{};
        for (std::size_t hh = 0; hh < cfg.dos_heads; ++hh) {
            const std::string hp = pre + ".head" + std::to_string(hh);
            Var q = t.matmul(x, at(p, hp + ".wq"));
            Var k = t.matmul(x, at(p, hp + ".wk"));
            Var v = t.matmul(x, at(p, hp + ".wv"));
            Var scores = t.scale(t.matmul(q, t.transpose(k)),
                                 1.0 / std::sqrt(static_cast<double>(hd)));
            Var o = t.matmul(t.row_softmax(scores), v);
            heads = heads.valid() ? t.concat_cols(heads, o) : o;
        }
        x = t.add(x, affine(t, heads, p, pre + ".proj"));
        Var m = t.tanh_(affine(t, x, p, pre + ".mlp1"));
        x = t.add(x, affine(t, m, p, pre + ".mlp2"));
    }
    return affine(t, t.mean_rows(x), p, "dos.out");
}

Var encode_density_graph(Tape& t, const DensityGrid& v, const VarMap& p,
                         const EncoderConfig& cfg) {
    v.validate();
    if (v.g != cfg.grid_size)
        throw GridSizeMismatchError("density encoder: grid size " + std::to_string(v.g) +
                                    " != configured " + std::to_string(cfg.grid_size));
    Var x = t.input(v.voxels, Shape{1, v.g, v.g, v.g});
    x = t.tanh_(t.conv3d(x, at(p, "density.conv1.w"), at(p, "density.conv1.b"), 2));
    x = t.tanh_(t.conv3d(x, at(p, "density.conv2.w"), at(p, "density.conv2.b"), 2));
    const std::size_t go = v.g / 4;
    Var flat = t.reshape(x, Shape{cfg.conv_c2, go * go * go});
    Var pooled = t.mean_rows(t.transpose(flat));  // [1, c2]
    return affine(t, pooled, p, "density.out");
}

std::vector<double> encode_crystal(const CrystalGraph& g, const ParamSet& p,
                                   const EncoderConfig& cfg) {
    Tape t;
    return t.value(encode_crystal_graph(t, g, bind_params(t, p), cfg));
}

std::vector<double> encode_dos(const DosCurve& c, const ParamSet& p,
                               const EncoderConfig& cfg) {
    Tape t;
    return t.value(encode_dos_graph(t, c, bind_params(t, p), cfg));
}

std::vector<double> encode_density(const DensityGrid& v, const ParamSet& p,
                                   const EncoderConfig& cfg) {
    Tape t;
    return t.value(encode_density_graph(t, v, bind_params(t, p), cfg));
}

double linear_head(const std::vector<double>& embedding, const std::vector<double>& w) {
    if (w.size() != embedding.size() + 1)
        throw DimMismatchError("linear_head: weight size must be d+1");
    double acc = w.back();
    for (std::size_t i = 0; i < embedding.size(); ++i) acc += w[i] * embedding[i];
    return acc;
}

}  // namespace encoders
}  // namespace mmalign
