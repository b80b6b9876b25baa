#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmalign/autodiff.hpp"
#include "mmalign/params.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign {

struct CrystalGraph {
    struct Edge {
        std::size_t src = 0;
        std::size_t dst = 0;
        std::array<double, 3> disp{};  // periodic-image displacement, Cartesian
    };

    std::size_t num_nodes = 0;
    std::size_t feat_dim = 0;
    std::vector<double> node_features;  // num_nodes x feat_dim, row-major
    std::vector<Edge> edges;

    void validate() const;
};

struct DosCurve {
    std::vector<double> energies;  // strictly increasing, eV
    std::vector<double> values;    // nonnegative, same length

    void validate() const;
};

struct DensityGrid {
    std::size_t g = 0;
    std::vector<double> voxels;  // g^3 nonnegative, row-major

    void validate() const;
};

struct EncoderConfig {
    std::size_t embed_dim = 32;  // d; must be even (DOS width is d/2)
    std::size_t node_feat_dim = 4;
    std::size_t grid_size = 16;
    std::size_t dos_heads = 2;
    std::size_t dos_blocks = 2;
    std::size_t conv_c1 = 4;
    std::size_t conv_c2 = 8;

    void validate() const;
};

namespace encoders {

// Parameter construction; names carry a "crystal." / "dos." / "density." prefix.
ParamSet init_crystal_params(const EncoderConfig& cfg, std::uint64_t seed);
ParamSet init_dos_params(const EncoderConfig& cfg, std::uint64_t seed);
ParamSet init_density_params(const EncoderConfig& cfg, std::uint64_t seed);

// Tape builders: each returns a [1,d] row.
ad::Var encode_crystal_graph(ad::Tape& t, const CrystalGraph& g, const VarMap& p,
                             const EncoderConfig& cfg);
ad::Var encode_dos_graph(ad::Tape& t, const DosCurve& c, const VarMap& p,
                         const EncoderConfig& cfg);
ad::Var encode_density_graph(ad::Tape& t, const DensityGrid& v, const VarMap& p,
                             const EncoderConfig& cfg);

// Value-level API.
std::vector<double> encode_crystal(const CrystalGraph& g, const ParamSet& p,
                                   const EncoderConfig& cfg);
std::vector<double> encode_dos(const DosCurve& c, const ParamSet& p,
                               const EncoderConfig& cfg);
std::vector<double> encode_density(const DensityGrid& v, const ParamSet& p,
                                   const EncoderConfig& cfg);

// w holds d weights followed by a bias term.
double linear_head(const std::vector<double>& embedding, const std::vector<double>& w);

}  // namespace encoders
}  // namespace mmalign
