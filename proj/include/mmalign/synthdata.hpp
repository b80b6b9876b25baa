#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmalign/encoders.hpp"

namespace mmalign {

enum class Modality { Crystal, Dos, Density };

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& name);

struct MaterialRecord {
    std::string id;
    std::vector<double> latent;  // generator-internal, persisted for debugging
    std::optional<CrystalGraph> crystal;
    std::optional<DosCurve> dos;
    std::optional<DensityGrid> density;
    std::map<std::string, double> properties;

    bool has(Modality m) const;
};

struct Dataset {
    std::vector<MaterialRecord> records;
    std::set<Modality> modality_mask;

    std::size_t size() const { return records.size(); }
};

struct SplitSpec {
    double train_frac = 0.6;
    double val_frac = 0.2;
    double test_frac = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GeneratorSpec {
    std::size_t latent_dim = 8;
    std::size_t grid_size = 16;
    std::size_t token_count = 64;
    std::size_t node_feat_dim = 4;
    double crystal_noise = 0.1;
    // per-modality drop probability; 0 keeps every modality
    double drop_prob = 0.0;

    void validate() const;
};

namespace synthdata {

MaterialRecord generate_material(std::uint64_t seed, const GeneratorSpec& spec);

// Records containing every required modality, order preserved.
Dataset intersect_datasets(const std::vector<MaterialRecord>& records,
                           const std::set<Modality>& required);

// Seeded-shuffle split; sizes floor-rounded with the remainder going to train.
std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& d, const SplitSpec& s);

// Dataset on disk: one JSON record per line; voxel grids live in sidecar
// files ("MMV1" header + float32 payload) referenced by relative path.
void save_dataset(const Dataset& d, const std::string& jsonl_path);
Dataset load_dataset(const std::string& jsonl_path);

void save_density_blob(const DensityGrid& g, const std::string& path);
DensityGrid load_density_blob(const std::string& path);

}  // namespace synthdata
}  // namespace mmalign
