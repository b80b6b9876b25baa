#include "mmalign/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <tuple>

#include <json.hpp>

#include "mmalign/rng.hpp"

namespace mmalign {

std::string modality_name(Modality m) {
    switch (m) {
        case Modality::Crystal: return "crystal";
        case Modality::Dos: return "dos";
        case Modality::Density: return "density";
    }
    throw ConfigError("unknown modality");
}

Modality modality_from_name(const std::string& name) {
    if (name == "crystal") return Modality::Crystal;
    if (name == "dos") return Modality::Dos;
    if (name == "density") return Modality::Density;
    throw ConfigError("unknown modality: " + name);
}

bool MaterialRecord::has(Modality m) const {
    switch (m) {
        case Modality::Crystal: return crystal.has_value();
        case Modality::Dos: return dos.has_value();
        case Modality::Density: return density.has_value();
    }
    return false;
}

void SplitSpec::validate() const {
    if (!(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0))
        throw ConfigError("split fractions must be positive");
    if (std::fabs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
}

void GeneratorSpec::validate() const {
    if (latent_dim < 4) throw ConfigError("generator: latent_dim must be >= 4");
    if (grid_size < 4 || grid_size % 4 != 0)
        throw ConfigError("generator: grid_size must be a positive multiple of 4");
    if (token_count < 8) throw ConfigError("generator: token_count must be >= 8");
    if (node_feat_dim < 1) throw ConfigError("generator: node_feat_dim must be >= 1");
    if (drop_prob < 0.0 || drop_prob >= 1.0)
        throw ConfigError("generator: drop_prob must be in [0,1)");
}

namespace synthdata {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

CrystalGraph make_crystal(const std::vector<double>& z, const GeneratorSpec& spec, Rng& rng) {
    CrystalGraph g;
    g.num_nodes = 4 + static_cast<std::size_t>(rng.uniform_index(5));  // 4..8 atoms
    g.feat_dim = spec.node_feat_dim;
    g.node_features.resize(g.num_nodes * g.feat_dim);
    const std::size_t m = z.size();
    for (std::size_t a = 0; a < g.num_nodes; ++a)
        for (std::size_t j = 0; j < g.feat_dim; ++j)
            g.node_features[a * g.feat_dim + j] =
                std::tanh(z[j % m]) + 0.4 * std::tanh(z[(j + a + 1) % m]) +
                spec.crystal_noise * rng.normal();

    // positions in a 3x3x3 box, resampled until pairwise separation >= 0.5
    std::vector<std::array<double, 3>> pos(g.num_nodes);
    for (std::size_t a = 0; a < g.num_nodes; ++a) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            pos[a] = {rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0)};
            bool ok = true;
            for (std::size_t b = 0; b < a && ok; ++b) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c)
                    d2 += (pos[a][c] - pos[b][c]) * (pos[a][c] - pos[b][c]);
                ok = d2 >= 0.25;
            }
            if (ok) break;
        }
    }
    for (std::size_t a = 0; a < g.num_nodes; ++a)
        for (std::size_t b = 0; b < g.num_nodes; ++b) {
            if (a == b) continue;
            CrystalGraph::Edge e;
            e.src = a;
            e.dst = b;
            for (int c = 0; c < 3; ++c) e.disp[c] = pos[b][c] - pos[a][c];
            g.edges.push_back(e);
        }
    return g;
}

DosCurve make_dos(const std::vector<double>& z, const GeneratorSpec& spec, Rng& rng) {
    DosCurve c;
    const std::size_t n = spec.token_count;
    const std::size_t m = z.size();
    const double step = 20.0 / static_cast<double>(n - 1);
    c.energies.resize(n);
    c.values.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        c.energies[i] = -10.0 + step * static_cast<double>(i) +
                        0.3 * step * (rng.uniform() - 0.5);
    for (std::size_t i = 0; i < n; ++i) {
        double v = 0.05;
        for (std::size_t k = 0; k < 4; ++k) {
            const double center = 6.0 * std::tanh(z[k % m]);
            const double width = 0.6 + 0.8 * sigmoid(z[(k + 2) % m]);
            const double amp = 0.4 + sigmoid(z[(k + 4) % m]);
            const double u = (c.energies[i] - center) / width;
            v += amp * std::exp(-0.5 * u * u);
        }
        c.values[i] = v;
    }
    return c;
}

DensityGrid make_density(const std::vector<double>& z, const GeneratorSpec& spec) {
    DensityGrid d;
    d.g = spec.grid_size;
    d.voxels.assign(d.g * d.g * d.g, 0.0);
    const std::size_t m = z.size();
    const double gf = static_cast<double>(d.g);
    for (std::size_t k = 0; k < 3; ++k) {
        const double cx = gf * (0.5 + 0.3 * std::tanh(z[(3 * k) % m]));
        const double cy = gf * (0.5 + 0.3 * std::tanh(z[(3 * k + 1) % m]));
        const double cz = gf * (0.5 + 0.3 * std::tanh(z[(3 * k + 2) % m]));
        const double width = gf / 6.0;
        const double amp = 0.6 + 0.5 * sigmoid(z[(k + 5) % m]);
        for (std::size_t x = 0; x < d.g; ++x)
            for (std::size_t y = 0; y < d.g; ++y)
                for (std::size_t w = 0; w < d.g; ++w) {
                    const double dx = (static_cast<double>(x) + 0.5 - cx) / width;
                    const double dy = (static_cast<double>(y) + 0.5 - cy) / width;
                    const double dz = (static_cast<double>(w) + 0.5 - cz) / width;
                    d.voxels[(x * d.g + y) * d.g + w] +=
                        amp * std::exp(-0.5 * (dx * dx + dy * dy + dz * dz));
                }
    }
    return d;
}

}  // namespace

MaterialRecord generate_material(std::uint64_t seed, const GeneratorSpec& spec) {
    spec.validate();
    Rng rng(mix_seed(seed, 0xda7a));
    MaterialRecord rec;
    rec.id = "mat-" + std::to_string(seed);
    rec.latent.resize(spec.latent_dim);
    for (auto& x : rec.latent) x = rng.normal();

    rec.crystal = make_crystal(rec.latent, spec, rng);
    rec.dos = make_dos(rec.latent, spec, rng);
    rec.density = make_density(rec.latent, spec);

    const auto& z = rec.latent;
    rec.properties["gap"] = 2.0 + 1.5 * z[0] + 0.4 * z[1] * z[1] + 0.1 * rng.normal();
    rec.properties["formation_energy"] =
        -1.0 + z[2] - 0.5 * z[3] + 0.1 * rng.normal();

    if (spec.drop_prob > 0.0) {
        // crystal is always kept so every record has at least one modality
        if (rng.uniform() < spec.drop_prob) rec.dos.reset();
        if (rng.uniform() < spec.drop_prob) rec.density.reset();
    }
    return rec;
}

Dataset intersect_datasets(const std::vector<MaterialRecord>& records,
                           const std::set<Modality>& required) {
    Dataset out;
    out.modality_mask = required;
    for (const auto& r : records) {
        bool ok = true;
        for (Modality m : required)
            if (!r.has(m)) {
                ok = false;
                break;
            }
        if (ok) out.records.push_back(r);
    }
    return out;
}

std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& d, const SplitSpec& s) {
    s.validate();
    if (d.records.empty()) throw ConfigError("split_dataset: empty dataset");
    const std::size_t n = d.records.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(mix_seed(s.seed, 0x5b17));
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_index(i)]);

    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * s.val_frac));
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * s.test_frac));
    const std::size_t n_train = n - n_val - n_test;  // floor remainder goes to train

    Dataset train, val, test;
    train.modality_mask = val.modality_mask = test.modality_mask = d.modality_mask;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = d.records[idx[i]];
        if (i < n_train) train.records.push_back(r);
        else if (i < n_train + n_val) val.records.push_back(r);
        else test.records.push_back(r);
    }
    return {train, val, test};
}

// ---------- persistence ----------

namespace {

using nlohmann::json;

json crystal_to_json(const CrystalGraph& g) {
    json j;
    j["num_nodes"] = g.num_nodes;
    j["feat_dim"] = g.feat_dim;
    j["node_features"] = g.node_features;
    json edges = json::array();
    for (const auto& e : g.edges)
        edges.push_back({e.src, e.dst, {e.disp[0], e.disp[1], e.disp[2]}});
    j["edges"] = std::move(edges);
    return j;
}

CrystalGraph crystal_from_json(const json& j) {
    CrystalGraph g;
    g.num_nodes = j.at("num_nodes").get<std::size_t>();
    g.feat_dim = j.at("feat_dim").get<std::size_t>();
    g.node_features = j.at("node_features").get<std::vector<double>>();
    for (const auto& e : j.at("edges")) {
        CrystalGraph::Edge edge;
        edge.src = e.at(0).get<std::size_t>();
        edge.dst = e.at(1).get<std::size_t>();
        for (int c = 0; c < 3; ++c) edge.disp[static_cast<std::size_t>(c)] = e.at(2).at(c).get<double>();
        g.edges.push_back(edge);
    }
    g.validate();
    return g;
}

}  // namespace

void save_density_blob(const DensityGrid& g, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("MMV1", 4);
    const auto gs = static_cast<std::uint32_t>(g.g);
    f.write(reinterpret_cast<const char*>(&gs), 4);
    const char reserved[8] = {};
    f.write(reserved, 8);
    std::vector<float> buf(g.voxels.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(g.voxels[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IoError("write failed: " + path);
}

DensityGrid load_density_blob(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MMV1", 4) != 0)
        throw IoError("bad density blob magic: " + path);
    std::uint32_t gs = 0;
    f.read(reinterpret_cast<char*>(&gs), 4);
    char reserved[8];
    f.read(reserved, 8);
    DensityGrid g;
    g.g = gs;
    std::vector<float> buf(static_cast<std::size_t>(gs) * gs * gs);
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw IoError("truncated density blob: " + path);
    g.voxels.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) g.voxels[i] = static_cast<double>(buf[i]);
    return g;
}

void save_dataset(const Dataset& d, const std::string& jsonl_path) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(jsonl_path).parent_path();
    const fs::path blob_dir = base / "blobs";
    bool need_blobs = false;
    for (const auto& r : d.records)
        if (r.density) need_blobs = true;
    std::error_code ec;
    if (need_blobs) fs::create_directories(blob_dir, ec);

    std::ofstream f(jsonl_path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + jsonl_path);
    for (const auto& r : d.records) {
        json j;
        j["id"] = r.id;
        j["latent"] = r.latent;
        if (r.crystal) j["crystal"] = crystal_to_json(*r.crystal);
        if (r.dos) {
            j["dos"]["energies"] = r.dos->energies;
            j["dos"]["values"] = r.dos->values;
        }
        if (r.density) {
            const std::string rel = "blobs/" + r.id + ".mmv";
            save_density_blob(*r.density, (base / rel).string());
            j["density_ref"] = rel;
        }
        j["properties"] = r.properties;
        f << j.dump() << "\n";
    }
    if (!f) throw IoError("write failed: " + jsonl_path);
}

Dataset load_dataset(const std::string& jsonl_path) {
    namespace fs = std::filesystem;
    std::ifstream f(jsonl_path);
    if (!f) throw IoError("cannot open: " + jsonl_path);
    const fs::path base = fs::path(jsonl_path).parent_path();
    Dataset d;
    std::string line;
    std::set<std::string> seen;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        MaterialRecord r;
        r.id = j.at("id").get<std::string>();
        if (!seen.insert(r.id).second)
            throw IoError("duplicate material id in dataset: " + r.id);
        if (j.contains("latent")) r.latent = j["latent"].get<std::vector<double>>();
        if (j.contains("crystal")) r.crystal = crystal_from_json(j["crystal"]);
        if (j.contains("dos")) {
            DosCurve c;
            c.energies = j["dos"].at("energies").get<std::vector<double>>();
            c.values = j["dos"].at("values").get<std::vector<double>>();
            c.validate();
            r.dos = std::move(c);
        }
        if (j.contains("density_ref"))
            r.density = load_density_blob((base / j["density_ref"].get<std::string>()).string());
        if (j.contains("properties"))
            r.properties = j["properties"].get<std::map<std::string, double>>();
        d.records.push_back(std::move(r));
    }
    for (Modality m : {Modality::Crystal, Modality::Dos, Modality::Density}) {
        bool all = true;
        for (const auto& r : d.records)
            if (!r.has(m)) all = false;
        if (all && !d.records.empty()) d.modality_mask.insert(m);
    }
    return d;
}

}  // namespace synthdata
}  // namespace mmalign
