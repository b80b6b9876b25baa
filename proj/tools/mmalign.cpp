#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmalign/encoders.hpp"
#include "mmalign/evalkit.hpp"
#include "mmalign/screening.hpp"
#include "mmalign/synthdata.hpp"
#include "mmalign/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmalign;

namespace {

constexpr const char* kVersion = "mmalign 0.1.0";

std::size_t worker_threads() {
    if (const char* env = std::getenv("MMALIGN_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : std::min<unsigned>(hc, 8);
}

// RunManifest: written before any long computation so a run can be
// reproduced from the snapshot alone.
void write_manifest(const std::string& command, const json& resolved,
                    const std::string& out_dir, std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    json m;
    m["command"] = command;
    m["config"] = resolved;
    m["output_dir"] = out_dir;
    m["seed"] = seed;
    m["tool_version"] = kVersion;
    m["timestamp_utc"] = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
    std::ofstream f(fs::path(out_dir) / (command + "_manifest.json"));
    if (!f) throw IoError("cannot write manifest in " + out_dir);
    f << m.dump(2) << "\n";
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(static_cast<std::size_t>(std::stoull(tok)));
    }
    if (out.empty()) throw ConfigError("empty list: " + s);
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stod(tok));
    }
    if (out.empty()) throw ConfigError("empty list: " + s);
    return out;
}

std::vector<const MaterialRecord*> record_ptrs(const Dataset& d) {
    std::vector<const MaterialRecord*> out;
    out.reserve(d.records.size());
    for (const auto& r : d.records) out.push_back(&r);
    return out;
}

// ---------- gen ----------

int cmd_gen(std::size_t n, std::uint64_t seed, const std::string& out_dir, double drop_prob,
            std::size_t grid, std::size_t tokens) {
    if (n == 0) throw ConfigError("gen: --n must be positive");
    GeneratorSpec spec;
    spec.grid_size = grid;
    spec.token_count = tokens;
    spec.drop_prob = drop_prob;
    spec.validate();

    json resolved{{"n", n}, {"drop_prob", drop_prob}, {"grid", grid}, {"tokens", tokens}};
    write_manifest("gen", resolved, out_dir, seed);

    std::vector<MaterialRecord> records(n);
    const std::size_t nthreads = std::min(worker_threads(), n);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t)
        pool.emplace_back([&, t]() {
            for (std::size_t i = t; i < n; i += nthreads)
                records[i] = synthdata::generate_material(seed + i, spec);
        });
    for (auto& th : pool) th.join();

    Dataset d;
    d.records = std::move(records);
    synthdata::save_dataset(d, (fs::path(out_dir) / "dataset.jsonl").string());
    std::cout << "wrote " << n << " records to " << out_dir << "/dataset.jsonl\n";
    return 0;
}

// ---------- pretrain ----------

int cmd_pretrain(const trainer::TrainConfig& cfg, const std::string& data_path,
                 const std::string& out_dir) {
    json resolved = json::parse(cfg.to_json());
    resolved["data"] = data_path;
    write_manifest("pretrain", resolved, out_dir, cfg.seed);

    Dataset all = synthdata::load_dataset(data_path);
    std::set<Modality> required;
    for (Modality m : trainer::required_modalities(cfg.loss_kind)) required.insert(m);
    Dataset data = synthdata::intersect_datasets(all.records, required);

    trainer::Checkpoint ckpt = trainer::pretrain(cfg, data);
    trainer::save_checkpoint(ckpt, (fs::path(out_dir) / "checkpoint.mmck").string());
    trainer::write_metrics_csv(ckpt.history, (fs::path(out_dir) / "metrics.csv").string());
    std::cout << "final loss: "
              << (ckpt.history.empty() ? 0.0 : ckpt.history.back().loss) << "\n";
    return 0;
}

// ---------- eval ----------

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& split, const std::string& k_list, const std::string& out_dir,
             std::uint64_t seed_override, bool have_seed) {
    trainer::Checkpoint ckpt = trainer::load_checkpoint(ckpt_path);
    const auto cfg = trainer::TrainConfig::from_json(ckpt.config_json);
    const auto ks = parse_size_list(k_list);
    const std::uint64_t seed = have_seed ? seed_override : cfg.seed;

    json resolved{{"ckpt", ckpt_path}, {"data", data_path}, {"split", split}, {"k", k_list}};
    write_manifest("eval", resolved, out_dir, seed);

    Dataset all = synthdata::load_dataset(data_path);
    std::set<Modality> required;
    for (Modality m : trainer::required_modalities(cfg.loss_kind)) required.insert(m);
    Dataset data = synthdata::intersect_datasets(all.records, required);

    Dataset subset = data;
    if (split != "all") {
        SplitSpec ss;
        ss.seed = seed;
        auto [train, val, test] = synthdata::split_dataset(data, ss);
        if (split == "train") subset = train;
        else if (split == "val") subset = val;
        else if (split == "test") subset = test;
        else throw ConfigError("unknown split: " + split);
    }

    const auto ptrs = record_ptrs(subset);
    std::map<Modality, EmbeddingBatch> embs;
    for (Modality m : required)
        embs[m] = trainer::encode_batch(m, ptrs, ckpt.params, cfg.encoder);

    evalkit::RetrievalReport report;
    report.k_values = ks;
    report.gallery_size = subset.size();
    for (Modality q : required)
        for (Modality g : required) {
            if (q == g) continue;
            for (std::size_t k : ks)
                report.accuracies[{modality_name(q), modality_name(g), k}] =
                    evalkit::topk_retrieval(embs[q], embs[g], k);
        }
    evalkit::write_retrieval_csv(report, (fs::path(out_dir) / "retrieval.csv").string());
    std::cout << "evaluated " << subset.size() << " records\n";
    return 0;
}

// ---------- screen ----------

int cmd_screen(const std::string& ckpt_path, const std::string& data_path,
               const std::string& target_dos_path, const std::string& n_list,
               const std::string& out_dir) {
    trainer::Checkpoint ckpt = trainer::load_checkpoint(ckpt_path);
    const auto cfg = trainer::TrainConfig::from_json(ckpt.config_json);
    const auto ns = parse_size_list(n_list);

    json resolved{{"ckpt", ckpt_path}, {"data", data_path}, {"n", n_list},
                  {"target_dos", target_dos_path}};
    write_manifest("screen", resolved, out_dir, cfg.seed);

    Dataset all = synthdata::load_dataset(data_path);
    Dataset data = synthdata::intersect_datasets(all.records,
                                                 {Modality::Crystal, Modality::Dos});

    // candidate library = train split, targets = test split (or a file)
    SplitSpec ss;
    ss.seed = cfg.seed;
    auto [train, val, test] = synthdata::split_dataset(data, ss);

    auto idx = screening::build_index(train, ckpt.params, cfg.encoder, "checkpoint");
    std::map<std::string, const DosCurve*> dos_by_id;
    for (const auto& r : train.records) dos_by_id[r.id] = &*r.dos;
    screening::DosLookup lookup = [&](const std::string& id) -> const DosCurve& {
        auto it = dos_by_id.find(id);
        if (it == dos_by_id.end()) throw ConfigError("screen: unknown candidate id " + id);
        return *it->second;
    };

    std::vector<std::pair<std::string, DosCurve>> targets;
    if (!target_dos_path.empty()) {
        std::ifstream f(target_dos_path);
        if (!f) throw IoError("cannot open: " + target_dos_path);
        json j = json::parse(f, nullptr, true, true);
        DosCurve c;
        c.energies = j.at("energies").get<std::vector<double>>();
        c.values = j.at("values").get<std::vector<double>>();
        c.validate();
        targets.emplace_back("target-file", std::move(c));
    } else {
        for (const auto& r : test.records) targets.emplace_back(r.id, *r.dos);
    }

    std::ofstream f(fs::path(out_dir) / "screening.csv", std::ios::binary);
    if (!f) throw IoError("cannot write screening.csv in " + out_dir);
    f.precision(17);
    f << "target_id,n,best_candidate,best_mae\n";
    for (const auto& [tid, curve] : targets)
        for (std::size_t n : ns) {
            auto res = screening::best_of_n(idx, curve, lookup, ckpt.params, cfg.encoder,
                                            std::min(n, idx.size()), tid);
            f << tid << "," << n << "," << res.best_candidate << "," << res.best_mae << "\n";
        }
    std::cout << "screened " << targets.size() << " targets against " << idx.size()
              << " candidates\n";
    return 0;
}

// ---------- finetune ----------

int cmd_finetune(const std::string& ckpt_path, const std::string& data_path,
                 const std::string& property, const std::string& sweep,
                 std::size_t epochs, std::size_t batch, std::uint64_t seed, bool scratch,
                 const std::string& out_dir) {
    trainer::Checkpoint ckpt = trainer::load_checkpoint(ckpt_path);
    json resolved{{"ckpt", ckpt_path}, {"data", data_path}, {"property", property},
                  {"sweep", sweep},    {"epochs", epochs},  {"batch", batch},
                  {"scratch", scratch}};
    write_manifest("finetune", resolved, out_dir, seed);

    Dataset all = synthdata::load_dataset(data_path);
    Dataset data = synthdata::intersect_datasets(all.records, {Modality::Crystal});

    if (scratch) {
        // re-randomize the crystal encoder, keeping the architecture
        const auto cfg = trainer::TrainConfig::from_json(ckpt.config_json);
        ParamSet fresh = encoders::init_crystal_params(cfg.encoder, mix_seed(seed, 0x5c4a));
        for (auto& [name, t] : ckpt.params)
            if (fresh.has(name)) t.values = fresh.at(name).values;
    }

    trainer::FinetuneConfig fcfg;
    fcfg.lr_sweep = parse_double_list(sweep);
    fcfg.epochs = epochs;
    fcfg.batch_size = batch;
    fcfg.seed = seed;
    auto res = trainer::finetune(ckpt, data, property, fcfg);

    std::ofstream f(fs::path(out_dir) / "finetune.csv", std::ios::binary);
    if (!f) throw IoError("cannot write finetune.csv in " + out_dir);
    f.precision(17);
    f << "property,best_lr,best_epoch,best_val_mae,test_mae\n";
    f << property << "," << res.best_lr << "," << res.best_epoch << ","
      << res.best_val_mae << "," << res.test_mae << "\n";
    std::cout << "test MAE: " << res.test_mae << "\n";
    return 0;
}

// ---------- export / project ----------

int cmd_export(const std::string& ckpt_path, const std::string& data_path,
               const std::string& sample_str, std::uint64_t seed,
               const std::string& properties, const std::string& out_dir) {
    trainer::Checkpoint ckpt = trainer::load_checkpoint(ckpt_path);
    const auto cfg = trainer::TrainConfig::from_json(ckpt.config_json);
    json resolved{{"ckpt", ckpt_path}, {"data", data_path}, {"sample", sample_str},
                  {"properties", properties}};
    write_manifest("export", resolved, out_dir, seed);

    Dataset all = synthdata::load_dataset(data_path);
    Dataset data = synthdata::intersect_datasets(all.records, {Modality::Crystal});
    std::size_t sample = 0;
    if (sample_str == "all") sample = data.size();
    else if (sample_str == "paper") sample = std::min<std::size_t>(16000, data.size());
    else sample = static_cast<std::size_t>(std::stoull(sample_str));

    std::vector<std::string> props;
    std::stringstream ss(properties);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) props.push_back(tok);

    const std::string csv = (fs::path(out_dir) / "embeddings.csv").string();
    screening::export_embeddings(data, ckpt.params, cfg.encoder, sample, seed, props, csv);
    std::cout << "exported " << sample << " embeddings to " << csv << "\n";
    return 0;
}

int cmd_project(const std::string& table_path, const std::string& out_dir) {
    json resolved{{"table", table_path}};
    write_manifest("project", resolved, out_dir, 0);

    std::ifstream f(table_path);
    if (!f) throw IoError("cannot open: " + table_path);
    std::string header;
    if (!std::getline(f, header)) throw IoError("empty embedding table: " + table_path);
    std::vector<std::string> cols;
    {
        std::stringstream ss(header);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    std::size_t first_e = cols.size();
    for (std::size_t i = 0; i < cols.size(); ++i)
        if (cols[i].size() >= 2 && cols[i][0] == 'e' &&
            cols[i].find_first_not_of("0123456789", 1) == std::string::npos) {
            first_e = i;
            break;
        }
    if (first_e == cols.size())
        throw ConfigError("no e0..e{d-1} columns found in " + table_path);

    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string c;
        std::vector<std::string> fields;
        while (std::getline(ss, c, ',')) fields.push_back(c);
        ids.push_back(fields.at(0));
        std::vector<double> row;
        for (std::size_t i = first_e; i < fields.size(); ++i)
            row.push_back(std::stod(fields[i]));
        rows.push_back(std::move(row));
    }
    auto proj = screening::project_2d(rows);

    std::ofstream out(fs::path(out_dir) / "projection.csv", std::ios::binary);
    if (!out) throw IoError("cannot write projection.csv in " + out_dir);
    out.precision(17);
    out << "id,x,y\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
        out << ids[i] << "," << proj.coords[i][0] << "," << proj.coords[i][1] << "\n";
    std::cout << "projected " << ids.size() << " rows\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal material alignment toolkit"};
    app.set_version_flag("--version", kVersion);
    app.set_config("--config", "", "layered key = value config file");
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic coupled-modality dataset");
    std::size_t gen_n = 1000;
    std::uint64_t gen_seed = 0;
    std::string gen_out = "data";
    double gen_drop = 0.0;
    std::size_t gen_grid = 16, gen_tokens = 64;
    gen->add_option("--n", gen_n, "number of materials");
    gen->add_option("--seed", gen_seed, "base seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--drop-prob", gen_drop, "per-modality drop probability");
    gen->add_option("--grid", gen_grid, "density grid size");
    gen->add_option("--tokens", gen_tokens, "DOS token count");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "multimodal alignment pre-training");
    std::string pre_data = "data/dataset.jsonl", pre_out = "run", pre_loss = "anchored";
    std::string pre_preset;
    trainer::TrainConfig tc;
    pre->add_option("--data", pre_data, "dataset jsonl path");
    pre->add_option("--out", pre_out, "output directory");
    pre->add_option("--loss", pre_loss, "clip_dos|clip_density|allpairs|anchored|tensorclip|barlow3d");
    pre->add_option("--preset", pre_preset, "desk|paper-pretrain|paper-retrieval");
    auto* opt_batch = pre->add_option("--batch", tc.batch_size, "batch size");
    auto* opt_epochs = pre->add_option("--epochs", tc.epochs, "training epochs");
    auto* opt_lr = pre->add_option("--lr", tc.peak_lr, "peak learning rate");
    auto* opt_wd = pre->add_option("--wd", tc.weight_decay, "weight decay");
    auto* opt_warm = pre->add_option("--warmup", tc.warmup_epochs, "warmup epochs");
    auto* opt_d = pre->add_option("--d", tc.d, "embedding dimension");
    pre->add_option("--seed", tc.seed, "seed");
    pre->add_option("--tau", tc.tau, "initial temperature");
    pre->add_option("--lambda", tc.lambda, "barlow decorrelation weight");
    pre->add_option("--grid", tc.encoder.grid_size, "density grid size");
    std::size_t pre_tokens = 64;
    pre->add_option("--tokens", pre_tokens, "DOS token count (documentation only)");

    // eval
    auto* ev = app.add_subcommand("eval", "cross-modal retrieval evaluation");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_k = "1,5,10", ev_out = "eval";
    std::uint64_t ev_seed = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset jsonl path")->required();
    ev->add_option("--split", ev_split, "train|val|test|all");
    ev->add_option("--k", ev_k, "comma-separated k values");
    ev->add_option("--out", ev_out, "output directory");
    auto* ev_seed_opt = ev->add_option("--seed", ev_seed, "split seed override");

    // screen
    auto* sc = app.add_subcommand("screen", "screening-based inverse design");
    std::string sc_ckpt, sc_data, sc_target, sc_n = "1,5,10,50", sc_out = "screen";
    sc->add_option("--ckpt", sc_ckpt, "checkpoint path")->required();
    sc->add_option("--data", sc_data, "dataset jsonl path")->required();
    sc->add_option("--target-dos", sc_target, "JSON file with energies/values arrays");
    sc->add_option("--n", sc_n, "comma-separated neighbor counts");
    sc->add_option("--out", sc_out, "output directory");

    // finetune
    auto* ft = app.add_subcommand("finetune", "property-prediction fine-tuning");
    std::string ft_ckpt, ft_data, ft_prop = "gap", ft_sweep = "1e-3,1e-4,1e-5",
                ft_out = "finetune";
    std::size_t ft_epochs = 30, ft_batch = 32;
    std::uint64_t ft_seed = 0;
    bool ft_scratch = false;
    ft->add_option("--ckpt", ft_ckpt, "checkpoint path")->required();
    ft->add_option("--data", ft_data, "dataset jsonl path")->required();
    ft->add_option("--property", ft_prop, "scalar property name");
    ft->add_option("--sweep", ft_sweep, "peak learning rate sweep");
    ft->add_option("--epochs", ft_epochs, "epochs per sweep entry");
    ft->add_option("--batch", ft_batch, "batch size");
    ft->add_option("--seed", ft_seed, "seed");
    ft->add_flag("--scratch", ft_scratch, "re-randomize the crystal encoder first");
    ft->add_option("--out", ft_out, "output directory");

    // export
    auto* ex = app.add_subcommand("export", "export an embedding table");
    std::string ex_ckpt, ex_data, ex_sample = "all", ex_props = "gap,formation_energy",
                ex_out = "export";
    std::uint64_t ex_seed = 0;
    ex->add_option("--ckpt", ex_ckpt, "checkpoint path")->required();
    ex->add_option("--data", ex_data, "dataset jsonl path")->required();
    ex->add_option("--sample", ex_sample, "row count, 'all', or 'paper' (16000)");
    ex->add_option("--seed", ex_seed, "sampling seed");
    ex->add_option("--properties", ex_props, "property columns for coloring");
    ex->add_option("--out", ex_out, "output directory");

    // project
    auto* pj = app.add_subcommand("project", "2D linear projection of an embedding table");
    std::string pj_table, pj_out = "project";
    pj->add_option("--table", pj_table, "embedding table CSV")->required();
    pj->add_option("--out", pj_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return cmd_gen(gen_n, gen_seed, gen_out, gen_drop, gen_grid, gen_tokens);
        if (pre->parsed()) {
            if (!pre_preset.empty()) {
                trainer::TrainConfig base = trainer::preset_config(pre_preset);
                if (!*opt_batch) tc.batch_size = base.batch_size;
                if (!*opt_epochs) tc.epochs = base.epochs;
                if (!*opt_lr) tc.peak_lr = base.peak_lr;
                if (!*opt_wd) tc.weight_decay = base.weight_decay;
                if (!*opt_warm) tc.warmup_epochs = base.warmup_epochs;
                if (!*opt_d) tc.d = base.d;
            }
            tc.loss_kind = trainer::loss_kind_from_name(pre_loss);
            tc.encoder.embed_dim = tc.d;
            tc.validate();
            return cmd_pretrain(tc, pre_data, pre_out);
        }
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, ev_split, ev_k, ev_out, ev_seed,
                            static_cast<bool>(*ev_seed_opt));
        if (sc->parsed()) return cmd_screen(sc_ckpt, sc_data, sc_target, sc_n, sc_out);
        if (ft->parsed())
            return cmd_finetune(ft_ckpt, ft_data, ft_prop, ft_sweep, ft_epochs, ft_batch,
                                ft_seed, ft_scratch, ft_out);
        if (ex->parsed())
            return cmd_export(ex_ckpt, ex_data, ex_sample, ex_seed, ex_props, ex_out);
        if (pj->parsed()) return cmd_project(pj_table, pj_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NonFiniteLossError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
