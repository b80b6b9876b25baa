#include "mmalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mmalign/evalkit.hpp"
#include "mmalign/losses.hpp"
#include "mmalign/rng.hpp"

namespace mmalign::trainer {

using ad::Tape;
using ad::Var;

std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::ClipDos: return "clip_dos";
        case LossKind::ClipDensity: return "clip_density";
        case LossKind::AllPairs: return "allpairs";
        case LossKind::Anchored: return "anchored";
        case LossKind::TensorClip: return "tensorclip";
        case LossKind::Barlow3d: return "barlow3d";
    }
    throw ConfigError("unknown loss kind");
}

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "clip_dos") return LossKind::ClipDos;
    if (name == "clip_density") return LossKind::ClipDensity;
    if (name == "allpairs") return LossKind::AllPairs;
    if (name == "anchored") return LossKind::Anchored;
    if (name == "tensorclip") return LossKind::TensorClip;
    if (name == "barlow3d") return LossKind::Barlow3d;
    throw ConfigError("unknown loss kind: " + name);
}

std::vector<Modality> required_modalities(LossKind k) {
    switch (k) {
        case LossKind::ClipDos: return {Modality::Crystal, Modality::Dos};
        case LossKind::ClipDensity: return {Modality::Crystal, Modality::Density};
        default: return {Modality::Crystal, Modality::Dos, Modality::Density};
    }
}

void TrainConfig::validate() const {
    if (batch_size < 2)
        throw ConfigError("batch_size must be >= 2 for contrastive losses");
    if (epochs > 0 && epochs <= warmup_epochs)
        throw ConfigError("epochs must exceed warmup_epochs");
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
    if (encoder.embed_dim != d)
        throw ConfigError("encoder.embed_dim must equal d");
    encoder.validate();
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["loss_kind"] = loss_kind_name(loss_kind);
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["peak_lr"] = peak_lr;
    j["weight_decay"] = weight_decay;
    j["warmup_epochs"] = warmup_epochs;
    j["seed"] = seed;
    j["d"] = d;
    j["tau"] = tau;
    j["lambda"] = lambda;
    j["learn_tau"] = learn_tau;
    j["node_feat_dim"] = encoder.node_feat_dim;
    j["grid_size"] = encoder.grid_size;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& s) {
    nlohmann::json j = nlohmann::json::parse(s);
    TrainConfig c;
    c.loss_kind = loss_kind_from_name(j.at("loss_kind").get<std::string>());
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.peak_lr = j.at("peak_lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.warmup_epochs = j.at("warmup_epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.d = j.at("d").get<std::size_t>();
    c.tau = j.at("tau").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.learn_tau = j.at("learn_tau").get<bool>();
    c.encoder.embed_dim = c.d;
    c.encoder.node_feat_dim = j.at("node_feat_dim").get<std::size_t>();
    c.encoder.grid_size = j.at("grid_size").get<std::size_t>();
    return c;
}

TrainConfig preset_config(const std::string& name) {
    TrainConfig c;
    if (name == "desk") return c;
    if (name == "paper-pretrain" || name == "paper-retrieval") {
        c.batch_size = name == "paper-pretrain" ? 360 : 100;
        c.epochs = 500;
        c.peak_lr = 1e-4;
        c.weight_decay = 5e-4;
        c.warmup_epochs = 10;
        c.d = 128;
        c.encoder.embed_dim = 128;
        return c;
    }
    throw ConfigError("unknown preset: " + name);
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
    if (step > total_steps) throw ConfigError("lr_at: step out of range");
    if (total_steps == 0) return 0.0;
    const std::size_t warmup =
        cfg.epochs == 0 ? 0 : total_steps * cfg.warmup_epochs / cfg.epochs;
    if (warmup > 0 && step <= warmup)
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress = static_cast<double>(step - warmup) /
                            static_cast<double>(total_steps - warmup);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void optimizer_step(ParamSet& params, const std::map<std::string, std::vector<double>>& grads,
                    AdamWState& state, double lr, double weight_decay) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (state.m.size() == 0) {
        for (const auto& [name, t] : params) {
            state.m.add(name, t.shape, std::vector<double>(t.values.size(), 0.0));
            state.v.add(name, t.shape, std::vector<double>(t.values.size(), 0.0));
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (auto& [name, t] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const auto& g = it->second;
        if (g.size() != t.values.size())
            throw DimMismatchError("optimizer_step: gradient shape mismatch for " + name);
        auto& m = state.m.at(name).values;
        auto& v = state.v.at(name).values;
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            t.values[i] -= lr * mhat / (std::sqrt(vhat) + eps) +
                           lr * weight_decay * t.values[i];
        }
    }
}

namespace {

constexpr double kGradClipNorm = 5.0;
const double kLogTauMin = std::log(0.01);
const double kLogTauMax = std::log(1.0);

Var encode_record(Tape& t, Modality m, const MaterialRecord& rec, const VarMap& vars,
                  const EncoderConfig& cfg) {
    switch (m) {
        case Modality::Crystal:
            if (!rec.crystal) throw ConfigError("record " + rec.id + " lacks crystal data");
            return encoders::encode_crystal_graph(t, *rec.crystal, vars, cfg);
        case Modality::Dos:
            if (!rec.dos) throw ConfigError("record " + rec.id + " lacks DOS data");
            return encoders::encode_dos_graph(t, *rec.dos, vars, cfg);
        case Modality::Density:
            if (!rec.density) throw ConfigError("record " + rec.id + " lacks density data");
            return encoders::encode_density_graph(t, *rec.density, vars, cfg);
    }
    throw ConfigError("unknown modality");
}

Var encode_batch_graph(Tape& t, Modality m, const std::vector<const MaterialRecord*>& recs,
                       const VarMap& vars, const EncoderConfig& cfg) {
    std::vector<Var> rows;
    rows.reserve(recs.size());
    for (const auto* r : recs) rows.push_back(encode_record(t, m, *r, vars, cfg));
    return t.concat_rows(rows);
}

double clip_gradients(std::map<std::string, std::vector<double>>& grads) {
    double sq = 0.0;
    for (const auto& [k, g] : grads)
        for (double x : g) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > kGradClipNorm) {
        const double s = kGradClipNorm / norm;
        for (auto& [k, g] : grads)
            for (double& x : g) x *= s;
    }
    return norm;
}

EmbeddingBatch batch_from_var(const Tape& t, Var v) {
    EmbeddingBatch e(t.shape(v).rows(), t.shape(v).cols());
    e.data = t.value(v);
    return e;
}

ParamSet init_model_params(const TrainConfig& cfg) {
    ParamSet params;
    const auto mods = required_modalities(cfg.loss_kind);
    for (Modality m : mods) {
        switch (m) {
            case Modality::Crystal:
                params.merge(encoders::init_crystal_params(cfg.encoder, cfg.seed));
                break;
            case Modality::Dos:
                params.merge(encoders::init_dos_params(cfg.encoder, cfg.seed));
                break;
            case Modality::Density:
                params.merge(encoders::init_density_params(cfg.encoder, cfg.seed));
                break;
        }
    }
    if (cfg.loss_kind != LossKind::Barlow3d && cfg.learn_tau)
        params.add("loss.log_tau", ad::Shape{1}, {std::log(cfg.tau)});
    return params;
}

}  // namespace

EmbeddingBatch encode_batch(Modality m, const std::vector<const MaterialRecord*>& records,
                            const ParamSet& params, const EncoderConfig& cfg) {
    Tape t;
    VarMap vars = bind_params(t, params);
    return batch_from_var(t, encode_batch_graph(t, m, records, vars, cfg));
}

Checkpoint pretrain(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    const auto mods = required_modalities(cfg.loss_kind);
    for (Modality m : mods)
        for (const auto& r : data.records)
            if (!r.has(m))
                throw ConfigError("record " + r.id + " lacks required modality: " +
                                  modality_name(m));

    Checkpoint ckpt;
    ckpt.params = init_model_params(cfg);
    ckpt.config_json = cfg.to_json();
    if (cfg.epochs == 0) return ckpt;

    const std::size_t steps_per_epoch = data.size() / cfg.batch_size;
    if (steps_per_epoch == 0)
        throw ConfigError("dataset smaller than one batch");
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;

    AdamWState opt;
    std::size_t global_step = 0;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0xe90c + epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

        double epoch_loss = 0.0;
        double lr = 0.0;
        double top1 = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<const MaterialRecord*> batch;
            batch.reserve(cfg.batch_size);
            for (std::size_t i = 0; i < cfg.batch_size; ++i)
                batch.push_back(&data.records[order[b * cfg.batch_size + i]]);

            ad::LossGraph graph;
            VarMap vars = bind_params(graph, ckpt.params);
            Tape& t = graph.tape();
            std::vector<Var> embs;
            embs.reserve(mods.size());
            for (Modality m : mods)
                embs.push_back(encode_batch_graph(t, m, batch, vars, cfg.encoder));

            Var loss{};
            if (cfg.loss_kind == LossKind::Barlow3d) {
                loss = losses::barlow3d_loss_graph(t, embs[0], embs[1], embs[2], cfg.lambda);
            } else {
                Var inv_tau = cfg.learn_tau
                                  ? t.exp_(t.scale(vars.at("loss.log_tau"), -1.0))
                                  : t.scalar(1.0 / cfg.tau);
                switch (cfg.loss_kind) {
                    case LossKind::ClipDos:
                    case LossKind::ClipDensity:
                        loss = losses::clip_loss_graph(t, embs[0], embs[1], inv_tau);
                        break;
                    case LossKind::AllPairs:
                        loss = losses::allpairs_clip_loss_graph(t, embs, inv_tau);
                        break;
                    case LossKind::Anchored:
                        loss = losses::anchored_clip_loss_graph(
                            t, embs[0], {embs.begin() + 1, embs.end()}, inv_tau);
                        break;
                    case LossKind::TensorClip:
                        loss = losses::tensor_clip_loss_graph(t, embs[0], embs[1], embs[2],
                                                              inv_tau);
                        break;
                    default: throw ConfigError("unexpected loss kind");
                }
            }
            try {
                graph.set_loss(loss);
            } catch (const NonFiniteLossError&) {
                throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) +
                                         " step " + std::to_string(b));
            }

            std::map<std::string, std::vector<double>> grads;
            for (const auto& name : ckpt.params.names()) grads[name] = graph.grad_of(name);
            clip_gradients(grads);

            lr = lr_at(global_step, total_steps, cfg);
            optimizer_step(ckpt.params, grads, opt, lr, cfg.weight_decay);
            if (ckpt.params.has("loss.log_tau")) {
                double& lt = ckpt.params.at("loss.log_tau").values[0];
                lt = std::clamp(lt, kLogTauMin, kLogTauMax);
            }
            ++global_step;
            epoch_loss += graph.loss() / static_cast<double>(cfg.batch_size);

            if (b + 1 == steps_per_epoch)
                top1 = evalkit::topk_retrieval(batch_from_var(t, embs[0]),
                                               batch_from_var(t, embs[1]), 1);
        }
        MetricRow row;
        row.epoch = epoch;
        row.loss = epoch_loss / static_cast<double>(steps_per_epoch);
        row.lr = lr;
        row.top1_retrieval = top1;
        ckpt.history.push_back(row);
        ckpt.epoch = epoch + 1;
    }
    ckpt.opt_m = opt.m;
    ckpt.opt_v = opt.v;
    ckpt.opt_step = opt.t;
    return ckpt;
}

namespace {

double eval_mae(const ParamSet& model, const Dataset& data, const std::string& property,
                const EncoderConfig& cfg) {
    if (data.records.empty()) return 0.0;
    double acc = 0.0;
    Tape t;
    VarMap vars = bind_params(t, model);
    for (const auto& rec : data.records) {
        Var emb = encoders::encode_crystal_graph(t, *rec.crystal, vars, cfg);
        Var pred = t.add_rowvec(t.matmul(emb, vars.at("head.w")), vars.at("head.b"));
        acc += std::fabs(t.value(pred)[0] - rec.properties.at(property));
    }
    return acc / static_cast<double>(data.records.size());
}

}  // namespace

FinetuneResult finetune(const Checkpoint& ckpt, const Dataset& labeled,
                        const std::string& property, const FinetuneConfig& cfg) {
    const TrainConfig pre_cfg = TrainConfig::from_json(ckpt.config_json);
    const EncoderConfig& enc = pre_cfg.encoder;
    for (const auto& rec : labeled.records) {
        if (!rec.crystal)
            throw ConfigError("finetune: record " + rec.id + " lacks crystal data");
        if (!rec.properties.count(property))
            throw ConfigError("finetune: record " + rec.id + " lacks property " + property);
    }
    if (cfg.lr_sweep.empty()) throw ConfigError("finetune: empty lr sweep");

    SplitSpec split_spec;
    split_spec.seed = cfg.seed;
    auto [train, val, test] = synthdata::split_dataset(labeled, split_spec);

    ParamSet init;
    for (const auto& [name, t] : ckpt.params)
        if (name.rfind("crystal.", 0) == 0) init.add(name, t.shape, t.values);
    {
        Rng rng(mix_seed(cfg.seed, 0x4ead));
        init.add_uniform("head.w", ad::Shape{pre_cfg.d, 1}, pre_cfg.d, rng);
        init.add_uniform("head.b", ad::Shape{1}, pre_cfg.d, rng);
    }

    FinetuneResult best;
    best.best_val_mae = std::numeric_limits<double>::infinity();

    for (double peak : cfg.lr_sweep) {
        ParamSet model = init;
        AdamWState opt;
        TrainConfig sched;  // only the schedule fields matter for lr_at
        sched.peak_lr = peak;
        sched.epochs = cfg.epochs;
        sched.warmup_epochs = std::min(cfg.warmup_epochs, cfg.epochs > 0 ? cfg.epochs - 1 : 0);

        const std::size_t n = train.records.size();
        const std::size_t bs = std::min(cfg.batch_size, n);
        const std::size_t steps_per_epoch = (n + bs - 1) / bs;
        const std::size_t total_steps = steps_per_epoch * cfg.epochs;
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::size_t global_step = 0;

        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            Rng shuffle_rng(mix_seed(cfg.seed, 0xf17e + epoch));
            for (std::size_t i = n; i > 1; --i)
                std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
            for (std::size_t off = 0; off < n; off += bs) {
                const std::size_t cur = std::min(bs, n - off);
                std::vector<const MaterialRecord*> batch;
                std::vector<double> y;
                for (std::size_t i = 0; i < cur; ++i) {
                    batch.push_back(&train.records[order[off + i]]);
                    y.push_back(batch.back()->properties.at(property));
                }
                ad::LossGraph graph;
                VarMap vars = bind_params(graph, model);
                Tape& t = graph.tape();
                Var emb = encode_batch_graph(t, Modality::Crystal, batch, vars, enc);
                Var pred = t.add_rowvec(t.matmul(emb, vars.at("head.w")), vars.at("head.b"));
                Var target = t.input(y, ad::Shape{cur, 1});
                Var loss = t.scale(t.sum(t.abs_(t.sub(pred, target))),
                                   1.0 / static_cast<double>(cur));
                graph.set_loss(loss);

                std::map<std::string, std::vector<double>> grads;
                for (const auto& name : model.names()) grads[name] = graph.grad_of(name);
                clip_gradients(grads);
                optimizer_step(model, grads, opt, lr_at(global_step, total_steps, sched),
                               cfg.weight_decay);
                ++global_step;
            }
            const double val_mae = eval_mae(model, val, property, enc);
            if (val_mae < best.best_val_mae) {
                best.best_val_mae = val_mae;
                best.best_lr = peak;
                best.best_epoch = epoch;
                best.model = model;
            }
        }
    }
    best.test_mae = eval_mae(best.model, test, property, enc);
    return best;
}

// ---------- persistence ----------

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}
void write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
}
void write_f64(std::ofstream& f, double v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t read_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
double read_f64(std::ifstream& f) {
    double v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_paramset(std::ofstream& f, const ParamSet& p) {
    write_u32(f, static_cast<std::uint32_t>(p.size()));
    for (const auto& [name, t] : p) {
        write_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(f, static_cast<std::uint32_t>(t.shape.dims.size()));
        for (auto d : t.shape.dims) write_u64(f, d);
        f.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
}

ParamSet read_paramset(std::ifstream& f) {
    ParamSet p;
    const std::uint32_t count = read_u32(f);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const std::uint32_t ndim = read_u32(f);
        ad::Shape shape;
        for (std::uint32_t k = 0; k < ndim; ++k) shape.dims.push_back(read_u64(f));
        std::vector<double> values(shape.numel());
        f.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double)));
        p.add(name, std::move(shape), std::move(values));
    }
    return p;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("MMCK", 4);
    write_u32(f, 1);
    write_u64(f, c.config_json.size());
    f.write(c.config_json.data(), static_cast<std::streamsize>(c.config_json.size()));
    write_u64(f, c.epoch);
    write_u64(f, c.opt_step);
    write_u64(f, c.history.size());
    for (const auto& r : c.history) {
        write_u64(f, r.epoch);
        write_f64(f, r.loss);
        write_f64(f, r.lr);
        write_f64(f, r.top1_retrieval);
    }
    write_paramset(f, c.params);
    write_paramset(f, c.opt_m);
    write_paramset(f, c.opt_v);
    if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MMCK", 4) != 0)
        throw IoError("bad checkpoint magic: " + path);
    if (read_u32(f) != 1) throw IoError("unsupported checkpoint version");
    Checkpoint c;
    const std::uint64_t json_len = read_u64(f);
    c.config_json.resize(json_len);
    f.read(c.config_json.data(), static_cast<std::streamsize>(json_len));
    c.epoch = read_u64(f);
    c.opt_step = read_u64(f);
    const std::uint64_t hist = read_u64(f);
    for (std::uint64_t i = 0; i < hist; ++i) {
        MetricRow r;
        r.epoch = read_u64(f);
        r.loss = read_f64(f);
        r.lr = read_f64(f);
        r.top1_retrieval = read_f64(f);
        c.history.push_back(r);
    }
    c.params = read_paramset(f);
    c.opt_m = read_paramset(f);
    c.opt_v = read_paramset(f);
    if (!f) throw IoError("truncated checkpoint: " + path);
    return c;
}

void write_metrics_csv(const std::vector<MetricRow>& history, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.precision(17);
    f << "epoch,loss,lr,top1_retrieval\n";
    for (const auto& r : history)
        f << r.epoch << "," << r.loss << "," << r.lr << "," << r.top1_retrieval << "\n";
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace mmalign::trainer
