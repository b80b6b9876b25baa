// Acceptance harness: one pass/fail line per criterion, exit 0 only when all
// pass. Long-running criteria share one pretraining run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mmalign/autodiff.hpp"
#include "mmalign/encoders.hpp"
#include "mmalign/evalkit.hpp"
#include "mmalign/losses.hpp"
#include "mmalign/rng.hpp"
#include "mmalign/screening.hpp"
#include "mmalign/synthdata.hpp"
#include "mmalign/trainer.hpp"
#include "oracles.hpp"

using namespace mmalign;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail = "") {
    std::printf("criterion %2d [%s] %s%s%s\n", criterion, ok ? "PASS" : "FAIL", name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

EmbeddingBatch random_batch(std::size_t n, std::size_t d, Rng& rng) {
    EmbeddingBatch b(n, d);
    for (double& x : b.data) x = rng.normal();
    return b;
}

bool rel_close(double a, double b, double tol) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) <= tol * scale;
}

Dataset desk_dataset(std::size_t n, std::uint64_t seed0) {
    GeneratorSpec spec;  // defaults: grid 16, 64 tokens
    Dataset d;
    d.records.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        d.records[i] = synthdata::generate_material(seed0 + i, spec);
    return d;
}

// ---------------------------------------------------------------- criterion 1

void criterion1() {
    const auto t0 = Clock::now();
    Rng rng(101);
    bool ok = true;
    std::string detail;
    const double taus[] = {0.07, 0.5, 1.0};
    const double lambdas[] = {0.0, 0.005, 0.1};
    for (int trial = 0; trial < 100 && ok; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(7);   // 2..8
        const std::size_t d = 2 + rng.uniform_index(15);  // 2..16
        const double tau = taus[trial % 3];
        const double lam = lambdas[trial % 3];
        auto a = random_batch(n, d, rng);
        auto b = random_batch(n, d, rng);
        auto c = random_batch(n, d, rng);

        auto check = [&](const char* what, double got, double want) {
            if (!rel_close(got, want, 1e-9)) {
                ok = false;
                detail = std::string(what) + " diverged at trial " + std::to_string(trial);
            }
        };
        check("clip", losses::clip_loss(a, b, {tau}), oracles::clip_loss(a, b, tau));
        check("allpairs", losses::allpairs_clip_loss({a, b, c}, {tau}),
              oracles::allpairs_clip_loss({a, b, c}, tau));
        check("anchored", losses::anchored_clip_loss(a, {b, c}, {tau}),
              oracles::anchored_clip_loss(a, {b, c}, tau));
        check("tensorclip", losses::tensor_clip_loss(a, b, c, {tau}),
              oracles::tensor_clip_loss(a, b, c, tau));
        if (n >= 3)  // centering needs spread; keep the batch honest
            check("barlow3d", losses::barlow3d_loss(a, b, c, {lam}),
                  oracles::barlow3d_loss(a, b, c, lam));
    }
    const double secs = seconds_since(t0);
    if (secs >= 30.0) { ok = false; detail = "runtime " + std::to_string(secs) + " s"; }
    report(1, "loss oracle equivalence (100 random instances, 1e-9)", ok, detail);
}

// ---------------------------------------------------------------- criterion 2

void criterion2() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string detail;
    const double h = 1e-4;
    Rng rng(202);

    // losses w.r.t. embeddings: pack all inputs into one LossGraph parameter each
    using LossFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;
    struct Case { const char* name; std::size_t n_inputs; LossFn fn; };
    const std::vector<Case> cases = {
        {"clip", 2, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return losses::clip_loss_graph(t, v[0], v[1], t.scalar(1.0 / 0.5));
         }},
        {"allpairs", 3, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return losses::allpairs_clip_loss_graph(t, v, t.scalar(1.0 / 0.5));
         }},
        {"anchored", 3, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return losses::anchored_clip_loss_graph(t, v[0], {v[1], v[2]},
                                                     t.scalar(1.0 / 0.5));
         }},
        {"tensorclip", 3, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return losses::tensor_clip_loss_graph(t, v[0], v[1], v[2], t.scalar(1.0 / 0.5));
         }},
        {"barlow3d", 3, [](ad::Tape& t, const std::vector<ad::Var>& v) {
             return losses::barlow3d_loss_graph(t, v[0], v[1], v[2], 0.005);
         }},
    };

    for (const auto& c : cases) {
        for (int trial = 0; trial < 20 && ok; ++trial) {
            const std::size_t n = 3 + rng.uniform_index(3);
            const std::size_t d = 3 + rng.uniform_index(4);
            std::vector<std::vector<double>> inputs(c.n_inputs);
            for (auto& in : inputs) {
                in.resize(n * d);
                for (double& x : in) x = rng.normal();
            }
            auto eval = [&](const std::vector<std::vector<double>>& vals) {
                ad::Tape t;
                std::vector<ad::Var> vars;
                for (const auto& v : vals) vars.push_back(t.input(v, {n, d}));
                return t.scalar_value(c.fn(t, vars));
            };
            ad::Tape t;
            std::vector<ad::Var> vars;
            for (const auto& v : inputs) vars.push_back(t.input(v, {n, d}));
            t.backward(c.fn(t, vars));
            // probe a handful of coordinates per input
            for (std::size_t vi = 0; vi < c.n_inputs && ok; ++vi) {
                const auto& grad = t.grad(vars[vi]);
                for (std::size_t idx : {std::size_t{0}, n * d / 2, n * d - 1}) {
                    auto bumped = inputs;
                    bumped[vi][idx] += h;
                    const double up = eval(bumped);
                    bumped[vi][idx] -= 2 * h;
                    const double dn = eval(bumped);
                    const double fd = (up - dn) / (2 * h);
                    if (!rel_close(grad[idx], fd, 1e-4)) {
                        ok = false;
                        detail = std::string(c.name) + " grad mismatch trial " +
                                 std::to_string(trial);
                        break;
                    }
                }
            }
        }
    }

    // encoders w.r.t. parameters (tolerance 1e-3)
    EncoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.grid_size = 4;
    GeneratorSpec gspec;
    gspec.grid_size = 4;
    gspec.token_count = 12;

    struct EncCase {
        const char* name;
        ParamSet params;
        std::function<ad::Var(ad::Tape&, const MaterialRecord&, const VarMap&)> enc;
    };
    std::vector<EncCase> encs;
    encs.push_back({"crystal", encoders::init_crystal_params(cfg, 7),
                    [&](ad::Tape& t, const MaterialRecord& r, const VarMap& vm) {
                        return encoders::encode_crystal_graph(t, *r.crystal, vm, cfg);
                    }});
    encs.push_back({"dos", encoders::init_dos_params(cfg, 7),
                    [&](ad::Tape& t, const MaterialRecord& r, const VarMap& vm) {
                        return encoders::encode_dos_graph(t, *r.dos, vm, cfg);
                    }});
    encs.push_back({"density", encoders::init_density_params(cfg, 7),
                    [&](ad::Tape& t, const MaterialRecord& r, const VarMap& vm) {
                        return encoders::encode_density_graph(t, *r.density, vm, cfg);
                    }});

    for (const auto& e : encs) {
        for (int trial = 0; trial < 20 && ok; ++trial) {
            const auto rec = synthdata::generate_material(4000 + trial, gspec);
            ad::LossGraph g;
            VarMap vm = bind_params(g, e.params);
            ad::Var emb = e.enc(g.tape(), rec, vm);
            g.set_loss(g.tape().sum(g.tape().mul(emb, emb)));
            // one representative coordinate of one rotating tensor per trial
            const auto names = e.params.names();
            const std::string pname = names[trial % names.size()];
            const auto& grad = g.grad_of(pname);
            const std::size_t idx = grad.size() / 2;
            auto bump = [&](double delta) {
                ParamSet p2 = e.params;
                p2.at(pname).values[idx] += delta;
                ad::Tape t;
                VarMap vm2 = bind_params(t, p2);
                ad::Var e2 = e.enc(t, rec, vm2);
                return t.scalar_value(t.sum(t.mul(e2, e2)));
            };
            const double fd = (bump(h) - bump(-h)) / (2 * h);
            if (!rel_close(grad[idx], fd, 1e-3)) {
                ok = false;
                detail = std::string(e.name) + "." + pname + " grad mismatch";
            }
        }
    }

    const double secs = seconds_since(t0);
    if (secs >= 120.0) { ok = false; detail = "runtime " + std::to_string(secs) + " s"; }
    report(2, "gradients match finite differences (losses 1e-4, encoders 1e-3)", ok, detail);
}

// ---------------------------------------------------------------- criterion 3

void criterion3() {
    EmbeddingBatch b(2, 2);
    b.at(0, 0) = 1.0;
    b.at(1, 1) = 1.0;
    EmbeddingBatch z(3, 1);
    z.at(0, 0) = 2.0;
    z.at(1, 0) = -1.0;
    z.at(2, 0) = -1.0;

    const double clip = losses::clip_loss(b, b, {1.0});
    const double tclip = losses::tensor_clip_loss(b, b, b, {1.0});
    const double barlow = losses::barlow3d_loss(z, z, z, {0.005});
    // exact closed forms: 2(ln(e+1)-1), 2(ln(e+3)-1), (1 - 6/6^1.5)^2
    const bool ok = std::abs(clip - 0.626523) < 1e-6 && std::abs(tclip - 1.487337) < 1e-6 &&
                    std::abs(barlow - 0.350170) < 1e-6;
    char detail[160];
    std::snprintf(detail, sizeof detail, "clip=%.6f tensor=%.6f barlow=%.6f", clip, tclip,
                  barlow);
    report(3, "closed-form checkpoint values", ok, detail);
}

// ---------------------------------------------------------------- criterion 4

void criterion4() {
    bool ok = true;
    std::string detail;
    for (std::size_t n = 2; n <= 5; ++n) {
        if (losses::modality_pairs(n).size() != (n * n - n) / 2) {
            ok = false;
            detail = "pair count wrong at n=" + std::to_string(n);
        }
    }
    // additivity witnesses the term counts: every pair/anchor term is one
    // clip loss, so totals must equal the explicit sums
    Rng rng(404);
    for (std::size_t n = 2; n <= 5 && ok; ++n) {
        std::vector<EmbeddingBatch> mods;
        for (std::size_t i = 0; i < n; ++i) mods.push_back(random_batch(4, 3, rng));
        double pair_sum = 0.0;
        for (auto [i, j] : losses::modality_pairs(n))
            pair_sum += losses::clip_loss(mods[i], mods[j], {0.5});
        if (!rel_close(losses::allpairs_clip_loss(mods, {0.5}), pair_sum, 1e-12)) {
            ok = false;
            detail = "allpairs total != sum of (n^2-n)/2 pair terms";
        }
        double anchor_sum = 0.0;
        std::vector<EmbeddingBatch> others(mods.begin() + 1, mods.end());
        for (const auto& o : others) anchor_sum += losses::clip_loss(mods[0], o, {0.5});
        if (!rel_close(losses::anchored_clip_loss(mods[0], others, {0.5}), anchor_sum,
                       1e-12)) {
            ok = false;
            detail = "anchored total != sum of n-1 anchor terms";
        }
    }
    // TensorCLIP denominator: N^2 terms per query. Instrumented oracle: count
    // the (j,k) pairs explicitly and confirm the loss tracks that count.
    if (ok) {
        Rng rng2(405);
        const std::size_t n = 4;
        auto a = random_batch(n, 3, rng2), b = random_batch(n, 3, rng2),
             c = random_batch(n, 3, rng2);
        auto t = sim_tensor(a, b, c);
        double total = 0.0;
        std::size_t terms_per_query = 0;
        for (int axis = 0; axis < 3; ++axis)
            for (std::size_t i = 0; i < n; ++i) {
                double den = 0.0;
                std::size_t count = 0;
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t k = 0; k < n; ++k) {
                        const double s = axis == 0   ? t.at(i, j, k)
                                         : axis == 1 ? t.at(j, i, k)
                                                     : t.at(j, k, i);
                        den += std::exp(s / 0.5);
                        ++count;
                    }
                terms_per_query = count;
                total += -std::log(std::exp(t.at(i, i, i) / 0.5) / den);
            }
        total /= 3.0;
        if (terms_per_query != n * n) { ok = false; detail = "denominator term count"; }
        if (!rel_close(total, losses::tensor_clip_loss(a, b, c, {0.5}), 1e-12)) {
            ok = false;
            detail = "instrumented tensorclip oracle disagrees";
        }
    }
    report(4, "structural term counts ((n^2-n)/2, n-1, N^2)", ok, detail);
}

// ---------------------------------------------------------------- criterion 5

void criterion5() {
    bool ok = true;
    std::string detail;
    Rng rng(505);
    const std::size_t n = 5, d = 4;
    auto a = random_batch(n, d, rng), b = random_batch(n, d, rng), c = random_batch(n, d, rng);

    std::vector<std::size_t> perm{3, 1, 4, 0, 2};
    auto permute = [&](const EmbeddingBatch& x) {
        EmbeddingBatch out(n, d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(perm[i], j);
        return out;
    };
    auto pa = permute(a), pb = permute(b), pc = permute(c);

    auto expect = [&](const char* what, double got, double want, double tol) {
        if (!rel_close(got, want, tol)) {
            ok = false;
            detail = what;
        }
    };

    // joint row permutation, 1e-12
    expect("clip perm", losses::clip_loss(pa, pb, {0.5}), losses::clip_loss(a, b, {0.5}),
           1e-12);
    expect("allpairs perm", losses::allpairs_clip_loss({pa, pb, pc}, {0.5}),
           losses::allpairs_clip_loss({a, b, c}, {0.5}), 1e-12);
    expect("anchored perm", losses::anchored_clip_loss(pa, {pb, pc}, {0.5}),
           losses::anchored_clip_loss(a, {b, c}, {0.5}), 1e-12);
    expect("tensorclip perm", losses::tensor_clip_loss(pa, pb, pc, {0.5}),
           losses::tensor_clip_loss(a, b, c, {0.5}), 1e-12);
    expect("barlow perm", losses::barlow3d_loss(pa, pb, pc, {0.005}),
           losses::barlow3d_loss(a, b, c, {0.005}), 1e-12);

    // argument permutation, 1e-12
    const auto u = a.row_vec(0), v = b.row_vec(0), w = c.row_vec(0);
    expect("threeway arg perm", threeway_sim(u, v, w), threeway_sim(w, u, v), 1e-12);
    expect("tensorclip arg perm", losses::tensor_clip_loss(a, b, c, {0.5}),
           losses::tensor_clip_loss(c, a, b, {0.5}), 1e-12);

    // per-row positive rescaling of CLIP-family inputs, 1e-9
    auto rescale_rows = [&](const EmbeddingBatch& x) {
        EmbeddingBatch out = x;
        for (std::size_t i = 0; i < n; ++i) {
            const double s = 0.3 + 2.0 * rng.uniform();
            for (std::size_t j = 0; j < d; ++j) out.at(i, j) *= s;
        }
        return out;
    };
    expect("clip rescale", losses::clip_loss(rescale_rows(a), b, {0.5}),
           losses::clip_loss(a, b, {0.5}), 1e-9);
    expect("anchored rescale",
           losses::anchored_clip_loss(rescale_rows(a), {rescale_rows(b), c}, {0.5}),
           losses::anchored_clip_loss(a, {b, c}, {0.5}), 1e-9);
    expect("tensorclip rescale",
           losses::tensor_clip_loss(rescale_rows(a), b, rescale_rows(c), {0.5}),
           losses::tensor_clip_loss(a, b, c, {0.5}), 1e-9);

    // per-column positive rescaling of barlow3d inputs, 1e-9
    auto rescale_cols = [&](const EmbeddingBatch& x) {
        EmbeddingBatch out = x;
        for (std::size_t j = 0; j < d; ++j) {
            const double s = 0.3 + 2.0 * rng.uniform();
            for (std::size_t i = 0; i < n; ++i) out.at(i, j) *= s;
        }
        return out;
    };
    expect("barlow col rescale",
           losses::barlow3d_loss(rescale_cols(a), rescale_cols(b), c, {0.005}),
           losses::barlow3d_loss(a, b, c, {0.005}), 1e-9);

    // encoder invariances, 1e-6
    EncoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.grid_size = 4;
    GeneratorSpec gspec;
    gspec.grid_size = 4;
    gspec.token_count = 16;
    const auto rec = synthdata::generate_material(999, gspec);

    {
        const auto params = encoders::init_crystal_params(cfg, 21);
        const auto& g = *rec.crystal;
        std::vector<std::size_t> np(g.num_nodes);
        for (std::size_t i = 0; i < g.num_nodes; ++i) np[i] = (i + 2) % g.num_nodes;
        CrystalGraph pg;
        pg.num_nodes = g.num_nodes;
        pg.feat_dim = g.feat_dim;
        pg.node_features.resize(g.node_features.size());
        for (std::size_t i = 0; i < g.num_nodes; ++i)
            for (std::size_t f = 0; f < g.feat_dim; ++f)
                pg.node_features[np[i] * g.feat_dim + f] = g.node_features[i * g.feat_dim + f];
        for (auto e : g.edges) {
            e.src = np[e.src];
            e.dst = np[e.dst];
            pg.edges.push_back(e);
        }
        const auto e1 = encoders::encode_crystal(g, params, cfg);
        const auto e2 = encoders::encode_crystal(pg, params, cfg);
        for (std::size_t i = 0; i < e1.size(); ++i)
            if (std::abs(e1[i] - e2[i]) > 1e-6) { ok = false; detail = "crystal node perm"; }
    }
    {
        const auto params = encoders::init_dos_params(cfg, 22);
        DosCurve shuffled = *rec.dos;
        Rng srng(77);
        for (std::size_t i = shuffled.energies.size(); i > 1; --i) {
            const std::size_t j = srng.uniform_index(i);
            std::swap(shuffled.energies[i - 1], shuffled.energies[j]);
            std::swap(shuffled.values[i - 1], shuffled.values[j]);
        }
        const auto e1 = encoders::encode_dos(*rec.dos, params, cfg);
        const auto e2 = encoders::encode_dos(shuffled, params, cfg);
        for (std::size_t i = 0; i < e1.size(); ++i)
            if (std::abs(e1[i] - e2[i]) > 1e-6) { ok = false; detail = "dos token perm"; }
    }

    report(5, "invariance suite (permutation / rescaling)", ok, detail);
}

// --------------------------------------------------- criteria 6 and 7 share a run

struct DeskRun {
    trainer::Checkpoint ckpt;
    Dataset train, heldout;
    double runtime_s = 0.0;
};

DeskRun desk_pretrain() {
    const auto t0 = Clock::now();
    DeskRun out;
    Dataset all = desk_dataset(2200, 50000);
    out.train.records.assign(all.records.begin(), all.records.begin() + 2000);
    out.heldout.records.assign(all.records.begin() + 2000, all.records.end());

    trainer::TrainConfig cfg;
    cfg.loss_kind = trainer::LossKind::Anchored;
    cfg.batch_size = 32;
    cfg.epochs = 100;
    cfg.warmup_epochs = 10;
    cfg.d = 32;
    cfg.encoder.embed_dim = 32;
    cfg.peak_lr = 1e-3;
    cfg.weight_decay = 5e-4;
    cfg.seed = 1;
    out.ckpt = trainer::pretrain(cfg, out.train);
    out.runtime_s = seconds_since(t0);
    return out;
}

void criterion6(const DeskRun& run) {
    bool ok = true;
    std::string detail;
    const auto& hist = run.ckpt.history;
    if (hist.empty() || hist.back().loss >= hist.front().loss) {
        ok = false;
        detail = "loss did not decrease";
    }

    const auto cfg = trainer::TrainConfig::from_json(run.ckpt.config_json);
    std::vector<const MaterialRecord*> ptrs;
    for (const auto& r : run.heldout.records) ptrs.push_back(&r);
    auto ec = trainer::encode_batch(Modality::Crystal, ptrs, run.ckpt.params, cfg.encoder);
    auto ed = trainer::encode_batch(Modality::Dos, ptrs, run.ckpt.params, cfg.encoder);
    const double c2d = evalkit::topk_retrieval(ec, ed, 5);
    const double d2c = evalkit::topk_retrieval(ed, ec, 5);
    const double top5 = 0.5 * (c2d + d2c);  // both directions averaged
    if (top5 < 0.25) ok = false;
    if (run.runtime_s >= 900.0) ok = false;

    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "loss %.4f -> %.4f, held-out top-5 %.1f%% (c->d %.1f%%, d->c %.1f%%), %"
                  ".0f s",
                  hist.empty() ? 0.0 : hist.front().loss,
                  hist.empty() ? 0.0 : hist.back().loss, 100 * top5, 100 * c2d, 100 * d2c,
                  run.runtime_s);
    report(6, "desk-scale alignment run (2000 materials, 100 epochs)", ok,
           detail.empty() ? buf : detail);
}

void criterion7(const DeskRun& run) {
    bool ok = true;
    std::string detail;
    const auto cfg = trainer::TrainConfig::from_json(run.ckpt.config_json);
    auto idx = screening::build_index(run.train, run.ckpt.params, cfg.encoder);
    std::map<std::string, const DosCurve*> dos_by_id;
    for (const auto& r : run.train.records) dos_by_id[r.id] = &*r.dos;
    screening::DosLookup lookup = [&](const std::string& id) -> const DosCurve& {
        return *dos_by_id.at(id);
    };
    const std::size_t ns[] = {1, 5, 10, 50};
    for (const auto& target : run.heldout.records) {
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t n : ns) {
            const auto res = screening::best_of_n(idx, *target.dos, lookup, run.ckpt.params,
                                                  cfg.encoder, n, target.id);
            if (res.best_mae > prev) {  // exact, no tolerance
                ok = false;
                detail = "non-monotone at " + target.id + " n=" + std::to_string(n);
            }
            prev = res.best_mae;
        }
        if (!ok) break;
    }
    report(7, "best-of-n screening MAE nonincreasing in n (exact)", ok, detail);
}

// ---------------------------------------------------------------- criterion 8

void criterion8(const DeskRun& run) {
    const auto t0 = Clock::now();
    bool ok = true;
    Dataset labeled;
    labeled.records.assign(run.train.records.begin(), run.train.records.begin() + 1000);

    const auto cfg = trainer::TrainConfig::from_json(run.ckpt.config_json);
    double pre_sum = 0.0, scratch_sum = 0.0;
    for (std::uint64_t seed : {11, 12, 13}) {
        trainer::FinetuneConfig fcfg;
        fcfg.seed = seed;
        auto pre = trainer::finetune(run.ckpt, labeled, "gap", fcfg);
        pre_sum += pre.test_mae;

        trainer::Checkpoint scratch = run.ckpt;  // same config, fresh crystal weights
        ParamSet fresh = encoders::init_crystal_params(cfg.encoder, mix_seed(seed, 0x5c4a));
        for (auto& [name, t] : scratch.params)
            if (fresh.has(name)) t.values = fresh.at(name).values;
        auto sc = trainer::finetune(scratch, labeled, "gap", fcfg);
        scratch_sum += sc.test_mae;
    }
    const double pre_mae = pre_sum / 3.0, scratch_mae = scratch_sum / 3.0;
    if (!(pre_mae <= scratch_mae)) ok = false;
    const double secs = seconds_since(t0);
    if (secs >= 1800.0) ok = false;

    char buf[160];
    std::snprintf(buf, sizeof buf, "pretrained MAE %.4f vs scratch %.4f (3 seeds, %.0f s)",
                  pre_mae, scratch_mae, secs);
    report(8, "pretraining does not hurt property prediction", ok, buf);
}

// ---------------------------------------------------------------- criterion 9

void criterion9() {
    bool ok = true;
    std::string detail;
    const fs::path dir = fs::temp_directory_path() / "mmalign_acceptance_9";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string{std::istreambuf_iterator<char>(f),
                           std::istreambuf_iterator<char>()};
    };

    // byte-identical dataset reruns
    GeneratorSpec gspec;
    gspec.grid_size = 4;
    gspec.token_count = 16;
    for (int round = 0; round < 2; ++round) {
        Dataset d;
        for (std::size_t i = 0; i < 30; ++i)
            d.records.push_back(synthdata::generate_material(600 + i, gspec));
        fs::create_directories(dir / ("gen" + std::to_string(round)));
        synthdata::save_dataset(d,
                                (dir / ("gen" + std::to_string(round)) / "d.jsonl").string());
    }
    if (slurp(dir / "gen0/d.jsonl") != slurp(dir / "gen1/d.jsonl")) {
        ok = false;
        detail = "dataset rerun not byte-identical";
    }

    // byte-identical pretrain reruns (checkpoint + metrics)
    trainer::TrainConfig cfg;
    cfg.loss_kind = trainer::LossKind::ClipDos;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.warmup_epochs = 1;
    cfg.d = 8;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.grid_size = 4;
    cfg.seed = 5;
    auto data = synthdata::load_dataset((dir / "gen0/d.jsonl").string());
    for (int round = 0; round < 2; ++round) {
        auto ckpt = trainer::pretrain(cfg, data);
        trainer::save_checkpoint(ckpt,
                                 (dir / ("c" + std::to_string(round) + ".mmck")).string());
        trainer::write_metrics_csv(ckpt.history,
                                   (dir / ("m" + std::to_string(round) + ".csv")).string());
    }
    if (slurp(dir / "c0.mmck") != slurp(dir / "c1.mmck")) {
        ok = false;
        detail = "checkpoint rerun not byte-identical";
    }
    if (slurp(dir / "m0.csv") != slurp(dir / "m1.csv")) {
        ok = false;
        detail = "metrics rerun not byte-identical";
    }

    // checkpoint round-trip equality
    auto back = trainer::load_checkpoint((dir / "c0.mmck").string());
    trainer::save_checkpoint(back, (dir / "c0b.mmck").string());
    if (slurp(dir / "c0.mmck") != slurp(dir / "c0b.mmck")) {
        ok = false;
        detail = "checkpoint round-trip changed bytes";
    }

    // index round-trip + query_nearest vs exhaustive sort on M = 1000
    Rng rng(909);
    screening::EmbeddingIndex idx;
    const std::size_t m = 1000, dd = 8;
    idx.matrix = EmbeddingBatch(m, dd);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> v(dd);
        for (double& x : v) x = rng.normal();
        v = l2_normalize(v);
        std::copy(v.begin(), v.end(), idx.matrix.row(i));
        idx.ids.push_back("r" + std::to_string(i));
    }
    screening::save_index(idx, (dir / "i.mmix").string());
    auto idx2 = screening::load_index((dir / "i.mmix").string());
    screening::save_index(idx2, (dir / "i2.mmix").string());
    if (slurp(dir / "i.mmix") != slurp(dir / "i2.mmix")) {
        ok = false;
        detail = "index round-trip changed bytes";
    }

    for (int q = 0; q < 20 && ok; ++q) {
        std::vector<double> target(dd);
        for (double& x : target) x = rng.normal();
        const std::size_t n = 1 + rng.uniform_index(20);
        auto got = screening::query_nearest(idx2, target, n);
        auto tu = l2_normalize(target);
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t i = 0; i < m; ++i)
            scored.push_back({cosine_sim(tu, idx2.matrix.row_vec(i)), i});
        std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return x.second < y.second;
        });
        for (std::size_t i = 0; i < n; ++i)
            if (got[i].first != idx2.ids[scored[i].second]) {
                ok = false;
                detail = "query_nearest diverged from exhaustive sort";
            }
    }

    fs::remove_all(dir);
    report(9, "determinism and container round-trips", ok, detail);
}

// --------------------------------------------------------------- criterion 10

void criterion10() {
    bool ok = true;
    std::string detail;
    auto flat = [](double level) {
        DosCurve c;
        c.energies = {-10.0, 10.0};
        c.values = {level, level};
        return c;
    };
    if (std::abs(evalkit::dos_mae(flat(2.0), flat(2.0)).value - 0.0) > 1e-9) {
        ok = false;
        detail = "identity case";
    }
    if (std::abs(evalkit::dos_mae(flat(1.5), flat(3.0)).value - 1.0) > 1e-9) {
        ok = false;
        detail = "double case";
    }
    if (std::abs(evalkit::dos_mae(flat(2.0), flat(3.0)).value - 0.5) > 1e-9) {
        ok = false;
        detail = "1.5x case";
    }

    // grid-refinement stability on a rough random pair
    Rng rng(1010);
    DosCurve a, b;
    for (int i = 0; i < 48; ++i) {
        a.energies.push_back(-8.0 + i / 3.0);
        b.energies.push_back(-8.0 + i / 3.0);
        a.values.push_back(0.05 + rng.uniform());
        b.values.push_back(0.05 + rng.uniform());
    }
    const double coarse = evalkit::dos_mae(a, b, 501).value;
    const double fine = evalkit::dos_mae(a, b, 5001).value;
    if (std::abs(coarse - fine) > 1e-3) {
        ok = false;
        detail = "grid refinement moved the value by more than 1e-3";
    }
    report(10, "dos_mae closed-form and refinement contract", ok, detail);
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();

    const DeskRun run = desk_pretrain();
    criterion6(run);
    criterion7(run);
    criterion8(run);

    criterion9();
    criterion10();

    std::printf("%s (%d/10 criteria passed)\n", failures == 0 ? "ALL PASS" : "FAILURES",
                10 - failures);
    return failures == 0 ? 0 : 1;
}
