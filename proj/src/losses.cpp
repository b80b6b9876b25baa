#include "mmalign/losses.hpp"

#include <cmath>
#include <string>

namespace mmalign::losses {

using ad::Tape;
using ad::Var;

namespace {

void check_pair(Tape& t, Var a, Var b) {
    const auto& sa = t.shape(a);
    const auto& sb = t.shape(b);
    if (sa.cols() != sb.cols())
        throw DimMismatchError("loss: embedding dims differ");
    if (sa.rows() != sb.rows())
        throw BatchMismatchError("loss: batch sizes differ");
    if (sa.rows() < 2) throw BatchTooSmallError();
}

void check_params(const ClipParams& p) {
    if (!(p.tau > 0.0)) throw ConfigError("tau must be positive");
}

Var batch_var(Tape& t, const EmbeddingBatch& e) {
    return t.input(e.data, ad::Shape{e.n, e.d});
}

}  // namespace

Var clip_loss_graph(Tape& t, Var a, Var b, Var inv_tau) {
    check_pair(t, a, b);
    Var an = t.l2_normalize_rows(a);
    Var bn = t.l2_normalize_rows(b);
    Var logits = t.scale_by(t.matmul(an, t.transpose(bn)), inv_tau);
    // L_{M1,M2} + L_{M2,M1} share the matched-pair diagonal
    Var lse_ab = t.sum(t.logsumexp_rows(logits));
    Var lse_ba = t.sum(t.logsumexp_rows(t.transpose(logits)));
    Var diag = t.diag_sum(logits);
    return t.scale(t.sub(t.add(lse_ab, lse_ba), t.scale(diag, 2.0)), 0.5);
}

Var allpairs_clip_loss_graph(Tape& t, const std::vector<Var>& batches, Var inv_tau) {
    if (batches.size() < 2) throw TooFewModalitiesError();
    Var total{};
    for (auto [i, j] : modality_pairs(batches.size())) {
        Var term = clip_loss_graph(t, batches[i], batches[j], inv_tau);
        total = total.valid() ? t.add(total, term) : term;
    }
    return total;
}

Var anchored_clip_loss_graph(Tape& t, Var anchor, const std::vector<Var>& others,
                             Var inv_tau) {
    if (others.empty()) throw NoOtherModalitiesError();
    Var total{};
    for (Var o : others) {
        Var term = clip_loss_graph(t, anchor, o, inv_tau);
        total = total.valid() ? t.add(total, term) : term;
    }
    return total;
}

Var tensor_clip_loss_graph(Tape& t, Var a, Var b, Var c, Var inv_tau) {
    check_pair(t, a, b);
    check_pair(t, a, c);
    Var an = t.l2_normalize_rows(a);
    Var bn = t.l2_normalize_rows(b);
    Var cn = t.l2_normalize_rows(c);
    Var logits = t.scale_by(t.threeway_dot(an, bn, cn), inv_tau);
    // per-modality infoNCE: the denominator for query i runs over all N^2 (j,k)
    Var diag = t.diag3_sum(logits);
    Var total{};
    for (int axis = 0; axis < 3; ++axis) {
        Var term = t.sub(t.sum(t.lse_over_two_axes(logits, axis)), diag);
        total = total.valid() ? t.add(total, term) : term;
    }
    return t.scale(total, 1.0 / 3.0);
}

Var barlow3d_loss_graph(Tape& t, Var z1, Var z2, Var z3, double lambda) {
    check_pair(t, z1, z2);
    check_pair(t, z1, z3);
    Var n1 = t.l2_normalize_cols(t.mean_center_cols(z1));
    Var n2 = t.l2_normalize_cols(t.mean_center_cols(z2));
    Var n3 = t.l2_normalize_cols(t.mean_center_cols(z3));
    return t.barlow_penalty(t.triple_outer_sum(n1, n2, n3), lambda);
}

double clip_loss(const EmbeddingBatch& a, const EmbeddingBatch& b, const ClipParams& p) {
    check_params(p);
    Tape t;
    return t.scalar_value(
        clip_loss_graph(t, batch_var(t, a), batch_var(t, b), t.scalar(1.0 / p.tau)));
}

double allpairs_clip_loss(const std::vector<EmbeddingBatch>& batches, const ClipParams& p) {
    check_params(p);
    if (batches.size() < 2) throw TooFewModalitiesError();
    Tape t;
    std::vector<Var> vars;
    vars.reserve(batches.size());
    for (const auto& b : batches) vars.push_back(batch_var(t, b));
    return t.scalar_value(allpairs_clip_loss_graph(t, vars, t.scalar(1.0 / p.tau)));
}

double anchored_clip_loss(const EmbeddingBatch& anchor,
                          const std::vector<EmbeddingBatch>& others, const ClipParams& p) {
    check_params(p);
    if (others.empty()) throw NoOtherModalitiesError();
    Tape t;
    Var av = batch_var(t, anchor);
    std::vector<Var> vars;
    vars.reserve(others.size());
    for (const auto& o : others) vars.push_back(batch_var(t, o));
    return t.scalar_value(anchored_clip_loss_graph(t, av, vars, t.scalar(1.0 / p.tau)));
}

double tensor_clip_loss(const EmbeddingBatch& a, const EmbeddingBatch& b,
                        const EmbeddingBatch& c, const ClipParams& p) {
    check_params(p);
    Tape t;
    return t.scalar_value(tensor_clip_loss_graph(t, batch_var(t, a), batch_var(t, b),
                                                 batch_var(t, c), t.scalar(1.0 / p.tau)));
}

CrossCorrTensor cross_correlation_tensor(const EmbeddingBatch& z1, const EmbeddingBatch& z2,
                                         const EmbeddingBatch& z3) {
    if (z1.d != z2.d || z1.d != z3.d)
        throw DimMismatchError("cross_correlation_tensor: dims differ");
    if (z1.n != z2.n || z1.n != z3.n)
        throw BatchMismatchError("cross_correlation_tensor: batch sizes differ");
    Tape t;
    Var n1 = t.l2_normalize_cols(t.mean_center_cols(batch_var(t, z1)));
    Var n2 = t.l2_normalize_cols(t.mean_center_cols(batch_var(t, z2)));
    Var n3 = t.l2_normalize_cols(t.mean_center_cols(batch_var(t, z3)));
    Var c = t.triple_outer_sum(n1, n2, n3);
    CrossCorrTensor out;
    out.d = z1.d;
    out.entries = t.value(c);
    return out;
}

double barlow3d_loss(const EmbeddingBatch& z1, const EmbeddingBatch& z2,
                     const EmbeddingBatch& z3, const BarlowParams& p) {
    if (p.lambda < 0.0) throw ConfigError("lambda must be nonnegative");
    Tape t;
    return t.scalar_value(barlow3d_loss_graph(t, batch_var(t, z1), batch_var(t, z2),
                                              batch_var(t, z3), p.lambda));
}

std::vector<std::pair<std::size_t, std::size_t>> modality_pairs(std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    return pairs;
}

}  // namespace mmalign::losses
