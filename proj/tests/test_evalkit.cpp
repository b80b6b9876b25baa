#include <doctest.h>

#include <cmath>

#include "mmalign/evalkit.hpp"
#include "mmalign/rng.hpp"
#include "oracles.hpp"

using namespace mmalign;

namespace {

EmbeddingBatch random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    EmbeddingBatch b(n, d);
    for (double& x : b.data) x = rng.normal();
    return b;
}

DosCurve flat_curve(double level) {
    DosCurve c;
    c.energies = {-10.0, 10.0};
    c.values = {level, level};
    return c;
}

}  // namespace

TEST_CASE("topk_retrieval endpoint cases") {
    auto g = random_batch(8, 4, 1);
    // identical queries: every query's own pair is rank 1 (ties go to lower index,
    // but the pair IS the same vector so rank 1 exactly for i = argmin index)
    CHECK(evalkit::topk_retrieval(g, g, 1) == doctest::Approx(1.0));
    CHECK(evalkit::topk_retrieval(g, g, 8) == doctest::Approx(1.0));

    // adversarial gallery: paired row is the worst match for every query
    EmbeddingBatch q(3, 2), gal(3, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        q.at(i, 0) = 1.0;
        gal.at(i, 0) = (i == 0 ? -1.0 : 1.0);  // row 0 anti-aligned
    }
    // query 0's pair ranks last
    CHECK(evalkit::topk_retrieval(q, gal, 2) == doctest::Approx(2.0 / 3.0));
    CHECK(evalkit::topk_retrieval(q, gal, 3) == doctest::Approx(1.0));
}

TEST_CASE("topk_retrieval matches the loop oracle and is monotone in k") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        auto q = random_batch(12, 5, 10 + seed);
        auto g = random_batch(12, 5, 20 + seed);
        double prev = 0.0;
        for (std::size_t k = 1; k <= 12; ++k) {
            const double acc = evalkit::topk_retrieval(q, g, k);
            CHECK(acc == doctest::Approx(oracles::topk_retrieval(q, g, k)));
            CHECK(acc >= prev);
            prev = acc;
        }
        CHECK(prev == doctest::Approx(1.0));  // k = N retrieves everything
    }
}

TEST_CASE("random-gallery top-k accuracy concentrates near k/N") {
    // With i.i.d. gaussian embeddings the paired row is exchangeable with the
    // rest, so E[top-k] = k/N.
    const std::size_t n = 64, trials = 60;
    for (std::size_t k : {1, 8}) {
        double total = 0.0;
        for (std::uint64_t s = 0; s < trials; ++s)
            total += evalkit::topk_retrieval(random_batch(n, 6, 100 + s),
                                             random_batch(n, 6, 1000 + s), k);
        const double mean = total / trials;
        const double expect = static_cast<double>(k) / static_cast<double>(n);
        CHECK(std::abs(mean - expect) < 0.03);
    }
}

TEST_CASE("topk_retrieval validation") {
    auto q = random_batch(4, 3, 1);
    auto g = random_batch(5, 3, 2);
    CHECK_THROWS_AS(evalkit::topk_retrieval(q, g, 1), BatchMismatchError);
    auto g2 = random_batch(4, 2, 3);
    CHECK_THROWS_AS(evalkit::topk_retrieval(q, g2, 1), DimMismatchError);
    CHECK_THROWS_AS(evalkit::topk_retrieval(q, random_batch(4, 3, 4), 0), ConfigError);
}

TEST_CASE("dos_mae frozen endpoint values") {
    // identical curves: exactly zero
    DosCurve a = flat_curve(2.0);
    CHECK(evalkit::dos_mae(a, a).value == doctest::Approx(0.0));

    // target level h, candidate 2h: |h| / h = 1
    CHECK(evalkit::dos_mae(flat_curve(1.5), flat_curve(3.0)).value == doctest::Approx(1.0));

    // target level h, candidate 1.5h: 0.5
    CHECK(evalkit::dos_mae(flat_curve(2.0), flat_curve(3.0)).value == doctest::Approx(0.5));
}

TEST_CASE("dos_mae uses only the [-5, +5] window, interpolating linearly") {
    // target: flat 1 inside the window but huge outside -> outside ignored
    DosCurve target;
    target.energies = {-20.0, -5.0, 5.0, 20.0};
    target.values = {100.0, 1.0, 1.0, 100.0};
    // interpolation makes the target non-flat near the edges; compare against
    // a candidate that matches it exactly on the window interior
    CHECK(evalkit::dos_mae(target, target).value == doctest::Approx(0.0));

    DosCurve ramp;  // linear from 0 at -5 to 2 at +5; mean height 1
    ramp.energies = {-5.0, 5.0};
    ramp.values = {0.0, 2.0};
    DosCurve flat = flat_curve(1.0);
    // |ramp - 1| integrates to mean 0.5 against mean height 1
    CHECK(evalkit::dos_mae(flat, ramp).value == doctest::Approx(0.5).epsilon(1e-2));

    const auto res = evalkit::dos_mae(flat, ramp, 2001);
    CHECK(res.grid_points == 2001);
    CHECK(res.window_lo == -5.0);
    CHECK(res.window_hi == 5.0);
}

TEST_CASE("dos_mae is symmetric-positive and rejects empty curves") {
    DosCurve empty;
    CHECK_THROWS_AS(evalkit::dos_mae(empty, flat_curve(1.0)), EmptyCurveError);
    CHECK_THROWS_AS(evalkit::dos_mae(flat_curve(1.0), empty), EmptyCurveError);
    Rng rng(3);
    DosCurve a, b;
    for (int i = 0; i < 32; ++i) {
        a.energies.push_back(-8.0 + 0.5 * i);
        b.energies.push_back(-8.0 + 0.5 * i);
        a.values.push_back(rng.uniform());
        b.values.push_back(rng.uniform());
    }
    CHECK(evalkit::dos_mae(a, b).value > 0.0);
}
