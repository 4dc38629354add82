#include "doctest.h"

#include <cmath>
#include <random>

#include "slam/metrics.hpp"

using namespace slam;
using namespace slam::metrics;

TEST_CASE("normalized_chi2 basic values") {
    CHECK(normalized_chi2(0.0, 5) == 0.0);
    CHECK(normalized_chi2(0.5, 10) == doctest::Approx(0.1));
    CHECK(normalized_chi2(3.0, 4) == doctest::Approx(1.5));
    CHECK_THROWS_AS(normalized_chi2(1.0, 0), std::invalid_argument);
    // monotone in cost for fixed M
    CHECK(normalized_chi2(2.0, 7) > normalized_chi2(1.0, 7));
}

TEST_CASE("kabsch recovers identity and pure translation") {
    std::vector<std::pair<double, double>> ref = {{0, 0}, {1, 0}, {0, 2}, {3, 1}};
    auto a = kabsch_align_2d(ref, ref);
    CHECK(a.rotation == doctest::Approx(0.0));
    CHECK(a.tx == doctest::Approx(0.0));
    CHECK(a.ty == doctest::Approx(0.0));

    std::vector<std::pair<double, double>> est;
    for (auto& p : ref) est.emplace_back(p.first - 1.0, p.second);
    a = kabsch_align_2d(est, ref);
    CHECK(a.rotation == doctest::Approx(0.0));
    CHECK(a.tx == doctest::Approx(1.0));
    CHECK(a.ty == doctest::Approx(0.0));
}

TEST_CASE("kabsch construct-and-recover with random rigid transforms") {
    std::mt19937 rng(0);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::pair<double, double>> est;
        for (int i = 0; i < 30; ++i) est.emplace_back(u(rng), u(rng));
        const double th = u(rng), tx = u(rng), ty = u(rng);
        const double c = std::cos(th), s = std::sin(th);
        std::vector<std::pair<double, double>> ref;
        for (auto& p : est)
            ref.emplace_back(c * p.first - s * p.second + tx, s * p.first + c * p.second + ty);
        const auto a = kabsch_align_2d(est, ref);
        CHECK(normalize_angle(a.rotation - th) == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(a.tx == doctest::Approx(tx).epsilon(1e-9));
        CHECK(a.ty == doctest::Approx(ty).epsilon(1e-9));
        // residual ~ 0
        double res = 0;
        const double ca = std::cos(a.rotation), sa = std::sin(a.rotation);
        for (std::size_t i = 0; i < est.size(); ++i) {
            const double dx = ref[i].first - (ca * est[i].first - sa * est[i].second + a.tx);
            const double dy = ref[i].second - (sa * est[i].first + ca * est[i].second + a.ty);
            res += dx * dx + dy * dy;
        }
        CHECK(res < 1e-12);
    }
}

TEST_CASE("kabsch degenerate cloud: identity rotation, centroid translation") {
    std::vector<std::pair<double, double>> est = {{1, 1}, {1, 1}, {1, 1}};
    std::vector<std::pair<double, double>> ref = {{4, 5}, {4, 5}, {4, 5}};
    const auto a = kabsch_align_2d(est, ref);
    CHECK(a.rotation == 0.0);
    CHECK(a.tx == doctest::Approx(3.0));
    CHECK(a.ty == doctest::Approx(4.0));
}

TEST_CASE("ate zero on identical trajectories and invariant under rigid motion") {
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::vector<Pose2> ref;
    for (int i = 0; i < 40; ++i) ref.emplace_back(u(rng), u(rng), u(rng));
    CHECK(ate(ref, ref) == doctest::Approx(0.0));

    const double th = 0.9, tx = 2.0, ty = -1.0;
    std::vector<Pose2> est;
    for (const Pose2& p : ref)
        est.emplace_back(std::cos(th) * p.x - std::sin(th) * p.y + tx,
                         std::sin(th) * p.x + std::cos(th) * p.y + ty, p.theta);
    CHECK(ate(est, ref) < 1e-9);
}

TEST_CASE("ate single displaced pose approaches 0.5/sqrt(P)") {
    const int P = 4000;
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    std::vector<Pose2> ref;
    for (int i = 0; i < P; ++i) ref.emplace_back(u(rng), u(rng), 0.0);
    std::vector<Pose2> est = ref;
    est[10] = Pose2(ref[10].x + 0.3, ref[10].y + 0.4, 0.0);
    const double got = ate(est, ref);
    CHECK(got == doctest::Approx(0.5 / std::sqrt(static_cast<double>(P))).epsilon(0.02));
}

TEST_CASE("update_flops formula and halving") {
    std::vector<int> colcounts = {3, 5, 7, 9};  // sum sq = 9+25+49+81 = 164
    CHECK(update_flops({}, colcounts, false) == 0);
    CHECK(update_flops({0, 1}, colcounts, false) == 68);    // min(2*34, 164)
    CHECK(update_flops({0, 1}, colcounts, true) == 34);     // halved
    CHECK(update_flops({0, 1, 2, 3}, colcounts, false) == 164);  // ceiling binds
    // ceiling property: never exceeds sum kappa^2
    CHECK(update_flops({0, 1, 2, 3}, colcounts, false) <= 164);
}

TEST_CASE("solve_flops formula") {
    std::vector<int> colcounts = {3, 5, 7};
    CHECK(solve_flops({}, colcounts) == 0);
    CHECK(solve_flops({0, 1}, colcounts) == 16);
    CHECK(solve_flops({0, 1, 2}, colcounts) == 30);  // 2 * nnz(R) when S = all
}

TEST_CASE("FlopTally accumulates and rejects negatives") {
    FlopTally t;
    t.add_update(10);
    t.add_solve(4, 20);
    t.add_update(5);
    CHECK(t.update == 15);
    CHECK(t.solve == 4);
    CHECK(t.solve_full == 20);
    CHECK_THROWS_AS(t.add_update(-1), std::invalid_argument);
}
