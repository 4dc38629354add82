#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "slam/pose2.hpp"

namespace slam {
namespace metrics {

// FLOP model accumulators (model counts, not hardware counters).
struct FlopTally {
    long long update = 0;
    long long solve = 0;
    long long solve_full = 0;  // full-solve-equivalent cost, 2*nnz(R) per solve

    void add_update(long long f) {
        if (f < 0) throw std::invalid_argument("FlopTally: negative count");
        update += f;
    }
    void add_solve(long long f, long long full_equiv) {
        if (f < 0 || full_equiv < 0) throw std::invalid_argument("FlopTally: negative count");
        solve += f;
        solve_full += full_equiv;
    }
};

// Rigid 2D alignment: ref ~= R(rotation) * est + translation.
struct Alignment2D {
    double rotation = 0.0;
    double tx = 0.0;
    double ty = 0.0;
};

// Nchi2 = 2 c(x) / M for M scalar measurement rows.
double normalized_chi2(double cost, int m_scalar_rows);

// Least-squares rigid alignment (rotation + translation, no reflection)
// minimizing sum ||ref_p - T(est_p)||^2. Coincident clouds degrade gracefully
// to identity rotation + centroid translation.
Alignment2D kabsch_align_2d(const std::vector<std::pair<double, double>>& est,
                            const std::vector<std::pair<double, double>>& ref);

// RMSE of positions after optimal rigid alignment (theta excluded).
double ate(const std::vector<Pose2>& est, const std::vector<Pose2>& ref);

// min(2 sum_{i in S} kappa_i^2, sum_i kappa_i^2); halved for pure additions
// (no downdate pass). S holds indices into colcounts.
long long update_flops(const std::vector<int>& S, const std::vector<int>& colcounts,
                       bool pure_addition);

// 2 sum_{i in S} kappa_i.
long long solve_flops(const std::vector<int>& S, const std::vector<int>& colcounts);

}  // namespace metrics
}  // namespace slam
