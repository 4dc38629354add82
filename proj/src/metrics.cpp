#include "slam/metrics.hpp"

#include <cmath>

namespace slam {
namespace metrics {

double normalized_chi2(double cost, int m_scalar_rows) {
    if (m_scalar_rows < 1) throw std::invalid_argument("normalized_chi2: need m >= 1");
    return 2.0 * cost / static_cast<double>(m_scalar_rows);
}

Alignment2D kabsch_align_2d(const std::vector<std::pair<double, double>>& est,
                            const std::vector<std::pair<double, double>>& ref) {
    if (est.size() != ref.size() || est.size() < 2)
        throw std::invalid_argument("kabsch_align_2d: need two equal-length clouds");
    const double n = static_cast<double>(est.size());
    double ex = 0, ey = 0, rx = 0, ry = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        ex += est[i].first;
        ey += est[i].second;
        rx += ref[i].first;
        ry += ref[i].second;
    }
    ex /= n; ey /= n; rx /= n; ry /= n;
    // 2x2 cross-covariance reduces to a single angle: the optimal rotation is
    // atan2 of the skew and symmetric parts.
    double sc = 0, ss = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const double ax = est[i].first - ex, ay = est[i].second - ey;
        const double bx = ref[i].first - rx, by = ref[i].second - ry;
        sc += ax * bx + ay * by;
        ss += ax * by - ay * bx;
    }
    Alignment2D out;
    out.rotation = (sc == 0.0 && ss == 0.0) ? 0.0 : std::atan2(ss, sc);
    const double c = std::cos(out.rotation), s = std::sin(out.rotation);
    out.tx = rx - (c * ex - s * ey);
    out.ty = ry - (s * ex + c * ey);
    return out;
}

double ate(const std::vector<Pose2>& est, const std::vector<Pose2>& ref) {
    if (est.size() != ref.size()) throw std::invalid_argument("ate: pose count mismatch");
    std::vector<std::pair<double, double>> pe, pr;
    pe.reserve(est.size());
    pr.reserve(ref.size());
    for (const Pose2& p : est) pe.emplace_back(p.x, p.y);
    for (const Pose2& p : ref) pr.emplace_back(p.x, p.y);
    const Alignment2D a = kabsch_align_2d(pe, pr);
    const double c = std::cos(a.rotation), s = std::sin(a.rotation);
    double sq = 0.0;
    for (std::size_t i = 0; i < pe.size(); ++i) {
        const double dx = pr[i].first - (c * pe[i].first - s * pe[i].second + a.tx);
        const double dy = pr[i].second - (s * pe[i].first + c * pe[i].second + a.ty);
        sq += dx * dx + dy * dy;
    }
    return std::sqrt(sq / static_cast<double>(pe.size()));
}

long long update_flops(const std::vector<int>& S, const std::vector<int>& colcounts,
                       bool pure_addition) {
    long long s = 0, total = 0;
    for (int i : S) {
        const long long k = colcounts.at(i);
        s += k * k;
    }
    for (int k : colcounts) total += static_cast<long long>(k) * k;
    const long long cost = std::min(2 * s, total);
    return pure_addition ? cost / 2 : cost;
}

long long solve_flops(const std::vector<int>& S, const std::vector<int>& colcounts) {
    long long s = 0;
    for (int i : S) s += colcounts.at(i);
    return 2 * s;
}

}  // namespace metrics
}  // namespace slam
