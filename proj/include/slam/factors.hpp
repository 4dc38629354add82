#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "slam/graph.hpp"
#include "slam/pose2.hpp"

namespace slam {

// Whitened linearization of one edge: per-node 3-column Jacobian blocks and
// the whitened residual, with rows = W * (raw Jacobian), resid = W * (raw
// residual), where W is the upper Cholesky square root of the edge
// information matrix (W^T W = info).
struct LinearizedFactor {
    int edge_index = -1;
    int n_rows = 0;                                        // 2 (position prior) or 3
    int n_nodes = 0;                                       // 1 (unary) or 2
    std::array<NodeId, 2> nodes{{-1, -1}};
    std::array<std::array<std::array<double, 3>, 3>, 2> jac{};  // [node][row][col]
    std::array<double, 3> resid{};
};

namespace detail {

// Upper Cholesky of a small SPD matrix: returns U with U^T U = A.
template <int N>
std::array<std::array<double, N>, N> cholesky_upper(const std::array<std::array<double, N>, N>& a) {
    // Symmetry check (1e-12 scaled) and SPD check via the factorization itself.
    double scale = 0.0;
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) scale = std::max(scale, std::abs(a[i][j]));
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j)
            if (std::abs(a[i][j] - a[j][i]) > 1e-12 * std::max(1.0, scale))
                throw std::invalid_argument("info matrix not symmetric");

    std::array<std::array<double, N>, N> u{};
    for (int j = 0; j < N; ++j) {
        double d = a[j][j];
        for (int k = 0; k < j; ++k) d -= u[k][j] * u[k][j];
        if (!(d > 0.0)) throw std::invalid_argument("info matrix not positive definite");
        u[j][j] = std::sqrt(d);
        for (int i = j + 1; i < N; ++i) {
            double s = a[j][i];
            for (int k = 0; k < j; ++k) s -= u[k][j] * u[k][i];
            u[j][i] = s / u[j][j];
        }
    }
    return u;
}

}  // namespace detail

// Linearize a relative-pose edge at (xi, xj).
// Residual convention r = prediction (-) measurement, in the measurement
// frame; the GN update is x <- x - d.
inline LinearizedFactor linearize_relpose(const Pose2& xi, const Pose2& xj, const Edge& edge) {
    if (edge.kind != EdgeKind::RelativePose2)
        throw std::invalid_argument("linearize_relpose: wrong edge kind");

    const double c1 = std::cos(xi.theta), s1 = std::sin(xi.theta);
    const double cz = std::cos(edge.meas.theta), sz = std::sin(edge.meas.theta);
    const double dx = xj.x - xi.x, dy = xj.y - xi.y;

    // Predicted relative translation in frame i, then error in measurement frame.
    const double px = c1 * dx + s1 * dy - edge.meas.x;
    const double py = -s1 * dx + c1 * dy - edge.meas.y;
    double raw_r[3];
    raw_r[0] = cz * px + sz * py;
    raw_r[1] = -sz * px + cz * py;
    raw_r[2] = normalize_angle(xj.theta - xi.theta - edge.meas.theta);

    // Raw Jacobian blocks A = d r / d xi, B = d r / d xj.
    const double q1[2][3] = {{-c1, -s1, (xi.x - xj.x) * s1 + (xj.y - xi.y) * c1},
                             {s1, -c1, (xi.x - xj.x) * c1 + (xi.y - xj.y) * s1}};
    const double q2[2][3] = {{c1, s1, 0.0}, {-s1, c1, 0.0}};
    double A[3][3], B[3][3];
    for (int c = 0; c < 3; ++c) {
        A[0][c] = cz * q1[0][c] + sz * q1[1][c];
        A[1][c] = -sz * q1[0][c] + cz * q1[1][c];
        B[0][c] = cz * q2[0][c] + sz * q2[1][c];
        B[1][c] = -sz * q2[0][c] + cz * q2[1][c];
    }
    A[2][0] = 0.0; A[2][1] = 0.0; A[2][2] = -1.0;
    B[2][0] = 0.0; B[2][1] = 0.0; B[2][2] = 1.0;

    const auto W = detail::cholesky_upper<3>(edge.info3);

    LinearizedFactor f;
    f.n_rows = 3;
    f.n_nodes = 2;
    f.nodes = {edge.from, edge.to};
    for (int r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (int k = r; k < 3; ++k) acc += W[r][k] * raw_r[k];
        f.resid[r] = acc;
        for (int c = 0; c < 3; ++c) {
            double ja = 0.0, jb = 0.0;
            for (int k = r; k < 3; ++k) {
                ja += W[r][k] * A[k][c];
                jb += W[r][k] * B[k][c];
            }
            f.jac[0][r][c] = ja;
            f.jac[1][r][c] = jb;
        }
    }
    return f;
}

// Linearize a position or anchor prior at x.
inline LinearizedFactor linearize_prior(const Pose2& x, const Edge& edge) {
    LinearizedFactor f;
    f.n_nodes = 1;
    f.nodes = {edge.from, -1};
    if (edge.kind == EdgeKind::PositionPrior2) {
        const auto W = detail::cholesky_upper<2>(edge.info2);
        const double raw_r[2] = {x.x - edge.prior_x, x.y - edge.prior_y};
        f.n_rows = 2;
        // Raw Jacobian is the selector [I2 | 0].
        for (int r = 0; r < 2; ++r) {
            double acc = 0.0;
            for (int k = r; k < 2; ++k) acc += W[r][k] * raw_r[k];
            f.resid[r] = acc;
            for (int c = 0; c < 3; ++c) f.jac[0][r][c] = (c < 2) ? W[r][c] : 0.0;
        }
        // W is upper triangular: row r has entries at columns >= r only.
        f.jac[0][0][0] = W[0][0];
        f.jac[0][0][1] = W[0][1];
        f.jac[0][1][0] = 0.0;
        f.jac[0][1][1] = W[1][1];
    } else if (edge.kind == EdgeKind::AnchorPrior2) {
        const auto W = detail::cholesky_upper<3>(edge.info3);
        const double raw_r[3] = {x.x - edge.meas.x, x.y - edge.meas.y,
                                 normalize_angle(x.theta - edge.meas.theta)};
        f.n_rows = 3;
        for (int r = 0; r < 3; ++r) {
            double acc = 0.0;
            for (int k = r; k < 3; ++k) acc += W[r][k] * raw_r[k];
            f.resid[r] = acc;
            for (int c = 0; c < 3; ++c) f.jac[0][r][c] = (c >= r) ? W[r][c] : 0.0;
        }
    } else {
        throw std::invalid_argument("linearize_prior: wrong edge kind");
    }
    return f;
}

inline LinearizedFactor linearize_edge(const Graph& g, const std::vector<double>& x, int edge_index) {
    const Edge& e = g.edges[edge_index];
    auto pose_at = [&x](NodeId n) {
        return Pose2(x[3 * n], x[3 * n + 1], x[3 * n + 2]);
    };
    LinearizedFactor f = e.kind == EdgeKind::RelativePose2
                             ? linearize_relpose(pose_at(e.from), pose_at(e.to), e)
                             : linearize_prior(pose_at(e.from), e);
    f.edge_index = edge_index;
    return f;
}

// c(x) = 1/2 sum_j || whitened residual_j ||^2 over all edges.
inline double total_cost(const Graph& g, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != g.num_vars())
        throw std::invalid_argument("total_cost: estimate dimension mismatch");
    double c = 0.0;
    for (int j = 0; j < g.num_edges(); ++j) {
        const LinearizedFactor f = linearize_edge(g, x, j);
        for (int r = 0; r < f.n_rows; ++r) c += 0.5 * f.resid[r] * f.resid[r];
    }
    return c;
}

// Number of scalar measurement rows, excluding anchor priors (gauge fixing is
// not a measurement).
inline int measurement_rows(const Graph& g) {
    int m = 0;
    for (const Edge& e : g.edges)
        if (e.kind != EdgeKind::AnchorPrior2) m += e.rows();
    return m;
}

// Cost restricted to measurement edges (anchor priors excluded), matching
// measurement_rows for normalized chi-squared reporting.
inline double measurement_cost(const Graph& g, const std::vector<double>& x) {
    double c = 0.0;
    for (int j = 0; j < g.num_edges(); ++j) {
        if (g.edges[j].kind == EdgeKind::AnchorPrior2) continue;
        const LinearizedFactor f = linearize_edge(g, x, j);
        for (int r = 0; r < f.n_rows; ++r) c += 0.5 * f.resid[r] * f.resid[r];
    }
    return c;
}

}  // namespace slam
