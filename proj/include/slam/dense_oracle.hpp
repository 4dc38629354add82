#pragma once

// Dense oracles and random graph generators used by the unit tests and the
// `validate` CLI command. All oracles are deliberately independent of the
// sparse implementation: dense O(n^3) textbook algorithms on materialized
// matrices.

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "slam/factors.hpp"
#include "slam/graph.hpp"
#include "slam/sparse.hpp"

namespace slam {
namespace oracle {

using Dense = std::vector<std::vector<double>>;

inline Dense zeros(int r, int c) { return Dense(r, std::vector<double>(c, 0.0)); }

inline Dense identity(int n) {
    Dense a = zeros(n, n);
    for (int i = 0; i < n; ++i) a[i][i] = 1.0;
    return a;
}

inline Dense dense_of(const slam::sparse::SparseMatrix& m) {
    Dense a = zeros(m.nrows, m.ncols);
    for (int c = 0; c < m.ncols; ++c)
        for (int p = m.colptr[c]; p < m.colptr[c + 1]; ++p) a[m.rowind[p]][c] += m.values[p];
    return a;
}

inline double frob(const Dense& a) {
    double s = 0.0;
    for (const auto& row : a)
        for (double v : row) s += v * v;
    return std::sqrt(s);
}

inline Dense sub(const Dense& a, const Dense& b) {
    Dense c = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) c[i][j] -= b[i][j];
    return c;
}

inline Dense matmul(const Dense& a, const Dense& b) {
    const int n = static_cast<int>(a.size());
    const int k = static_cast<int>(b.size());
    const int m = static_cast<int>(b[0].size());
    Dense c = zeros(n, m);
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < k; ++l) {
            const double v = a[i][l];
            if (v == 0.0) continue;
            for (int j = 0; j < m; ++j) c[i][j] += v * b[l][j];
        }
    return c;
}

inline Dense transpose(const Dense& a) {
    Dense t = zeros(static_cast<int>(a[0].size()), static_cast<int>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
    return t;
}

// Dense upper Cholesky, U^T U = A.
inline Dense dense_chol_upper(const Dense& a) {
    const int n = static_cast<int>(a.size());
    Dense u = zeros(n, n);
    for (int j = 0; j < n; ++j) {
        double d = a[j][j];
        for (int k = 0; k < j; ++k) d -= u[k][j] * u[k][j];
        if (!(d > 0.0)) throw std::runtime_error("dense_chol_upper: not SPD");
        u[j][j] = std::sqrt(d);
        for (int i = j + 1; i < n; ++i) {
            double s = a[j][i];
            for (int k = 0; k < j; ++k) s -= u[k][j] * u[k][i];
            u[j][i] = s / u[j][j];
        }
    }
    return u;
}

// Solve A d = b for SPD A via dense Cholesky.
inline std::vector<double> dense_solve_spd(const Dense& a, const std::vector<double>& b) {
    const Dense u = dense_chol_upper(a);
    const int n = static_cast<int>(b.size());
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= u[k][i] * y[k];
        y[i] = s / u[i][i];
    }
    std::vector<double> d(n);
    for (int i = n - 1; i >= 0; --i) {
        double s = y[i];
        for (int k = i + 1; k < n; ++k) s -= u[i][k] * d[k];
        d[i] = s / u[i][i];
    }
    return d;
}

inline slam::Mat3 random_info3(std::mt19937& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    slam::Mat3 a{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a[i][j] = nd(rng);
    slam::Mat3 m{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = (i == j) ? 4.0 : 0.0;
            for (int k = 0; k < 3; ++k) s += a[k][i] * a[k][j];
            m[i][j] = s;
        }
    return m;
}

// Random connected pose graph: odometry chain with anchor on pose 0 plus
// random loop closures; measurements consistent with perturbed poses so the
// problem is well-posed but non-trivial.
inline slam::Graph make_random_graph(std::mt19937& rng, int nposes, int nloops) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ang(-0.6, 0.6);
    slam::Graph g;
    slam::Pose2 cur(0, 0, 0);
    g.add_node(cur);
    std::vector<slam::Pose2> truth{cur};
    for (int i = 1; i < nposes; ++i) {
        const slam::Pose2 step(1.0 + 0.1 * nd(rng), 0.1 * nd(rng), ang(rng));
        cur = slam::compose(cur, step);
        truth.push_back(cur);
        // initial estimate slightly perturbed from the truth
        g.add_node(slam::Pose2(cur.x + 0.05 * nd(rng), cur.y + 0.05 * nd(rng),
                               cur.theta + 0.02 * nd(rng)));
    }
    slam::Mat3 anchor_info{};
    for (int i = 0; i < 3; ++i) anchor_info[i][i] = 1e6;
    g.add_edge(slam::Edge::anchor_prior(0, slam::Pose2(0, 0, 0), anchor_info));
    for (int i = 1; i < nposes; ++i) {
        const slam::Pose2 z = slam::between(truth[i - 1], truth[i]);
        g.add_edge(slam::Edge::relative_pose(i - 1, i, z, random_info3(rng)));
    }
    std::uniform_int_distribution<int> pick(0, nposes - 1);
    for (int l = 0; l < nloops; ++l) {
        int a = pick(rng), b = pick(rng);
        if (a == b) continue;
        const slam::Pose2 z = slam::between(truth[a], truth[b]);
        g.add_edge(slam::Edge::relative_pose(a, b, z, random_info3(rng)));
    }
    return g;
}

inline std::vector<double> state_of(const slam::Graph& g) {
    std::vector<double> x(g.num_vars());
    for (int i = 0; i < g.num_nodes(); ++i) {
        x[3 * i] = g.nodes[i].x;
        x[3 * i + 1] = g.nodes[i].y;
        x[3 * i + 2] = g.nodes[i].theta;
    }
    return x;
}

inline std::vector<slam::LinearizedFactor> linearize_all(const slam::Graph& g,
                                                         const std::vector<double>& x) {
    std::vector<slam::LinearizedFactor> facs;
    for (int j = 0; j < g.num_edges(); ++j) facs.push_back(slam::linearize_edge(g, x, j));
    return facs;
}

// Assemble H = sum J^T J and b = sum J^T r from linearized factors.
inline std::pair<slam::sparse::SparseMatrix, std::vector<double>> assemble_H_b(
    int nvars, const std::vector<slam::LinearizedFactor>& facs) {
    std::vector<int> ri, ci;
    std::vector<double> vv;
    std::vector<double> b(nvars, 0.0);
    for (const auto& f : facs) {
        for (int ba = 0; ba < f.n_nodes; ++ba)
            for (int bb = 0; bb < f.n_nodes; ++bb)
                for (int a = 0; a < 3; ++a)
                    for (int c = 0; c < 3; ++c) {
                        double s = 0.0;
                        for (int r = 0; r < f.n_rows; ++r) s += f.jac[ba][r][a] * f.jac[bb][r][c];
                        if (s != 0.0) {
                            ri.push_back(3 * f.nodes[ba] + a);
                            ci.push_back(3 * f.nodes[bb] + c);
                            vv.push_back(s);
                        }
                    }
        for (int ba = 0; ba < f.n_nodes; ++ba)
            for (int a = 0; a < 3; ++a) {
                double s = 0.0;
                for (int r = 0; r < f.n_rows; ++r) s += f.jac[ba][r][a] * f.resid[r];
                b[3 * f.nodes[ba] + a] += s;
            }
    }
    return {slam::sparse::SparseMatrix::from_triplets(nvars, nvars, ri, ci, vv), b};
}

// Dense evaluation of the partial-solve equations with explicit block
// extraction from the factor's own R: R_UU^T y_U = b_U, then
// (R_SS^T R_SS) d_S = b_S - R_US^T y_U, with d = 0 on U.
inline std::vector<double> dense_partial_oracle(const slam::sparse::CholeskyFactor& f,
                                                const std::vector<double>& b,
                                                const std::vector<int>& S) {
    const int n = f.n;
    const Dense R = dense_of(f.R());
    std::vector<char> in_s(n, 0);
    for (int v : S) in_s[f.perm[v]] = 1;
    std::vector<int> Up, Sp;
    for (int j = 0; j < n; ++j) (in_s[j] ? Sp : Up).push_back(j);
    const int nu = static_cast<int>(Up.size()), ns = static_cast<int>(Sp.size());
    // y_U: forward solve with R_UU^T
    std::vector<double> yu(nu, 0.0);
    for (int a = 0; a < nu; ++a) {
        double s = b[f.iperm[Up[a]]];
        for (int k = 0; k < a; ++k) s -= R[Up[k]][Up[a]] * yu[k];
        yu[a] = s / R[Up[a]][Up[a]];
    }
    // rhs = b_S - R_US^T y_U
    std::vector<double> rhs(ns);
    for (int a = 0; a < ns; ++a) {
        double s = b[f.iperm[Sp[a]]];
        for (int k = 0; k < nu; ++k) s -= R[Up[k]][Sp[a]] * yu[k];
        rhs[a] = s;
    }
    // (R_SS^T R_SS) d_S = rhs via two triangular solves
    std::vector<double> t(ns);
    for (int a = 0; a < ns; ++a) {
        double s = rhs[a];
        for (int k = 0; k < a; ++k) s -= R[Sp[k]][Sp[a]] * t[k];
        t[a] = s / R[Sp[a]][Sp[a]];
    }
    std::vector<double> ds(ns);
    for (int a = ns - 1; a >= 0; --a) {
        double s = t[a];
        for (int k = a + 1; k < ns; ++k) s -= R[Sp[a]][Sp[k]] * ds[k];
        ds[a] = s / R[Sp[a]][Sp[a]];
    }
    std::vector<double> d(n, 0.0);
    for (int a = 0; a < ns; ++a) d[f.iperm[Sp[a]]] = ds[a];
    return d;
}

}  // namespace oracle
}  // namespace slam
