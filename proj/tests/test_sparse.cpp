#include "doctest.h"

#include <random>
#include <set>

#include "slam/sparse.hpp"
#include "test_support.hpp"

using namespace slam;
using namespace slam::sparse;
using namespace testsup;

namespace {

double rel_frob_err(const Dense& got, const Dense& want) {
    const double denom = std::max(frob(want), 1e-300);
    return frob(sub(got, want)) / denom;
}

// R^T R, permuted back to variable coordinates.
Dense reconstruct(const CholeskyFactor& f) {
    const Dense R = dense_of(f.R());
    const Dense RtR = matmul(transpose(R), R);
    Dense H = zeros(f.n, f.n);
    for (int i = 0; i < f.n; ++i)
        for (int j = 0; j < f.n; ++j) H[f.iperm[i]][f.iperm[j]] = RtR[i][j];
    return H;
}

std::vector<int> identity_perm(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    return p;
}

SparseMatrix sparse_of_dense(const Dense& a) {
    std::vector<int> ri, ci;
    std::vector<double> vv;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j)
            if (a[i][j] != 0.0) {
                ri.push_back(static_cast<int>(i));
                ci.push_back(static_cast<int>(j));
                vv.push_back(a[i][j]);
            }
    return SparseMatrix::from_triplets(static_cast<int>(a.size()),
                                       static_cast<int>(a[0].size()), ri, ci, vv);
}

}  // namespace

TEST_CASE("SparseMatrix canonicalize sums duplicates and drops zeros") {
    auto m = SparseMatrix::from_triplets(3, 3, {0, 0, 1, 2, 2}, {0, 0, 1, 2, 2},
                                         {1.0, 2.0, 5.0, 3.0, -3.0});
    CHECK(m.nnz() == 2);
    CHECK(m.at(0, 0) == doctest::Approx(3.0));
    CHECK(m.at(1, 1) == doctest::Approx(5.0));
    CHECK(m.at(2, 2) == 0.0);
    CHECK(m.at(1, 0) == 0.0);
}

TEST_CASE("amd_order returns a bijection") {
    std::mt19937 rng(1);
    Graph g = make_random_graph(rng, 12, 5);
    auto [H, b] = assemble_H_b(g.num_vars(), linearize_all(g, state_of(g)));
    auto perm = amd_order(H, {});
    std::set<int> seen(perm.begin(), perm.end());
    CHECK(static_cast<int>(seen.size()) == g.num_vars());
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == g.num_vars() - 1);
}

TEST_CASE("amd_order on a chain yields zero fill beyond tridiagonal") {
    const int n = 20;
    std::vector<int> ri, ci;
    std::vector<double> vv;
    for (int i = 0; i < n; ++i) {
        ri.push_back(i); ci.push_back(i); vv.push_back(4.0);
        if (i + 1 < n) {
            ri.push_back(i); ci.push_back(i + 1); vv.push_back(1.0);
            ri.push_back(i + 1); ci.push_back(i); vv.push_back(1.0);
        }
    }
    auto H = SparseMatrix::from_triplets(n, n, ri, ci, vv);
    auto perm = amd_order(H, {});
    auto f = factorize(H, perm);
    CHECK(f.nnz() == 2 * n - 1);
}

TEST_CASE("amd_order places constrained variables last") {
    std::mt19937 rng(2);
    Graph g = make_random_graph(rng, 10, 4);
    const int n = g.num_vars();
    auto [H, b] = assemble_H_b(n, linearize_all(g, state_of(g)));
    std::vector<int> last = {n - 3, n - 2, n - 1};
    auto perm = amd_order(H, last);
    for (int v : last) CHECK(perm[v] >= n - 3);
}

TEST_CASE("factorize identity gives identity factor") {
    auto H = sparse_of_dense(identity(5));
    auto f = factorize(H, identity_perm(5));
    for (int i = 0; i < 5; ++i) {
        CHECK(f.diag(i) == doctest::Approx(1.0));
        CHECK(f.colcounts()[i] == 1);
    }
}

TEST_CASE("factorize worked 2x2 example") {
    auto H = sparse_of_dense({{4.0, 2.0}, {2.0, 3.0}});
    auto f = factorize(H, identity_perm(2));
    const Dense R = dense_of(f.R());
    CHECK(R[0][0] == doctest::Approx(2.0));
    CHECK(R[0][1] == doctest::Approx(1.0));
    CHECK(R[1][0] == 0.0);
    CHECK(R[1][1] == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("factorize reconstructs random pose-graph H to 1e-9") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        Graph g = make_random_graph(rng, 10, 6);
        auto [H, b] = assemble_H_b(g.num_vars(), linearize_all(g, state_of(g)));
        auto perm = amd_order(H, {});
        auto f = factorize(H, perm);
        CHECK(rel_frob_err(reconstruct(f), dense_of(H)) < 1e-9);
        // etree and colcounts populated
        CHECK(static_cast<int>(f.etree().size()) == g.num_vars());
        long long nnz = 0;
        for (int c : f.colcounts()) nnz += c;
        CHECK(nnz == f.nnz());
    }
}

TEST_CASE("factorize rejects a rank-deficient system") {
    std::mt19937 rng(4);
    Graph g = make_random_graph(rng, 6, 2);
    // drop the anchor: gauge freedom makes H singular
    Graph g2;
    for (const auto& nd : g.nodes) g2.add_node(nd);
    for (const auto& e : g.edges)
        if (e.kind != EdgeKind::AnchorPrior2) g2.add_edge(e);
    auto [H, b] = assemble_H_b(g2.num_vars(), linearize_all(g2, state_of(g2)));
    CHECK_THROWS_AS(factorize(H, identity_perm(g2.num_vars())), NotPositiveDefinite);
}

TEST_CASE("rank_update single-entry example") {
    auto f = factorize(sparse_of_dense(identity(3)), identity_perm(3));
    SparseVector w;
    w.idx = {0};
    w.val = {1.0};
    rank_update(f, w, +1);
    CHECK(f.diag(f.perm[0]) == doctest::Approx(std::sqrt(2.0)));
    CHECK(f.diag(f.perm[1]) == doctest::Approx(1.0));
    CHECK(f.diag(f.perm[2]) == doctest::Approx(1.0));
}

TEST_CASE("rank_update then downdate restores the factor") {
    std::mt19937 rng(5);
    Graph g = make_random_graph(rng, 8, 4);
    auto [H, b] = assemble_H_b(g.num_vars(), linearize_all(g, state_of(g)));
    auto f = factorize(H, amd_order(H, {}));
    const Dense before = reconstruct(f);
    SparseVector w;
    w.idx = {2, 7, 11};
    w.val = {1.5, -0.5, 2.0};
    rank_update(f, w, +1);
    rank_update(f, w, -1);
    CHECK(rel_frob_err(reconstruct(f), before) < 1e-9);
}

TEST_CASE("rank_update matches factorize of the updated matrix") {
    std::mt19937 rng(6);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        Graph g = make_random_graph(rng, 9, 5);
        const int n = g.num_vars();
        auto [H, b] = assemble_H_b(n, linearize_all(g, state_of(g)));
        auto f = factorize(H, amd_order(H, {}));
        Dense Hd = dense_of(H);
        SparseVector w;
        std::uniform_int_distribution<int> pick(0, n - 1);
        std::set<int> idx;
        while (idx.size() < 5) idx.insert(pick(rng));
        for (int v : idx) {
            w.idx.push_back(v);
            w.val.push_back(nd(rng));
        }
        rank_update(f, w, +1);
        for (std::size_t a = 0; a < w.idx.size(); ++a)
            for (std::size_t c = 0; c < w.idx.size(); ++c)
                Hd[w.idx[a]][w.idx[c]] += w.val[a] * w.val[c];
        CHECK(rel_frob_err(reconstruct(f), Hd) < 1e-9);
        // only etree-reachable columns change: spot-check reconstruction again
        // after a second disjoint update
    }
}

TEST_CASE("rank_update downdate failure raises DowndateBreaksSPD") {
    auto f = factorize(sparse_of_dense(identity(2)), identity_perm(2));
    SparseVector w;
    w.idx = {0};
    w.val = {1.0};  // I - e0 e0^T is singular
    CHECK_THROWS_AS(rank_update(f, w, -1), DowndateBreaksSPD);
}

TEST_CASE("add_rows with empty facs is a no-op") {
    auto f = factorize(sparse_of_dense(identity(3)), identity_perm(3));
    std::vector<double> b(3, 1.0);
    const Dense before = reconstruct(f);
    add_rows(f, b, {});
    CHECK(rel_frob_err(reconstruct(f), before) == 0.0);
    CHECK(b[0] == 1.0);
}

TEST_CASE("add_rows of an anchor prior onto an empty factor gives R = W") {
    Mat3 info{};
    info[0][0] = 4.0; info[1][1] = 9.0; info[2][2] = 16.0;
    info[0][1] = info[1][0] = 1.0;
    Graph g;
    g.add_node(Pose2(0.3, -0.2, 0.1));
    g.add_edge(Edge::anchor_prior(0, Pose2(0, 0, 0), info));
    auto facs = linearize_all(g, state_of(g));
    auto f = CholeskyFactor::empty(3);
    std::vector<double> b(3, 0.0);
    add_rows(f, b, facs);
    // R^T R must equal J^T J = W^T W = info (J = W here)
    Dense want = {{4.0, 1.0, 0.0}, {1.0, 9.0, 0.0}, {0.0, 0.0, 16.0}};
    CHECK(rel_frob_err(reconstruct(f), want) < 1e-9);
    // b = J^T r
    auto [H, bref] = assemble_H_b(3, facs);
    for (int i = 0; i < 3; ++i) CHECK(b[i] == doctest::Approx(bref[i]).epsilon(1e-12));
}

TEST_CASE("10-pose chain built row-by-row matches batch factorize") {
    std::mt19937 rng(7);
    Graph g = make_random_graph(rng, 10, 0);
    auto x = state_of(g);
    auto facs = linearize_all(g, x);
    auto f = CholeskyFactor::empty(g.num_vars());
    std::vector<double> b(g.num_vars(), 0.0);
    for (const auto& fac : facs) add_rows(f, b, {fac});
    auto [H, bref] = assemble_H_b(g.num_vars(), facs);
    CHECK(rel_frob_err(reconstruct(f), dense_of(H)) < 1e-9);
    for (int i = 0; i < g.num_vars(); ++i)
        CHECK(b[i] == doctest::Approx(bref[i]).epsilon(1e-9));
}

TEST_CASE("remove_rows inverts add_rows and matches the reduced system") {
    std::mt19937 rng(8);
    Graph g = make_random_graph(rng, 5, 1);
    auto x = state_of(g);
    auto facs = linearize_all(g, x);
    auto [H, bref] = assemble_H_b(g.num_vars(), facs);
    auto perm = amd_order(H, {});
    auto f = factorize(H, perm);
    std::vector<double> b = bref;

    // remove the last loop-closure edge, compare against scratch
    const LinearizedFactor victim = facs.back();
    remove_rows(f, b, {victim});
    std::vector<LinearizedFactor> reduced(facs.begin(), facs.end() - 1);
    auto [H2, b2] = assemble_H_b(g.num_vars(), reduced);
    CHECK(rel_frob_err(reconstruct(f), dense_of(H2)) < 1e-9);
    for (int i = 0; i < g.num_vars(); ++i) CHECK(b[i] == doctest::Approx(b2[i]).epsilon(1e-9));

    // re-add: original factor recovered
    add_rows(f, b, {victim});
    CHECK(rel_frob_err(reconstruct(f), dense_of(H)) < 1e-9);
}

TEST_CASE("remove_rows that breaks rank raises") {
    // single pose held only by its anchor; removing the anchor leaves H = 0
    Mat3 info{};
    for (int i = 0; i < 3; ++i) info[i][i] = 1.0;
    Graph g;
    g.add_node(Pose2(0, 0, 0));
    g.add_edge(Edge::anchor_prior(0, Pose2(0, 0, 0), info));
    auto facs = linearize_all(g, state_of(g));
    auto [H, bref] = assemble_H_b(3, facs);
    auto f = factorize(H, identity_perm(3));
    std::vector<double> b = bref;
    // the intermediate factor after dropping the first row is already rank
    // deficient, so the downdate pivot fails
    CHECK_THROWS_AS(remove_rows(f, b, facs), DowndateBreaksSPD);
}

TEST_CASE("full_solve examples and random oracle") {
    // R = I
    auto fi = factorize(sparse_of_dense(identity(4)), identity_perm(4));
    std::vector<double> b = {1, -2, 3, 0.5};
    auto d = full_solve(fi, b);
    for (int i = 0; i < 4; ++i) CHECK(d[i] == doctest::Approx(b[i]));

    // worked 2x2: H = [[4,2],[2,3]], b = (2,3) -> d = (0,1)
    auto f2 = factorize(sparse_of_dense({{4.0, 2.0}, {2.0, 3.0}}), identity_perm(2));
    auto d2 = full_solve(f2, {2.0, 3.0});
    CHECK(d2[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d2[1] == doctest::Approx(1.0).epsilon(1e-12));

    std::mt19937 rng(9);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        Graph g = make_random_graph(rng, 10, 5);
        const int n = g.num_vars();
        auto [H, bref] = assemble_H_b(n, linearize_all(g, state_of(g)));
        auto f = factorize(H, amd_order(H, {}));
        std::vector<double> rhs(n);
        for (double& v : rhs) v = nd(rng);
        auto got = full_solve(f, rhs);
        auto want = dense_solve_spd(dense_of(H), rhs);
        double num = 0, den = 0;
        for (int i = 0; i < n; ++i) {
            num += (got[i] - want[i]) * (got[i] - want[i]);
            den += want[i] * want[i];
        }
        CHECK(std::sqrt(num / den) < 1e-9);
    }
}

TEST_CASE("partial_solve with S = all equals full_solve") {
    std::mt19937 rng(10);
    std::normal_distribution<double> nd(0.0, 1.0);
    Graph g = make_random_graph(rng, 10, 4);
    const int n = g.num_vars();
    auto [H, bref] = assemble_H_b(n, linearize_all(g, state_of(g)));
    auto f = factorize(H, amd_order(H, {}));
    std::vector<double> rhs(n);
    for (double& v : rhs) v = nd(rng);
    std::vector<int> S(n);
    for (int i = 0; i < n; ++i) S[i] = i;
    StaticBlockCache cache;
    auto dp = partial_solve(f, rhs, S, cache);
    auto df = full_solve(f, rhs);
    double scale = 0.0;
    for (double v : df) scale = std::max(scale, std::abs(v));
    for (int i = 0; i < n; ++i) CHECK(std::abs(dp[i] - df[i]) <= 1e-12 * std::max(1.0, scale));
}

TEST_CASE("partial_solve single trailing variable equals the full-solve component") {
    // 3-variable SPD system, S = {2}. The last ordered position is its own
    // elimination-tree reach, so the partial solve must equal the d_2
    // component of the unrestricted full solve.
    Dense Hd = {{4.0, 1.0, 0.5}, {1.0, 3.0, 0.2}, {0.5, 0.2, 2.0}};
    std::vector<double> b = {1.0, -2.0, 0.7};
    auto f = factorize(sparse_of_dense(Hd), identity_perm(3));
    StaticBlockCache cache;
    auto d = partial_solve(f, b, {2}, cache);
    const auto dfull = dense_solve_spd(Hd, b);
    CHECK(d[2] == doctest::Approx(dfull[2]).epsilon(1e-12));
    CHECK(d[0] == 0.0);
    CHECK(d[1] == 0.0);
    // and it matches the dense block-extraction oracle bit for bit in intent
    const auto want = dense_partial_oracle(f, b, {2});
    CHECK(d[2] == doctest::Approx(want[2]).epsilon(1e-12));
}

TEST_CASE("partial_solve matches the dense block-extraction oracle") {
    std::mt19937 rng(11);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        Graph g = make_random_graph(rng, 10, 5);
        const int n = g.num_vars();
        auto [H, bref] = assemble_H_b(n, linearize_all(g, state_of(g)));
        auto f = factorize(H, amd_order(H, {}));
        std::vector<double> rhs(n);
        for (double& v : rhs) v = nd(rng);
        // random block-closed S of 3 nodes
        std::uniform_int_distribution<int> pick(0, g.num_nodes() - 1);
        std::set<int> nodes;
        while (nodes.size() < 3) nodes.insert(pick(rng));
        std::vector<int> S;
        for (int nd2 : nodes)
            for (int c = 0; c < 3; ++c) S.push_back(3 * nd2 + c);
        StaticBlockCache cache;
        auto got = partial_solve(f, rhs, S, cache);
        auto want = dense_partial_oracle(f, rhs, S);
        double scale = 0.0;
        for (double v : want) scale = std::max(scale, std::abs(v));
        for (int i = 0; i < n; ++i)
            CHECK(std::abs(got[i] - want[i]) <= 1e-9 * std::max(1.0, scale));
        // second identical call exercises the cache path
        auto again = partial_solve(f, rhs, S, cache);
        for (int i = 0; i < n; ++i) CHECK(again[i] == got[i]);
    }
}

TEST_CASE("partial_solve on a reach-closed set equals the restricted full solve") {
    std::mt19937 rng(12);
    std::normal_distribution<double> nd(0.0, 1.0);
    Graph g = make_random_graph(rng, 15, 6);
    const int n = g.num_vars();
    auto [H, bref] = assemble_H_b(n, linearize_all(g, state_of(g)));
    auto f = factorize(H, amd_order(H, {}));
    std::vector<double> rhs(n);
    for (double& v : rhs) v = nd(rng);
    auto closed = reach_closure(f, {0, 1, 2, 30, 31, 32});
    StaticBlockCache cache;
    auto dp = partial_solve(f, rhs, closed, cache);
    auto df = full_solve(f, rhs);
    double scale = 0.0;
    for (double v : df) scale = std::max(scale, std::abs(v));
    for (int v : closed) CHECK(std::abs(dp[v] - df[v]) <= 1e-9 * std::max(1.0, scale));
}

TEST_CASE("logdet_diag examples and permutation invariance") {
    auto fi = factorize(sparse_of_dense(identity(6)), identity_perm(6));
    CHECK(logdet_diag(fi) == doctest::Approx(0.0));

    auto f2 = factorize(sparse_of_dense({{4.0, 0.0}, {0.0, 4.0}}), identity_perm(2));
    CHECK(logdet_diag(f2) == doctest::Approx(2.0 * std::log(2.0)));

    std::mt19937 rng(13);
    Graph g = make_random_graph(rng, 10, 4);
    const int n = g.num_vars();
    auto [H, bref] = assemble_H_b(n, linearize_all(g, state_of(g)));
    auto fa = factorize(H, identity_perm(n));
    auto fb = factorize(H, amd_order(H, {}));
    CHECK(logdet_diag(fa) == doctest::Approx(logdet_diag(fb)).epsilon(1e-9));
    // against dense: eta = sum ln diag of dense upper Cholesky
    const Dense U = dense_chol_upper(dense_of(H));
    double eta = 0.0;
    for (int i = 0; i < n; ++i) eta += std::log(U[i][i]);
    CHECK(logdet_diag(fa) == doctest::Approx(eta).epsilon(1e-9));
}

TEST_CASE("factor survives long random add/remove/rank_update sequences") {
    std::mt19937 rng(14);
    std::normal_distribution<double> nd(0.0, 1.0);
    Graph g = make_random_graph(rng, 50, 20);
    auto x = state_of(g);
    auto facs = linearize_all(g, x);
    auto [H, bref] = assemble_H_b(g.num_vars(), facs);
    auto f = factorize(H, amd_order(H, {}));
    std::vector<double> b = bref;

    std::vector<LinearizedFactor> current = facs;
    std::uniform_int_distribution<int> pickEdge(1, g.num_edges() - 1);  // keep the anchor
    for (int step = 0; step < 40; ++step) {
        const int e = pickEdge(rng);
        // relinearize edge e at a perturbed state
        auto xp = x;
        for (double& v : xp) v += 0.01 * nd(rng);
        LinearizedFactor fresh = linearize_edge(g, xp, e);
        remove_rows(f, b, {current[e]});
        add_rows(f, b, {fresh});
        current[e] = fresh;
    }
    auto [H2, b2] = assemble_H_b(g.num_vars(), current);
    CHECK(rel_frob_err(reconstruct(f), dense_of(H2)) < 1e-9);
    for (int i = 0; i < g.num_vars(); ++i)
        CHECK(b[i] == doctest::Approx(b2[i]).epsilon(1e-7));
}
