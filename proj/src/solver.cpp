#include "slam/solver.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace slam {
namespace solver {

namespace {

double max_abs(const std::vector<double>& d, const std::vector<int>& idx) {
    double m = 0.0;
    for (int v : idx) m = std::max(m, std::abs(d[v]));
    return m;
}

double max_abs(const std::vector<double>& d) {
    double m = 0.0;
    for (double v : d) m = std::max(m, std::abs(v));
    return m;
}

std::vector<int> vars_of_nodes(const std::set<int>& nodes) {
    std::vector<int> vars;
    vars.reserve(nodes.size() * 3);
    for (int nd : nodes)
        for (int c = 0; c < 3; ++c) vars.push_back(3 * nd + c);
    return vars;
}

std::vector<int> positions_of(const sparse::CholeskyFactor& f, const std::vector<int>& vars) {
    std::vector<int> pos;
    pos.reserve(vars.size());
    for (int v : vars) pos.push_back(f.perm[v]);
    return pos;
}

// H = sum J^T J and b = sum J^T r over the stored linearizations.
std::pair<sparse::SparseMatrix, std::vector<double>> assemble(
    int nvars, const std::vector<LinearizedFactor>& lin) {
    std::vector<int> ri, ci;
    std::vector<double> vv;
    std::vector<double> b(nvars, 0.0);
    for (const auto& f : lin) {
        for (int ba = 0; ba < f.n_nodes; ++ba) {
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
            for (int a = 0; a < 3; ++a) {
                double s = 0.0;
                for (int r = 0; r < f.n_rows; ++r) s += f.jac[ba][r][a] * f.resid[r];
                b[3 * f.nodes[ba] + a] += s;
            }
        }
    }
    return {sparse::SparseMatrix::from_triplets(nvars, nvars, ri, ci, vv), b};
}

// Full factorization from the stored linearizations with a fresh
// fill-reducing ordering (most recent variables constrained last).
void full_reorder(SolverState& st, const std::vector<int>& constrained_last) {
    auto [H, b] = assemble(st.graph.num_vars(), st.lin);
    const auto perm = sparse::amd_order(H, constrained_last);
    st.factor = sparse::factorize(H, perm);
    st.b = std::move(b);
    st.last_full_nnz = st.factor.nnz();
}

// Refactorize at the current linearization without changing the ordering.
void refactorize(SolverState& st) {
    auto [H, b] = assemble(st.graph.num_vars(), st.lin);
    st.factor = sparse::factorize(H, st.factor.perm);
    st.b = std::move(b);
}

// Replace the stored rows of the given edges with fresh linearizations at the
// current estimate. active_vars drives the cost model (the set S of §3.6);
// the cheaper of incremental up/downdates and a same-ordering refactorization
// is executed, and the model count is charged either way.
void relinearize_edges(SolverState& st, const std::vector<int>& edge_ids_in,
                       const std::vector<int>& active_vars, IncrementRecord& rec) {
    // The gauge anchor keeps its initial linearization (pure regularizer; it
    // never pulls the estimate).
    std::vector<int> edge_ids;
    for (int e : edge_ids_in)
        if (st.graph.edges[e].kind != EdgeKind::AnchorPrior2) edge_ids.push_back(e);
    if (edge_ids.empty()) return;
    const long long model =
        metrics::update_flops(positions_of(st.factor, active_vars), st.factor.colcounts(), false);
    long long total = 0;
    for (int k : st.factor.colcounts()) total += static_cast<long long>(k) * k;
    st.flops.add_update(model);

    if (model >= total) {
        for (int e : edge_ids) st.lin[e] = linearize_edge(st.graph, st.x, e);
        refactorize(st);
        return;
    }
    for (int e : edge_ids) {
        // add the fresh rows before removing the stale ones so the factored
        // system stays positive definite throughout (removing first can pass
        // through a singular intermediate, e.g. a pose held by a single edge)
        LinearizedFactor stale = st.lin[e];
        st.lin[e] = linearize_edge(st.graph, st.x, e);
        try {
            sparse::add_rows(st.factor, st.b, {st.lin[e]});
            sparse::remove_rows(st.factor, st.b, {stale});
        } catch (const sparse::DowndateBreaksSPD&) {
            // numerical failure: escalate to a full reorder + refactorize
            for (int e2 : edge_ids)
                if (e2 > e) st.lin[e2] = linearize_edge(st.graph, st.x, e2);
            full_reorder(st, {});
            rec.escalated = true;
            return;
        }
    }
}

void apply_step(SolverState& st, const std::vector<double>& d, const std::vector<int>& vars) {
    double cost_before;
    if (st.increment_index == st.cost_cache_increment && st.cost_cache_valid) {
        cost_before = st.cost_cache;
    } else {
        cost_before = total_cost(st.graph, st.x);
    }
    for (int v : vars) st.x[v] -= d[v];
    const double cost_after = total_cost(st.graph, st.x);
    ++st.accepted_steps;
    if (cost_after > cost_before + 1e-9) ++st.cost_increase_steps;
    st.cost_cache = cost_after;
    st.cost_cache_valid = true;
    st.cost_cache_increment = st.increment_index;
}

}  // namespace

SolverState init(const Pose2& first_pose, const SolverConfig& config) {
    config.validate();
    SolverState st;
    st.config = config;
    st.graph.add_node(first_pose);
    st.graph.add_edge(Edge::anchor_prior(0, first_pose, config.anchor_info));
    st.x = {first_pose.x, first_pose.y, first_pose.theta};
    st.lin.push_back(linearize_edge(st.graph, st.x, 0));
    full_reorder(st, {});
    st.eta_prev = sparse::logdet_diag(st.factor);
    st.n_prev = 3;
    return st;
}

Pose2 initialize_pose(const SolverState& state, const Edge& edge) {
    if (edge.kind != EdgeKind::RelativePose2)
        throw std::invalid_argument("initialize_pose: relative-pose edge required");
    const int n = state.graph.num_nodes();
    const bool from_known = edge.from < n, to_known = edge.to < n;
    if (from_known == to_known)
        throw UnanchoredEdge("initialize_pose: exactly one endpoint must be new");
    auto pose_at = [&state](int id) {
        return Pose2(state.x[3 * id], state.x[3 * id + 1], state.x[3 * id + 2]);
    };
    return from_known ? compose(pose_at(edge.from), edge.meas)
                      : compose(pose_at(edge.to), inverse(edge.meas));
}

double detrended_gain(double eta_t, double eta_prev, int n_t, int n_prev) {
    if (n_prev < 1 || n_t < n_prev) throw std::invalid_argument("detrended_gain: bad counts");
    return eta_t - (static_cast<double>(n_t) / static_cast<double>(n_prev)) * eta_prev;
}

bool gate_igg(double eta_t, double eta_prev, int n_t, int n_prev, double tau_eta) {
    if (tau_eta == 0.0) return true;  // degenerate threshold: always update
    if (std::isinf(tau_eta)) return false;
    return detrended_gain(eta_t, eta_prev, n_t, n_prev) >= tau_eta;
}

bool gate_lcg(const std::vector<Edge>& new_edges) {
    for (const Edge& e : new_edges)
        if (e.kind == EdgeKind::RelativePose2 && std::abs(e.from - e.to) != 1) return true;
    return false;
}

std::vector<int> prune_active_set(const std::vector<double>& d, const std::vector<int>& S,
                                  double tau_d) {
    std::set<int> nodes;
    for (int v : S)
        if (std::abs(d[v]) > tau_d) nodes.insert(v / 3);
    return vars_of_nodes(nodes);
}

std::vector<int> expand_active_set(const std::vector<int>& S, const Graph& graph) {
    std::set<int> nodes;
    for (int v : S) nodes.insert(v / 3);
    std::set<int> out = nodes;
    for (int nd : nodes)
        for (int e : graph.adjacency[nd]) {
            out.insert(graph.edges[e].from);
            if (!graph.edges[e].is_unary()) out.insert(graph.edges[e].to);
        }
    return vars_of_nodes(out);
}

IncrementRecord increment(SolverState& st, const std::vector<Edge>& new_edges,
                          const std::unordered_map<int, Pose2>* init_hint) {
    if (new_edges.empty()) throw std::invalid_argument("increment: new_edges must be nonempty");
    const SolverConfig& cfg = st.config;
    IncrementRecord rec;
    rec.t = ++st.increment_index;
    rec.n_new_edges = static_cast<int>(new_edges.size());
    const long long u0 = st.flops.update, s0 = st.flops.solve, sf0 = st.flops.solve_full;

    std::vector<int> new_vars;
    std::set<int> seed_nodes;
    for (const Edge& e : new_edges) {
        // create missing endpoints (contiguous ids only)
        for (int id : {e.from, e.to}) {
            if (id < st.graph.num_nodes()) continue;
            if (id != st.graph.num_nodes())
                throw UnanchoredEdge("increment: non-contiguous pose id " + std::to_string(id));
            Pose2 p;
            if (init_hint && init_hint->count(id)) {
                p = init_hint->at(id);
            } else if (e.kind == EdgeKind::RelativePose2) {
                p = initialize_pose(st, e);
            } else {
                throw UnanchoredEdge("increment: prior on uninitialized pose " +
                                     std::to_string(id));
            }
            st.graph.add_node(p);
            st.x.insert(st.x.end(), {p.x, p.y, p.theta});
            st.b.insert(st.b.end(), {0.0, 0.0, 0.0});
            st.factor.extend(3);
            for (int c = 0; c < 3; ++c) new_vars.push_back(3 * id + c);
        }
        const int idx = st.graph.add_edge(e);
        st.lin.push_back(linearize_edge(st.graph, st.x, idx));

        std::vector<int> evars;
        seed_nodes.insert(e.from);
        for (int c = 0; c < 3; ++c) evars.push_back(3 * e.from + c);
        if (!e.is_unary()) {
            seed_nodes.insert(e.to);
            for (int c = 0; c < 3; ++c) evars.push_back(3 * e.to + c);
        }
        st.flops.add_update(
            metrics::update_flops(positions_of(st.factor, evars), st.factor.colcounts(), true));
        sparse::add_rows(st.factor, st.b, {st.lin.back()});
    }
    if (st.factor.nnz() > 4 * st.last_full_nnz) full_reorder(st, new_vars);

    // information gain (after incorporating rows, before optimizing)
    const int n = st.graph.num_vars();
    const double eta = sparse::logdet_diag(st.factor);
    rec.delta_eta = detrended_gain(eta, st.eta_prev, n, st.n_prev);
    bool glob = true;
    if (cfg.gating == Gating::LCG) glob = gate_lcg(new_edges);
    if (cfg.gating == Gating::IGG) glob = gate_igg(eta, st.eta_prev, n, st.n_prev, cfg.tau_eta);
    st.eta_prev = eta;
    st.n_prev = n;
    rec.gated_global = glob;

    std::vector<int> all_vars(n);
    for (int v = 0; v < n; ++v) all_vars[v] = v;
    std::vector<int> all_edges(st.graph.num_edges());
    for (int e = 0; e < st.graph.num_edges(); ++e) all_edges[e] = e;

    if (!cfg.selective) {
        // Gated-off increments do no optimization: this is what reproduces the
        // published gating-failure behavior (see decisions ledger).
        if (glob) {
            for (int it = 0; it < cfg.tau_gn; ++it) {
                rec.gn_iters_used = it + 1;
                rec.active_set_sizes.push_back(n);
                const std::vector<double> d = sparse::full_solve(st.factor, st.b);
                st.flops.add_solve(2 * st.factor.nnz(), 2 * st.factor.nnz());
                if (max_abs(d) <= cfg.tau_d) break;
                apply_step(st, d, all_vars);
                relinearize_edges(st, all_edges, all_vars, rec);
            }
        }
    } else {
        std::set<int> s_nodes;
        if (glob) {
            for (int nd = 0; nd < st.graph.num_nodes(); ++nd) s_nodes.insert(nd);
        } else {
            s_nodes = seed_nodes;
        }
        for (int it = 0; it < cfg.tau_gn && !s_nodes.empty(); ++it) {
            rec.gn_iters_used = it + 1;
            const std::vector<int> svars = vars_of_nodes(s_nodes);
            rec.active_set_sizes.push_back(static_cast<int>(svars.size()));
            std::vector<double> d;
            if (static_cast<int>(svars.size()) == n) {
                d = sparse::full_solve(st.factor, st.b);
                st.flops.add_solve(2 * st.factor.nnz(), 2 * st.factor.nnz());
            } else {
                const auto closed = sparse::reach_closure(st.factor, svars);
                try {
                    d = sparse::partial_solve(st.factor, st.b, closed, st.cache);
                } catch (const sparse::SBlockNotPositiveDefinite&) {
                    full_reorder(st, {});
                    rec.escalated = true;
                    d = sparse::full_solve(st.factor, st.b);
                }
                st.flops.add_solve(
                    metrics::solve_flops(positions_of(st.factor, svars), st.factor.colcounts()),
                    2 * st.factor.nnz());
            }
            // refine the active set first (prune + one-hop expand), then apply
            // the step over the refined set only (Alg. 1 order)
            const std::vector<int> pruned = prune_active_set(d, svars, cfg.tau_d);
            if (pruned.empty()) break;
            const std::vector<int> expanded = expand_active_set(pruned, st.graph);
            std::vector<int> apply_set;
            std::set_intersection(expanded.begin(), expanded.end(), svars.begin(), svars.end(),
                                  std::back_inserter(apply_set));
            apply_step(st, d, apply_set);
            s_nodes.clear();
            for (int v : expanded) s_nodes.insert(v / 3);
            std::set<int> aff;
            for (int nd : s_nodes)
                for (int e : st.graph.adjacency[nd]) aff.insert(e);
            relinearize_edges(st, std::vector<int>(aff.begin(), aff.end()), expanded, rec);
        }
    }

    rec.nchi2 = metrics::normalized_chi2(measurement_cost(st.graph, st.x),
                                         std::max(1, measurement_rows(st.graph)));
    rec.flops_update = st.flops.update - u0;
    rec.flops_solve = st.flops.solve - s0;
    rec.flops_solve_full = st.flops.solve_full - sf0;
    return rec;
}

std::vector<double> batch_solve(const Graph& graph, std::vector<double> x0, int max_iters,
                                double tol) {
    if (static_cast<int>(x0.size()) != graph.num_vars())
        throw std::invalid_argument("batch_solve: estimate dimension mismatch");
    std::vector<int> perm;
    for (int it = 0; it < max_iters; ++it) {
        std::vector<LinearizedFactor> lin;
        for (int e = 0; e < graph.num_edges(); ++e) lin.push_back(linearize_edge(graph, x0, e));
        auto [H, b] = assemble(graph.num_vars(), lin);
        if (perm.empty()) perm = sparse::amd_order(H, {});
        const auto f = sparse::factorize(H, perm);
        const auto d = sparse::full_solve(f, b);
        for (int v = 0; v < graph.num_vars(); ++v) x0[v] -= d[v];
        if (max_abs(d) <= tol) break;
    }
    return x0;
}

SolverConfig variant_config(const std::string& variant, double tau_d, double tau_eta,
                            int tau_gn) {
    SolverConfig cfg;
    cfg.tau_d = tau_d;
    cfg.tau_eta = tau_eta;
    cfg.tau_gn = tau_gn;
    if (variant == "GN1") {
        cfg.tau_gn = 1;
    } else if (variant == "GNi") {
    } else if (variant == "GNi-LCG") {
        cfg.gating = Gating::LCG;
    } else if (variant == "GNi-IGG") {
        cfg.gating = Gating::IGG;
    } else if (variant == "GNi-SPO") {
        cfg.selective = true;
    } else if (variant == "GNi-SPO-LCG") {
        cfg.gating = Gating::LCG;
        cfg.selective = true;
    } else if (variant == "GNi-SPO-IGG") {
        cfg.gating = Gating::IGG;
        cfg.selective = true;
    } else {
        throw std::invalid_argument("unknown variant '" + variant + "'");
    }
    return cfg;
}

RunResult run_variant(const std::string& variant, const io::DatasetStream& stream, double tau_d,
                      double tau_eta, int tau_gn, const std::vector<Pose2>* reference) {
    const SolverConfig cfg = variant_config(variant, tau_d, tau_eta, tau_gn);
    const Pose2 first =
        (!stream.has_initial.empty() && stream.has_initial[0]) ? stream.initial[0] : Pose2();
    SolverState st = init(first, cfg);

    RunResult out;
    for (const Edge& e : stream.edges) {
        std::unordered_map<int, Pose2> hints;
        for (int id : {e.from, e.to})
            if (id >= 0 && id < stream.num_poses && stream.has_initial[id])
                hints.emplace(id, stream.initial[id]);
        IncrementRecord rec = increment(st, {e}, &hints);
        if (reference) {
            std::vector<Pose2> est, ref;
            const int np = st.graph.num_nodes();
            est.reserve(np);
            ref.reserve(np);
            for (int i = 0; i < np; ++i) {
                est.emplace_back(st.x[3 * i], st.x[3 * i + 1], st.x[3 * i + 2]);
                ref.push_back(reference->at(i));
            }
            rec.ate = np >= 2 ? metrics::ate(est, ref) : 0.0;
        }
        out.records.push_back(std::move(rec));
    }
    out.x_final = st.x;
    out.graph = st.graph;
    out.accepted_steps = st.accepted_steps;
    out.cost_increase_steps = st.cost_increase_steps;
    return out;
}

std::pair<Graph, std::vector<double>> build_full_graph(const io::DatasetStream& stream,
                                                       const Mat3& anchor_info) {
    Graph g;
    const Pose2 first =
        (!stream.has_initial.empty() && stream.has_initial[0]) ? stream.initial[0] : Pose2();
    g.add_node(first);
    g.add_edge(Edge::anchor_prior(0, first, anchor_info));
    std::vector<double> x = {first.x, first.y, first.theta};
    auto pose_at = [&x](int id) { return Pose2(x[3 * id], x[3 * id + 1], x[3 * id + 2]); };
    for (const Edge& e : stream.edges) {
        for (int id : {e.from, e.to}) {
            if (id < g.num_nodes()) continue;
            if (id != g.num_nodes())
                throw UnanchoredEdge("build_full_graph: non-contiguous pose id");
            Pose2 p;
            if (stream.has_initial[id]) {
                p = stream.initial[id];
            } else if (e.kind == EdgeKind::RelativePose2) {
                p = (id == e.to) ? compose(pose_at(e.from), e.meas)
                                 : compose(pose_at(e.to), inverse(e.meas));
            } else {
                throw UnanchoredEdge("build_full_graph: prior on uninitialized pose");
            }
            g.add_node(p);
            x.insert(x.end(), {p.x, p.y, p.theta});
        }
        g.add_edge(e);
    }
    return {g, x};
}

std::vector<double> reference_solution(const io::DatasetStream& stream) {
    // GN1 incremental warm start to land in the right basin, then batch GN.
    RunResult warm = run_variant("GN1", stream, 1e-6, 1.0, 1);
    return batch_solve(warm.graph, warm.x_final, 50, 1e-9);
}

}  // namespace solver
}  // namespace slam
