#pragma once

#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "slam/factors.hpp"
#include "slam/graph.hpp"
#include "slam/io.hpp"
#include "slam/metrics.hpp"
#include "slam/sparse.hpp"

namespace slam {
namespace solver {

struct UnanchoredEdge : std::runtime_error {
    explicit UnanchoredEdge(const std::string& what) : std::runtime_error(what) {}
};

enum class Gating { None, LCG, IGG };

struct SolverConfig {
    double tau_d = 1e-3;    // step-magnitude threshold (meters/radians, raw entries)
    double tau_eta = 1.0;   // information-gain threshold (nats)
    int tau_gn = 10;        // max GN iterations per increment
    Gating gating = Gating::None;
    bool selective = false;  // SPO on/off
    Mat3 anchor_info{};      // gauge prior information

    SolverConfig() {
        for (int i = 0; i < 3; ++i) anchor_info[i][i] = 1e6;
    }
    void validate() const {
        if (!(tau_d > 0.0) || !(tau_eta >= 0.0) || tau_gn < 1)
            throw std::invalid_argument("SolverConfig: invalid thresholds");
    }
};

struct IncrementRecord {
    int t = 0;
    int n_new_edges = 0;
    double delta_eta = 0.0;
    bool gated_global = false;
    int gn_iters_used = 0;
    std::vector<int> active_set_sizes;  // scalar variables per GN iteration
    double nchi2 = 0.0;
    double ate = std::numeric_limits<double>::quiet_NaN();  // filled by the harness
    long long flops_update = 0;
    long long flops_solve = 0;
    long long flops_solve_full = 0;  // full-solve-equivalent for the same solves
    bool escalated = false;          // full reorder forced by a numerical failure
};

struct SolverState {
    Graph graph;
    std::vector<double> x;
    sparse::CholeskyFactor factor;
    std::vector<double> b;                  // J^T r at the stored linearization
    std::vector<LinearizedFactor> lin;      // per-edge stored linearization
    sparse::StaticBlockCache cache;
    double eta_prev = 0.0;
    int n_prev = 0;
    metrics::FlopTally flops;
    int increment_index = 0;
    SolverConfig config;
    long long last_full_nnz = 0;            // nnz(R) at the last full factorization
    // descent bookkeeping (Theorem 1 surrogate)
    long long accepted_steps = 0;
    long long cost_increase_steps = 0;      // accepted steps raising c(x) by > 1e-9
    // cached total cost for consecutive GN steps within one increment
    double cost_cache = 0.0;
    bool cost_cache_valid = false;
    int cost_cache_increment = -1;
};

// Pose 0 anchored at first_pose with config.anchor_info.
SolverState init(const Pose2& first_pose, const SolverConfig& config);

// New-pose initialization by odometry composition.
Pose2 initialize_pose(const SolverState& state, const Edge& edge);

// One playback increment (Alg. 1). init_hint optionally provides initial
// values for newly created poses (dataset-file vertex estimates); absent
// entries fall back to composition.
IncrementRecord increment(SolverState& state, const std::vector<Edge>& new_edges,
                          const std::unordered_map<int, Pose2>* init_hint = nullptr);

// Detrended information-gain gate: Delta-eta = eta_t - (n_t/n_prev) * eta_prev
// compared against tau_eta; tau_eta = 0 always triggers, +inf never.
bool gate_igg(double eta_t, double eta_prev, int n_t, int n_prev, double tau_eta);
double detrended_gain(double eta_t, double eta_prev, int n_t, int n_prev);

// True iff any new edge is a relative-pose measurement between
// non-consecutive poses; priors never trigger.
bool gate_lcg(const std::vector<Edge>& new_edges);

// Keep variables with |d_i| > tau_d, closed under node blocks.
std::vector<int> prune_active_set(const std::vector<double>& d, const std::vector<int>& S,
                                  double tau_d);

// One-hop expansion: add every endpoint of every edge incident to a node in S.
std::vector<int> expand_active_set(const std::vector<int>& S, const Graph& graph);

// Full Gauss-Newton to convergence (relinearize all, factorize, solve).
std::vector<double> batch_solve(const Graph& graph, std::vector<double> x0, int max_iters,
                                double tol);

// Variant matrix of §5. Thresholds from config; the variant name sets gating,
// selective and tau_gn.
SolverConfig variant_config(const std::string& variant, double tau_d, double tau_eta, int tau_gn);

struct RunResult {
    std::vector<IncrementRecord> records;
    std::vector<double> x_final;
    Graph graph;
    long long accepted_steps = 0;
    long long cost_increase_steps = 0;
};

// Stream the dataset one edge per increment. When reference is non-null the
// per-increment ATE is computed against it over the poses existing at t
// (reference must cover all poses).
RunResult run_variant(const std::string& variant, const io::DatasetStream& stream,
                      double tau_d, double tau_eta, int tau_gn,
                      const std::vector<Pose2>* reference = nullptr);

// Graph + initial estimate for a whole stream (used for batch solving).
std::pair<Graph, std::vector<double>> build_full_graph(const io::DatasetStream& stream,
                                                       const Mat3& anchor_info);

// Reference pipeline: incremental GN1 warm start followed by batch_solve
// (plain cold-start batch GN can stall in a poor basin on some datasets).
std::vector<double> reference_solution(const io::DatasetStream& stream);

}  // namespace solver
}  // namespace slam
