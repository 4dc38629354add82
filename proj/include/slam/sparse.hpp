#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "slam/factors.hpp"

namespace slam {
namespace sparse {

struct NotPositiveDefinite : std::runtime_error {
    explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};
struct DowndateBreaksSPD : std::runtime_error {
    explicit DowndateBreaksSPD(const std::string& what) : std::runtime_error(what) {}
};
struct SBlockNotPositiveDefinite : std::runtime_error {
    explicit SBlockNotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

// Column-compressed sparse matrix. Row indices are sorted ascending within
// each column after canonicalize(); duplicates are summed and explicit zeros
// dropped.
struct SparseMatrix {
    int nrows = 0;
    int ncols = 0;
    std::vector<int> colptr;   // size ncols + 1
    std::vector<int> rowind;
    std::vector<double> values;

    SparseMatrix() : colptr(1, 0) {}
    SparseMatrix(int r, int c) : nrows(r), ncols(c), colptr(c + 1, 0) {}

    int nnz() const { return static_cast<int>(rowind.size()); }
    void canonicalize();
    double at(int r, int c) const;  // O(log nnz(col)); 0 if absent

    // Build from triplets.
    static SparseMatrix from_triplets(int nrows, int ncols,
                                      const std::vector<int>& ri,
                                      const std::vector<int>& ci,
                                      const std::vector<double>& v);
};

// Sparse vector as parallel (index, value) arrays; indices strictly ascending.
struct SparseVector {
    std::vector<int> idx;
    std::vector<double> val;
};

// Sparse upper-triangular Cholesky factor of P H P^T, with fill-reducing
// permutation and elimination tree.
//
// Internally the factor is held as L = R^T in a growable column-major form so
// rank-1 updates can insert fill without repacking; R is materialized on
// demand. All structural arrays are in ordered (position) coordinates.
class CholeskyFactor {
  public:
    int n = 0;
    std::vector<int> perm;    // variable -> ordered position
    std::vector<int> iperm;   // ordered position -> variable

    // L columns: rows_[j][0] == j (diagonal first), remaining rows ascending.
    std::vector<std::vector<int>> rows_;
    std::vector<std::vector<double>> vals_;

    std::vector<int> parent_;     // elimination tree over ordered positions
    std::vector<int> colcounts_;  // kappa_i: nnz of column i of R (row i of L)
    std::uint64_t version = 0;    // bumped on every numeric/structural change

    const std::vector<int>& etree() const { return parent_; }
    const std::vector<int>& colcounts() const { return colcounts_; }
    double diag(int pos) const { return vals_[pos][0]; }

    // Materialize R (upper CSC, ordered coordinates).
    SparseMatrix R() const;

    // Sum over all columns of kappa_i^2 and total nnz(R).
    long long sum_colcounts_sq() const;
    long long nnz() const;

    void refresh_parent(int j);   // recompute etree parent of column j
    void rebuild_colcounts();

    // Identity-permutation factor of dimension nvars with all-zero columns;
    // populate via add_rows (the system must become SPD before any solve).
    static CholeskyFactor empty(int nvars);

    // Append nvars new variables (ids n..n+nvars-1) at the trailing ordered
    // positions with structurally zero columns.
    void extend(int nvars);
};

// Cache for the static(U)-block products of partial_solve. Keyed on the U
// membership and on the factor/rhs versions, so any mutation invalidates it;
// reuse only happens for repeated solves of an unchanged system.
struct StaticBlockCache {
    std::uint64_t factor_version = ~0ull;
    std::uint64_t rhs_version = ~0ull;
    std::size_t u_hash = 0;
    std::vector<double> y_u;       // forward-solve product over U (position coords)
    std::vector<double> correction;  // R_US^T y_U scattered over S positions
    bool valid = false;
};

// Fill-reducing ordering: minimum degree with every variable in
// constrained_last ordered after all others. Returns perm (variable ->
// ordered position). Deterministic (lowest-index tie-break).
std::vector<int> amd_order(const SparseMatrix& pattern, const std::vector<int>& constrained_last);

// Sparse up-looking Cholesky of H under the given permutation.
CholeskyFactor factorize(const SparseMatrix& H, const std::vector<int>& perm);

// Rank-1 update/downdate: factor of (R^T R + sign * w w^T). w is given in
// variable coordinates. Throws DowndateBreaksSPD when a hyperbolic rotation
// pivot fails (pivot^2 - w^2 <= 1e-12 * pivot^2).
void rank_update(CholeskyFactor& f, const SparseVector& w, int sign);

// Append whitened measurement rows: R'^T R' = R^T R + A^T A and
// b' = b + A^T r, applied one rank-1 update per scalar row. b is in variable
// coordinates.
void add_rows(CholeskyFactor& f, std::vector<double>& b, const std::vector<LinearizedFactor>& facs);

// Inverse of add_rows (downdates); used to retract stale linearized rows.
void remove_rows(CholeskyFactor& f, std::vector<double>& b, const std::vector<LinearizedFactor>& facs);

// Solve R^T R d = P b (variable coordinates in and out).
std::vector<double> full_solve(const CholeskyFactor& f, const std::vector<double>& b);

// Partial block-Schur solve, Eqs. (10)-(14): with U the complement of S
// (d_U = 0), solve R_UU^T y_U = b_U, then (R_SS^T R_SS) d_S = b_S - R_US^T y_U.
// Blocks are extracted by local row/column selection of R without altering
// the global ordering. S is a list of scalar variable indices (node-block
// closed by the caller). Returns d with zeros outside S.
//
// Note: the result equals the full solve restricted to S exactly when S is
// closed under elimination-tree ancestors (see reach_closure); for arbitrary
// S it is the literal evaluation of the equations.
std::vector<double> partial_solve(const CholeskyFactor& f, const std::vector<double>& b,
                                  const std::vector<int>& S, StaticBlockCache& cache);

// Elimination-tree ancestor closure of a set of variables: the smallest
// superset whose ordered positions are closed under etree parents.
std::vector<int> reach_closure(const CholeskyFactor& f, const std::vector<int>& S);

// eta = sum_i ln|rho_i| = 1/2 ln det H.
double logdet_diag(const CholeskyFactor& f);

}  // namespace sparse
}  // namespace slam
