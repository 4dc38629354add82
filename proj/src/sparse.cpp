#include "slam/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <set>
#include <unordered_set>

namespace slam {
namespace sparse {

void SparseMatrix::canonicalize() {
    std::vector<int> ri;
    std::vector<double> vv;
    std::vector<int> cp(ncols + 1, 0);
    ri.reserve(rowind.size());
    vv.reserve(values.size());
    std::vector<std::pair<int, double>> col;
    for (int c = 0; c < ncols; ++c) {
        col.clear();
        for (int p = colptr[c]; p < colptr[c + 1]; ++p) col.emplace_back(rowind[p], values[p]);
        std::sort(col.begin(), col.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t k = 0; k < col.size();) {
            int r = col[k].first;
            double s = 0.0;
            while (k < col.size() && col[k].first == r) s += col[k++].second;
            if (s != 0.0) {
                ri.push_back(r);
                vv.push_back(s);
            }
        }
        cp[c + 1] = static_cast<int>(ri.size());
    }
    rowind = std::move(ri);
    values = std::move(vv);
    colptr = std::move(cp);
}

double SparseMatrix::at(int r, int c) const {
    const int lo = colptr[c], hi = colptr[c + 1];
    auto it = std::lower_bound(rowind.begin() + lo, rowind.begin() + hi, r);
    if (it != rowind.begin() + hi && *it == r) return values[it - rowind.begin()];
    return 0.0;
}

SparseMatrix SparseMatrix::from_triplets(int nrows, int ncols, const std::vector<int>& ri,
                                         const std::vector<int>& ci,
                                         const std::vector<double>& v) {
    if (ri.size() != ci.size() || ri.size() != v.size())
        throw std::invalid_argument("from_triplets: length mismatch");
    SparseMatrix m(nrows, ncols);
    std::vector<int> count(ncols, 0);
    for (std::size_t k = 0; k < ci.size(); ++k) {
        if (ri[k] < 0 || ri[k] >= nrows || ci[k] < 0 || ci[k] >= ncols)
            throw std::out_of_range("from_triplets: index out of range");
        ++count[ci[k]];
    }
    m.colptr.assign(ncols + 1, 0);
    for (int c = 0; c < ncols; ++c) m.colptr[c + 1] = m.colptr[c] + count[c];
    m.rowind.resize(ri.size());
    m.values.resize(ri.size());
    std::vector<int> next(m.colptr.begin(), m.colptr.end() - 1);
    for (std::size_t k = 0; k < ci.size(); ++k) {
        const int p = next[ci[k]]++;
        m.rowind[p] = ri[k];
        m.values[p] = v[k];
    }
    m.canonicalize();
    return m;
}

SparseMatrix CholeskyFactor::R() const {
    // Row i of L is column i of R; count then fill.
    std::vector<int> cnt(n, 0);
    for (int j = 0; j < n; ++j)
        for (int r : rows_[j]) ++cnt[r];
    SparseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m.colptr[i + 1] = m.colptr[i] + cnt[i];
    m.rowind.resize(m.colptr[n]);
    m.values.resize(m.colptr[n]);
    std::vector<int> next(m.colptr.begin(), m.colptr.end() - 1);
    // Columns ascending + rows ascending within a column => row indices of R
    // (i.e. L column ids) come out ascending per R column.
    for (int j = 0; j < n; ++j)
        for (std::size_t p = 0; p < rows_[j].size(); ++p) {
            const int i = rows_[j][p];
            const int q = next[i]++;
            m.rowind[q] = j;
            m.values[q] = vals_[j][p];
        }
    return m;
}

long long CholeskyFactor::sum_colcounts_sq() const {
    long long s = 0;
    for (int i = 0; i < n; ++i) s += static_cast<long long>(colcounts_[i]) * colcounts_[i];
    return s;
}

long long CholeskyFactor::nnz() const {
    long long s = 0;
    for (int j = 0; j < n; ++j) s += static_cast<long long>(rows_[j].size());
    return s;
}

void CholeskyFactor::refresh_parent(int j) {
    int p = n;
    for (std::size_t k = 1; k < rows_[j].size(); ++k) p = std::min(p, rows_[j][k]);
    parent_[j] = (p == n) ? -1 : p;
}

void CholeskyFactor::rebuild_colcounts() {
    colcounts_.assign(n, 0);
    for (int j = 0; j < n; ++j)
        for (int r : rows_[j]) ++colcounts_[r];
}

CholeskyFactor CholeskyFactor::empty(int nvars) {
    CholeskyFactor f;
    f.extend(nvars);
    f.version = 1;
    return f;
}

void CholeskyFactor::extend(int nvars) {
    const int n0 = n;
    n += nvars;
    perm.resize(n);
    iperm.resize(n);
    rows_.resize(n);
    vals_.resize(n);
    parent_.resize(n, -1);
    colcounts_.resize(n, 1);
    for (int v = n0; v < n; ++v) {
        perm[v] = v;
        iperm[v] = v;
        rows_[v] = {v};
        vals_[v] = {0.0};
    }
    ++version;
}

// ---------------------------------------------------------------------------
// Ordering
// ---------------------------------------------------------------------------

std::vector<int> amd_order(const SparseMatrix& pattern, const std::vector<int>& constrained_last) {
    const int n = pattern.ncols;
    if (pattern.nrows != n) throw std::invalid_argument("amd_order: pattern must be square");
    std::vector<char> constrained(n, 0);
    for (int v : constrained_last) {
        if (v < 0 || v >= n) throw std::out_of_range("amd_order: constrained index out of range");
        constrained[v] = 1;
    }

    // Symmetrized adjacency (no self loops).
    std::vector<std::unordered_set<int>> adj(n);
    for (int c = 0; c < n; ++c)
        for (int p = pattern.colptr[c]; p < pattern.colptr[c + 1]; ++p) {
            const int r = pattern.rowind[p];
            if (r == c) continue;
            adj[r].insert(c);
            adj[c].insert(r);
        }

    // Minimum degree with clique formation; constrained variables eliminated
    // only after all unconstrained ones. Lazy-deletion heap keyed
    // (constrained, degree, index) for determinism.
    using Key = std::tuple<int, int, int>;
    std::set<Key> heap;
    std::vector<int> degree(n);
    for (int v = 0; v < n; ++v) {
        degree[v] = static_cast<int>(adj[v].size());
        heap.insert({constrained[v], degree[v], v});
    }
    std::vector<char> alive(n, 1);
    std::vector<int> perm(n);
    std::vector<int> nb;
    for (int pos = 0; pos < n; ++pos) {
        auto [cflag, deg, v] = *heap.begin();
        heap.erase(heap.begin());
        perm[v] = pos;
        alive[v] = 0;
        nb.assign(adj[v].begin(), adj[v].end());
        std::sort(nb.begin(), nb.end());
        for (int u : nb) adj[u].erase(v);
        for (std::size_t a = 0; a < nb.size(); ++a)
            for (std::size_t b2 = a + 1; b2 < nb.size(); ++b2) {
                adj[nb[a]].insert(nb[b2]);
                adj[nb[b2]].insert(nb[a]);
            }
        for (int u : nb) {
            heap.erase({constrained[u], degree[u], u});
            degree[u] = static_cast<int>(adj[u].size());
            heap.insert({constrained[u], degree[u], u});
        }
        adj[v].clear();
    }
    return perm;
}

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

namespace {

// Elimination tree of the permuted upper pattern (columns hold rows <= col),
// with ancestor path compression.
std::vector<int> etree_upper(int n, const std::vector<std::vector<int>>& upper_rows) {
    std::vector<int> parent(n, -1), ancestor(n, -1);
    for (int k = 0; k < n; ++k) {
        for (int i : upper_rows[k]) {
            if (i >= k) continue;
            int node = i;
            while (node != -1 && node != k) {
                const int next = ancestor[node];
                ancestor[node] = k;
                if (next == -1) {
                    parent[node] = k;
                    break;
                }
                node = next;
            }
        }
    }
    return parent;
}

// Nonzero pattern of row k of L: union of etree paths from the entries of
// column k of the permuted upper H. Returned ascending, excluding k itself.
void ereach(int k, const std::vector<std::vector<int>>& upper_rows, const std::vector<int>& parent,
            std::vector<int>& mark, std::vector<int>& out) {
    out.clear();
    mark[k] = k;
    for (int i : upper_rows[k]) {
        int node = i;
        while (node < k && mark[node] != k) {
            mark[node] = k;
            out.push_back(node);
            node = parent[node];
            if (node == -1) break;
        }
    }
    std::sort(out.begin(), out.end());
}

}  // namespace

CholeskyFactor factorize(const SparseMatrix& H, const std::vector<int>& perm) {
    const int n = H.ncols;
    if (H.nrows != n) throw std::invalid_argument("factorize: H must be square");
    if (static_cast<int>(perm.size()) != n)
        throw std::invalid_argument("factorize: perm size mismatch");

    CholeskyFactor f;
    f.n = n;
    f.perm = perm;
    f.iperm.assign(n, -1);
    for (int v = 0; v < n; ++v) {
        if (perm[v] < 0 || perm[v] >= n || f.iperm[perm[v]] != -1)
            throw std::invalid_argument("factorize: perm is not a permutation");
        f.iperm[perm[v]] = v;
    }

    // Permuted upper pattern/values per ordered column.
    std::vector<std::vector<int>> up_rows(n);
    std::vector<std::vector<double>> up_vals(n);
    for (int c = 0; c < n; ++c)
        for (int p = H.colptr[c]; p < H.colptr[c + 1]; ++p) {
            const int pi = perm[H.rowind[p]], pj = perm[c];
            if (pi <= pj) {
                up_rows[pj].push_back(pi);
                up_vals[pj].push_back(H.values[p]);
            }
        }

    f.parent_ = etree_upper(n, up_rows);

    f.rows_.assign(n, {});
    f.vals_.assign(n, {});
    std::vector<int> mark(n, -1), pat;
    std::vector<double> x(n, 0.0);
    for (int k = 0; k < n; ++k) {
        ereach(k, up_rows, f.parent_, mark, pat);
        double d = 0.0;
        for (std::size_t p = 0; p < up_rows[k].size(); ++p) {
            if (up_rows[k][p] == k)
                d = up_vals[k][p];
            else
                x[up_rows[k][p]] = up_vals[k][p];
        }
        // Up-looking: consume row k against previously built columns.
        for (int i : pat) {
            const double lki = x[i] / f.vals_[i][0];
            x[i] = 0.0;
            for (std::size_t p = 1; p < f.rows_[i].size(); ++p) x[f.rows_[i][p]] -= f.vals_[i][p] * lki;
            d -= lki * lki;
            f.rows_[i].push_back(k);
            f.vals_[i].push_back(lki);
        }
        if (!(d > 0.0)) throw NotPositiveDefinite("factorize: non-positive pivot at ordered column " +
                                                  std::to_string(k));
        f.rows_[k].push_back(k);
        f.vals_[k].push_back(std::sqrt(d));
    }
    f.rebuild_colcounts();
    f.version = 1;
    return f;
}

// ---------------------------------------------------------------------------
// Rank-1 update / downdate
// ---------------------------------------------------------------------------

void rank_update(CholeskyFactor& f, const SparseVector& w, int sign) {
    if (sign != 1 && sign != -1) throw std::invalid_argument("rank_update: sign must be +-1");
    if (w.idx.size() != w.val.size()) throw std::invalid_argument("rank_update: length mismatch");
    const int n = f.n;
    const double sigma = static_cast<double>(sign);

    // Scratch: `work` holds w in ordered coordinates. It is kept all-zero
    // between calls (every support entry is zeroed as it is consumed) so the
    // O(n) clear is only paid on the first call, a resize, or after an
    // exception left it dirty.
    static thread_local std::vector<double> work;
    static thread_local bool work_dirty = false;
    static thread_local std::vector<int> support, nsupport, fill_rows, nrows;
    static thread_local std::vector<double> fill_vals, nvals;
    if (static_cast<int>(work.size()) != n || work_dirty) work.assign(n, 0.0);
    work_dirty = true;

    support.clear();
    for (std::size_t k = 0; k < w.idx.size(); ++k) {
        const int v = w.idx[k];
        if (v < 0 || v >= n) {
            for (int j : support) work[j] = 0.0;
            work_dirty = false;
            throw std::out_of_range("rank_update: index out of range");
        }
        if (w.val[k] == 0.0) continue;
        const int pos = f.perm[v];
        if (work[pos] == 0.0) support.push_back(pos);
        work[pos] = w.val[k];
    }
    std::sort(support.begin(), support.end());

    double beta = 1.0;
    while (!support.empty()) {
        const int j = support.front();
        const double wj = work[j];
        work[j] = 0.0;
        if (wj == 0.0) {
            support.erase(support.begin());
            continue;
        }

        auto& rows = f.rows_[j];
        auto& vals = f.vals_[j];
        const double ljj = vals[0];
        if (ljj == 0.0) {
            // Structurally new (zero) column: the remaining correction is
            // sigma/beta^2 * w w^T, a rank-1 matrix absorbed exactly into this
            // column; nothing is left to propagate.
            if (sign < 0) {
                for (std::size_t s = 1; s < support.size(); ++s) work[support[s]] = 0.0;
                work_dirty = false;
                throw DowndateBreaksSPD("rank_update: downdate on zero pivot at ordered column " +
                                        std::to_string(j));
            }
            const double s = wj >= 0.0 ? 1.0 : -1.0;
            vals[0] = std::abs(wj) / beta;
            for (std::size_t k = 1; k < support.size(); ++k) {
                const int r = support[k];
                if (work[r] == 0.0) continue;
                const double lrj = s * work[r] / beta;
                work[r] = 0.0;
                auto it = std::lower_bound(rows.begin() + 1, rows.end(), r);
                if (it != rows.end() && *it == r) {
                    vals[it - rows.begin()] += lrj;
                } else {
                    const auto off = it - rows.begin();
                    rows.insert(it, r);
                    vals.insert(vals.begin() + off, lrj);
                    ++f.colcounts_[r];
                }
            }
            support.clear();
            f.refresh_parent(j);
            break;
        }
        const double alpha = wj / ljj;
        const double beta2_sq = beta * beta + sigma * alpha * alpha;
        if (sign < 0 && beta2_sq <= 1e-12 * beta * beta) {
            for (std::size_t s = 1; s < support.size(); ++s) work[support[s]] = 0.0;
            work_dirty = false;
            throw DowndateBreaksSPD("rank_update: downdate pivot failure at ordered column " +
                                    std::to_string(j));
        }
        const double beta2 = std::sqrt(beta2_sq);
        const double delta = sign > 0 ? beta / beta2 : beta2 / beta;
        const double gamma = sigma * alpha / (beta2 * beta);
        vals[0] = delta * ljj + (sign > 0 ? gamma * wj : 0.0);
        beta = beta2;

        // Single merge pass over the (sorted) column rows and the (sorted)
        // remaining support: sweep existing entries, collect fill-in (support
        // rows absent from the column, whose old L entry is structurally zero
        // so w is unchanged), and emit the next support set in order.
        nsupport.clear();
        fill_rows.clear();
        fill_vals.clear();
        std::size_t p = 1, s = 1;
        while (p < rows.size() || s < support.size()) {
            const int rp = p < rows.size() ? rows[p] : n;
            const int rs = s < support.size() ? support[s] : n;
            if (rp <= rs) {
                const int r = rp;
                const double w1 = work[r];
                const double w2 = w1 - alpha * vals[p];
                work[r] = w2;
                vals[p] = delta * vals[p] + gamma * (sign > 0 ? w1 : w2);
                if (w2 != 0.0) nsupport.push_back(r);
                ++p;
                if (rp == rs) ++s;
            } else {
                const int r = rs;
                ++s;
                const double w1 = work[r];
                if (w1 == 0.0) continue;
                fill_rows.push_back(r);
                fill_vals.push_back(gamma * w1);
                nsupport.push_back(r);
            }
        }
        if (!fill_rows.empty()) {
            // Merge the fill entries into the column in one rebuild.
            nrows.clear();
            nvals.clear();
            nrows.reserve(rows.size() + fill_rows.size());
            nvals.reserve(rows.size() + fill_rows.size());
            std::size_t a = 0, b = 0;
            while (a < rows.size() || b < fill_rows.size()) {
                const int ra = a < rows.size() ? rows[a] : n;
                const int rb = b < fill_rows.size() ? fill_rows[b] : n;
                if (ra < rb) {
                    nrows.push_back(rows[a]);
                    nvals.push_back(vals[a]);
                    ++a;
                } else {
                    nrows.push_back(fill_rows[b]);
                    nvals.push_back(fill_vals[b]);
                    ++f.colcounts_[fill_rows[b]];
                    ++b;
                }
            }
            rows.swap(nrows);
            vals.swap(nvals);
            f.refresh_parent(j);
        }
        support.swap(nsupport);
    }
    work_dirty = false;
    ++f.version;
}

namespace {

// Scatter one whitened scalar row of a linearized factor into a sparse vector
// (variable coordinates).
SparseVector factor_row(const LinearizedFactor& fac, int r) {
    SparseVector w;
    for (int b = 0; b < fac.n_nodes; ++b)
        for (int c = 0; c < 3; ++c) {
            const double v = fac.jac[b][r][c];
            if (v != 0.0) {
                w.idx.push_back(3 * fac.nodes[b] + c);
                w.val.push_back(v);
            }
        }
    return w;
}

}  // namespace

void add_rows(CholeskyFactor& f, std::vector<double>& b, const std::vector<LinearizedFactor>& facs) {
    for (const LinearizedFactor& fac : facs)
        for (int r = 0; r < fac.n_rows; ++r) {
            const SparseVector w = factor_row(fac, r);
            rank_update(f, w, +1);
            for (std::size_t k = 0; k < w.idx.size(); ++k) b[w.idx[k]] += w.val[k] * fac.resid[r];
        }
}

void remove_rows(CholeskyFactor& f, std::vector<double>& b,
                 const std::vector<LinearizedFactor>& facs) {
    for (const LinearizedFactor& fac : facs)
        for (int r = 0; r < fac.n_rows; ++r) {
            const SparseVector w = factor_row(fac, r);
            rank_update(f, w, -1);
            for (std::size_t k = 0; k < w.idx.size(); ++k) b[w.idx[k]] -= w.val[k] * fac.resid[r];
        }
}

// ---------------------------------------------------------------------------
// Solves
// ---------------------------------------------------------------------------

std::vector<double> full_solve(const CholeskyFactor& f, const std::vector<double>& b) {
    const int n = f.n;
    if (static_cast<int>(b.size()) != n) throw std::invalid_argument("full_solve: size mismatch");
    std::vector<double> y(n);
    for (int v = 0; v < n; ++v) y[f.perm[v]] = b[v];
    // Forward R^T y' = Pb (scatter form on L columns).
    for (int j = 0; j < n; ++j) {
        const double yj = y[j] / f.vals_[j][0];
        y[j] = yj;
        for (std::size_t p = 1; p < f.rows_[j].size(); ++p) y[f.rows_[j][p]] -= f.vals_[j][p] * yj;
    }
    // Backward R d' = y' (gather form on L columns).
    for (int j = n - 1; j >= 0; --j) {
        double s = y[j];
        for (std::size_t p = 1; p < f.rows_[j].size(); ++p) s -= f.vals_[j][p] * y[f.rows_[j][p]];
        y[j] = s / f.vals_[j][0];
    }
    std::vector<double> d(n);
    for (int v = 0; v < n; ++v) d[v] = y[f.perm[v]];
    return d;
}

namespace {

std::size_t hash_bytes(const void* data, std::size_t len, std::size_t seed) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::size_t h = seed ^ 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < len; ++i) h = (h ^ p[i]) * 0x100000001b3ull;
    return h;
}

}  // namespace

std::vector<double> partial_solve(const CholeskyFactor& f, const std::vector<double>& b,
                                  const std::vector<int>& S, StaticBlockCache& cache) {
    const int n = f.n;
    if (static_cast<int>(b.size()) != n) throw std::invalid_argument("partial_solve: size mismatch");
    static thread_local std::vector<char> in_s;
    in_s.assign(n, 0);
    for (int v : S) {
        if (v < 0 || v >= n) throw std::out_of_range("partial_solve: S index out of range");
        in_s[f.perm[v]] = 1;
    }
    const std::size_t u_hash = hash_bytes(in_s.data(), in_s.size(), 0);
    const std::size_t rhs_hash = hash_bytes(b.data(), b.size() * sizeof(double), 1);

    std::vector<double> yv(n, 0.0);   // y_U over U positions
    std::vector<double> corr(n, 0.0); // R_US^T y_U over S positions
    if (cache.valid && cache.factor_version == f.version && cache.u_hash == u_hash &&
        cache.rhs_version == rhs_hash) {
        yv = cache.y_u;
        corr = cache.correction;
    } else {
        // Forward solve of the U block: R_UU^T y_U = b_U with the correction
        // R_US^T y_U gathered in the same pass.
        for (int j = 0; j < n; ++j) {
            if (in_s[j]) continue;
            yv[j] = (b[f.iperm[j]] - yv[j]) / f.vals_[j][0];
            for (std::size_t p = 1; p < f.rows_[j].size(); ++p) {
                const int r = f.rows_[j][p];
                (in_s[r] ? corr[r] : yv[r]) += f.vals_[j][p] * yv[j];
            }
        }
        cache.valid = true;
        cache.factor_version = f.version;
        cache.rhs_version = rhs_hash;
        cache.u_hash = u_hash;
        cache.y_u = yv;
        cache.correction = corr;
    }

    // S block: R_SS^T t = b_S - corr, then R_SS d_S = t.
    std::vector<double> t(n, 0.0);
    for (int j = 0; j < n; ++j) {
        if (!in_s[j]) continue;
        if (!(f.vals_[j][0] > 0.0))
            throw SBlockNotPositiveDefinite("partial_solve: non-positive S-block pivot");
        t[j] = (b[f.iperm[j]] - corr[j] - t[j]) / f.vals_[j][0];
        for (std::size_t p = 1; p < f.rows_[j].size(); ++p) {
            const int r = f.rows_[j][p];
            if (in_s[r]) t[r] += f.vals_[j][p] * t[j];
        }
    }
    std::vector<double> d(n, 0.0);
    for (int j = n - 1; j >= 0; --j) {
        if (!in_s[j]) continue;
        double s = t[j];
        for (std::size_t p = 1; p < f.rows_[j].size(); ++p) {
            const int r = f.rows_[j][p];
            if (in_s[r]) s -= f.vals_[j][p] * d[f.iperm[r]];
        }
        d[f.iperm[j]] = s / f.vals_[j][0];
    }
    return d;
}

std::vector<int> reach_closure(const CholeskyFactor& f, const std::vector<int>& S) {
    std::vector<char> seen(f.n, 0);
    for (int v : S) {
        int j = f.perm[v];
        while (j != -1 && !seen[j]) {
            seen[j] = 1;
            j = f.parent_[j];
        }
    }
    std::vector<int> out;
    for (int j = 0; j < f.n; ++j)
        if (seen[j]) out.push_back(f.iperm[j]);
    std::sort(out.begin(), out.end());
    return out;
}

double logdet_diag(const CholeskyFactor& f) {
    double s = 0.0;
    for (int j = 0; j < f.n; ++j) s += std::log(f.vals_[j][0]);
    return s;
}

}  // namespace sparse
}  // namespace slam
