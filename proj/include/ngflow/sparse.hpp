#pragma once

// Compressed-row sparse matrices and a left-looking sparse LU with threshold
// partial pivoting, sized for 2D saddle-point systems.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ngflow::sparse {

using Index = std::size_t;

class StructuralError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class SingularMatrixError : public std::runtime_error {
public:
    SingularMatrixError(Index row, const std::string& what)
        : std::runtime_error(what), row_(row) {}
    Index row() const noexcept { return row_; }

private:
    Index row_;
};

struct Triplet {
    Index row;
    Index col;
    double value;
};

/// Canonical CSR matrix: column indices strictly increasing within each row.
class SparseMatrix {
public:
    SparseMatrix() : row_offsets_(1, 0) {}

    SparseMatrix(Index nrows, Index ncols, std::vector<Index> row_offsets,
                 std::vector<Index> col_indices, std::vector<double> values)
        : nrows_(nrows), ncols_(ncols), row_offsets_(std::move(row_offsets)),
          col_indices_(std::move(col_indices)), values_(std::move(values)) {
        if (row_offsets_.size() != nrows_ + 1 || row_offsets_.front() != 0 ||
            row_offsets_.back() != values_.size() || col_indices_.size() != values_.size()) {
            throw StructuralError("SparseMatrix: inconsistent CSR array lengths");
        }
        for (Index r = 0; r < nrows_; ++r) {
            if (row_offsets_[r] > row_offsets_[r + 1]) {
                throw StructuralError("SparseMatrix: row offsets decrease at row " + std::to_string(r));
            }
            for (Index p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) {
                if (col_indices_[p] >= ncols_) {
                    throw StructuralError("SparseMatrix: column index out of range in row " +
                                          std::to_string(r));
                }
                if (p > row_offsets_[r] && col_indices_[p - 1] >= col_indices_[p]) {
                    throw StructuralError("SparseMatrix: columns not strictly increasing in row " +
                                          std::to_string(r));
                }
            }
        }
    }

    static SparseMatrix identity(Index n) {
        std::vector<Index> offsets(n + 1);
        std::vector<Index> cols(n);
        std::iota(offsets.begin(), offsets.end(), Index{0});
        std::iota(cols.begin(), cols.end(), Index{0});
        return SparseMatrix(n, n, std::move(offsets), std::move(cols), std::vector<double>(n, 1.0));
    }

    Index nrows() const noexcept { return nrows_; }
    Index ncols() const noexcept { return ncols_; }
    Index nnz() const noexcept { return values_.size(); }
    const std::vector<Index>& row_offsets() const noexcept { return row_offsets_; }
    const std::vector<Index>& col_indices() const noexcept { return col_indices_; }
    const std::vector<double>& values() const noexcept { return values_; }

    double at(Index r, Index c) const {
        if (r >= nrows_ || c >= ncols_) {
            throw DimensionError("SparseMatrix::at: index out of range");
        }
        const auto first = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[r]);
        const auto last = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[r + 1]);
        const auto it = std::lower_bound(first, last, c);
        if (it == last || *it != c) {
            return 0.0;
        }
        return values_[static_cast<Index>(it - col_indices_.begin())];
    }

    std::vector<double> multiply(std::span<const double> x) const {
        if (x.size() != ncols_) {
            throw DimensionError("SparseMatrix::multiply: vector length mismatch");
        }
        std::vector<double> y(nrows_, 0.0);
        for (Index r = 0; r < nrows_; ++r) {
            double sum = 0.0;
            for (Index p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) {
                sum += values_[p] * x[col_indices_[p]];
            }
            y[r] = sum;
        }
        return y;
    }

    SparseMatrix transpose() const {
        std::vector<Index> offsets(ncols_ + 1, 0);
        for (Index c : col_indices_) {
            ++offsets[c + 1];
        }
        std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
        std::vector<Index> cols(nnz());
        std::vector<double> vals(nnz());
        std::vector<Index> next(offsets.begin(), offsets.end() - 1);
        // Rows are visited in order, so each transposed row comes out sorted.
        for (Index r = 0; r < nrows_; ++r) {
            for (Index p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) {
                const Index dst = next[col_indices_[p]]++;
                cols[dst] = r;
                vals[dst] = values_[p];
            }
        }
        return SparseMatrix(ncols_, nrows_, std::move(offsets), std::move(cols), std::move(vals));
    }

    /// Maximum absolute row sum.
    double norm_inf() const {
        double best = 0.0;
        for (Index r = 0; r < nrows_; ++r) {
            double sum = 0.0;
            for (Index p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) {
                sum += std::abs(values_[p]);
            }
            best = std::max(best, sum);
        }
        return best;
    }

    std::vector<double> to_dense() const {
        std::vector<double> dense(nrows_ * ncols_, 0.0);
        for (Index r = 0; r < nrows_; ++r) {
            for (Index p = row_offsets_[r]; p < row_offsets_[r + 1]; ++p) {
                dense[r * ncols_ + col_indices_[p]] = values_[p];
            }
        }
        return dense;
    }

private:
    Index nrows_ = 0;
    Index ncols_ = 0;
    std::vector<Index> row_offsets_;
    std::vector<Index> col_indices_;
    std::vector<double> values_;
};

/// Builds canonical CSR from unordered triplets; duplicates are summed.
inline SparseMatrix assemble(std::span<const Triplet> triplets, Index nrows, Index ncols) {
    std::vector<Index> counts(nrows + 1, 0);
    for (const auto& t : triplets) {
        if (t.row >= nrows || t.col >= ncols) {
            throw StructuralError("assemble: triplet (" + std::to_string(t.row) + ", " +
                                  std::to_string(t.col) + ") outside " + std::to_string(nrows) +
                                  "x" + std::to_string(ncols));
        }
        ++counts[t.row + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());

    std::vector<std::pair<Index, double>> bucket(triplets.size());
    std::vector<Index> next(counts.begin(), counts.end() - 1);
    for (const auto& t : triplets) {
        bucket[next[t.row]++] = {t.col, t.value};
    }

    std::vector<Index> offsets(nrows + 1, 0);
    std::vector<Index> cols;
    std::vector<double> vals;
    cols.reserve(triplets.size());
    vals.reserve(triplets.size());
    for (Index r = 0; r < nrows; ++r) {
        auto first = bucket.begin() + static_cast<std::ptrdiff_t>(counts[r]);
        auto last = bucket.begin() + static_cast<std::ptrdiff_t>(counts[r + 1]);
        // Duplicates are summed in value order so the result is bitwise
        // independent of the triplet order.
        std::sort(first, last);
        for (auto it = first; it != last; ++it) {
            if (!cols.empty() && offsets[r] < cols.size() && cols.back() == it->first) {
                vals.back() += it->second;
            } else {
                cols.push_back(it->first);
                vals.push_back(it->second);
            }
        }
        offsets[r + 1] = cols.size();
    }
    return SparseMatrix(nrows, ncols, std::move(offsets), std::move(cols), std::move(vals));
}

// ---------------------------------------------------------------------------
// Fill-reducing orderings on the symmetrized pattern of a square matrix.

enum class Ordering { Natural, ReverseCuthillMcKee };

namespace detail {

struct Graph {
    std::vector<Index> offsets;
    std::vector<Index> adj;
    Index size() const { return offsets.size() - 1; }
    Index degree(Index v) const { return offsets[v + 1] - offsets[v]; }
};

/// Adjacency of A + A^T without self loops.
inline Graph symmetric_graph(const SparseMatrix& a) {
    const Index n = a.nrows();
    const SparseMatrix at = a.transpose();
    Graph g;
    g.offsets.assign(n + 1, 0);
    std::vector<Index> merged;
    std::vector<std::vector<Index>> rows(n);
    for (Index r = 0; r < n; ++r) {
        merged.clear();
        const auto& ro = a.row_offsets();
        const auto& co = a.col_indices();
        for (Index p = ro[r]; p < ro[r + 1]; ++p) {
            if (co[p] != r) merged.push_back(co[p]);
        }
        const auto& tro = at.row_offsets();
        const auto& tco = at.col_indices();
        for (Index p = tro[r]; p < tro[r + 1]; ++p) {
            if (tco[p] != r) merged.push_back(tco[p]);
        }
        std::sort(merged.begin(), merged.end());
        merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
        g.offsets[r + 1] = g.offsets[r] + merged.size();
        g.adj.insert(g.adj.end(), merged.begin(), merged.end());
    }
    return g;
}

/// Breadth-first level structure restricted to vertices with region[v] == tag.
/// Returns the vertices in visit order; level_start delimits levels.
inline std::vector<Index> level_structure(const Graph& g, Index root, const std::vector<Index>& region,
                                          Index tag, std::vector<Index>& level_start,
                                          std::vector<Index>& stamp, Index& epoch) {
    ++epoch;
    std::vector<Index> order{root};
    stamp[root] = epoch;
    level_start.assign(1, 0);
    Index begin = 0;
    while (begin < order.size()) {
        const Index end = order.size();
        level_start.push_back(end);
        for (Index i = begin; i < end; ++i) {
            const Index v = order[i];
            for (Index p = g.offsets[v]; p < g.offsets[v + 1]; ++p) {
                const Index w = g.adj[p];
                if (region[w] == tag && stamp[w] != epoch) {
                    stamp[w] = epoch;
                    order.push_back(w);
                }
            }
        }
        begin = end;
    }
    // level_start has one sentinel too many for the final empty frontier.
    if (level_start.back() != order.size()) {
        level_start.push_back(order.size());
    }
    return order;
}

/// George-Liu pseudo-peripheral vertex search within a region.
inline Index pseudo_peripheral(const Graph& g, Index start, const std::vector<Index>& region, Index tag,
                               std::vector<Index>& stamp, Index& epoch) {
    Index root = start;
    std::vector<Index> levels;
    auto order = level_structure(g, root, region, tag, levels, stamp, epoch);
    Index eccentricity = levels.size() - 1;
    for (int sweep = 0; sweep < 8; ++sweep) {
        Index best = order[levels[levels.size() - 2]];
        for (Index i = levels[levels.size() - 2]; i < order.size(); ++i) {
            if (g.degree(order[i]) < g.degree(best)) best = order[i];
        }
        std::vector<Index> trial_levels;
        auto trial = level_structure(g, best, region, tag, trial_levels, stamp, epoch);
        if (trial_levels.size() - 1 <= eccentricity) break;
        root = best;
        eccentricity = trial_levels.size() - 1;
        order = std::move(trial);
        levels = std::move(trial_levels);
    }
    return root;
}

/// Cuthill-McKee order of one connected region, neighbours by increasing degree.
inline std::vector<Index> cuthill_mckee_region(const Graph& g, Index root, const std::vector<Index>& region,
                                               Index tag, std::vector<Index>& stamp, Index& epoch) {
    ++epoch;
    std::vector<Index> order{root};
    stamp[root] = epoch;
    std::vector<Index> nbrs;
    for (Index i = 0; i < order.size(); ++i) {
        const Index v = order[i];
        nbrs.clear();
        for (Index p = g.offsets[v]; p < g.offsets[v + 1]; ++p) {
            const Index w = g.adj[p];
            if (region[w] == tag && stamp[w] != epoch) {
                stamp[w] = epoch;
                nbrs.push_back(w);
            }
        }
        std::stable_sort(nbrs.begin(), nbrs.end(),
                         [&](Index a, Index b) { return g.degree(a) < g.degree(b); });
        order.insert(order.end(), nbrs.begin(), nbrs.end());
    }
    return order;
}

}  // namespace detail

/// Reverse Cuthill-McKee permutation: result[k] is the original index placed k-th.
inline std::vector<Index> reverse_cuthill_mckee(const SparseMatrix& a) {
    if (a.nrows() != a.ncols()) throw DimensionError("reverse_cuthill_mckee: matrix not square");
    const auto g = detail::symmetric_graph(a);
    const Index n = g.size();
    std::vector<Index> region(n, 1);
    std::vector<Index> stamp(n, 0);
    Index epoch = 0;
    std::vector<Index> order;
    order.reserve(n);
    std::vector<char> placed(n, 0);
    for (Index v = 0; v < n; ++v) {
        if (placed[v]) continue;
        const Index root = detail::pseudo_peripheral(g, v, region, 1, stamp, epoch);
        auto comp = detail::cuthill_mckee_region(g, root, region, 1, stamp, epoch);
        for (Index w : comp) {
            placed[w] = 1;
            region[w] = 0;
        }
        order.insert(order.end(), comp.begin(), comp.end());
    }
    std::reverse(order.begin(), order.end());
    return order;
}

struct Point2 {
    double x;
    double y;
};

/// Nested dissection by recursive coordinate bisection. Each cut splits the
/// vertices at the median coordinate along the wider extent; the separator is
/// the set of vertices on the upper side with a neighbour on the lower side.
/// Within leaves and separators, rows with a structurally zero diagonal are
/// ordered after the others so they are eliminated once some of their
/// neighbours have filled the diagonal in.
inline std::vector<Index> coordinate_dissection(const SparseMatrix& a, std::span<const Point2> coords,
                                                Index leaf_size = 32) {
    if (a.nrows() != a.ncols()) throw DimensionError("coordinate_dissection: matrix not square");
    if (coords.size() != a.nrows()) throw DimensionError("coordinate_dissection: one point per row required");
    const auto g = detail::symmetric_graph(a);
    const Index n = g.size();
    std::vector<char> zero_diag(n, 1);
    for (Index r = 0; r < n; ++r) {
        if (a.at(r, r) != 0.0) zero_diag[r] = 0;
    }

    std::vector<Index> order;
    order.reserve(n);
    std::vector<Index> side(n, 0);  // 0 = elsewhere, 1 = lower half, 2 = upper half
    auto emit = [&](std::vector<Index>& nodes) {
        std::stable_partition(nodes.begin(), nodes.end(), [&](Index v) { return !zero_diag[v]; });
        order.insert(order.end(), nodes.begin(), nodes.end());
    };

    struct Task {
        std::vector<Index> nodes;
        std::vector<Index> separator;  // emitted after both halves
        bool is_separator;
    };
    // Explicit post-order traversal: push separator, then upper, then lower.
    std::vector<Task> stack;
    std::vector<Index> all(n);
    std::iota(all.begin(), all.end(), Index{0});
    stack.push_back({std::move(all), {}, false});
    while (!stack.empty()) {
        Task task = std::move(stack.back());
        stack.pop_back();
        if (task.is_separator) {
            emit(task.separator);
            continue;
        }
        auto& nodes = task.nodes;
        if (nodes.size() <= leaf_size) {
            emit(nodes);
            continue;
        }
        double xmin = coords[nodes[0]].x, xmax = xmin, ymin = coords[nodes[0]].y, ymax = ymin;
        for (Index v : nodes) {
            xmin = std::min(xmin, coords[v].x);
            xmax = std::max(xmax, coords[v].x);
            ymin = std::min(ymin, coords[v].y);
            ymax = std::max(ymax, coords[v].y);
        }
        const bool along_x = (xmax - xmin) >= (ymax - ymin);
        auto key = [&](Index v) { return along_x ? coords[v].x : coords[v].y; };
        std::vector<double> keys(nodes.size());
        std::transform(nodes.begin(), nodes.end(), keys.begin(), key);
        auto mid = keys.begin() + static_cast<std::ptrdiff_t>(keys.size() / 2);
        std::nth_element(keys.begin(), mid, keys.end());
        const double cut = *mid;
        if (!(cut > (along_x ? xmin : ymin))) {
            emit(nodes);  // degenerate: all points on the cut line
            continue;
        }
        for (Index v : nodes) side[v] = key(v) < cut ? 1 : 2;
        std::vector<Index> lower, upper, separator;
        for (Index v : nodes) {
            if (side[v] == 1) {
                lower.push_back(v);
                continue;
            }
            bool touches_lower = false;
            for (Index p = g.offsets[v]; p < g.offsets[v + 1] && !touches_lower; ++p) {
                touches_lower = side[g.adj[p]] == 1;
            }
            (touches_lower ? separator : upper).push_back(v);
        }
        for (Index v : nodes) side[v] = 0;
        stack.push_back({{}, std::move(separator), true});
        stack.push_back({std::move(upper), {}, false});
        stack.push_back({std::move(lower), {}, false});
    }

    // A zero-diagonal vertex whose neighbours all landed in later separators
    // would be eliminated with an empty pivot; move it to just after its
    // earliest-eliminated neighbour instead.
    std::vector<Index> position(n);
    for (Index k = 0; k < n; ++k) position[order[k]] = k;
    std::vector<std::vector<Index>> deferred(n);
    std::vector<char> moved(n, 0);
    for (Index v = 0; v < n; ++v) {
        if (!zero_diag[v]) continue;
        Index earliest = n;
        for (Index p = g.offsets[v]; p < g.offsets[v + 1]; ++p) {
            if (!zero_diag[g.adj[p]]) earliest = std::min(earliest, position[g.adj[p]]);
        }
        if (earliest < n && earliest > position[v]) {
            deferred[order[earliest]].push_back(v);
            moved[v] = 1;
        }
    }
    std::vector<Index> final_order;
    final_order.reserve(n);
    for (Index v : order) {
        if (moved[v]) continue;
        final_order.push_back(v);
        final_order.insert(final_order.end(), deferred[v].begin(), deferred[v].end());
    }
    return final_order;
}

inline std::vector<Index> fill_reducing_order(const SparseMatrix& a, Ordering ordering) {
    switch (ordering) {
        case Ordering::ReverseCuthillMcKee:
            return reverse_cuthill_mckee(a);
        case Ordering::Natural:
            break;
    }
    std::vector<Index> identity(a.nrows());
    std::iota(identity.begin(), identity.end(), Index{0});
    return identity;
}

// ---------------------------------------------------------------------------
// LU factorization.

struct LuOptions {
    double pivot_threshold = 0.1;
    double singular_tolerance = 1e-14;
    Ordering ordering = Ordering::ReverseCuthillMcKee;
    /// Explicit column order; overrides `ordering` when non-empty.
    std::vector<Index> column_order;
};

/// Factors of A with P*A*Q = L*U, where (P*A*Q)(k, l) = A(row_permutation[k], column_permutation[l]).
/// L is unit lower triangular, U upper triangular, both canonical CSR.
struct LuFactors {
    std::vector<Index> permutation;         // row chosen at pivot step k
    std::vector<Index> column_permutation;  // column eliminated at step k
    SparseMatrix lower;
    SparseMatrix upper;

    Index size() const noexcept { return permutation.size(); }
};

namespace detail {

// Column-compressed working storage for the left-looking factorization.
struct CscFactor {
    std::vector<Index> colptr;
    std::vector<Index> rows;
    std::vector<double> vals;
};

// Depth-first reach of the pattern of column `col` of A through the graph of L.
// Writes the topologically ordered pattern into xi[top..n) and returns top.
inline Index reach(const CscFactor& lower, const SparseMatrix& a_csc, Index col,
                   const std::vector<std::ptrdiff_t>& pinv, std::vector<Index>& xi,
                   std::vector<Index>& pstack, std::vector<char>& marked) {
    const Index n = pinv.size();
    Index top = n;
    const auto& ro = a_csc.row_offsets();
    const auto& ci = a_csc.col_indices();
    for (Index p = ro[col]; p < ro[col + 1]; ++p) {
        const Index start = ci[p];
        if (marked[start]) continue;
        std::ptrdiff_t head = 0;
        xi[0] = start;
        while (head >= 0) {
            const Index j = xi[static_cast<Index>(head)];
            const std::ptrdiff_t jnew = pinv[j];
            if (!marked[j]) {
                marked[j] = 1;
                pstack[static_cast<Index>(head)] = jnew < 0 ? 0 : lower.colptr[static_cast<Index>(jnew)];
            }
            bool done = true;
            const Index pend = jnew < 0 ? 0 : lower.colptr[static_cast<Index>(jnew) + 1];
            for (Index q = pstack[static_cast<Index>(head)]; q < pend; ++q) {
                const Index i = lower.rows[q];
                if (marked[i]) continue;
                pstack[static_cast<Index>(head)] = q;
                xi[static_cast<Index>(++head)] = i;
                done = false;
                break;
            }
            if (done) {
                --head;
                xi[--top] = j;
            }
        }
    }
    return top;
}

// Converts a column-compressed factor whose row indices are already final
// into a canonical CSR matrix.
inline SparseMatrix csc_to_csr(Index n, CscFactor&& f) {
    std::vector<Triplet> trips;
    trips.reserve(f.vals.size());
    for (Index c = 0; c < n; ++c) {
        for (Index p = f.colptr[c]; p < f.colptr[c + 1]; ++p) {
            trips.push_back({f.rows[p], c, f.vals[p]});
        }
    }
    f = CscFactor{};
    return assemble(trips, n, n);
}

}  // namespace detail

/// Left-looking (Gilbert-Peierls) LU with threshold partial pivoting.
/// The diagonal candidate is kept when |a_jj| >= threshold * max |a_ij|.
inline LuFactors lu_factor(const SparseMatrix& a, const LuOptions& options = {}) {
    if (a.nrows() != a.ncols()) {
        throw DimensionError("lu_factor: matrix is " + std::to_string(a.nrows()) + "x" +
                             std::to_string(a.ncols()) + ", expected square");
    }
    const Index n = a.nrows();
    const SparseMatrix a_csc = a.transpose();  // row c of A^T is column c of A

    std::vector<double> row_scale(n, 0.0);
    for (Index r = 0; r < n; ++r) {
        for (Index p = a.row_offsets()[r]; p < a.row_offsets()[r + 1]; ++p) {
            row_scale[r] = std::max(row_scale[r], std::abs(a.values()[p]));
        }
    }

    const std::vector<Index> q =
        options.column_order.empty() ? fill_reducing_order(a, options.ordering) : options.column_order;
    if (q.size() != n) throw DimensionError("lu_factor: column order has wrong length");

    detail::CscFactor lower;
    detail::CscFactor upper;
    lower.colptr.assign(n + 1, 0);
    upper.colptr.assign(n + 1, 0);
    const Index guess = 4 * a.nnz() + n;
    lower.rows.reserve(guess);
    lower.vals.reserve(guess);
    upper.rows.reserve(guess);
    upper.vals.reserve(guess);

    std::vector<std::ptrdiff_t> pinv(n, -1);
    std::vector<double> x(n, 0.0);
    std::vector<Index> xi(n);
    std::vector<Index> pstack(n);
    std::vector<char> marked(n, 0);

    for (Index k = 0; k < n; ++k) {
        lower.colptr[k] = lower.rows.size();
        upper.colptr[k] = upper.rows.size();
        const Index col = q[k];

        const Index top = detail::reach(lower, a_csc, col, pinv, xi, pstack, marked);
        for (Index p = top; p < n; ++p) {
            marked[xi[p]] = 0;
            x[xi[p]] = 0.0;
        }
        for (Index p = a_csc.row_offsets()[col]; p < a_csc.row_offsets()[col + 1]; ++p) {
            x[a_csc.col_indices()[p]] = a_csc.values()[p];
        }
        // Sparse triangular solve x = L \ A(:, col) in topological order.
        for (Index px = top; px < n; ++px) {
            const Index j = xi[px];
            const std::ptrdiff_t jcol = pinv[j];
            if (jcol < 0) continue;
            const double xj = x[j];
            if (xj == 0.0) continue;
            const Index c = static_cast<Index>(jcol);
            for (Index p = lower.colptr[c] + 1; p < lower.colptr[c + 1]; ++p) {
                x[lower.rows[p]] -= lower.vals[p] * xj;
            }
        }

        std::ptrdiff_t ipiv = -1;
        double best = -1.0;
        for (Index p = top; p < n; ++p) {
            const Index i = xi[p];
            if (pinv[i] < 0) {
                const double t = std::abs(x[i]);
                if (t > best) {
                    best = t;
                    ipiv = static_cast<std::ptrdiff_t>(i);
                }
            } else {
                upper.rows.push_back(static_cast<Index>(pinv[i]));
                upper.vals.push_back(x[i]);
            }
        }
        if (ipiv < 0) {
            throw SingularMatrixError(col, "lu_factor: structurally singular, no pivot row for column " +
                                               std::to_string(col) + " at step " + std::to_string(k));
        }
        if (pinv[col] < 0 && std::abs(x[col]) >= options.pivot_threshold * best && x[col] != 0.0) {
            ipiv = static_cast<std::ptrdiff_t>(col);
        }
        const Index prow = static_cast<Index>(ipiv);
        const double pivot = x[prow];
        if (!(std::abs(pivot) >= options.singular_tolerance * row_scale[prow]) || pivot == 0.0) {
            throw SingularMatrixError(prow, "lu_factor: numerically singular, pivot " + std::to_string(pivot) +
                                                " in row " + std::to_string(prow));
        }
        upper.rows.push_back(k);
        upper.vals.push_back(pivot);
        pinv[prow] = static_cast<std::ptrdiff_t>(k);

        lower.rows.push_back(prow);
        lower.vals.push_back(1.0);
        for (Index p = top; p < n; ++p) {
            const Index i = xi[p];
            if (pinv[i] < 0) {
                lower.rows.push_back(i);
                lower.vals.push_back(x[i] / pivot);
            }
            x[i] = 0.0;
        }
    }
    lower.colptr[n] = lower.rows.size();
    upper.colptr[n] = upper.rows.size();

    for (auto& r : lower.rows) r = static_cast<Index>(pinv[r]);

    LuFactors f;
    f.permutation.assign(n, 0);
    for (Index i = 0; i < n; ++i) f.permutation[static_cast<Index>(pinv[i])] = i;
    f.column_permutation = q;
    f.lower = detail::csc_to_csr(n, std::move(lower));
    f.upper = detail::csc_to_csr(n, std::move(upper));
    return f;
}

inline std::vector<double> lu_solve(const LuFactors& f, std::span<const double> b) {
    const Index n = f.size();
    if (b.size() != n) {
        throw DimensionError("lu_solve: rhs has length " + std::to_string(b.size()) + ", expected " +
                             std::to_string(n));
    }
    std::vector<double> y(n);
    for (Index k = 0; k < n; ++k) y[k] = b[f.permutation[k]];

    const auto& lo = f.lower.row_offsets();
    const auto& lc = f.lower.col_indices();
    const auto& lv = f.lower.values();
    for (Index i = 0; i < n; ++i) {
        double s = y[i];
        for (Index p = lo[i]; p < lo[i + 1]; ++p) {
            if (lc[p] < i) s -= lv[p] * y[lc[p]];
        }
        y[i] = s;
    }

    const auto& uo = f.upper.row_offsets();
    const auto& uc = f.upper.col_indices();
    const auto& uv = f.upper.values();
    for (Index ii = n; ii-- > 0;) {
        double s = y[ii];
        double diag = 0.0;
        for (Index p = uo[ii]; p < uo[ii + 1]; ++p) {
            if (uc[p] > ii) {
                s -= uv[p] * y[uc[p]];
            } else if (uc[p] == ii) {
                diag = uv[p];
            }
        }
        y[ii] = s / diag;
    }

    std::vector<double> x(n);
    for (Index k = 0; k < n; ++k) x[f.column_permutation[k]] = y[k];
    return x;
}

}  // namespace ngflow::sparse
