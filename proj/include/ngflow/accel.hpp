#pragma once

// Nonlinear GMRES acceleration of the Picard iteration: history window,
// Gram matrices in the V' or l2 inner product, the constrained and
// unconstrained least-squares forms, and the iteration driver.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ngflow/flow.hpp"

namespace ngflow {

enum class NormKind { VPrime, L2 };

inline const char* to_string(NormKind k) noexcept { return k == NormKind::VPrime ? "vprime" : "l2"; }

/// Inner product used by the least-squares problem.
class NormChoice {
public:
    static NormChoice vprime(std::shared_ptr<const RieszMap> riesz) {
        if (!riesz) throw std::invalid_argument("NormChoice::vprime: a Riesz map is required");
        return NormChoice(NormKind::VPrime, std::move(riesz));
    }
    static NormChoice l2(double h) {
        if (!(h > 0.0)) throw std::invalid_argument("NormChoice::l2: grid spacing must be positive");
        NormChoice c(NormKind::L2, nullptr);
        c.h_ = h;
        return c;
    }

    NormKind kind() const noexcept { return kind_; }
    const std::shared_ptr<const RieszMap>& riesz() const noexcept { return riesz_; }

    double inner(const Residual& a, const Residual& b) const {
        if (kind_ == NormKind::L2) {
            if (a.solenoidal.size() != a.momentum.size() || b.solenoidal.size() != b.momentum.size()) {
                throw std::logic_error("NormChoice::inner: residual is missing its projected momentum");
            }
            return h_ * h_ * detail::dot(a.solenoidal, b.solenoidal);
        }
        if (!a.representer || !b.representer) {
            throw std::logic_error("NormChoice::inner: residual is missing its Riesz representer");
        }
        return discrete_inner_product_h1(riesz_->grid(), *a.representer, *b.representer);
    }

    double norm(const Residual& r) const { return std::sqrt(std::max(inner(r, r), 0.0)); }

private:
    NormChoice(NormKind k, std::shared_ptr<const RieszMap> riesz)
        : kind_(k), riesz_(std::move(riesz)), h_(riesz_ ? riesz_->grid().h() : 0.0) {}

    NormKind kind_;
    std::shared_ptr<const RieszMap> riesz_;
    double h_;
};

/// Square dense matrix, row-major.
class DenseMatrix {
public:
    DenseMatrix() = default;
    explicit DenseMatrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t size() const noexcept { return n_; }
    double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < n_; ++i) t += (*this)(i, i);
        return t;
    }

    /// Leading or trailing principal block.
    DenseMatrix block(std::size_t first, std::size_t count) const {
        if (first + count > n_) throw std::out_of_range("DenseMatrix::block: range exceeds matrix");
        DenseMatrix b(count);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < count; ++j) b(i, j) = (*this)(first + i, first + j);
        return b;
    }

    double quadratic_form(std::span<const double> x) const {
        if (x.size() != n_) throw std::invalid_argument("DenseMatrix::quadratic_form: length mismatch");
        // Extended accumulation: near the minimum the terms cancel to roundoff.
        long double s = 0.0L;
        for (std::size_t i = 0; i < n_; ++i) {
            long double row = 0.0L;
            for (std::size_t j = 0; j < n_; ++j) row += static_cast<long double>((*this)(i, j)) * x[j];
            s += x[i] * row;
        }
        return static_cast<double>(s);
    }

private:
    std::size_t n_ = 0;
    std::vector<double> a_;
};

namespace detail {

// Gaussian elimination with partial pivoting; nullopt on an exactly zero pivot.
inline std::optional<DenseMatrix> dense_solve_many(DenseMatrix a, DenseMatrix rhs) {
    const std::size_t n = a.size();
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
        if (a(p, k) == 0.0) return std::nullopt;
        if (p != k) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a(k, j), a(p, j));
                std::swap(rhs(k, j), rhs(p, j));
            }
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double l = a(i, k) / a(k, k);
            if (l == 0.0) continue;
            for (std::size_t j = k; j < n; ++j) a(i, j) -= l * a(k, j);
            for (std::size_t j = 0; j < n; ++j) rhs(i, j) -= l * rhs(k, j);
        }
    }
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t i = n; i-- > 0;) {
            double s = rhs(i, c);
            for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * rhs(j, c);
            rhs(i, c) = s / a(i, i);
        }
    }
    return rhs;
}

inline double norm1(const DenseMatrix& a) {
    double m = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a(i, j));
        m = std::max(m, s);
    }
    return m;
}

inline std::vector<double> dense_solve(const DenseMatrix& a, std::span<const double> b) {
    DenseMatrix rhs(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) rhs(i, 0) = b[i];
    auto x = dense_solve_many(a, rhs);
    if (!x) throw std::runtime_error("dense_solve: singular matrix");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (*x)(i, 0);
    return out;
}

}  // namespace detail

struct HistoryEntry {
    VelocityField u;
    Residual residual;
};

/// Iterates u_{k-m_k}..u_k and the candidate q(u_k). Indexing follows the
/// coefficient order of the least-squares problem: entry(0) is the candidate,
/// entry(1) is u_k, entry(2) is u_{k-1}, and so on.
class HistoryWindow {
public:
    /// depth == nullopt keeps every iterate.
    explicit HistoryWindow(std::optional<std::size_t> depth = 0) : depth_(depth) {}

    std::optional<std::size_t> depth() const noexcept { return depth_; }
    void set_depth(std::optional<std::size_t> depth) {
        depth_ = depth;
        trim();
    }

    /// Appends the newest iterate and drops entries beyond the depth.
    void push(std::shared_ptr<const HistoryEntry> e) {
        if (!e) throw std::invalid_argument("HistoryWindow::push: null entry");
        iterates_.push_back(std::move(e));
        trim();
    }

    void set_candidate(std::shared_ptr<const HistoryEntry> e) { candidate_ = std::move(e); }
    void clear_candidate() noexcept { candidate_.reset(); }
    bool has_candidate() const noexcept { return static_cast<bool>(candidate_); }

    std::size_t iterate_count() const noexcept { return iterates_.size(); }
    std::size_t size() const noexcept { return iterates_.size() + (candidate_ ? 1 : 0); }

    const HistoryEntry& entry(std::size_t i) const {
        if (!candidate_) throw std::logic_error("HistoryWindow::entry: no candidate set");
        if (i >= size()) throw std::out_of_range("HistoryWindow::entry: index out of range");
        if (i == 0) return *candidate_;
        return *iterates_[iterates_.size() - i];
    }
    const std::shared_ptr<const HistoryEntry>& newest() const {
        if (iterates_.empty()) throw std::logic_error("HistoryWindow::newest: window is empty");
        return iterates_.back();
    }

    /// Oldest first; excludes the candidate.
    const std::deque<std::shared_ptr<const HistoryEntry>>& iterates() const noexcept { return iterates_; }

private:
    void trim() {
        if (!depth_) return;
        while (iterates_.size() > *depth_ + 1) iterates_.pop_front();
    }

    std::optional<std::size_t> depth_;
    std::deque<std::shared_ptr<const HistoryEntry>> iterates_;
    std::shared_ptr<const HistoryEntry> candidate_;
};

inline DenseMatrix gram_matrix(const HistoryWindow& window, const NormChoice& norm) {
    const std::size_t n = window.size();
    DenseMatrix g(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double v = norm.inner(window.entry(i).residual, window.entry(j).residual);
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

struct LsSolution {
    std::vector<double> alpha;  // candidate first, then u_k, u_{k-1}, ...
    double objective = 0.0;
    double gram_cond_estimate = 0.0;
    std::size_t dropped = 0;
    bool fallback = false;     // singular down to two columns
    bool safeguarded = false;  // a unit coefficient vector beat the solve
};

struct LsOptions {
    double cond_limit = 1e12;
};

namespace detail {

inline double objective_of(const DenseMatrix& g, std::span<const double> alpha) {
    return std::sqrt(std::max(g.quadratic_form(alpha), 0.0));
}

}  // namespace detail

/// min alpha^T G alpha subject to sum(alpha) = 1.
inline LsSolution solve_constrained_ls(const DenseMatrix& g, const LsOptions& options = {}) {
    const std::size_t n = g.size();
    if (n == 0) throw std::invalid_argument("solve_constrained_ls: empty Gram matrix");
    LsSolution s;
    s.alpha.assign(n, 0.0);
    s.alpha[0] = 1.0;
    if (n == 1) {
        s.objective = detail::objective_of(g, s.alpha);
        s.gram_cond_estimate = 1.0;
        return s;
    }

    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, g(i, i));
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        s.objective = detail::objective_of(g, s.alpha);
        s.fallback = true;
        return s;
    }

    bool solved = false;
    for (std::size_t active = n; active >= 2; --active) {
        DenseMatrix kkt(active + 1);
        for (std::size_t i = 0; i < active; ++i) {
            for (std::size_t j = 0; j < active; ++j) kkt(i, j) = 2.0 * g(i, j) / scale;
            kkt(i, active) = 1.0;
            kkt(active, i) = 1.0;
        }
        const auto inv = detail::dense_solve_many(kkt, DenseMatrix::identity(active + 1));
        const double cond = inv ? detail::norm1(kkt) * detail::norm1(*inv) : std::numeric_limits<double>::infinity();
        s.gram_cond_estimate = cond;
        if (inv && std::isfinite(cond) && cond <= options.cond_limit) {
            // Solution is the last column of the inverse: rhs = (0, ..., 0, 1).
            std::fill(s.alpha.begin(), s.alpha.end(), 0.0);
            for (std::size_t i = 0; i < active; ++i) s.alpha[i] = (*inv)(i, active);
            s.dropped = n - active;
            solved = true;
            break;
        }
    }
    if (!solved) {
        std::fill(s.alpha.begin(), s.alpha.end(), 0.0);
        s.alpha[0] = 1.0;
        s.dropped = n - 2;
        s.fallback = true;
    }

    s.objective = detail::objective_of(g, s.alpha);
    const double at_candidate = std::sqrt(std::max(g(0, 0), 0.0));
    const double at_previous = std::sqrt(std::max(g(1, 1), 0.0));
    if (s.objective > std::min(at_candidate, at_previous)) {
        std::fill(s.alpha.begin(), s.alpha.end(), 0.0);
        if (at_candidate <= at_previous) {
            s.alpha[0] = 1.0;
            s.objective = at_candidate;
        } else {
            s.alpha[1] = 1.0;
            s.objective = at_previous;
        }
        s.safeguarded = true;
    }
    return s;
}

/// Unconstrained form: min over beta of |g~ + sum_i beta_i (g~ - g(u_{k-i}))|,
/// i = 0..m_k, where g~ is the candidate residual. beta_i pairs with entry(i + 1).
inline std::vector<double> solve_unconstrained_ls(const DenseMatrix& g) {
    const std::size_t n = g.size();
    if (n == 0) throw std::invalid_argument("solve_unconstrained_ls: empty Gram matrix");
    const std::size_t m = n - 1;
    if (m == 0) return {};
    DenseMatrix normal(m);
    std::vector<double> rhs(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) normal(i, j) = g(0, 0) - g(0, i + 1) - g(0, j + 1) + g(i + 1, j + 1);
        rhs[i] = -(g(0, 0) - g(0, i + 1));
    }
    if (normal.trace() == 0.0) return std::vector<double>(m, 0.0);
    DenseMatrix shifted = normal;
    const double tikhonov = 1e-12 * normal.trace();
    for (std::size_t i = 0; i < m; ++i) shifted(i, i) += tikhonov;
    auto beta = detail::dense_solve(shifted, rhs);
    // Iterated Tikhonov: removes the shift bias where the normal matrix is
    // well conditioned, leaves near-null directions damped.
    for (int sweep = 0; sweep < 2; ++sweep) {
        std::vector<double> r(rhs);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) r[i] -= normal(i, j) * beta[j];
        const auto d = detail::dense_solve(shifted, r);
        for (std::size_t i = 0; i < m; ++i) beta[i] += d[i];
    }
    return beta;
}

inline std::vector<double> solve_unconstrained_ls(const HistoryWindow& window, const NormChoice& norm) {
    return solve_unconstrained_ls(gram_matrix(window, norm));
}

/// alpha_0 = 1 + sum(beta), alpha_{i+1} = -beta_i.
inline std::vector<double> beta_to_alpha(std::span<const double> beta) {
    std::vector<double> alpha(beta.size() + 1);
    double sum = 0.0;
    for (double b : beta) sum += b;
    alpha[0] = 1.0 + sum;
    for (std::size_t i = 0; i < beta.size(); ++i) alpha[i + 1] = -beta[i];
    return alpha;
}

inline VelocityField ngmres_update(const HistoryWindow& window, std::span<const double> alpha) {
    if (alpha.size() != window.size()) {
        throw std::invalid_argument("ngmres_update: " + std::to_string(alpha.size()) + " coefficients for a window of " +
                                    std::to_string(window.size()));
    }
    const double sum = std::accumulate(alpha.begin(), alpha.end(), 0.0);
    if (!(std::abs(sum - 1.0) <= 1e-8)) {
        throw std::invalid_argument("ngmres_update: coefficients sum to " + std::to_string(sum) + ", expected 1");
    }
    const bool picard = alpha[0] == 1.0 && std::all_of(alpha.begin() + 1, alpha.end(), [](double a) { return a == 0.0; });
    if (picard) return window.entry(0).u;

    VelocityField out = window.entry(0).u;
    out *= alpha[0];
    for (std::size_t i = 1; i < alpha.size(); ++i) {
        if (alpha[i] != 0.0) out.axpy(alpha[i], window.entry(i).u);
    }
    return out;
}

/// Window depth policy: fixed m, unbounded, or m_early until the V' residual
/// drops below switch_tol and m_late from then on.
class DepthSchedule {
public:
    static DepthSchedule fixed(std::size_t m) { return DepthSchedule(m, 0.0, m, false); }
    static DepthSchedule unbounded() { return DepthSchedule(std::nullopt, 0.0, std::nullopt, false); }
    static DepthSchedule switched(std::optional<std::size_t> early, double switch_tol, std::optional<std::size_t> late) {
        if (!(switch_tol > 0.0)) throw std::invalid_argument("DepthSchedule: switch tolerance must be positive");
        return DepthSchedule(early, switch_tol, late, true);
    }

    bool is_switched() const noexcept { return switches_; }
    std::optional<std::size_t> early() const noexcept { return early_; }
    std::optional<std::size_t> late() const noexcept { return late_; }
    double switch_tol() const noexcept { return switch_tol_; }

    /// Depth for a residual of size g; once the switch fires it stays on.
    std::optional<std::size_t> depth(double g) {
        if (switches_ && !latched_ && g < switch_tol_) latched_ = true;
        return latched_ ? late_ : early_;
    }
    bool latched() const noexcept { return latched_; }

    /// "3", "inf" or "0:0.001:10".
    std::string describe() const {
        auto one = [](std::optional<std::size_t> m) { return m ? std::to_string(*m) : std::string("inf"); };
        if (!switches_) return one(early_);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", switch_tol_);
        return one(early_) + ":" + buf + ":" + one(late_);
    }

private:
    DepthSchedule(std::optional<std::size_t> early, double tol, std::optional<std::size_t> late, bool switches)
        : early_(early), late_(late), switch_tol_(tol), switches_(switches) {}

    std::optional<std::size_t> early_;
    std::optional<std::size_t> late_;
    double switch_tol_;
    bool switches_;
    bool latched_ = false;
};

enum class Mode { Picard, Ngmres };
enum class Status { Converged, MaxIters, Diverged };

inline const char* to_string(Mode m) noexcept { return m == Mode::Picard ? "picard" : "ngmres"; }
inline const char* to_string(Status s) noexcept {
    switch (s) {
        case Status::Converged: return "converged";
        case Status::MaxIters: return "max_iters";
        case Status::Diverged: return "diverged";
    }
    return "unknown";
}

struct IterationRecord {
    std::size_t k = 0;
    double g_vprime = 0.0;
    double g_l2 = 0.0;
    double picard_resid_h1 = std::numeric_limits<double>::quiet_NaN();
    double theta = std::numeric_limits<double>::quiet_NaN();
    double gamma = std::numeric_limits<double>::quiet_NaN();
    double kappa_hat = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> alpha;
    double max_abs_alpha = std::numeric_limits<double>::quiet_NaN();
    double wall_time_ms = 0.0;

    // diagnostics
    double objective = std::numeric_limits<double>::quiet_NaN();
    double lemma1_lhs = std::numeric_limits<double>::quiet_NaN();
    double lemma1_rhs = std::numeric_limits<double>::quiet_NaN();
    bool lemma1_holds = true;
    double max_divergence = std::numeric_limits<double>::quiet_NaN();
    std::size_t window_size = 0;
    std::size_t dropped = 0;
    bool fallback = false;
    bool safeguarded = false;
    double beta_gap_h1 = std::numeric_limits<double>::quiet_NaN();

    /// True for the terminal record, which has no step attached.
    bool final() const noexcept { return alpha.empty(); }
};

struct DriverConfig {
    Mode mode = Mode::Ngmres;
    DepthSchedule depth = DepthSchedule::fixed(0);
    NormKind norm = NormKind::VPrime;
    double tol = 1e-8;
    std::size_t max_iters = 100;
    sparse::LuOptions lu{};
    LsOptions ls{};
    std::shared_ptr<const RieszMap> riesz;  // built from the problem grid when null
    std::optional<VelocityField> initial;   // zero interior velocity when empty

    bool force_picard_coefficients = false;  // ngmres mode with alpha fixed at (1, 0, ...)
    bool cross_check_beta = false;           // also form the unconstrained iterate and log the gap
    std::function<void(const IterationRecord&)> on_record;
};

class SolverFailure : public std::runtime_error {
public:
    SolverFailure(std::size_t iteration, const std::string& what)
        : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

struct DriveResult {
    std::vector<IterationRecord> records;
    Status status = Status::MaxIters;
    std::string message;
    std::size_t linear_solves = 0;
    std::size_t riesz_solves = 0;
    double wall_ms = 0.0;
    std::optional<VelocityField> solution;

    std::size_t iterations() const noexcept { return records.empty() ? 0 : records.back().k; }
};

namespace detail {

inline bool finite_residual(const Residual& r) {
    return std::isfinite(r.l2_norm) && (!r.vprime_norm || std::isfinite(*r.vprime_norm));
}

}  // namespace detail

/// Runs Picard or NGMRES from the configured initial guess until the V'
/// residual norm drops to tol, max_iters steps are taken, or the residual
/// stops being finite. A failed linear solve throws SolverFailure.
inline DriveResult drive(const FlowProblem& prob, const DriverConfig& cfg) {
    using clock = std::chrono::steady_clock;
    const auto& g = prob.grid();
    if (!(cfg.tol > 0.0)) throw std::invalid_argument("drive: tol must be positive");

    const auto t_start = clock::now();
    DriveResult out;
    auto riesz = cfg.riesz;
    if (riesz && !(riesz->grid() == g)) throw std::invalid_argument("drive: Riesz map built for a different grid");
    if (!riesz) {
        try {
            riesz = std::make_shared<const RieszMap>(g, cfg.lu);
        } catch (const std::exception& e) {
            throw SolverFailure(0, std::string("Riesz factorization failed: ") + e.what());
        }
    }
    const NormChoice vprime = NormChoice::vprime(riesz);
    const NormChoice norm = cfg.norm == NormKind::VPrime ? vprime : NormChoice::l2(g.h());
    DepthSchedule schedule = cfg.depth;
    const bool forced = cfg.mode == Mode::Picard || cfg.force_picard_coefficients;

    auto entry = std::make_shared<HistoryEntry>(HistoryEntry{cfg.initial ? *cfg.initial : prob.initial_guess(), {}});
    detail::require_shape(g, entry->u, "drive");
    entry->residual = nonlinear_residual(prob, entry->u);
    if (detail::finite_residual(entry->residual)) out.riesz_solves += ensure_representer(*riesz, entry->residual);

    HistoryWindow window(schedule.depth(std::numeric_limits<double>::infinity()));
    auto emit = [&](IterationRecord rec) {
        if (cfg.on_record) cfg.on_record(rec);
        out.records.push_back(std::move(rec));
    };

    for (std::size_t k = 0;; ++k) {
        const auto t_iter = clock::now();
        IterationRecord rec;
        rec.k = k;
        const Residual& r_k = entry->residual;
        rec.g_l2 = r_k.l2_norm;
        rec.g_vprime = r_k.vprime_norm.value_or(std::numeric_limits<double>::quiet_NaN());

        if (!detail::finite_residual(r_k) || !std::isfinite(rec.g_vprime)) {
            out.status = Status::Diverged;
            out.message = "non-finite residual at iteration " + std::to_string(k);
            emit(std::move(rec));
            break;
        }
        if (rec.g_vprime <= cfg.tol) {
            out.status = Status::Converged;
            emit(std::move(rec));
            break;
        }
        if (k >= cfg.max_iters) {
            out.status = Status::MaxIters;
            emit(std::move(rec));
            break;
        }

        window.set_depth(schedule.depth(rec.g_vprime));
        window.push(entry);

        PicardStep step = [&] {
            try {
                return picard_solve(prob, entry->u, r_k, cfg.lu);
            } catch (const std::exception& e) {
                throw SolverFailure(k, std::string("Oseen solve failed: ") + e.what());
            }
        }();
        ++out.linear_solves;
        const auto lemma = lemma1_check(prob, step, r_k);
        rec.lemma1_lhs = lemma.lhs;
        rec.lemma1_rhs = lemma.rhs;
        rec.lemma1_holds = lemma.holds;
        rec.picard_resid_h1 = step.w_h1;
        rec.max_divergence = step.max_divergence;

        auto cand = std::make_shared<HistoryEntry>(HistoryEntry{std::move(step.u_new), {}});
        cand->residual = nonlinear_residual(prob, cand->u);
        if (!detail::finite_residual(cand->residual)) {
            out.status = Status::Diverged;
            out.message = "non-finite candidate residual at iteration " + std::to_string(k);
            emit(std::move(rec));
            break;
        }
        out.riesz_solves += ensure_representer(*riesz, cand->residual);
        window.set_candidate(cand);
        rec.window_size = window.size();
        rec.kappa_hat = *r_k.vprime_norm > 0.0 ? *cand->residual.vprime_norm / *r_k.vprime_norm : 0.0;

        LsSolution ls;
        DenseMatrix gram;
        if (forced) {
            // Plain Picard reports its gains in V' whatever norm was requested.
            const NormChoice& gain = cfg.mode == Mode::Picard ? vprime : norm;
            ls.alpha.assign(window.size(), 0.0);
            ls.alpha[0] = 1.0;
            gram = DenseMatrix(2);
            gram(0, 0) = gain.inner(cand->residual, cand->residual);
            gram(1, 1) = gain.inner(r_k, r_k);
            ls.objective = std::sqrt(std::max(gram(0, 0), 0.0));
        } else {
            gram = gram_matrix(window, norm);
            ls = solve_constrained_ls(gram, cfg.ls);
        }
        const double g_k = std::sqrt(std::max(gram(1, 1), 0.0));
        const double g_cand = std::sqrt(std::max(gram(0, 0), 0.0));
        rec.objective = ls.objective;
        rec.theta = g_k > 0.0 ? ls.objective / g_k : 0.0;
        rec.gamma = g_cand > 0.0 ? ls.objective / g_cand : 0.0;
        rec.alpha = ls.alpha;
        rec.max_abs_alpha = 0.0;
        for (double a : ls.alpha) rec.max_abs_alpha = std::max(rec.max_abs_alpha, std::abs(a));
        rec.dropped = ls.dropped;
        rec.fallback = ls.fallback;
        rec.safeguarded = ls.safeguarded;

        std::shared_ptr<HistoryEntry> next;
        const bool unit_candidate =
            ls.alpha[0] == 1.0 && std::all_of(ls.alpha.begin() + 1, ls.alpha.end(), [](double a) { return a == 0.0; });
        if (unit_candidate) {
            next = cand;
        } else {
            next = std::make_shared<HistoryEntry>(HistoryEntry{ngmres_update(window, ls.alpha), {}});
            next->residual = nonlinear_residual(prob, next->u);
            if (detail::finite_residual(next->residual)) out.riesz_solves += ensure_representer(*riesz, next->residual);
        }
        if (cfg.cross_check_beta && !forced) {
            const auto alpha_b = beta_to_alpha(solve_unconstrained_ls(gram));
            const auto u_b = ngmres_update(window, alpha_b);
            rec.beta_gap_h1 = h1_seminorm(g, u_b - next->u);
        }
        window.clear_candidate();

        rec.wall_time_ms = std::chrono::duration<double, std::milli>(clock::now() - t_iter).count();
        emit(std::move(rec));
        entry = std::move(next);
    }
    out.solution = entry->u;
    out.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t_start).count();
    return out;
}

}  // namespace ngflow
