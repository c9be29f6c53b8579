#pragma once

// Navier-Stokes fixed-point layer on the MAC grid: the Picard (Oseen) map,
// the nonlinear momentum residual, and its dual norm through a Stokes-type
// Riesz solve.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ngflow/grid.hpp"
#include "ngflow/sparse.hpp"

namespace ngflow {

/// Discrete Leray projection onto divergence-free interior face vectors:
/// P m = m - B^T phi with (B B^T) phi = B m, B the divergence. P m is the
/// momentum defect corrected by the pressure gradient that minimizes its
/// Euclidean norm.
class LerayProjector {
public:
    explicit LerayProjector(const MacGrid& g) : grid_(g), div_(divergence_matrix(g)), div_t_(div_.transpose()) {
        // Cell 0 is pinned; the remaining rows of B B^T are nonsingular.
        std::vector<sparse::Triplet> t;
        for (std::size_t f = 0; f < div_t_.nrows(); ++f) {
            for (auto p = div_t_.row_offsets()[f]; p < div_t_.row_offsets()[f + 1]; ++p) {
                for (auto q = div_t_.row_offsets()[f]; q < div_t_.row_offsets()[f + 1]; ++q) {
                    const auto a = div_t_.col_indices()[p];
                    const auto b = div_t_.col_indices()[q];
                    if (a == 0 || b == 0) continue;
                    t.push_back({a - 1, b - 1, div_t_.values()[p] * div_t_.values()[q]});
                }
            }
        }
        const std::size_t m = g.cells() - 1;
        const auto poisson = sparse::assemble(t, m, m);
        std::vector<sparse::Point2> pts(m);
        const std::size_t n = g.n();
        for (std::size_t c = 1; c < g.cells(); ++c) pts[c - 1] = {(c % n + 0.5) * g.h(), (c / n + 0.5) * g.h()};
        sparse::LuOptions o;
        o.column_order = sparse::coordinate_dissection(poisson, pts);
        lu_ = std::make_shared<const sparse::LuFactors>(sparse::lu_factor(poisson, o));
    }

    const MacGrid& grid() const noexcept { return grid_; }

    InteriorVector project(std::span<const double> momentum) const {
        if (momentum.size() != grid_.interior_velocity()) throw ShapeError("LerayProjector: vector length mismatch");
        const auto bm = div_.multiply(momentum);
        const auto phi = sparse::lu_solve(*lu_, std::span<const double>(bm).subspan(1));
        std::vector<double> full(grid_.cells(), 0.0);
        std::copy(phi.begin(), phi.end(), full.begin() + 1);
        const auto grad = div_t_.multiply(full);
        InteriorVector out(momentum.begin(), momentum.end());
        for (std::size_t k = 0; k < out.size(); ++k) out[k] -= grad[k];
        return out;
    }

private:
    MacGrid grid_;
    sparse::SparseMatrix div_;
    sparse::SparseMatrix div_t_;
    std::shared_ptr<const sparse::LuFactors> lu_;
};

class FlowProblem {
public:
    FlowProblem(MacGrid grid, double nu, BoundaryData bc = {}, InteriorVector force = {})
        : grid_(grid), nu_(nu), bc_(bc), force_(std::move(force)), projector_(std::make_shared<const LerayProjector>(grid)) {
        if (!(nu_ > 0.0) || !std::isfinite(nu_)) {
            throw std::invalid_argument("FlowProblem: viscosity must be positive and finite");
        }
        if (!force_.empty() && force_.size() != grid_.interior_velocity()) {
            throw ShapeError("FlowProblem: force has " + std::to_string(force_.size()) + " entries, expected " +
                             std::to_string(grid_.interior_velocity()));
        }
    }

    /// Lid-driven cavity with nu = 1/re and no body force.
    static FlowProblem cavity(std::size_t cells, double re, double lid_speed = 1.0) {
        if (!(re > 0.0)) throw std::invalid_argument("FlowProblem::cavity: Reynolds number must be positive");
        return FlowProblem(MacGrid(cells), 1.0 / re, BoundaryData{lid_speed});
    }

    const MacGrid& grid() const noexcept { return grid_; }
    double nu() const noexcept { return nu_; }
    const BoundaryData& bc() const noexcept { return bc_; }
    const InteriorVector& force() const noexcept { return force_; }
    const LerayProjector& projector() const noexcept { return *projector_; }

    /// Zero interior velocity; the boundary data enters through bc().
    VelocityField initial_guess() const { return VelocityField(grid_); }

private:
    MacGrid grid_;
    double nu_;
    BoundaryData bc_;
    InteriorVector force_;
    std::shared_ptr<const LerayProjector> projector_;
};

struct SaddleSolution {
    VelocityField velocity;  // wall faces zero
    PressureField pressure;  // mean zero
};

namespace detail {

// [K  s B^T; s B  0] with B = -div restricted to interior faces and s a
// pressure scale that balances the two blocks for pivoting. The pressure in
// cell 0 and its continuity row are dropped; that row is implied by the
// others because the wall flux vanishes.
inline sparse::SparseMatrix saddle_matrix(const MacGrid& g, const sparse::SparseMatrix& velocity_block,
                                          double pressure_scale) {
    const std::size_t nvel = g.interior_velocity();
    const std::size_t size = nvel + g.cells() - 1;
    const auto div = divergence_matrix(g);
    std::vector<sparse::Triplet> t;
    t.reserve(velocity_block.nnz() + 2 * div.nnz());
    for (std::size_t r = 0; r < velocity_block.nrows(); ++r) {
        for (auto p = velocity_block.row_offsets()[r]; p < velocity_block.row_offsets()[r + 1]; ++p) {
            t.push_back({r, velocity_block.col_indices()[p], velocity_block.values()[p]});
        }
    }
    for (std::size_t c = 1; c < g.cells(); ++c) {
        const std::size_t r = nvel + c - 1;
        for (auto p = div.row_offsets()[c]; p < div.row_offsets()[c + 1]; ++p) {
            const double b = -pressure_scale * div.values()[p];
            t.push_back({r, div.col_indices()[p], b});
            t.push_back({div.col_indices()[p], r, b});
        }
    }
    return sparse::assemble(t, size, size);
}

// Physical positions of the saddle unknowns, used for the dissection order.
inline std::vector<sparse::Point2> saddle_coordinates(const MacGrid& g) {
    const std::size_t n = g.n();
    const double h = g.h();
    std::vector<sparse::Point2> pts(g.interior_velocity() + g.cells() - 1);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 1; i < n; ++i) pts[g.u_dof(i, j)] = {i * h, (j + 0.5) * h};
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) pts[g.v_dof(i, j)] = {(i + 0.5) * h, j * h};
    for (std::size_t c = 1; c < g.cells(); ++c) {
        pts[g.interior_velocity() + c - 1] = {(c % n + 0.5) * h, (c / n + 0.5) * h};
    }
    return pts;
}

struct SaddleFactor {
    sparse::SparseMatrix matrix;
    sparse::LuFactors lu;
    double pressure_scale = 1.0;
};

inline SaddleFactor factor_saddle(const MacGrid& g, sparse::SparseMatrix saddle, double pressure_scale,
                                  sparse::LuOptions options) {
    if (options.column_order.empty()) {
        options.column_order = sparse::coordinate_dissection(saddle, saddle_coordinates(g));
    }
    auto lu = sparse::lu_factor(saddle, options);
    return SaddleFactor{std::move(saddle), std::move(lu), pressure_scale};
}

// Solves the saddle system so that the velocity satisfies
// div(velocity) = continuity in every cell but cell 0. A few steps of
// iterative refinement against the assembled matrix clean up the pivoting
// error on fine grids.
inline SaddleSolution solve_saddle(const MacGrid& g, const SaddleFactor& f, std::span<const double> momentum,
                                   std::span<const double> continuity) {
    const std::size_t nvel = g.interior_velocity();
    if (momentum.size() != nvel || continuity.size() != g.cells()) {
        throw ShapeError("solve_saddle: right-hand side length mismatch");
    }
    const double scale = f.pressure_scale;
    std::vector<double> rhs(nvel + g.cells() - 1);
    std::copy(momentum.begin(), momentum.end(), rhs.begin());
    for (std::size_t c = 1; c < g.cells(); ++c) rhs[nvel + c - 1] = -scale * continuity[c];
    auto x = sparse::lu_solve(f.lu, rhs);

    double previous = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < 4; ++sweep) {
        auto r = f.matrix.multiply(x);
        double rmax = 0.0;
        for (std::size_t k = 0; k < r.size(); ++k) {
            r[k] = rhs[k] - r[k];
            rmax = std::max(rmax, std::abs(r[k]));
        }
        if (rmax == 0.0 || !(rmax < 0.5 * previous)) break;
        previous = rmax;
        const auto dx = sparse::lu_solve(f.lu, r);
        for (std::size_t k = 0; k < x.size(); ++k) x[k] += dx[k];
    }

    SaddleSolution s{VelocityField(g), PressureField(g)};
    scatter_interior(g, std::span<const double>(x.data(), nvel), s.velocity);
    auto& p = s.pressure.data();
    p[0] = 0.0;
    for (std::size_t c = 1; c < g.cells(); ++c) p[c] = scale * x[nvel + c - 1];
    s.pressure.subtract_mean();
    return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

}  // namespace detail

/// Factorized Stokes operator [-lap_0, B^T; B, 0]; built once per grid and
/// shared by every Riesz solve on that grid.
class RieszMap {
public:
    explicit RieszMap(const MacGrid& g, const sparse::LuOptions& options = {})
        : grid_(g),
          factor_(std::make_shared<const detail::SaddleFactor>(detail::factor_saddle(
              g, detail::saddle_matrix(g, laplacian_matrix(g), 1.0 / g.h()), 1.0 / g.h(), options))) {}

    const MacGrid& grid() const noexcept { return grid_; }

    SaddleSolution solve(std::span<const double> momentum) const {
        const std::vector<double> zero(grid_.cells(), 0.0);
        return detail::solve_saddle(grid_, *factor_, momentum, zero);
    }

private:
    MacGrid grid_;
    std::shared_ptr<const detail::SaddleFactor> factor_;
};

/// Momentum defect g(u) = -nu lap u + convect(u, u) - f at interior faces.
/// The Riesz representer and dual norm are filled on demand.
struct Residual {
    InteriorVector momentum;
    InteriorVector solenoidal;  // Leray projection of momentum
    std::optional<VelocityField> representer;
    std::optional<PressureField> multiplier;
    std::optional<double> vprime_norm;
    double l2_norm = 0.0;  // h times the Euclidean norm of the projected momentum

    bool has_representer() const noexcept { return representer.has_value() && vprime_norm.has_value(); }
};

struct PicardStep {
    VelocityField u_new;  // q(u_k)
    PressureField p_new;
    VelocityField w;      // q(u_k) - u_k
    double w_h1 = 0.0;
    double max_divergence = 0.0;
};

struct Lemma1Check {
    double lhs = 0.0;  // nu |grad w_{k+1}|
    double rhs = 0.0;  // |g(u_k)|_{V'}
    bool holds = false;
};

inline Residual nonlinear_residual(const FlowProblem& prob, const VelocityField& u) {
    const auto& g = prob.grid();
    detail::require_shape(g, u, "nonlinear_residual");
    Residual r;
    r.momentum = convect(g, u, u, prob.bc());
    const auto lap = vector_laplacian(g, u, prob.bc());
    const auto& f = prob.force();
    for (std::size_t k = 0; k < r.momentum.size(); ++k) {
        r.momentum[k] -= prob.nu() * lap[k];
        if (!f.empty()) r.momentum[k] -= f[k];
    }
    r.solenoidal = prob.projector().project(r.momentum);
    r.l2_norm = g.h() * std::sqrt(detail::dot(r.solenoidal, r.solenoidal));
    return r;
}

/// Fills the representer of r unless already present. Returns true when a
/// Stokes solve was performed.
inline bool ensure_representer(const RieszMap& riesz, Residual& r) {
    if (r.has_representer()) return false;
    if (r.momentum.size() != riesz.grid().interior_velocity()) {
        throw ShapeError("riesz_representer: residual does not match the grid");
    }
    auto sol = riesz.solve(r.momentum);
    r.vprime_norm = h1_seminorm(riesz.grid(), sol.velocity);
    r.representer = std::move(sol.velocity);
    r.multiplier = std::move(sol.pressure);
    return true;
}

inline Residual riesz_representer(const RieszMap& riesz, Residual r) {
    ensure_representer(riesz, r);
    return r;
}

/// One Picard step q(u_k): solves the Oseen system linearized at u_k.
///
/// The system is solved for the correction w = q(u_k) - u_k,
///   [nu A + C(u_k), B^T; B, 0] (w, p) = (-g(u_k), div u_k),
/// which is algebraically the same Oseen problem but keeps w accurate to the
/// size of g(u_k) instead of the size of u_k.
inline PicardStep picard_solve(const FlowProblem& prob, const VelocityField& u_k, const Residual& r_k,
                               const sparse::LuOptions& options = {}) {
    const auto& g = prob.grid();
    detail::require_shape(g, u_k, "picard_solve");
    if (r_k.momentum.size() != g.interior_velocity()) throw ShapeError("picard_solve: residual size mismatch");

    auto block = laplacian_matrix(g);
    {
        const auto conv = convection_matrix(g, u_k);
        std::vector<sparse::Triplet> t;
        t.reserve(block.nnz() + conv.nnz());
        for (std::size_t r = 0; r < block.nrows(); ++r) {
            for (auto p = block.row_offsets()[r]; p < block.row_offsets()[r + 1]; ++p)
                t.push_back({r, block.col_indices()[p], prob.nu() * block.values()[p]});
            for (auto p = conv.row_offsets()[r]; p < conv.row_offsets()[r + 1]; ++p)
                t.push_back({r, conv.col_indices()[p], conv.values()[p]});
        }
        block = sparse::assemble(t, block.nrows(), block.ncols());
    }
    const double scale = prob.nu() / g.h();
    const auto factor = detail::factor_saddle(g, detail::saddle_matrix(g, block, scale), scale, options);

    InteriorVector rhs(r_k.momentum.size());
    for (std::size_t k = 0; k < rhs.size(); ++k) rhs[k] = -r_k.momentum[k];
    auto div_uk = divergence(g, u_k).data();
    for (auto& d : div_uk) d = -d;
    auto sol = detail::solve_saddle(g, factor, rhs, div_uk);

    PicardStep step{u_k, std::move(sol.pressure), std::move(sol.velocity), 0.0, 0.0};
    step.u_new.axpy(1.0, step.w);
    step.w_h1 = h1_seminorm(g, step.w);
    step.max_divergence = divergence(g, step.u_new).max_abs();
    return step;
}

inline PicardStep picard_solve(const FlowProblem& prob, const VelocityField& u_k,
                               const sparse::LuOptions& options = {}) {
    return picard_solve(prob, u_k, nonlinear_residual(prob, u_k), options);
}

/// nu |grad w_{k+1}| <= |g(u_k)|_{V'}, up to a relative rounding allowance.
inline Lemma1Check lemma1_check(const FlowProblem& prob, const PicardStep& step, const Residual& r_k) {
    if (!r_k.vprime_norm) throw std::logic_error("lemma1_check: residual has no dual norm");
    Lemma1Check c;
    c.lhs = prob.nu() * step.w_h1;
    c.rhs = *r_k.vprime_norm;
    c.holds = c.lhs <= c.rhs * (1.0 + 1e-10);
    return c;
}

}  // namespace ngflow
