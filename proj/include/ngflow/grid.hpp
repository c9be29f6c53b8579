#pragma once

// Staggered (MAC) discretization of the unit square for the lid-driven cavity.
//
// Layout on an n x n grid with h = 1/n:
//   u(i, j), i = 0..n,   j = 0..n-1  at (i h, (j + 1/2) h)   vertical faces
//   v(i, j), i = 0..n-1, j = 0..n    at ((i + 1/2) h, j h)   horizontal faces
//   p(i, j), i, j = 0..n-1          at cell centres
//
// Faces on the walls carry the normal velocity and are stored in the field.
// Tangential wall values are not stored: the top wall moves with the lid
// speed, all other tangential values are zero. The Laplacian reaches them
// through a reflected ghost value (2 * wall - interior).

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ngflow/sparse.hpp"

namespace ngflow {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Interior velocity unknowns in the numbering of MacGrid::u_dof / v_dof.
using InteriorVector = std::vector<double>;

class MacGrid {
public:
    explicit MacGrid(std::size_t cells) : n_(cells), h_(1.0 / static_cast<double>(cells)) {
        if (cells < 4) {
            throw std::invalid_argument("MacGrid: need at least 4 cells per side, got " + std::to_string(cells));
        }
    }

    std::size_t nx() const noexcept { return n_; }
    std::size_t ny() const noexcept { return n_; }
    std::size_t n() const noexcept { return n_; }
    double h() const noexcept { return h_; }

    std::size_t u_faces() const noexcept { return (n_ + 1) * n_; }
    std::size_t v_faces() const noexcept { return n_ * (n_ + 1); }
    std::size_t cells() const noexcept { return n_ * n_; }
    std::size_t interior_u() const noexcept { return (n_ - 1) * n_; }
    std::size_t interior_v() const noexcept { return n_ * (n_ - 1); }
    std::size_t interior_velocity() const noexcept { return interior_u() + interior_v(); }

    /// Interior u unknown, 1 <= i <= n-1.
    std::size_t u_dof(std::size_t i, std::size_t j) const noexcept { return j * (n_ - 1) + (i - 1); }
    /// Interior v unknown, 1 <= j <= n-1.
    std::size_t v_dof(std::size_t i, std::size_t j) const noexcept { return interior_u() + (j - 1) * n_ + i; }
    std::size_t cell(std::size_t i, std::size_t j) const noexcept { return j * n_ + i; }

    bool operator==(const MacGrid&) const = default;

private:
    std::size_t n_;
    double h_;
};

struct BoundaryData {
    double lid_speed = 1.0;

    static BoundaryData homogeneous() { return BoundaryData{0.0}; }
};

class VelocityField {
public:
    explicit VelocityField(const MacGrid& g) : n_(g.n()), u_(g.u_faces(), 0.0), v_(g.v_faces(), 0.0) {}

    std::size_t n() const noexcept { return n_; }
    bool conforms(const MacGrid& g) const noexcept {
        return n_ == g.n() && u_.size() == g.u_faces() && v_.size() == g.v_faces();
    }

    double& u(std::size_t i, std::size_t j) { return u_[j * (n_ + 1) + i]; }
    double u(std::size_t i, std::size_t j) const { return u_[j * (n_ + 1) + i]; }
    double& v(std::size_t i, std::size_t j) { return v_[j * n_ + i]; }
    double v(std::size_t i, std::size_t j) const { return v_[j * n_ + i]; }

    std::vector<double>& u_data() noexcept { return u_; }
    const std::vector<double>& u_data() const noexcept { return u_; }
    std::vector<double>& v_data() noexcept { return v_; }
    const std::vector<double>& v_data() const noexcept { return v_; }

    /// this += alpha * other
    VelocityField& axpy(double alpha, const VelocityField& other) {
        if (other.n_ != n_) throw ShapeError("VelocityField::axpy: grid mismatch");
        for (std::size_t k = 0; k < u_.size(); ++k) u_[k] += alpha * other.u_[k];
        for (std::size_t k = 0; k < v_.size(); ++k) v_[k] += alpha * other.v_[k];
        return *this;
    }

    VelocityField& operator*=(double s) {
        for (auto& x : u_) x *= s;
        for (auto& x : v_) x *= s;
        return *this;
    }

    friend VelocityField operator-(VelocityField a, const VelocityField& b) { return a.axpy(-1.0, b); }
    friend VelocityField operator+(VelocityField a, const VelocityField& b) { return a.axpy(1.0, b); }
    bool operator==(const VelocityField&) const = default;

private:
    std::size_t n_;
    std::vector<double> u_;
    std::vector<double> v_;
};

class PressureField {
public:
    explicit PressureField(const MacGrid& g) : n_(g.n()), p_(g.cells(), 0.0) {}

    std::size_t n() const noexcept { return n_; }
    double& at(std::size_t i, std::size_t j) { return p_[j * n_ + i]; }
    double at(std::size_t i, std::size_t j) const { return p_[j * n_ + i]; }
    std::vector<double>& data() noexcept { return p_; }
    const std::vector<double>& data() const noexcept { return p_; }

    double mean() const {
        double s = 0.0;
        for (double x : p_) s += x;
        return s / static_cast<double>(p_.size());
    }
    void subtract_mean() {
        const double m = mean();
        for (auto& x : p_) x -= m;
    }
    double max_abs() const {
        double m = 0.0;
        for (double x : p_) m = std::max(m, std::abs(x));
        return m;
    }

private:
    std::size_t n_;
    std::vector<double> p_;
};

namespace detail {

inline void require_shape(const MacGrid& g, const VelocityField& w, const char* op) {
    if (!w.conforms(g)) {
        throw ShapeError(std::string(op) + ": field has n=" + std::to_string(w.n()) + ", grid has n=" +
                         std::to_string(g.n()));
    }
}

}  // namespace detail

/// Zeroes the normal velocity on every wall face.
inline void impose_boundary(const MacGrid& g, VelocityField& w) {
    detail::require_shape(g, w, "impose_boundary");
    const std::size_t n = g.n();
    for (std::size_t j = 0; j < n; ++j) {
        w.u(0, j) = 0.0;
        w.u(n, j) = 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        w.v(i, 0) = 0.0;
        w.v(i, n) = 0.0;
    }
}

inline InteriorVector gather_interior(const MacGrid& g, const VelocityField& w) {
    detail::require_shape(g, w, "gather_interior");
    const std::size_t n = g.n();
    InteriorVector x(g.interior_velocity());
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 1; i < n; ++i) x[g.u_dof(i, j)] = w.u(i, j);
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) x[g.v_dof(i, j)] = w.v(i, j);
    return x;
}

/// Overwrites interior faces of w with x; wall faces are left untouched.
inline void scatter_interior(const MacGrid& g, std::span<const double> x, VelocityField& w) {
    detail::require_shape(g, w, "scatter_interior");
    if (x.size() != g.interior_velocity()) throw ShapeError("scatter_interior: vector length mismatch");
    const std::size_t n = g.n();
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 1; i < n; ++i) w.u(i, j) = x[g.u_dof(i, j)];
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) w.v(i, j) = x[g.v_dof(i, j)];
}

/// Cell-centred divergence.
inline PressureField divergence(const MacGrid& g, const VelocityField& w) {
    detail::require_shape(g, w, "divergence");
    const std::size_t n = g.n();
    const double inv_h = 1.0 / g.h();
    PressureField d(g);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            d.at(i, j) = (w.u(i + 1, j) - w.u(i, j) + w.v(i, j + 1) - w.v(i, j)) * inv_h;
        }
    }
    return d;
}

/// Five-point Laplacian at interior faces.
inline InteriorVector vector_laplacian(const MacGrid& g, const VelocityField& w, const BoundaryData& bc) {
    detail::require_shape(g, w, "vector_laplacian");
    const std::size_t n = g.n();
    const double inv_h2 = 1.0 / (g.h() * g.h());
    InteriorVector out(g.interior_velocity());
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 1; i < n; ++i) {
            const double c = w.u(i, j);
            const double north = j + 1 < n ? w.u(i, j + 1) : 2.0 * bc.lid_speed - c;
            const double south = j > 0 ? w.u(i, j - 1) : -c;
            out[g.u_dof(i, j)] = (w.u(i + 1, j) + w.u(i - 1, j) + north + south - 4.0 * c) * inv_h2;
        }
    }
    for (std::size_t j = 1; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const double c = w.v(i, j);
            const double east = i + 1 < n ? w.v(i + 1, j) : -c;
            const double west = i > 0 ? w.v(i - 1, j) : -c;
            out[g.v_dof(i, j)] = (east + west + w.v(i, j + 1) + w.v(i, j - 1) - 4.0 * c) * inv_h2;
        }
    }
    return out;
}

/// Skew-symmetric convection of w by a: the mean of the divergence form
/// div(a (x) w) and the advective form (a . grad) w on each momentum control
/// volume. The face fluxes of a are shared between neighbouring control
/// volumes, so the interior coupling matrix is exactly skew and has a zero
/// diagonal: <convect(a, w), w> = 0 whenever w vanishes on the walls.
inline InteriorVector convect(const MacGrid& g, const VelocityField& a, const VelocityField& w,
                              const BoundaryData& bc) {
    detail::require_shape(g, a, "convect");
    detail::require_shape(g, w, "convect");
    const std::size_t n = g.n();
    const double s = 0.5 / g.h();
    InteriorVector out(g.interior_velocity());
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 1; i < n; ++i) {
            const double fe = 0.5 * (a.u(i, j) + a.u(i + 1, j));
            const double fw = 0.5 * (a.u(i - 1, j) + a.u(i, j));
            const double fn = 0.5 * (a.v(i - 1, j + 1) + a.v(i, j + 1));
            const double fs = 0.5 * (a.v(i - 1, j) + a.v(i, j));
            const double wn = j + 1 < n ? w.u(i, j + 1) : bc.lid_speed;
            const double ws = j > 0 ? w.u(i, j - 1) : 0.0;
            out[g.u_dof(i, j)] = s * (fe * w.u(i + 1, j) - fw * w.u(i - 1, j) + fn * wn - fs * ws);
        }
    }
    for (std::size_t j = 1; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const double fe = 0.5 * (a.u(i + 1, j - 1) + a.u(i + 1, j));
            const double fw = 0.5 * (a.u(i, j - 1) + a.u(i, j));
            const double fn = 0.5 * (a.v(i, j) + a.v(i, j + 1));
            const double fs = 0.5 * (a.v(i, j - 1) + a.v(i, j));
            const double we = i + 1 < n ? w.v(i + 1, j) : 0.0;
            const double ww = i > 0 ? w.v(i - 1, j) : 0.0;
            out[g.v_dof(i, j)] = s * (fe * we - fw * ww + fn * w.v(i, j + 1) - fs * w.v(i, j - 1));
        }
    }
    return out;
}

/// Discrete H1-seminorm inner product (grad w1, grad w2) for fields with
/// homogeneous wall data. Wall-adjacent tangential differences use the
/// half-cell distance to the wall, which makes the result equal to
/// h^2 <-lap_0 w1, w2> with lap_0 the homogeneous vector Laplacian.
inline double discrete_inner_product_h1(const MacGrid& g, const VelocityField& w1, const VelocityField& w2) {
    detail::require_shape(g, w1, "discrete_inner_product_h1");
    detail::require_shape(g, w2, "discrete_inner_product_h1");
    const std::size_t n = g.n();
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            sum += (w1.u(i + 1, j) - w1.u(i, j)) * (w2.u(i + 1, j) - w2.u(i, j));
        }
    }
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = 0; j + 1 < n; ++j) {
            sum += (w1.u(i, j + 1) - w1.u(i, j)) * (w2.u(i, j + 1) - w2.u(i, j));
        }
        sum += 2.0 * w1.u(i, 0) * w2.u(i, 0);
        sum += 2.0 * w1.u(i, n - 1) * w2.u(i, n - 1);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            sum += (w1.v(i, j + 1) - w1.v(i, j)) * (w2.v(i, j + 1) - w2.v(i, j));
        }
    }
    for (std::size_t j = 1; j < n; ++j) {
        for (std::size_t i = 0; i + 1 < n; ++i) {
            sum += (w1.v(i + 1, j) - w1.v(i, j)) * (w2.v(i + 1, j) - w2.v(i, j));
        }
        sum += 2.0 * w1.v(0, j) * w2.v(0, j);
        sum += 2.0 * w1.v(n - 1, j) * w2.v(n - 1, j);
    }
    return sum;
}

inline double h1_seminorm(const MacGrid& g, const VelocityField& w) {
    return std::sqrt(std::max(0.0, discrete_inner_product_h1(g, w, w)));
}

// ---------------------------------------------------------------------------
// Assembled operators on interior unknowns (homogeneous wall data).

/// -lap_0: symmetric positive definite.
inline sparse::SparseMatrix laplacian_matrix(const MacGrid& g) {
    const std::size_t n = g.n();
    const double s = 1.0 / (g.h() * g.h());
    std::vector<sparse::Triplet> t;
    t.reserve(5 * g.interior_velocity());
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 1; i < n; ++i) {
            const auto r = g.u_dof(i, j);
            double diag = 4.0 * s;
            if (i + 1 < n) t.push_back({r, g.u_dof(i + 1, j), -s});
            if (i > 1) t.push_back({r, g.u_dof(i - 1, j), -s});
            if (j + 1 < n) t.push_back({r, g.u_dof(i, j + 1), -s});
            else diag += s;
            if (j > 0) t.push_back({r, g.u_dof(i, j - 1), -s});
            else diag += s;
            t.push_back({r, r, diag});
        }
    }
    for (std::size_t j = 1; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = g.v_dof(i, j);
            double diag = 4.0 * s;
            if (j + 1 < n) t.push_back({r, g.v_dof(i, j + 1), -s});
            if (j > 1) t.push_back({r, g.v_dof(i, j - 1), -s});
            if (i + 1 < n) t.push_back({r, g.v_dof(i + 1, j), -s});
            else diag += s;
            if (i > 0) t.push_back({r, g.v_dof(i - 1, j), -s});
            else diag += s;
            t.push_back({r, r, diag});
        }
    }
    return sparse::assemble(t, g.interior_velocity(), g.interior_velocity());
}

/// Interior part of convect(a, ., ·): skew-symmetric.
inline sparse::SparseMatrix convection_matrix(const MacGrid& g, const VelocityField& a) {
    detail::require_shape(g, a, "convection_matrix");
    const std::size_t n = g.n();
    const double s = 0.5 / g.h();
    std::vector<sparse::Triplet> t;
    t.reserve(4 * g.interior_velocity());
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 1; i < n; ++i) {
            const auto r = g.u_dof(i, j);
            if (i + 1 < n) t.push_back({r, g.u_dof(i + 1, j), s * 0.5 * (a.u(i, j) + a.u(i + 1, j))});
            if (i > 1) t.push_back({r, g.u_dof(i - 1, j), -s * 0.5 * (a.u(i - 1, j) + a.u(i, j))});
            if (j + 1 < n) t.push_back({r, g.u_dof(i, j + 1), s * 0.5 * (a.v(i - 1, j + 1) + a.v(i, j + 1))});
            if (j > 0) t.push_back({r, g.u_dof(i, j - 1), -s * 0.5 * (a.v(i - 1, j) + a.v(i, j))});
        }
    }
    for (std::size_t j = 1; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = g.v_dof(i, j);
            if (i + 1 < n) t.push_back({r, g.v_dof(i + 1, j), s * 0.5 * (a.u(i + 1, j - 1) + a.u(i + 1, j))});
            if (i > 0) t.push_back({r, g.v_dof(i - 1, j), -s * 0.5 * (a.u(i, j - 1) + a.u(i, j))});
            if (j + 1 < n) t.push_back({r, g.v_dof(i, j + 1), s * 0.5 * (a.v(i, j) + a.v(i, j + 1))});
            if (j > 1) t.push_back({r, g.v_dof(i, j - 1), -s * 0.5 * (a.v(i, j - 1) + a.v(i, j))});
        }
    }
    return sparse::assemble(t, g.interior_velocity(), g.interior_velocity());
}

/// Divergence of interior faces, one row per cell.
inline sparse::SparseMatrix divergence_matrix(const MacGrid& g) {
    const std::size_t n = g.n();
    const double s = 1.0 / g.h();
    std::vector<sparse::Triplet> t;
    t.reserve(4 * g.cells());
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = g.cell(i, j);
            if (i + 1 < n) t.push_back({r, g.u_dof(i + 1, j), s});
            if (i > 0) t.push_back({r, g.u_dof(i, j), -s});
            if (j + 1 < n) t.push_back({r, g.v_dof(i, j + 1), s});
            if (j > 0) t.push_back({r, g.v_dof(i, j), -s});
        }
    }
    return sparse::assemble(t, g.cells(), g.interior_velocity());
}

}  // namespace ngflow
