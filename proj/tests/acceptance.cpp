// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ngflow/ngflow.hpp"

using namespace ngflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Result {
    std::string name;
    Outcome outcome;
    double seconds = 0.0;
};

std::map<int, Result> results;

template <class F>
void criterion(int id, const char* name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "criterion %d done in %.1fs\n", id, s);
    results[id] = {name, o, s};
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

RunConfig cavity(double re, std::size_t nx, const std::string& m, Mode mode = Mode::Ngmres,
                 NormKind norm = NormKind::VPrime) {
    RunConfig c;
    c.re = re;
    c.nx = nx;
    c.depth = parse_depth(m);
    c.mode = mode;
    c.norm = norm;
    c.tol = 1e-8;
    c.max_iters = 100;
    return c;
}

// Every run made by the suite, for the whole-suite invariants.
std::deque<RunLog> suite_logs;

const RunLog& keep(RunLog log) {
    suite_logs.push_back(std::move(log));
    return suite_logs.back();
}

std::string iterations(const RunLog& log) {
    return std::to_string(log.totals.iterations) + (log.status == Status::Converged ? "" : std::string("/") + to_string(log.status));
}

// Minimum of alpha^T G alpha over sum(alpha) = 1 from the dense KKT system
// with full pivoting, and the best of `probes` random feasible points.
double brute_force_objective(const DenseMatrix& g, std::mt19937& rng, int probes) {
    const std::size_t n = g.size();
    const std::size_t m = n + 1;
    std::vector<double> a(m * m, 0.0), b(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a[i * m + j] = 2.0 * g(i, j);
        a[i * m + n] = 1.0;
        a[n * m + i] = 1.0;
    }
    b[n] = 1.0;
    std::vector<std::size_t> col(m);
    std::iota(col.begin(), col.end(), 0);
    for (std::size_t k = 0; k < m; ++k) {
        std::size_t pr = k, pc = k;
        for (std::size_t i = k; i < m; ++i)
            for (std::size_t j = k; j < m; ++j)
                if (std::abs(a[i * m + j]) > std::abs(a[pr * m + pc])) pr = i, pc = j;
        for (std::size_t j = 0; j < m; ++j) std::swap(a[k * m + j], a[pr * m + j]);
        std::swap(b[k], b[pr]);
        for (std::size_t i = 0; i < m; ++i) std::swap(a[i * m + k], a[i * m + pc]);
        std::swap(col[k], col[pc]);
        if (a[k * m + k] == 0.0) continue;
        for (std::size_t i = k + 1; i < m; ++i) {
            const double f = a[i * m + k] / a[k * m + k];
            for (std::size_t j = k; j < m; ++j) a[i * m + j] -= f * a[k * m + j];
            b[i] -= f * b[k];
        }
    }
    std::vector<double> y(m, 0.0);
    for (std::size_t k = m; k-- > 0;) {
        double s = b[k];
        for (std::size_t j = k + 1; j < m; ++j) s -= a[k * m + j] * y[j];
        y[k] = a[k * m + k] != 0.0 ? s / a[k * m + k] : 0.0;
    }
    std::vector<double> alpha(n);
    for (std::size_t k = 0; k < m; ++k)
        if (col[k] < n) alpha[col[k]] = y[k];
    const double sum = std::accumulate(alpha.begin(), alpha.end(), 0.0);
    double best = std::numeric_limits<double>::infinity();
    if (std::isfinite(sum) && std::abs(sum - 1.0) < 1e-8) best = std::sqrt(std::max(g.quadratic_form(alpha), 0.0));

    std::normal_distribution<double> d;
    for (int p = 0; p < probes; ++p) {
        const double spread = p % 3 == 0 ? 0.1 : (p % 3 == 1 ? 1.0 : 10.0);
        std::vector<double> x(n);
        double s = 0.0;
        for (std::size_t i = 1; i < n; ++i) s += (x[i] = spread * d(rng));
        x[0] = 1.0 - s;
        best = std::min(best, std::sqrt(std::max(g.quadratic_form(x), 0.0)));
    }
    return best;
}

DenseMatrix random_psd(std::size_t n, std::mt19937& rng) {
    std::normal_distribution<double> d;
    const std::size_t rows = 1 + rng() % (n + 3);  // rank deficient about half the time
    std::vector<double> a(rows * n);
    for (auto& x : a) x = d(rng);
    const double scale = std::pow(10.0, static_cast<int>(rng() % 9) - 4);
    DenseMatrix g(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) s += a[r * n + i] * a[r * n + j];
            g(i, j) = scale * s;
        }
    return g;
}

VelocityField solenoidal_field(const MacGrid& g, std::mt19937& rng) {
    const std::size_t n = g.n();
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> psi((n + 1) * (n + 1), 0.0);
    for (std::size_t j = 1; j < n; ++j)
        for (std::size_t i = 1; i < n; ++i) psi[j * (n + 1) + i] = d(rng);
    auto at = [&](std::size_t i, std::size_t j) { return psi[j * (n + 1) + i]; };
    VelocityField w(g);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i <= n; ++i) w.u(i, j) = (at(i, j + 1) - at(i, j)) / g.h();
    for (std::size_t j = 0; j <= n; ++j)
        for (std::size_t i = 0; i < n; ++i) w.v(i, j) = -(at(i + 1, j) - at(i, j)) / g.h();
    return w;
}

}  // namespace

int main() {
    // Shared runs at Re = 1000 on 64^2.
    auto run_pair = [](const std::string& m) { return compare_norms(cavity(1000.0, 64, m)); };
    const auto [m0_vp, m0_l2] = run_pair("0");
    const auto [m5_vp, m5_l2] = run_pair("5");
    keep(m0_vp);
    keep(m0_l2);
    keep(m5_vp);
    keep(m5_l2);
    const auto& picard = keep(run(cavity(1000.0, 64, "0", Mode::Picard)));
    const auto& m1_vp = keep(run(cavity(1000.0, 64, "1")));

    criterion(2, "theta_k tracks the observed residual ratio below 1e-4", [&] {
        Outcome o;
        for (const auto* log : {&m1_vp, &m5_vp}) {
            std::size_t total = 0, close = 0;
            const auto& rs = log->records;
            for (std::size_t k = 0; k + 1 < rs.size(); ++k) {
                if (!(rs[k].g_vprime < 1e-4) || rs[k].final()) continue;
                const double ratio = rs[k + 1].g_vprime / rs[k].g_vprime;
                ++total;
                if (std::abs(ratio - rs[k].theta) / rs[k].theta <= 0.10) ++close;
            }
            const double frac = total ? static_cast<double>(close) / total : 0.0;
            o.pass = o.pass && log->status == Status::Converged && total > 0 && frac >= 0.90;
            o.detail += fmt("m=%s: %zu/%zu within 10%%; ", log->config.depth.describe().c_str(), close, total);
        }
        return o;
    });

    criterion(3, "NGMRES accelerates Picard at Re=1000, 64^2", [&] {
        const auto p = picard.totals.iterations, a0 = m0_vp.totals.iterations, a5 = m5_vp.totals.iterations;
        const bool all = picard.status == Status::Converged && m0_vp.status == Status::Converged &&
                         m5_vp.status == Status::Converged;
        const double gain = 1.0 - static_cast<double>(a5) / static_cast<double>(p);
        return Outcome{all && a5 <= a0 && a0 <= p && gain >= 0.10,
                       fmt("picard %zu, m=0 %zu, m=5 %zu; picard->m=5 improvement %.1f%% (need >= 10%%)", p, a0, a5,
                           100.0 * gain)};
    });

    criterion(4, "mesh independence of NGMRES(m=2) over 32^2, 64^2, 128^2", [&] {
        auto cfg = cavity(1000.0, 32, "2");
        const auto logs = sweep_mesh(cfg, {32, 64, 128}, 1);
        std::vector<double> counts;
        bool ok = true;
        std::string d;
        for (const auto& log : logs) {
            keep(log);
            ok = ok && log.status == Status::Converged;
            counts.push_back(static_cast<double>(log.totals.iterations));
            d += fmt("nx=%zu: %s; ", log.config.nx, iterations(log).c_str());
        }
        auto sorted = counts;
        std::sort(sorted.begin(), sorted.end());
        const double median = sorted[1];
        double worst = 0.0;
        for (double c : counts) worst = std::max(worst, std::abs(c - median) / median);
        d += fmt("max deviation from median %.1f%% (limit 20%%)", 100.0 * worst);
        return Outcome{ok && worst <= 0.20, d};
    });

    criterion(6, "unconstrained and constrained updates agree (Re=100, 32^2, m=3)", [&] {
        DriverConfig cfg;
        cfg.depth = DepthSchedule::fixed(3);
        cfg.cross_check_beta = true;
        const auto res = drive(FlowProblem::cavity(32, 100.0), cfg);
        RunLog log;
        log.config = cavity(100.0, 32, "3");
        log.records = res.records;
        log.status = res.status;
        log.totals.iterations = res.iterations();
        keep(log);
        double worst = 0.0;
        std::size_t checked = 0;
        for (const auto& r : res.records) {
            if (r.final()) continue;
            ++checked;
            worst = std::max(worst, std::isfinite(r.beta_gap_h1) ? r.beta_gap_h1 : INFINITY);
        }
        return Outcome{res.status == Status::Converged && checked > 0 && worst <= 1e-9,
                       fmt("%zu iterations, max H1 gap %.2e (limit 1e-9)", checked, worst)};
    });

    criterion(7, "constrained LS matches brute force on 200 random PSD Grams", [&] {
        std::mt19937 rng(20240607);
        double worst = -INFINITY;
        std::size_t bad = 0;
        for (int t = 0; t < 200; ++t) {
            const std::size_t n = 2 + t % 7;
            const auto g = random_psd(n, rng);
            const double ls = solve_constrained_ls(g).objective;
            const double bf = brute_force_objective(g, rng, 10000);
            worst = std::max(worst, ls - bf);
            if (!(ls <= bf + 1e-6)) ++bad;
        }
        return Outcome{bad == 0, fmt("%zu violations, max (objective - brute force) %.2e (limit 1e-6)", bad, worst)};
    });

    criterion(9, "V' versus l2 optimization norm at Re=1000, 64^2", [&] {
        const auto a0 = m0_vp.totals.iterations, b0 = m0_l2.totals.iterations;
        const auto a5 = m5_vp.totals.iterations, b5 = m5_l2.totals.iterations;
        const bool conv5 = m5_vp.status == Status::Converged && m5_l2.status == Status::Converged;
        const bool conv0 = m0_vp.status == Status::Converged && m0_l2.status == Status::Converged;
        const double spread = std::abs(static_cast<double>(a5) - static_cast<double>(b5)) /
                              static_cast<double>(std::max<std::size_t>(1, std::min(a5, b5)));
        return Outcome{conv0 && a0 <= b0 && conv5 && spread <= 0.30,
                       fmt("m=0: V' %s vs l2 %s (need V' <= l2); m=5: V' %s vs l2 %s, spread %.1f%% (limit 30%%)",
                           iterations(m0_vp).c_str(), iterations(m0_l2).c_str(), iterations(m5_vp).c_str(),
                           iterations(m5_l2).c_str(), 100.0 * spread)};
    });

    criterion(10, "repeated runs write byte-identical CSVs", [&] {
        const auto base = fs::temp_directory_path() / ("ngflow_acceptance_" + std::to_string(std::random_device{}()));
        auto cfg = cavity(1000.0, 32, "5");
        std::vector<std::string> texts;
        for (int i = 0; i < 2; ++i) {
            cfg.out_dir = base / std::to_string(i);
            keep(run(cfg));
            std::ifstream f(*cfg.out_dir / (run_stem(cfg) + ".csv"), std::ios::binary);
            std::stringstream ss;
            ss << f.rdbuf();
            texts.push_back(ss.str());
        }
        std::error_code ec;
        fs::remove_all(base, ec);
        return Outcome{!texts[0].empty() && texts[0] == texts[1],
                       fmt("%zu bytes, identical: %s", texts[0].size(), texts[0] == texts[1] ? "yes" : "no")};
    });

    criterion(8, "structural numerics", [&] {
        std::mt19937 rng(99);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::string d;
        bool ok = true;

        double skew = 0.0;
        for (int t = 0; t < 100; ++t) {
            const MacGrid g(4 + t % 29);
            VelocityField a(g), w(g);
            for (auto& x : a.u_data()) x = u(rng);
            for (auto& x : a.v_data()) x = u(rng);
            InteriorVector wi(g.interior_velocity());
            for (auto& x : wi) x = u(rng);
            scatter_interior(g, wi, w);
            const auto c = convect(g, a, w, BoundaryData::homogeneous());
            double form = 0.0, norm2 = 0.0;
            for (std::size_t k = 0; k < wi.size(); ++k) form += c[k] * wi[k], norm2 += wi[k] * wi[k];
            skew = std::max(skew, std::abs(form) / norm2);
        }
        ok = ok && skew <= 1e-12;
        d += fmt("skew %.1e; ", skew);

        double div = 0.0;
        std::size_t solves = 0;
        for (const auto& log : suite_logs)
            for (const auto& r : log.records)
                if (!r.final()) {
                    ++solves;
                    div = std::max(div, std::isfinite(r.max_divergence) ? r.max_divergence : INFINITY);
                }
        double riesz_div = 0.0, round_trip = 0.0, duality = 0.0;
        for (std::size_t n : {16, 32, 64}) {
            const MacGrid g(n);
            const RieszMap riesz(g);
            const auto chi0 = solenoidal_field(g, rng);
            std::vector<double> lambda(g.cells());
            for (auto& x : lambda) x = u(rng);
            auto m = laplacian_matrix(g).multiply(gather_interior(g, chi0));
            const auto grad = divergence_matrix(g).transpose().multiply(lambda);
            for (std::size_t k = 0; k < m.size(); ++k) m[k] += grad[k];
            Residual r;
            r.momentum = m;
            ensure_representer(riesz, r);
            const double expect = std::sqrt(discrete_inner_product_h1(g, chi0, chi0));
            round_trip = std::max(round_trip, std::abs(*r.vprime_norm - expect) / expect);
            riesz_div = std::max(riesz_div, divergence(g, *r.representer).max_abs());

            Residual q;
            q.momentum.resize(g.interior_velocity());
            for (auto& x : q.momentum) x = 100.0 * u(rng);
            ensure_representer(riesz, q);
            const auto chi = gather_interior(g, *q.representer);
            double pairing = 0.0;
            for (std::size_t k = 0; k < chi.size(); ++k) pairing += q.momentum[k] * chi[k];
            pairing *= g.h() * g.h();
            duality = std::max(duality, std::abs(pairing - *q.vprime_norm * *q.vprime_norm) / pairing);
        }
        ok = ok && div <= 1e-10 && riesz_div <= 1e-10 && round_trip <= 1e-10 && duality <= 1e-10;
        d += fmt("max div over %zu Oseen solves %.1e, Stokes %.1e; Riesz round trip %.1e, duality %.1e; ", solves, div,
                 riesz_div, round_trip, duality);

        double lu = 0.0;
        for (int t = 0; t < 20; ++t) {
            const std::size_t n = 10 + 2 * t;
            std::vector<sparse::Triplet> trip;
            std::vector<double> dense(n * n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (i != j && rng() % 5 != 0) continue;
                    const double v = u(rng) + (i == j && t % 2 ? 0.0 : (i == j ? 3.0 : 0.0));
                    trip.push_back({i, j, v});
                    dense[i * n + j] += v;
                }
            }
            const auto a = sparse::assemble(trip, n, n);
            std::vector<double> b(n);
            for (auto& x : b) x = u(rng);
            std::vector<double> x;
            try {
                x = sparse::lu_solve(sparse::lu_factor(a), b);
            } catch (const sparse::SingularMatrixError&) {
                continue;
            }
            // Residual against the dense copy of the same matrix.
            double rmax = 0.0, bmax = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double s = -b[i];
                for (std::size_t j = 0; j < n; ++j) s += dense[i * n + j] * x[j];
                rmax = std::max(rmax, std::abs(s));
                bmax = std::max(bmax, std::abs(b[i]));
            }
            lu = std::max(lu, rmax / bmax);
        }
        ok = ok && lu <= 1e-10;
        d += fmt("sparse LU relative residual %.1e", lu);
        return Outcome{ok, d};
    });

    criterion(1, "theta and gamma never exceed 1 in any NGMRES run", [&] {
        double worst_theta = 0.0, worst_gamma = 0.0;
        std::size_t n = 0;
        for (const auto& log : suite_logs) {
            if (log.config.mode != Mode::Ngmres) continue;
            for (const auto& r : log.records) {
                if (r.final()) continue;
                ++n;
                worst_theta = std::max(worst_theta, r.theta);
                worst_gamma = std::max(worst_gamma, r.gamma);
            }
        }
        return Outcome{n > 0 && worst_theta <= 1.0 + 1e-12 && worst_gamma <= 1.0 + 1e-12,
                       fmt("%zu steps, max theta %.15f, max gamma %.15f", n, worst_theta, worst_gamma)};
    });

    criterion(5, "discrete Lemma 1 bound holds at every iteration", [&] {
        std::size_t n = 0, bad = 0;
        double worst = 0.0;
        for (const auto& log : suite_logs)
            for (const auto& r : log.records) {
                if (r.final()) continue;
                ++n;
                if (!r.lemma1_holds) ++bad;
                if (r.lemma1_rhs > 0.0) worst = std::max(worst, r.lemma1_lhs / r.lemma1_rhs);
            }
        return Outcome{n > 0 && bad == 0, fmt("%zu iterations over %zu runs, %zu violations, max lhs/rhs %.6f", n,
                                              suite_logs.size(), bad, worst)};
    });

    int failures = 0;
    for (const auto& [id, r] : results) {
        std::printf("%s criterion %d: %s (%s) [%.1fs]\n", r.outcome.pass ? "PASS" : "FAIL", id, r.name.c_str(),
                    r.outcome.detail.c_str(), r.seconds);
        if (!r.outcome.pass) ++failures;
    }
    std::printf("%d of %zu criteria failed\n", failures, results.size());
    return failures == 0 ? 0 : 1;
}
