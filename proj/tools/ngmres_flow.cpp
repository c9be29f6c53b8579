// ngmres-flow: command-line front end for the cavity experiments.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ngflow/ngflow.hpp"

namespace {

constexpr int kConfigError = 64;

struct CommonFlags {
    double re = 1000.0;
    std::string m = "0";
    std::string norm = "vprime";
    double tol = 1e-8;
    std::size_t max_iters = 100;
    std::string mode = "ngmres";
    std::string out = "out";
    bool timing = false;
    bool plot = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_norm) {
    cmd->add_option("--re", f.re, "Reynolds number (nu = 1/re)")->capture_default_str();
    cmd->add_option("--m", f.m, "window depth: integer, 'inf', or early:tol:late")->capture_default_str();
    if (with_norm) cmd->add_option("--norm", f.norm, "optimization norm: vprime or l2")->capture_default_str();
    cmd->add_option("--tol", f.tol, "stop when the V' residual norm is at or below this")->capture_default_str();
    cmd->add_option("--max-iters", f.max_iters, "iteration limit")->capture_default_str();
    cmd->add_option("--mode", f.mode, "picard or ngmres")->capture_default_str();
    cmd->add_option("--out", f.out, "output directory")->capture_default_str();
    cmd->add_flag("--timing", f.timing, "write measured wall_ms instead of 0 (breaks byte-identical reruns)");
    cmd->add_flag("--plot", f.plot, "also write an SVG convergence plot");
    cmd->add_flag("--quiet", f.quiet, "print only the summary");
}

ngflow::RunConfig to_config(const CommonFlags& f, std::size_t nx) {
    ngflow::RunConfig c;
    c.re = f.re;
    c.nx = nx;
    c.depth = ngflow::parse_depth(f.m);
    c.norm = ngflow::parse_norm(f.norm);
    c.tol = f.tol;
    c.max_iters = f.max_iters;
    c.mode = ngflow::parse_mode(f.mode);
    c.out_dir = f.out;
    c.timing = f.timing;
    c.validate();
    return c;
}

std::size_t thread_limit() {
    const char* env = std::getenv("NGMRES_FLOW_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ngflow::ConfigError("NGMRES_FLOW_THREADS", std::string("expected a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
}

void print_records(const ngflow::RunLog& log) {
    std::printf("%4s %12s %12s %9s %9s\n", "k", "|g|_V'", "|g|_l2", "theta", "gamma");
    for (const auto& r : log.records) {
        std::printf("%4zu %12.4e %12.4e %9.4f %9.4f\n", r.k, r.g_vprime, r.g_l2, r.theta, r.gamma);
    }
}

void print_summary(const ngflow::RunLog& log) {
    const double g = log.records.empty() ? 0.0 : log.records.back().g_vprime;
    std::printf("%s: %s after %zu iterations, |g|_V' = %.3e", log.legend().c_str(), ngflow::to_string(log.status),
                log.totals.iterations, g);
    if (!log.message.empty()) std::printf(" (%s)", log.message.c_str());
    std::printf("\n");
}

int worst_exit(const std::vector<ngflow::RunLog>& logs) {
    int code = 0;
    for (const auto& log : logs) {
        const int c = ngflow::exit_code(log.status);
        if (c == 3 || (c == 2 && code == 0)) code = c;
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NGMRES-accelerated Picard iteration for the lid-driven cavity"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    std::size_t run_nx = 64;
    auto* run_cmd = app.add_subcommand("run", "single run; writes <out>/<stem>.csv and .json");
    add_common(run_cmd, run_flags, true);
    run_cmd->add_option("--nx", run_nx, "cells per side")->capture_default_str();

    CommonFlags sweep_flags;
    sweep_flags.m = "2";
    std::vector<std::size_t> sweep_nx{32, 64, 128};
    auto* sweep_cmd = app.add_subcommand("sweep-mesh", "one run per grid size; writes <out>/sweep_mesh.csv");
    add_common(sweep_cmd, sweep_flags, true);
    sweep_cmd->add_option("--nx", sweep_nx, "grid sizes, nondecreasing (comma separated)")->delimiter(',')->capture_default_str();

    CommonFlags cmp_flags;
    std::size_t cmp_nx = 64;
    auto* cmp_cmd = app.add_subcommand("compare-norms", "paired V' and l2 runs; writes <out>/compare_norms.csv");
    add_common(cmp_cmd, cmp_flags, false);
    cmp_cmd->add_option("--nx", cmp_nx, "cells per side")->capture_default_str();

    std::vector<std::string> plot_inputs;
    std::string plot_out = "convergence.svg";
    std::string plot_title = "Nonlinear residual";
    bool plot_theta = false;
    auto* plot_cmd = app.add_subcommand("plot", "SVG plot from run or combined CSV files");
    plot_cmd->add_option("inputs", plot_inputs, "CSV files")->required()->check(CLI::ExistingFile);
    plot_cmd->add_option("--out", plot_out, "SVG path")->capture_default_str();
    plot_cmd->add_option("--title", plot_title, "plot title");
    plot_cmd->add_flag("--theta", plot_theta, "add the theta / observed-ratio panel");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (*run_cmd) {
            const auto cfg = to_config(run_flags, run_nx);
            const auto log = ngflow::run(cfg);
            if (!run_flags.quiet) print_records(log);
            print_summary(log);
            if (run_flags.plot) {
                ngflow::emit_plot({log}, *cfg.out_dir / (ngflow::run_stem(cfg) + ".svg"),
                                  ngflow::PlotOptions{.theta_panel = cfg.mode == ngflow::Mode::Ngmres});
            }
            return ngflow::exit_code(log.status);
        }
        if (*sweep_cmd) {
            const auto threads = thread_limit();
            const auto cfg = to_config(sweep_flags, sweep_nx.empty() ? 64 : sweep_nx.front());
            const auto logs = ngflow::sweep_mesh(cfg, sweep_nx, threads);
            for (const auto& log : logs) print_summary(log);
            if (sweep_flags.plot && !logs.empty()) ngflow::emit_plot(logs, *cfg.out_dir / "sweep_mesh.svg");
            return worst_exit(logs);
        }
        if (*cmp_cmd) {
            const auto cfg = to_config(cmp_flags, cmp_nx);
            const auto [vp, l2] = ngflow::compare_norms(cfg);
            print_summary(vp);
            print_summary(l2);
            if (cmp_flags.plot) ngflow::emit_plot({vp, l2}, *cfg.out_dir / "compare_norms.svg");
            return worst_exit({vp, l2});
        }
        if (*plot_cmd) {
            std::vector<ngflow::RunLog> logs;
            for (const auto& in : plot_inputs) {
                for (auto& log : ngflow::read_csv(in)) logs.push_back(std::move(log));
            }
            ngflow::emit_plot(logs, plot_out, ngflow::PlotOptions{.theta_panel = plot_theta, .title = plot_title});
            std::printf("wrote %s (%zu series)\n", plot_out.c_str(), logs.size());
            return 0;
        }
    } catch (const ngflow::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
