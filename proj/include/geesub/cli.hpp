#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "geesub/benchmark.hpp"
#include "geesub/gee.hpp"
#include "geesub/panel.hpp"
#include "geesub/simulate.hpp"
#include "geesub/subsample.hpp"

namespace geesub::cli {

inline FamilySpec parse_family(const std::string& s) {
    if (s == "gaussian") return FamilySpec::gaussian();
    if (s == "poisson") return FamilySpec::poisson();
    if (s == "binomial") return FamilySpec::binomial();
    throw ConfigError("unknown family \"" + s + "\" (gaussian|poisson|binomial)");
}

inline CorrelationStructure parse_structure(const std::string& s) {
    if (s == "ind") return CorrelationStructure::independent;
    if (s == "exch") return CorrelationStructure::exchangeable;
    if (s == "ar1") return CorrelationStructure::ar1;
    if (s == "un") return CorrelationStructure::unstructured;
    throw ConfigError("unknown working correlation \"" + s + "\" (ind|exch|ar1|un)");
}

inline SamplingMethod parse_method(const std::string& s) {
    if (s == "uniform") return SamplingMethod::uniform;
    if (s == "mv") return SamplingMethod::mV;
    if (s == "mvc") return SamplingMethod::mVc;
    throw ConfigError("unknown sampling method \"" + s + "\" (uniform|mv|mvc)");
}

inline SimCase parse_case(int c) {
    switch (c) {
        case 1: return SimCase::linear;
        case 2: return SimCase::count;
        case 3: return SimCase::binary;
    }
    throw ConfigError("case must be 1, 2 or 3");
}

inline SimCase case_for_family(const FamilySpec& family) {
    switch (family.kind) {
        case Family::gaussian_identity: return SimCase::linear;
        case Family::poisson_log: return SimCase::count;
        case Family::binomial_logit: return SimCase::binary;
    }
    return SimCase::linear;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t pos = s.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline nlohmann::json result_to_json(const FitResult& res) {
    nlohmann::json j;
    j["beta"] = std::vector<double>(res.beta.data(), res.beta.data() + res.beta.size());
    j["iterations"] = res.iterations;
    j["converged"] = res.converged;
    j["phi"] = res.phi;
    j["rho"] = std::vector<double>(res.rho.data(), res.rho.data() + res.rho.size());
    if (res.sandwich) {
        std::vector<double> v;
        v.reserve(res.sandwich->size());
        for (Eigen::Index i = 0; i < res.sandwich->rows(); ++i)
            for (Eigen::Index k = 0; k < res.sandwich->cols(); ++k)
                v.push_back((*res.sandwich)(i, k));
        j["sandwich"] = v;
    } else {
        j["sandwich"] = nullptr;
    }
    j["diagnostics"] = {
        {"rho_clamps", res.diagnostics.rho_clamps},
        {"correlation_projections", res.diagnostics.correlation_projections},
        {"phi_substitutions", res.diagnostics.phi_substitutions},
        {"ridge_fallbacks", res.diagnostics.ridge_fallbacks},
        {"step_halvings", res.diagnostics.step_halvings},
        {"init_iterations", res.diagnostics.init_iterations},
        {"small_subsample", res.diagnostics.small_subsample},
    };
    return j;
}

inline nlohmann::json plan_to_json(const SamplingPlan& plan) {
    return nlohmann::json{
        {"method", method_name(plan.method)},
        {"delta", plan.delta},
        {"r0", plan.r0},
        {"r", plan.r},
        {"seed", plan.seed},
        {"floor", plan.floor_mode == FloorMode::signed_magnitude ? "signed" : "literal"},
        {"mvc_fell_back_to_mv", plan.mvc_fell_back_to_mv},
        {"effective_sample_size", effective_sample_size(plan)},
    };
}

inline nlohmann::json report_to_json(const BenchmarkReport& report) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells) {
        nlohmann::json jc{
            {"method", method_name(c.method)},   {"structure", structure_name(c.structure)},
            {"r", c.r},                          {"mse", c.mse},
            {"mse_mc_se", c.mse_mc_se},          {"mean_time_s", c.mean_time_s},
            {"fail_count", c.fail_count},        {"failed", c.failed},
        };
        if (std::isfinite(c.pe)) jc["pe"] = c.pe;
        cells.push_back(jc);
    }
    nlohmann::json baselines = nlohmann::json::array();
    for (const auto& b : report.baselines) {
        nlohmann::json jb{
            {"structure", structure_name(b.structure)},
            {"mse", b.mse},
            {"mse_mc_se", b.mse_mc_se},
            {"mean_time_s", b.mean_time_s},
            {"fail_count", b.fail_count},
        };
        if (std::isfinite(b.pe)) jb["pe"] = b.pe;
        baselines.push_back(jb);
    }
    return nlohmann::json{
        {"mode", report.mode},           {"replications", report.replications},
        {"seed", report.seed},           {"timing_note", report.timing_note},
        {"cells", cells},                {"baselines", baselines},
    };
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open \"" + path + "\" for writing");
    out << j.dump(2) << "\n";
    if (!out.good()) throw IoError("write to \"" + path + "\" failed");
}

inline void load_bench_config_file(const std::string& path, BenchmarkConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config \"" + path + "\"");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw geesub::ParseError("config \"" + path + "\": " + e.what());
    }
    if (j.contains("preset")) cfg.apply_preset(j["preset"].get<std::string>());
    if (j.contains("case")) cfg.kase = parse_case(j["case"].get<int>());
    if (j.contains("m")) cfg.m = j["m"].get<Eigen::Index>();
    if (j.contains("n")) cfg.n = j["n"].get<Eigen::Index>();
    if (j.contains("error")) {
        const auto s = j["error"].get<std::string>();
        if (s == "normal") cfg.error_dist = ErrorDist::mvnormal;
        else if (s == "t3") cfg.error_dist = ErrorDist::mvt3;
        else throw ConfigError("error must be normal|t3");
    }
    if (j.contains("truecorr")) {
        const auto s = j["truecorr"].get<std::string>();
        if (s == "ind") cfg.true_corr = TrueCorr::independent;
        else if (s == "ar1") cfg.true_corr = TrueCorr::ar1_05;
        else throw ConfigError("truecorr must be ind|ar1");
    }
    if (j.contains("r_grid")) {
        cfg.r_grid.clear();
        for (const auto& v : j["r_grid"]) cfg.r_grid.push_back(v.get<Eigen::Index>());
    }
    if (j.contains("r0")) cfg.r0 = j["r0"].get<Eigen::Index>();
    if (j.contains("replications")) cfg.replications = j["replications"].get<int>();
    if (j.contains("methods")) {
        cfg.methods.clear();
        for (const auto& v : j["methods"]) cfg.methods.push_back(parse_method(v.get<std::string>()));
    }
    if (j.contains("structures")) {
        cfg.structures.clear();
        for (const auto& v : j["structures"])
            cfg.structures.push_back(parse_structure(v.get<std::string>()));
    }
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("delta")) cfg.delta = j["delta"].get<double>();
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
    if (j.contains("time_full_data")) cfg.time_full_data = j["time_full_data"].get<bool>();
    if (j.contains("tol")) cfg.fit_config.tol = j["tol"].get<double>();
    if (j.contains("max_iter")) cfg.fit_config.max_outer_iter = j["max_iter"].get<int>();
}

} // namespace detail

/// Entry point shared by the binary and the in-process CLI tests.
/// Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"GEE fitting and optimal subsampling for large longitudinal data"};
    app.require_subcommand(1);

    // --- fit ---
    auto* fit_cmd = app.add_subcommand("fit", "full-data GEE fit on a CSV panel");
    std::string fit_data, fit_family = "gaussian", fit_corr = "ind", fit_out;
    CsvSchema fit_schema;
    FitConfig fit_cfg;
    fit_cmd->add_option("data", fit_data, "input panel CSV")->required();
    fit_cmd->add_option("--family", fit_family, "gaussian|poisson|binomial");
    fit_cmd->add_option("--corr", fit_corr, "ind|exch|ar1|un");
    fit_cmd->add_option("--tol", fit_cfg.tol, "convergence tolerance");
    fit_cmd->add_option("--max-iter", fit_cfg.max_outer_iter, "outer iteration cap");
    fit_cmd->add_option("--out", fit_out, "result JSON path");
    fit_cmd->add_option("--id-col", fit_schema.id_col, "subject id column");
    fit_cmd->add_option("--time-col", fit_schema.time_col, "time column");
    fit_cmd->add_option("--y-col", fit_schema.y_col, "response column");

    // --- subfit ---
    auto* sub_cmd = app.add_subcommand("subfit", "two-stage subsample GEE fit");
    std::string sub_data, sub_family = "gaussian", sub_corr = "ind", sub_method = "mvc", sub_out;
    CsvSchema sub_schema;
    SubsampleOptions sub_opts;
    std::uint64_t sub_seed = 1;
    Eigen::Index sub_r0 = 200, sub_r = 1200;
    bool literal_floor = false, no_sandwich = false;
    sub_cmd->add_option("data", sub_data, "input panel CSV")->required();
    sub_cmd->add_option("--family", sub_family, "gaussian|poisson|binomial");
    sub_cmd->add_option("--corr", sub_corr, "ind|exch|ar1|un");
    sub_cmd->add_option("--method", sub_method, "uniform|mv|mvc");
    sub_cmd->add_option("--r0", sub_r0, "pilot subsample size");
    sub_cmd->add_option("--r", sub_r, "subsample size");
    sub_cmd->add_option("--delta", sub_opts.delta, "residual floor");
    sub_cmd->add_option("--seed", sub_seed, "RNG seed");
    sub_cmd->add_option("--tol", sub_opts.fit_config.tol, "convergence tolerance");
    sub_cmd->add_option("--max-iter", sub_opts.fit_config.max_outer_iter, "outer iteration cap");
    sub_cmd->add_option("--out", sub_out, "result JSON path");
    sub_cmd->add_flag("--literal-floor", literal_floor,
                      "floor residuals as max(S, delta) instead of sign(S)*max(|S|, delta)");
    sub_cmd->add_flag("--no-sandwich", no_sandwich, "skip the sandwich covariance");
    sub_cmd->add_option("--id-col", sub_schema.id_col, "subject id column");
    sub_cmd->add_option("--time-col", sub_schema.time_col, "time column");
    sub_cmd->add_option("--y-col", sub_schema.y_col, "response column");

    // --- simulate ---
    auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic panel CSV");
    SimConfig sim_cfg;
    int sim_case = 1;
    std::string sim_error = "normal", sim_truecorr = "ar1", sim_out;
    sim_cmd->add_option("--case", sim_case, "1=linear 2=count 3=binary")->required();
    sim_cmd->add_option("--m", sim_cfg.m, "number of subjects");
    sim_cmd->add_option("--n", sim_cfg.n, "observations per subject");
    sim_cmd->add_option("--error", sim_error, "normal|t3 (case 1 only)");
    sim_cmd->add_option("--truecorr", sim_truecorr, "ind|ar1");
    sim_cmd->add_option("--seed", sim_cfg.seed, "RNG seed");
    sim_cmd->add_option("--out", sim_out, "output CSV path")->required();

    // --- bench ---
    auto* bench_cmd = app.add_subcommand("bench", "Monte Carlo subsampling benchmark");
    BenchmarkConfig bench_cfg;
    bench_cfg.apply_preset("desk");
    std::string bench_config_file, bench_preset, bench_methods, bench_structures, bench_r_grid;
    std::string bench_error = "normal", bench_truecorr = "ar1";
    std::string bench_csv = "bench.csv", bench_json;
    int bench_case = 1;
    bool bench_no_baseline = false;
    bench_cmd->add_option("--config", bench_config_file, "JSON config file");
    bench_cmd->add_option("--preset", bench_preset, "desk|paper scale preset");
    bench_cmd->add_option("--case", bench_case, "1=linear 2=count 3=binary");
    bench_cmd->add_option("--m", bench_cfg.m, "subjects per panel");
    bench_cmd->add_option("--n", bench_cfg.n, "observations per subject");
    bench_cmd->add_option("--error", bench_error, "normal|t3");
    bench_cmd->add_option("--truecorr", bench_truecorr, "ind|ar1");
    bench_cmd->add_option("--r-grid", bench_r_grid, "comma list of subsample sizes");
    bench_cmd->add_option("--r0", bench_cfg.r0, "pilot size");
    bench_cmd->add_option("--reps", bench_cfg.replications, "Monte Carlo replications");
    bench_cmd->add_option("--methods", bench_methods, "comma list of uniform,mv,mvc");
    bench_cmd->add_option("--structures", bench_structures, "comma list of ind,exch,ar1,un");
    bench_cmd->add_option("--seed", bench_cfg.seed, "master seed");
    bench_cmd->add_option("--delta", bench_cfg.delta, "residual floor");
    bench_cmd->add_option("--threads", bench_cfg.threads,
                          "replication workers (keep 1 when timings matter)");
    bench_cmd->add_option("--tol", bench_cfg.fit_config.tol, "convergence tolerance");
    bench_cmd->add_flag("--no-full-baseline", bench_no_baseline,
                        "skip the timed full-data fits");
    bench_cmd->add_option("--out-csv", bench_csv, "tidy CSV output path");
    bench_cmd->add_option("--out-json", bench_json, "JSON report path");

    // --- holdout ---
    auto* hold_cmd = app.add_subcommand("holdout", "train/test protocol on a fixed CSV panel");
    std::string hold_data, hold_family = "gaussian", hold_methods, hold_structures, hold_r_grid;
    std::string hold_csv = "holdout.csv", hold_json;
    CsvSchema hold_schema;
    BenchmarkConfig hold_cfg;
    hold_cfg.replications = 100;
    double train_fraction = 0.75;
    hold_cmd->add_option("data", hold_data, "input panel CSV")->required();
    hold_cmd->add_option("--train-fraction", train_fraction, "fraction of subjects for training");
    hold_cmd->add_option("--family", hold_family, "gaussian|poisson|binomial");
    hold_cmd->add_option("--r-grid", hold_r_grid, "comma list of subsample sizes");
    hold_cmd->add_option("--r0", hold_cfg.r0, "pilot size");
    hold_cmd->add_option("--reps", hold_cfg.replications, "repeated subsample draws");
    hold_cmd->add_option("--methods", hold_methods, "comma list of uniform,mv,mvc");
    hold_cmd->add_option("--structures", hold_structures, "comma list of ind,exch,ar1,un");
    hold_cmd->add_option("--seed", hold_cfg.seed, "seed for split and draws");
    hold_cmd->add_option("--delta", hold_cfg.delta, "residual floor");
    hold_cmd->add_option("--threads", hold_cfg.threads, "replication workers");
    hold_cmd->add_option("--out-csv", hold_csv, "tidy CSV output path");
    hold_cmd->add_option("--out-json", hold_json, "JSON report path");
    hold_cmd->add_option("--id-col", hold_schema.id_col, "subject id column");
    hold_cmd->add_option("--time-col", hold_schema.time_col, "time column");
    hold_cmd->add_option("--y-col", hold_schema.y_col, "response column");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*fit_cmd) {
            const Panel panel = read_panel(fit_data, fit_schema);
            const FitResult res =
                fit(panel, parse_family(fit_family), parse_structure(fit_corr), {}, fit_cfg);
            const nlohmann::json j = detail::result_to_json(res);
            if (!fit_out.empty()) detail::write_json(j, fit_out);
            std::cout << j.dump(2) << "\n";
            if (!res.converged) {
                std::cerr << "warning: fit did not converge within "
                          << fit_cfg.max_outer_iter << " iterations\n";
            }
        } else if (*sub_cmd) {
            const Panel panel = read_panel(sub_data, sub_schema);
            sub_opts.floor_mode =
                literal_floor ? FloorMode::literal : FloorMode::signed_magnitude;
            sub_opts.compute_sandwich = !no_sandwich;
            const SubsampleFitResult res =
                subsample_fit(panel, parse_method(sub_method), sub_r0, sub_r,
                              parse_family(sub_family), parse_structure(sub_corr), sub_seed,
                              sub_opts);
            nlohmann::json j = detail::result_to_json(res.result);
            j["plan"] = detail::plan_to_json(res.plan);
            if (!sub_out.empty()) detail::write_json(j, sub_out);
            std::cout << j.dump(2) << "\n";
            if (res.result.diagnostics.small_subsample) {
                std::cerr << "warning: r <= n^2; the normal approximation for the subsample "
                             "estimator may be poor\n";
            }
        } else if (*sim_cmd) {
            sim_cfg.kase = parse_case(sim_case);
            if (sim_error == "normal") sim_cfg.error_dist = ErrorDist::mvnormal;
            else if (sim_error == "t3") sim_cfg.error_dist = ErrorDist::mvt3;
            else throw ConfigError("error must be normal|t3");
            if (sim_truecorr == "ind") sim_cfg.true_corr = TrueCorr::independent;
            else if (sim_truecorr == "ar1") sim_cfg.true_corr = TrueCorr::ar1_05;
            else throw ConfigError("truecorr must be ind|ar1");
            write_panel(gen_panel(sim_cfg), sim_out);
        } else if (*bench_cmd) {
            if (!bench_config_file.empty()) detail::load_bench_config_file(bench_config_file, bench_cfg);
            if (!bench_preset.empty()) bench_cfg.apply_preset(bench_preset);
            if (bench_cmd->count("--case")) bench_cfg.kase = parse_case(bench_case);
            if (bench_cmd->count("--error")) {
                if (bench_error == "normal") bench_cfg.error_dist = ErrorDist::mvnormal;
                else if (bench_error == "t3") bench_cfg.error_dist = ErrorDist::mvt3;
                else throw ConfigError("error must be normal|t3");
            }
            if (bench_cmd->count("--truecorr")) {
                if (bench_truecorr == "ind") bench_cfg.true_corr = TrueCorr::independent;
                else if (bench_truecorr == "ar1") bench_cfg.true_corr = TrueCorr::ar1_05;
                else throw ConfigError("truecorr must be ind|ar1");
            }
            if (!bench_r_grid.empty()) {
                bench_cfg.r_grid.clear();
                for (const auto& tok : detail::split_list(bench_r_grid))
                    bench_cfg.r_grid.push_back(static_cast<Eigen::Index>(std::stoll(tok)));
            }
            if (!bench_methods.empty()) {
                bench_cfg.methods.clear();
                for (const auto& tok : detail::split_list(bench_methods))
                    bench_cfg.methods.push_back(parse_method(tok));
            }
            if (!bench_structures.empty()) {
                bench_cfg.structures.clear();
                for (const auto& tok : detail::split_list(bench_structures))
                    bench_cfg.structures.push_back(parse_structure(tok));
            }
            if (bench_no_baseline) bench_cfg.time_full_data = false;
            const BenchmarkReport report = run_benchmark(bench_cfg);
            emit_plot_data(report, bench_csv);
            if (!bench_json.empty()) detail::write_json(detail::report_to_json(report), bench_json);
            std::cout << "wrote " << report.cells.size() << " cells to " << bench_csv << "\n";
        } else if (*hold_cmd) {
            const Panel panel = read_panel(hold_data, hold_schema);
            hold_cfg.kase = case_for_family(parse_family(hold_family));
            if (!hold_r_grid.empty()) {
                hold_cfg.r_grid.clear();
                for (const auto& tok : detail::split_list(hold_r_grid))
                    hold_cfg.r_grid.push_back(static_cast<Eigen::Index>(std::stoll(tok)));
            }
            if (!hold_methods.empty()) {
                hold_cfg.methods.clear();
                for (const auto& tok : detail::split_list(hold_methods))
                    hold_cfg.methods.push_back(parse_method(tok));
            }
            if (!hold_structures.empty()) {
                hold_cfg.structures.clear();
                for (const auto& tok : detail::split_list(hold_structures))
                    hold_cfg.structures.push_back(parse_structure(tok));
            }
            const BenchmarkReport report = run_holdout(panel, train_fraction, hold_cfg);
            emit_plot_data(report, hold_csv);
            if (!hold_json.empty()) detail::write_json(detail::report_to_json(report), hold_json);
            std::cout << "wrote " << report.cells.size() << " cells to " << hold_csv << "\n";
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const geesub::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const BalanceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const EmptyPanelError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace geesub::cli
