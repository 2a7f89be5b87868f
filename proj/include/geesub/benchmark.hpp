#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "geesub/errors.hpp"
#include "geesub/gee.hpp"
#include "geesub/panel.hpp"
#include "geesub/rng.hpp"
#include "geesub/simulate.hpp"
#include "geesub/subsample.hpp"

namespace geesub {

using SubsampleFn = std::function<SubsampleFitResult(
    const Panel&, SamplingMethod, Eigen::Index, Eigen::Index, const FamilySpec&,
    CorrelationStructure, std::uint64_t, const SubsampleOptions&)>;

struct BenchmarkConfig {
    SimCase kase = SimCase::linear;
    ErrorDist error_dist = ErrorDist::mvnormal;
    TrueCorr true_corr = TrueCorr::ar1_05;
    Eigen::Index m = 2000;
    Eigen::Index n = 5;
    std::vector<Eigen::Index> r_grid{300, 600, 900, 1200};
    Eigen::Index r0 = 200;
    int replications = 200;
    std::vector<SamplingMethod> methods{SamplingMethod::uniform, SamplingMethod::mV,
                                        SamplingMethod::mVc};
    std::vector<CorrelationStructure> structures{
        CorrelationStructure::independent, CorrelationStructure::exchangeable,
        CorrelationStructure::ar1, CorrelationStructure::unstructured};
    std::uint64_t seed = 1;
    double delta = 1e-4;
    FloorMode floor_mode = FloorMode::signed_magnitude;
    int threads = 1; // keep 1 whenever timings matter
    bool time_full_data = true;
    FitConfig fit_config;
    Eigen::VectorXd beta0; // empty -> case default

    // tests may stub the fitter to verify what the timers cover
    SubsampleFn subsample_override;

    void check() const {
        if (replications < 1) throw ConfigError("replications must be >= 1");
        if (r_grid.empty()) throw ConfigError("r grid must be nonempty");
        for (std::size_t i = 0; i + 1 < r_grid.size(); ++i) {
            if (r_grid[i] >= r_grid[i + 1]) throw ConfigError("r grid must be ascending");
        }
        if (methods.empty()) throw ConfigError("at least one sampling method required");
        if (structures.empty()) throw ConfigError("at least one working structure required");
        if (threads < 1) throw ConfigError("threads must be >= 1");
    }

    void apply_preset(const std::string& name) {
        if (name == "desk") {
            m = 2000;
            replications = 100;
        } else if (name == "paper") {
            m = 10000;
            replications = 200;
        } else {
            throw ConfigError("unknown preset \"" + name + "\" (desk|paper)");
        }
    }
};

struct BenchmarkCell {
    SamplingMethod method = SamplingMethod::uniform;
    CorrelationStructure structure = CorrelationStructure::independent;
    Eigen::Index r = 0;
    double mse = std::numeric_limits<double>::quiet_NaN();
    double mse_mc_se = std::numeric_limits<double>::quiet_NaN();
    double mean_time_s = std::numeric_limits<double>::quiet_NaN();
    double pe = std::numeric_limits<double>::quiet_NaN(); // holdout mode only
    int fail_count = 0;
    bool failed = false; // >5% of replications failed
};

struct BaselineCell {
    CorrelationStructure structure = CorrelationStructure::independent;
    double mse = std::numeric_limits<double>::quiet_NaN();
    double mse_mc_se = std::numeric_limits<double>::quiet_NaN();
    double mean_time_s = std::numeric_limits<double>::quiet_NaN();
    double pe = std::numeric_limits<double>::quiet_NaN();
    int fail_count = 0;
};

struct BenchmarkReport {
    std::string mode = "simulation"; // or "holdout"
    std::vector<BenchmarkCell> cells;
    std::vector<BaselineCell> baselines;
    int replications = 0;
    std::uint64_t seed = 0;
    std::string timing_note =
        "cell timings cover the pilot fit, probability computation, and the weighted "
        "subsample fit; data generation, I/O and covariance assembly are excluded";
};

namespace detail {

struct Outcome {
    double err2 = std::numeric_limits<double>::quiet_NaN();
    double pe = std::numeric_limits<double>::quiet_NaN();
    double time_s = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
};

class StopWatch {
public:
    StopWatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

inline void mean_and_se(const std::vector<double>& xs, double* mean_out, double* se_out) {
    const std::size_t k = xs.size();
    if (k == 0) {
        *mean_out = std::numeric_limits<double>::quiet_NaN();
        *se_out = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var = k > 1 ? var / static_cast<double>(k - 1) : 0.0;
    *mean_out = mean;
    *se_out = std::sqrt(var / static_cast<double>(k));
}

// Runs body(rep) for rep in [0, reps) across the requested threads. Results
// must be written into per-rep slots so aggregation order stays fixed.
inline void parallel_reps(int reps, int threads, const std::function<void(int)>& body) {
    if (threads <= 1) {
        for (int rep = 0; rep < reps; ++rep) body(rep);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&]() {
        while (true) {
            const int rep = next.fetch_add(1);
            if (rep >= reps) return;
            body(rep);
        }
    };
    std::vector<std::thread> pool;
    const int k = std::min<int>(threads, reps);
    pool.reserve(k);
    for (int t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

inline double prediction_error(const Panel& test, const Eigen::VectorXd& beta,
                               const FamilySpec& family) {
    double sum = 0.0;
    Eigen::Index count = 0;
    for (const auto& s : test.subjects) {
        for (Eigen::Index j = 0; j < test.n; ++j) {
            const double yhat = mean(family, s.X.row(j).dot(beta));
            sum += (s.y[j] - yhat) * (s.y[j] - yhat);
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

inline constexpr std::uint64_t kGenStream = 11;
inline constexpr std::uint64_t kCellStreamBase = 1000;
inline constexpr std::uint64_t kSplitStream = 17;

} // namespace detail

/// Monte Carlo study over fresh simulated panels: per replication one panel,
/// a timed full-data fit per working structure (the baseline rows), and a
/// timed subsample fit per (method, structure, r) cell. Errors are squared L2
/// distances to the true coefficient vector.
inline BenchmarkReport run_benchmark(const BenchmarkConfig& cfg) {
    cfg.check();
    const FamilySpec family = family_for_case(cfg.kase);
    const Eigen::VectorXd beta_ref = cfg.beta0.size() ? cfg.beta0 : default_beta0(cfg.kase);
    const int reps = cfg.replications;

    const std::size_t n_cells = cfg.methods.size() * cfg.structures.size() * cfg.r_grid.size();
    std::vector<std::vector<detail::Outcome>> cell_out(n_cells,
                                                       std::vector<detail::Outcome>(reps));
    std::vector<std::vector<detail::Outcome>> base_out(cfg.structures.size(),
                                                       std::vector<detail::Outcome>(reps));

    const SubsampleFn fitter =
        cfg.subsample_override
            ? cfg.subsample_override
            : SubsampleFn([](const Panel& panel, SamplingMethod mtd, Eigen::Index r0,
                             Eigen::Index r, const FamilySpec& fam, CorrelationStructure st,
                             std::uint64_t seed, const SubsampleOptions& opts) {
                  return subsample_fit(panel, mtd, r0, r, fam, st, seed, opts);
              });

    detail::parallel_reps(reps, cfg.threads, [&](int rep) {
        const std::uint64_t rep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep));
        SimConfig sim;
        sim.kase = cfg.kase;
        sim.m = cfg.m;
        sim.n = cfg.n;
        sim.error_dist = cfg.error_dist;
        sim.true_corr = cfg.true_corr;
        sim.beta0 = cfg.beta0;
        sim.seed = derive_seed(rep_seed, detail::kGenStream);
        Panel panel;
        try {
            panel = gen_panel(sim);
        } catch (const Error&) {
            return; // all outcomes for this rep stay marked failed
        }

        if (cfg.time_full_data) {
            for (std::size_t si = 0; si < cfg.structures.size(); ++si) {
                detail::Outcome& o = base_out[si][rep];
                try {
                    detail::StopWatch watch;
                    const FitResult full =
                        fit(panel, family, cfg.structures[si], {}, cfg.fit_config);
                    o.time_s = watch.seconds();
                    o.err2 = (full.beta - beta_ref).squaredNorm();
                    o.ok = true;
                } catch (const Error&) {
                }
            }
        }

        std::size_t cell = 0;
        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
            for (std::size_t si = 0; si < cfg.structures.size(); ++si) {
                for (std::size_t ri = 0; ri < cfg.r_grid.size(); ++ri, ++cell) {
                    detail::Outcome& o = cell_out[cell][rep];
                    SubsampleOptions opts;
                    opts.delta = cfg.delta;
                    opts.floor_mode = cfg.floor_mode;
                    opts.compute_sandwich = false;
                    opts.fit_config = cfg.fit_config;
                    const std::uint64_t cell_seed =
                        derive_seed(rep_seed, detail::kCellStreamBase + cell);
                    try {
                        detail::StopWatch watch;
                        const SubsampleFitResult sub =
                            fitter(panel, cfg.methods[mi], cfg.r0, cfg.r_grid[ri], family,
                                   cfg.structures[si], cell_seed, opts);
                        o.time_s = watch.seconds();
                        o.err2 = (sub.result.beta - beta_ref).squaredNorm();
                        o.ok = true;
                    } catch (const Error&) {
                    }
                }
            }
        }
    });

    BenchmarkReport report;
    report.mode = "simulation";
    report.replications = reps;
    report.seed = cfg.seed;

    std::size_t cell = 0;
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        for (std::size_t si = 0; si < cfg.structures.size(); ++si) {
            for (std::size_t ri = 0; ri < cfg.r_grid.size(); ++ri, ++cell) {
                BenchmarkCell c;
                c.method = cfg.methods[mi];
                c.structure = cfg.structures[si];
                c.r = cfg.r_grid[ri];
                std::vector<double> errs, times;
                for (int rep = 0; rep < reps; ++rep) {
                    const detail::Outcome& o = cell_out[cell][rep];
                    if (o.ok) {
                        errs.push_back(o.err2);
                        times.push_back(o.time_s);
                    } else {
                        ++c.fail_count;
                    }
                }
                detail::mean_and_se(errs, &c.mse, &c.mse_mc_se);
                double tse;
                detail::mean_and_se(times, &c.mean_time_s, &tse);
                c.failed = c.fail_count * 20 > reps; // >5%
                report.cells.push_back(c);
            }
        }
    }
    if (cfg.time_full_data) {
        for (std::size_t si = 0; si < cfg.structures.size(); ++si) {
            BaselineCell b;
            b.structure = cfg.structures[si];
            std::vector<double> errs, times;
            for (int rep = 0; rep < reps; ++rep) {
                const detail::Outcome& o = base_out[si][rep];
                if (o.ok) {
                    errs.push_back(o.err2);
                    times.push_back(o.time_s);
                } else {
                    ++b.fail_count;
                }
            }
            detail::mean_and_se(errs, &b.mse, &b.mse_mc_se);
            double tse;
            detail::mean_and_se(times, &b.mean_time_s, &tse);
            report.baselines.push_back(b);
        }
    }
    return report;
}

/// Seeded by-subject split of a fixed panel into train/test.
inline void split_panel(const Panel& panel, double train_fraction, std::uint64_t seed,
                        Panel* train, Panel* test) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train fraction must be in (0,1)");
    }
    const Eigen::Index m = panel.m();
    const Eigen::Index train_m =
        static_cast<Eigen::Index>(std::llround(train_fraction * static_cast<double>(m)));
    if (train_m < 1 || train_m >= m) {
        throw ConfigError("train split leaves an empty train or test set");
    }
    std::vector<Eigen::Index> order(m);
    for (Eigen::Index i = 0; i < m; ++i) order[i] = i;
    Rng rng(derive_seed(seed, detail::kSplitStream));
    for (Eigen::Index i = 0; i < m - 1; ++i) {
        const Eigen::Index j = i + static_cast<Eigen::Index>(rng.uniform_below(m - i));
        std::swap(order[i], order[j]);
    }
    std::vector<Eigen::Index> tr(order.begin(), order.begin() + train_m);
    std::vector<Eigen::Index> te(order.begin() + train_m, order.end());
    std::sort(tr.begin(), tr.end());
    std::sort(te.begin(), te.end());
    *train = detail::extract(panel, tr);
    *test = detail::extract(panel, te);
}

/// Train/test protocol on a fixed panel: the full-training-data estimate is
/// the MSE reference, and each cell additionally reports the mean squared
/// prediction error of its fitted means over the test observations.
inline BenchmarkReport run_holdout(const Panel& panel, double train_fraction,
                                   const BenchmarkConfig& cfg) {
    cfg.check();
    const FamilySpec family = family_for_case(cfg.kase);
    Panel train, test;
    split_panel(panel, train_fraction, cfg.seed, &train, &test);

    const int reps = cfg.replications;
    BenchmarkReport report;
    report.mode = "holdout";
    report.replications = reps;
    report.seed = cfg.seed;

    // one reference fit per structure
    std::vector<Eigen::VectorXd> beta_ref(cfg.structures.size());
    for (std::size_t si = 0; si < cfg.structures.size(); ++si) {
        BaselineCell b;
        b.structure = cfg.structures[si];
        try {
            detail::StopWatch watch;
            const FitResult full = fit(train, family, cfg.structures[si], {}, cfg.fit_config);
            b.mean_time_s = watch.seconds();
            b.mse = 0.0;
            b.mse_mc_se = 0.0;
            b.pe = detail::prediction_error(test, full.beta, family);
            beta_ref[si] = full.beta;
        } catch (const Error&) {
            b.fail_count = 1;
        }
        report.baselines.push_back(b);
    }

    const std::size_t n_cells = cfg.methods.size() * cfg.structures.size() * cfg.r_grid.size();
    std::vector<std::vector<detail::Outcome>> cell_out(n_cells,
                                                       std::vector<detail::Outcome>(reps));

    detail::parallel_reps(reps, cfg.threads, [&](int rep) {
        const std::uint64_t rep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep));
        std::size_t cell = 0;
        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
            for (std::size_t si = 0; si < cfg.structures.size(); ++si) {
                for (std::size_t ri = 0; ri < cfg.r_grid.size(); ++ri, ++cell) {
                    if (beta_ref[si].size() == 0) continue; // reference fit failed
                    detail::Outcome& o = cell_out[cell][rep];
                    SubsampleOptions opts;
                    opts.delta = cfg.delta;
                    opts.floor_mode = cfg.floor_mode;
                    opts.compute_sandwich = false;
                    opts.fit_config = cfg.fit_config;
                    const std::uint64_t cell_seed =
                        derive_seed(rep_seed, detail::kCellStreamBase + cell);
                    try {
                        detail::StopWatch watch;
                        const SubsampleFitResult sub =
                            subsample_fit(train, cfg.methods[mi], cfg.r0, cfg.r_grid[ri], family,
                                          cfg.structures[si], cell_seed, opts);
                        o.time_s = watch.seconds();
                        o.err2 = (sub.result.beta - beta_ref[si]).squaredNorm();
                        o.pe = detail::prediction_error(test, sub.result.beta, family);
                        o.ok = true;
                    } catch (const Error&) {
                    }
                }
            }
        }
    });

    std::size_t cell = 0;
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        for (std::size_t si = 0; si < cfg.structures.size(); ++si) {
            for (std::size_t ri = 0; ri < cfg.r_grid.size(); ++ri, ++cell) {
                BenchmarkCell c;
                c.method = cfg.methods[mi];
                c.structure = cfg.structures[si];
                c.r = cfg.r_grid[ri];
                std::vector<double> errs, times, pes;
                for (int rep = 0; rep < reps; ++rep) {
                    const detail::Outcome& o = cell_out[cell][rep];
                    if (o.ok) {
                        errs.push_back(o.err2);
                        times.push_back(o.time_s);
                        pes.push_back(o.pe);
                    } else {
                        ++c.fail_count;
                    }
                }
                detail::mean_and_se(errs, &c.mse, &c.mse_mc_se);
                double se;
                detail::mean_and_se(times, &c.mean_time_s, &se);
                detail::mean_and_se(pes, &c.pe, &se);
                c.failed = c.fail_count * 20 > reps;
                report.cells.push_back(c);
            }
        }
    }
    return report;
}

/// Tidy CSV for plotting: one row per cell, then one full_data baseline row
/// per structure. Numbers carry 17 significant digits so they round-trip.
inline void emit_plot_data(const BenchmarkReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open \"" + path + "\" for writing");
    out << "method,structure,r,mse,mse_mc_se,mean_time_s,fail_count\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf;
    };
    for (const auto& c : report.cells) {
        out << method_name(c.method) << ',' << structure_name(c.structure) << ',' << c.r << ',';
        put(c.mse);
        out << ',';
        put(c.mse_mc_se);
        out << ',';
        put(c.mean_time_s);
        out << ',' << c.fail_count << "\n";
    }
    for (const auto& b : report.baselines) {
        out << "full_data," << structure_name(b.structure) << ",0,";
        put(b.mse);
        out << ',';
        put(b.mse_mc_se);
        out << ',';
        put(b.mean_time_s);
        out << ',' << b.fail_count << "\n";
    }
    if (!out.good()) throw IoError("write to \"" + path + "\" failed");
}

} // namespace geesub
