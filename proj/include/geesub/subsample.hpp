#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geesub/alias.hpp"
#include "geesub/errors.hpp"
#include "geesub/gee.hpp"
#include "geesub/rng.hpp"

namespace geesub {

enum class SamplingMethod {
    uniform,
    mV,
    mVc,
};

inline std::string method_name(SamplingMethod m) {
    switch (m) {
        case SamplingMethod::uniform: return "uniform";
        case SamplingMethod::mV: return "mV";
        case SamplingMethod::mVc: return "mVc";
    }
    return "?";
}

/// How the residual floor is applied. The magnitude mode replaces each
/// residual by sign(S) * max(|S|, delta); the literal mode is max(S, delta),
/// which erases negative residuals and is kept only for comparison.
enum class FloorMode {
    signed_magnitude,
    literal,
};

struct SamplingPlan {
    SamplingMethod method = SamplingMethod::uniform;
    Eigen::VectorXd pi;
    double delta = 1e-4;
    Eigen::Index r0 = 0;
    Eigen::Index r = 0;
    std::uint64_t seed = 0;
    FloorMode floor_mode = FloorMode::signed_magnitude;
    bool mvc_fell_back_to_mv = false;
    std::vector<Eigen::Index> drawn; // the r draws, in draw order
};

namespace detail {

// stage tags for substream derivation; pilot and final draws never share a stream
inline constexpr std::uint64_t kPilotStream = 1;
inline constexpr std::uint64_t kDrawStream = 2;

inline Panel extract(const Panel& panel, const std::vector<Eigen::Index>& indices) {
    Panel out;
    out.p = panel.p;
    out.n = panel.n;
    out.subjects.reserve(indices.size());
    for (Eigen::Index idx : indices) out.subjects.push_back(panel.subjects[idx]);
    return out;
}

} // namespace detail

/// Simple random sample of r0 distinct subject indices (ascending). r0 == m
/// returns 0..m-1 without touching the generator.
inline std::vector<Eigen::Index> pilot_draw(Eigen::Index m, Eigen::Index r0, std::uint64_t seed) {
    if (r0 < 1 || r0 > m) throw ConfigError("pilot size must satisfy 1 <= r0 <= m");
    std::vector<Eigen::Index> pool(m);
    for (Eigen::Index i = 0; i < m; ++i) pool[i] = i;
    if (r0 == m) return pool;
    Rng rng(seed);
    for (Eigen::Index i = 0; i < r0; ++i) {
        const Eigen::Index j = i + static_cast<Eigen::Index>(rng.uniform_below(m - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(r0);
    std::sort(pool.begin(), pool.end());
    return pool;
}

/// Pilot estimate: independence-structure GEE on a uniform without-replacement
/// subsample of r0 subjects.
inline FitResult pilot_fit(const Panel& panel, Eigen::Index r0, const FamilySpec& family,
                           std::uint64_t seed, const FitConfig& config = {}) {
    if (r0 * panel.n <= panel.p) {
        throw ConfigError("pilot too small: need r0 * n > p");
    }
    const auto indices = pilot_draw(panel.m(), r0, derive_seed(seed, detail::kPilotStream));
    const Panel pilot = detail::extract(panel, indices);
    FitConfig cfg = config;
    cfg.init.reset();
    FitResult res = fit(pilot, family, CorrelationStructure::independent, {}, cfg);
    if (!res.converged) {
        throw PilotError("pilot fit did not converge in " + std::to_string(res.iterations) +
                         " iterations; increase r0");
    }
    return res;
}

/// Per-subject score contributions v_i = D_i' W_i^{-1} S~_i at beta0, with the
/// residual floor applied, one row per subject.
inline Eigen::MatrixXd score_vectors(const Panel& panel, const Eigen::VectorXd& beta0,
                                     const FamilySpec& family, const CorrelationModel& corr,
                                     double delta,
                                     FloorMode floor_mode = FloorMode::signed_magnitude) {
    if (!(delta > 0.0)) throw ConfigError("residual floor delta must be positive");
    const Eigen::MatrixXd r_inv = correlation_inverse(corr);
    const Eigen::Index p = panel.p;
    Eigen::MatrixXd scores(panel.m(), p);
    detail::SubjectWork w;
    w.resize(panel.n, p);
    for (Eigen::Index i = 0; i < panel.m(); ++i) {
        const Subject& subj = panel.subjects[i];
        w.evaluate(subj, beta0, family, i);
        for (Eigen::Index j = 0; j < panel.n; ++j) {
            if (floor_mode == FloorMode::signed_magnitude) {
                const double sgn = w.s[j] < 0.0 ? -1.0 : 1.0;
                w.s[j] = sgn * std::max(std::abs(w.s[j]), delta);
            } else {
                w.s[j] = std::max(w.s[j], delta);
            }
        }
        scores.row(i) =
            (subj.X.transpose() * (w.z.asDiagonal() * (r_inv * w.d.cwiseProduct(w.s)))) /
            corr.phi;
    }
    return scores;
}

/// pi_i proportional to ||v_i||_2.
inline Eigen::VectorXd probabilities_mv(const Eigen::MatrixXd& scores) {
    Eigen::VectorXd norms = scores.rowwise().norm();
    const double total = norms.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw DegenerateScoresError("all score vectors have zero norm");
    }
    return norms / total;
}

/// pi_i proportional to ||Phi0^{-1} v_i||_2; invariant to positive rescaling
/// of Phi0.
inline Eigen::VectorXd probabilities_mvc(const Eigen::MatrixXd& scores,
                                         const Eigen::MatrixXd& phi0) {
    if (phi0.rows() != scores.cols() || phi0.cols() != scores.cols()) {
        throw ConfigError("phi0 must be p x p");
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(phi0);
    if (ldlt.info() != Eigen::Success) {
        throw SingularInformationError("phi0 factorization failed");
    }
    const Eigen::MatrixXd solved = ldlt.solve(scores.transpose()); // p x m
    if (!solved.allFinite()) {
        throw SingularInformationError("phi0 is singular");
    }
    Eigen::VectorXd norms = solved.colwise().norm();
    const double total = norms.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw DegenerateScoresError("all score vectors have zero norm");
    }
    return norms / total;
}

/// r i.i.d. draws from pi by the alias method; deterministic in (seed, pi).
inline std::vector<Eigen::Index> draw_with_replacement(const Eigen::VectorXd& pi, Eigen::Index r,
                                                       std::uint64_t seed) {
    if (r < 1) throw ConfigError("subsample size must be >= 1");
    if ((pi.array() < 0.0).any() || !pi.allFinite()) {
        throw ConfigError("probabilities must be finite and nonnegative");
    }
    if (std::abs(pi.sum() - 1.0) > 1e-10) {
        throw ConfigError("probabilities must sum to 1");
    }
    const AliasTable table(std::vector<double>(pi.data(), pi.data() + pi.size()));
    Rng rng(seed);
    std::vector<Eigen::Index> out(r);
    for (Eigen::Index k = 0; k < r; ++k) out[k] = static_cast<Eigen::Index>(table.sample(rng));
    return out;
}

struct SubsampleOptions {
    double delta = 1e-4;
    FloorMode floor_mode = FloorMode::signed_magnitude;
    bool compute_sandwich = true;
    FitConfig fit_config;
};

struct SubsampleFitResult {
    FitResult result;
    SamplingPlan plan;
    Eigen::VectorXd pilot_beta;
};

/// Two-stage subsample estimator: pilot fit, sampling probabilities from the
/// pilot, then an inverse-probability-weighted GEE on r with-replacement
/// draws. The pilot subsample is not pooled into the final fit.
inline SubsampleFitResult subsample_fit(const Panel& panel, SamplingMethod method,
                                        Eigen::Index r0, Eigen::Index r, const FamilySpec& family,
                                        CorrelationStructure structure, std::uint64_t seed,
                                        const SubsampleOptions& opts = {}) {
    const Eigen::Index m = panel.m();
    const Eigen::Index p = panel.p;
    if (r < 1) throw ConfigError("subsample size must be >= 1");
    if (!(opts.delta > 0.0)) throw ConfigError("residual floor delta must be positive");

    SubsampleFitResult out;
    SamplingPlan& plan = out.plan;
    plan.method = method;
    plan.delta = opts.delta;
    plan.r0 = r0;
    plan.r = r;
    plan.seed = seed;
    plan.floor_mode = opts.floor_mode;

    // Step 1: pilot estimate on r0 subjects with identity working correlation
    std::vector<Eigen::Index> pilot_indices;
    FitResult pilot;
    try {
        if (r0 * panel.n <= p) throw ConfigError("pilot too small: need r0 * n > p");
        pilot_indices = pilot_draw(m, r0, derive_seed(seed, detail::kPilotStream));
        const Panel pilot_panel = detail::extract(panel, pilot_indices);
        FitConfig cfg = opts.fit_config;
        cfg.init.reset();
        pilot = fit(pilot_panel, family, CorrelationStructure::independent, {}, cfg);
        if (!pilot.converged) {
            throw PilotError("pilot fit did not converge in " + std::to_string(pilot.iterations) +
                             " iterations; increase r0");
        }
    } catch (Error& e) {
        e.add_context("pilot stage");
        throw;
    }
    out.pilot_beta = pilot.beta;

    // Step 2: nuisance estimates at beta0 over the full panel, then the
    // sampling probabilities
    try {
        if (method == SamplingMethod::uniform) {
            plan.pi = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
        } else {
            const Eigen::MatrixXd residuals = pearson_residuals(panel, pilot.beta, family);
            double phi = family.dispersion_fixed ? 1.0 : estimate_dispersion(residuals, p);
            if (phi == 0.0) phi = 1.0;
            const Eigen::VectorXd rho = estimate_correlation(residuals, structure, phi, p);
            const CorrelationModel corr{structure, rho, phi, panel.n};
            const Eigen::MatrixXd scores =
                score_vectors(panel, pilot.beta, family, corr, opts.delta, opts.floor_mode);
            if (method == SamplingMethod::mV) {
                plan.pi = probabilities_mv(scores);
            } else {
                const Panel pilot_panel = detail::extract(panel, pilot_indices);
                const Eigen::MatrixXd phi0 =
                    information(pilot_panel, pilot.beta, family,
                                CorrelationModel::independent(panel.n));
                try {
                    plan.pi = probabilities_mvc(scores, phi0);
                } catch (const SingularInformationError&) {
                    plan.pi = probabilities_mv(scores);
                    plan.mvc_fell_back_to_mv = true;
                }
            }
        }
    } catch (Error& e) {
        e.add_context("probability stage");
        throw;
    }

    // Step 3: with-replacement draw and the weighted fit started at beta0
    try {
        plan.drawn = draw_with_replacement(plan.pi, r, derive_seed(seed, detail::kDrawStream));
        const Panel sub = detail::extract(panel, plan.drawn);
        Eigen::VectorXd weights(r);
        for (Eigen::Index k = 0; k < r; ++k) {
            weights[k] = 1.0 / (static_cast<double>(r) * plan.pi[plan.drawn[k]]);
        }
        FitConfig cfg = opts.fit_config;
        cfg.init = pilot.beta;
        out.result = fit(sub, family, structure, weights, cfg);
        out.result.diagnostics.small_subsample = r <= panel.n * panel.n;
    } catch (Error& e) {
        e.add_context("subsample stage");
        throw;
    }

    if (opts.compute_sandwich) {
        try {
            const CorrelationModel corr{structure, out.result.rho, out.result.phi, panel.n};
            out.result.sandwich = sandwich(panel, out.result.beta, family, corr, plan.pi, r);
        } catch (Error& e) {
            e.add_context("sandwich stage");
            throw;
        }
    }
    return out;
}

/// Importance-sampling effective size (sum w)^2 / sum w^2 of the realized draw.
inline double effective_sample_size(const SamplingPlan& plan) {
    double sum = 0.0, sumsq = 0.0;
    for (Eigen::Index idx : plan.drawn) {
        const double w = 1.0 / (static_cast<double>(plan.r) * plan.pi[idx]);
        sum += w;
        sumsq += w * w;
    }
    return sumsq > 0.0 ? sum * sum / sumsq : 0.0;
}

} // namespace geesub
