#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "geesub/correlation.hpp"
#include "geesub/errors.hpp"
#include "geesub/family.hpp"
#include "geesub/panel.hpp"

namespace geesub {

struct FitConfig {
    int max_outer_iter = 50;
    double tol = 1e-6; // max-abs coefficient change
    std::optional<Eigen::VectorXd> init;
    double ridge = 0.0; // relative diagonal regularizer; 1e-8 engaged on solve failure

    void check() const {
        if (!(tol > 0.0)) throw ConfigError("tol must be positive");
        if (max_outer_iter < 1) throw ConfigError("max_outer_iter must be >= 1");
    }
};

struct FitDiagnostics {
    int rho_clamps = 0;
    int correlation_projections = 0;
    int phi_substitutions = 0;
    int ridge_fallbacks = 0;
    int step_halvings = 0;
    int init_iterations = 0; // outer iterations of the independence pre-fit
    bool small_subsample = false; // r <= n^2, normality approximation suspect
};

struct FitResult {
    Eigen::VectorXd beta;
    int iterations = 0;
    bool converged = false;
    double phi = 1.0;
    Eigen::VectorXd rho;
    std::optional<Eigen::MatrixXd> sandwich;
    FitDiagnostics diagnostics;
};

namespace detail {

// Per-subject contributions with B_i = A_i^{-1/2} R^{-1} A_i^{-1/2}:
//   score_i = D_i' B_i S_i = Z_i' R^{-1} (d ∘ S_i)
//   info_i  = D_i' B_i D_i = Z_i' R^{-1} Z_i
// where d = nu^{-1/2}, Z_i = diag(mean_deriv ∘ d) X_i. The dispersion factor
// in W_i^{-1} scales both sides of the Fisher step equally and cancels, so it
// is omitted throughout.
struct SubjectWork {
    Eigen::VectorXd eta, mu, s, d, z;
    Eigen::MatrixXd Z, RZ;

    void resize(Eigen::Index n, Eigen::Index p) {
        eta.resize(n);
        mu.resize(n);
        s.resize(n);
        d.resize(n);
        z.resize(n);
        Z.resize(n, p);
        RZ.resize(n, p);
    }

    void evaluate(const Subject& subj, const Eigen::VectorXd& beta, const FamilySpec& family,
                  Eigen::Index i) {
        try {
            eta.noalias() = subj.X * beta;
            for (Eigen::Index j = 0; j < eta.size(); ++j) {
                mu[j] = mean(family, eta[j]);
                const double nu = variance(family, mu[j]);
                d[j] = 1.0 / std::sqrt(nu);
                z[j] = mean_deriv(family, eta[j]) * d[j];
            }
            s = subj.y - mu;
        } catch (Error& e) {
            e.add_context("subject " + std::to_string(i));
            throw;
        }
    }
};

inline void accumulate(const Panel& panel, const Eigen::VectorXd& beta, const FamilySpec& family,
                       const Eigen::MatrixXd& r_inv, const Eigen::VectorXd& weights,
                       Eigen::VectorXd* score_out, Eigen::MatrixXd* info_out) {
    const Eigen::Index p = panel.p;
    if (score_out) score_out->setZero(p);
    if (info_out) info_out->setZero(p, p);
    SubjectWork w;
    w.resize(panel.n, p);
    for (Eigen::Index i = 0; i < panel.m(); ++i) {
        const Subject& subj = panel.subjects[i];
        w.evaluate(subj, beta, family, i);
        const double wt = weights[i];
        if (score_out) {
            score_out->noalias() +=
                wt * (subj.X.transpose() * (w.z.asDiagonal() * (r_inv * w.d.cwiseProduct(w.s))));
        }
        if (info_out) {
            w.Z.noalias() = w.z.asDiagonal() * subj.X;
            w.RZ.noalias() = r_inv * w.Z;
            info_out->noalias() += wt * (w.Z.transpose() * w.RZ);
        }
    }
}

inline Eigen::VectorXd resolve_weights(const Panel& panel, const Eigen::VectorXd& weights) {
    if (weights.size() == 0) return Eigen::VectorXd::Ones(panel.m());
    if (weights.size() != panel.m()) {
        throw ConfigError("weights length " + std::to_string(weights.size()) +
                          " does not match subject count " + std::to_string(panel.m()));
    }
    if ((weights.array() <= 0.0).any()) {
        throw ConfigError("weights must be strictly positive");
    }
    return weights;
}

} // namespace detail

/// Estimating-equation value sum_i w_i D_i' A_i^{-1/2} R^{-1} A_i^{-1/2} S_i.
inline Eigen::VectorXd score(const Panel& panel, const Eigen::VectorXd& beta,
                             const FamilySpec& family, const CorrelationModel& corr,
                             const Eigen::VectorXd& weights = {}) {
    const Eigen::VectorXd w = detail::resolve_weights(panel, weights);
    const Eigen::MatrixXd r_inv = correlation_inverse(corr);
    Eigen::VectorXd u;
    detail::accumulate(panel, beta, family, r_inv, w, &u, nullptr);
    return u;
}

/// Fisher information sum_i w_i D_i' A_i^{-1/2} R^{-1} A_i^{-1/2} D_i.
inline Eigen::MatrixXd information(const Panel& panel, const Eigen::VectorXd& beta,
                                   const FamilySpec& family, const CorrelationModel& corr,
                                   const Eigen::VectorXd& weights = {}) {
    const Eigen::VectorXd w = detail::resolve_weights(panel, weights);
    const Eigen::MatrixXd r_inv = correlation_inverse(corr);
    Eigen::MatrixXd info;
    detail::accumulate(panel, beta, family, r_inv, w, nullptr, &info);
    return info;
}

namespace detail {

inline Eigen::VectorXd solve_step(const Eigen::MatrixXd& info, const Eigen::VectorXd& rhs,
                                  double ridge_rel, FitDiagnostics& diag) {
    const Eigen::Index p = info.rows();
    const double scale = info.trace() / static_cast<double>(p);
    auto attempt = [&](double lambda) -> std::optional<Eigen::VectorXd> {
        Eigen::MatrixXd a = info;
        if (lambda > 0.0) a.diagonal().array() += lambda;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
        if (ldlt.info() != Eigen::Success) return std::nullopt;
        Eigen::VectorXd x = ldlt.solve(rhs);
        if (!x.allFinite()) return std::nullopt;
        const double resid = (a * x - rhs).norm();
        if (resid > 1e-8 * (rhs.norm() + a.norm() * x.norm()) + 1e-300) return std::nullopt;
        return x;
    };
    if (auto x = attempt(ridge_rel > 0.0 ? ridge_rel * scale : 0.0)) return *x;
    ++diag.ridge_fallbacks;
    if (auto x = attempt(std::max(ridge_rel, 1e-8) * scale)) return *x;
    throw SingularDesignError("information matrix is singular even with ridge fallback");
}

} // namespace detail

/// Full GEE fit by Fisher scoring. rho and phi are re-estimated from Pearson
/// residuals once per outer iteration; convergence is max-abs coefficient
/// change below config.tol. Without an explicit starting value, structured
/// fits are initialized from a converged independence fit.
inline FitResult fit(const Panel& panel, const FamilySpec& family, CorrelationStructure structure,
                     const Eigen::VectorXd& weights = {}, const FitConfig& config = {}) {
    config.check();
    if (panel.subjects.empty()) throw EmptyPanelError("cannot fit an empty panel");
    const Eigen::Index p = panel.p;
    const Eigen::VectorXd w = detail::resolve_weights(panel, weights);

    FitResult result;
    Eigen::VectorXd beta;
    if (config.init) {
        if (config.init->size() != p) throw ConfigError("init vector has wrong length");
        beta = *config.init;
    } else if (structure != CorrelationStructure::independent) {
        FitConfig pre = config;
        pre.init.reset();
        FitResult ind = fit(panel, family, CorrelationStructure::independent, w, pre);
        beta = ind.beta;
        result.diagnostics = ind.diagnostics;
        result.diagnostics.init_iterations = ind.iterations;
    } else {
        beta = Eigen::VectorXd::Zero(p);
    }

    CorrEstimateStats cstats;
    double phi = 1.0;
    Eigen::VectorXd rho;

    auto estimate_nuisance = [&](const Eigen::VectorXd& at) {
        const Eigen::MatrixXd res = pearson_residuals(panel, at, family);
        phi = family.dispersion_fixed ? 1.0 : estimate_dispersion(res, p);
        if (phi == 0.0) {
            phi = 1.0;
            ++result.diagnostics.phi_substitutions;
        }
        rho = estimate_correlation(res, structure, phi, p, &cstats);
    };

    Eigen::VectorXd u(p), trial_u(p);
    Eigen::MatrixXd info(p, p);
    Eigen::MatrixXd r_inv = Eigen::MatrixXd::Identity(panel.n, panel.n);
    // the independence structure has no rho and the dispersion cancels from
    // the step, so its nuisance pass runs only once at the end for reporting
    const bool needs_nuisance = structure != CorrelationStructure::independent;

    int iter = 0;
    for (; iter < config.max_outer_iter; ++iter) {
        if (needs_nuisance) {
            estimate_nuisance(beta);
            const CorrelationModel corr{structure, rho, phi, panel.n};
            r_inv = correlation_inverse(corr);
        }
        detail::accumulate(panel, beta, family, r_inv, w, &u, &info);

        const Eigen::VectorXd delta = detail::solve_step(info, u, config.ridge, result.diagnostics);

        // step-halving: back off while the step inflates the score norm or
        // leaves the family's domain
        const double norm0 = u.norm();
        double h = 1.0;
        Eigen::VectorXd trial(p);
        for (int t = 0; t <= 10; ++t) {
            trial = beta + h * delta;
            bool ok = trial.allFinite();
            double norm1 = std::numeric_limits<double>::infinity();
            if (ok) {
                try {
                    detail::accumulate(panel, trial, family, r_inv, w, &trial_u, nullptr);
                    norm1 = trial_u.norm();
                    ok = std::isfinite(norm1);
                } catch (const DomainError&) {
                    ok = false;
                } catch (const NumericRangeError&) {
                    ok = false;
                }
            }
            if (ok && norm1 <= norm0) break;
            if (t == 10) {
                // out of halvings: a merely non-decreasing step is taken,
                // an unevaluable one is a failure
                if (!ok) {
                    throw DivergenceError("non-finite update at iteration " +
                                          std::to_string(iter + 1));
                }
                break;
            }
            h *= 0.5;
            ++result.diagnostics.step_halvings;
        }
        const double change = h * delta.cwiseAbs().maxCoeff();
        beta = trial;
        if (change < config.tol) {
            result.converged = true;
            ++iter;
            break;
        }
    }

    estimate_nuisance(beta);
    result.beta = beta;
    result.iterations = iter;
    result.phi = phi;
    result.rho = rho;
    result.diagnostics.rho_clamps += cstats.clamps;
    result.diagnostics.correlation_projections += cstats.projections;
    return result;
}

/// Sandwich covariance of the weighted-subsample estimator:
///   V = (sum D'W^{-1}D)^{-1} [sum D'W^{-1}S S'W^{-1}D / (r pi_i)] (sum D'W^{-1}D)^{-1}
/// evaluated over the full panel at beta_hat. The dispersion and the paper's
/// N normalization cancel algebraically, so neither appears here.
inline Eigen::MatrixXd sandwich(const Panel& panel, const Eigen::VectorXd& beta_hat,
                                const FamilySpec& family, const CorrelationModel& corr,
                                const Eigen::VectorXd& pi, Eigen::Index r) {
    const Eigen::Index p = panel.p;
    if (pi.size() != panel.m()) throw ConfigError("pi length does not match subject count");
    if ((pi.array() <= 0.0).any()) throw ConfigError("sampling probabilities must be positive");
    if (std::abs(pi.sum() - 1.0) > 1e-8) throw ConfigError("sampling probabilities must sum to 1");
    if (r < 1) throw ConfigError("subsample size must be >= 1");

    const Eigen::MatrixXd r_inv = correlation_inverse(corr);
    Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
    detail::SubjectWork w;
    w.resize(panel.n, p);
    Eigen::VectorXd v(p);
    for (Eigen::Index i = 0; i < panel.m(); ++i) {
        const Subject& subj = panel.subjects[i];
        w.evaluate(subj, beta_hat, family, i);
        w.Z.noalias() = w.z.asDiagonal() * subj.X;
        w.RZ.noalias() = r_inv * w.Z;
        bread.noalias() += w.Z.transpose() * w.RZ;
        v.noalias() = subj.X.transpose() * (w.z.asDiagonal() * (r_inv * w.d.cwiseProduct(w.s)));
        meat.noalias() += v * v.transpose() / (static_cast<double>(r) * pi[i]);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(bread);
    if (ldlt.info() != Eigen::Success) {
        throw SingularInformationError("bread matrix factorization failed");
    }
    Eigen::MatrixXd half = ldlt.solve(meat);
    Eigen::MatrixXd vcov = ldlt.solve(half.transpose()).transpose();
    if (!vcov.allFinite()) {
        throw SingularInformationError("sandwich covariance is singular");
    }
    return ((vcov + vcov.transpose()) / 2.0).eval();
}

} // namespace geesub
