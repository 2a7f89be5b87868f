#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include "geesub/errors.hpp"
#include "geesub/family.hpp"
#include "geesub/panel.hpp"
#include "geesub/rng.hpp"

namespace geesub {

enum class SimCase { linear, count, binary };
enum class ErrorDist { mvnormal, mvt3 };
enum class TrueCorr { independent, ar1_05 };

struct SimConfig {
    SimCase kase = SimCase::linear;
    Eigen::Index m = 10000;
    Eigen::Index n = 5;
    ErrorDist error_dist = ErrorDist::mvnormal; // linear case only
    TrueCorr true_corr = TrueCorr::ar1_05;
    Eigen::VectorXd beta0; // empty -> case default
    std::uint64_t seed = 1;
};

inline Eigen::VectorXd default_beta0(SimCase kase) {
    if (kase == SimCase::linear) {
        Eigen::VectorXd b(8);
        b << 0.5, 0.5, 1.0, 1.0, 2.0, 2.0, 10.0, 10.0;
        return b;
    }
    Eigen::VectorXd b(6);
    b << -0.5, -0.5, -1.0, 1.0, 0.5, 0.5;
    return b;
}

inline FamilySpec family_for_case(SimCase kase) {
    switch (kase) {
        case SimCase::linear: return FamilySpec::gaussian();
        case SimCase::count: return FamilySpec::poisson();
        case SimCase::binary: return FamilySpec::binomial();
    }
    return FamilySpec::gaussian();
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Right-continuous inverse of the Poisson(mu) CDF: the smallest k with
/// F(k) >= u. The CDF is evaluated through the regularized incomplete gamma,
/// so the search stays O(log mu) for any mean.
inline double poisson_quantile(double mu, double u) {
    const auto cdf = [mu](double k) { return boost::math::gamma_q(k + 1.0, mu); };
    if (u <= cdf(0.0)) return 0.0;
    double lo = 0.0;
    double hi = std::ceil(mu + 10.0 * std::sqrt(mu) + 30.0);
    while (cdf(hi) < u) {
        lo = hi;
        hi = 2.0 * hi + 10.0;
    }
    while (hi - lo > 0.5) {
        const double mid = std::floor((lo + hi) / 2.0);
        if (cdf(mid) >= u) {
            hi = mid;
        } else {
            lo = mid == lo ? lo + 1.0 : mid;
        }
    }
    return hi;
}

namespace detail {

// Sigma_kj = 0.5^|k-j| covariate covariance, lower Cholesky factor.
inline Eigen::MatrixXd covariate_chol(Eigen::Index p) {
    Eigen::MatrixXd sigma(p, p);
    for (Eigen::Index k = 0; k < p; ++k)
        for (Eigen::Index j = 0; j < p; ++j) sigma(k, j) = std::pow(0.5, std::abs(double(k - j)));
    return Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
}

inline Eigen::MatrixXd true_corr_chol(TrueCorr corr, Eigen::Index n) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n, n);
    if (corr == TrueCorr::ar1_05) {
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index k = 0; k < n; ++k) r(j, k) = std::pow(0.5, std::abs(double(j - k)));
    }
    return Eigen::LLT<Eigen::MatrixXd>(r).matrixL();
}

inline Eigen::MatrixXd draw_covariates(Rng& rng, Eigen::Index n, Eigen::Index p,
                                       const Eigen::MatrixXd& chol) {
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd z(p);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index k = 0; k < p; ++k) z[k] = rng.normal();
        x.row(j) = (chol * z).transpose();
    }
    return x;
}

inline Eigen::VectorXd draw_latent(Rng& rng, const Eigen::MatrixXd& corr_chol) {
    Eigen::VectorXd z(corr_chol.rows());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
    return corr_chol * z;
}

} // namespace detail

/// Covariate blocks alone: each row x_ij ~ N(0, Sigma), Sigma_kj = 0.5^|k-j|,
/// rows independent. Subject i draws from its own substream, so parallel and
/// sequential generation agree.
inline std::vector<Eigen::MatrixXd> gen_covariates(Eigen::Index m, Eigen::Index n, Eigen::Index p,
                                                   std::uint64_t seed) {
    if (p < 1 || n < 1 || m < 1) throw ConfigError("m, n, p must all be >= 1");
    const Eigen::MatrixXd chol = detail::covariate_chol(p);
    std::vector<Eigen::MatrixXd> out(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        out[i] = detail::draw_covariates(rng, n, p, chol);
    }
    return out;
}

/// Linear responses y = X beta0 + eps with eps multivariate normal or t(3)
/// sharing the chosen within-subject correlation.
inline Panel gen_case1(const SimConfig& cfg) {
    if (cfg.kase != SimCase::linear) throw ConfigError("gen_case1 requires the linear case");
    const Eigen::VectorXd beta0 = cfg.beta0.size() ? cfg.beta0 : default_beta0(cfg.kase);
    const Eigen::Index p = beta0.size();
    const Eigen::MatrixXd xchol = detail::covariate_chol(p);
    const Eigen::MatrixXd rchol = detail::true_corr_chol(cfg.true_corr, cfg.n);

    Panel panel;
    panel.p = p;
    panel.n = cfg.n;
    panel.subjects.resize(cfg.m);
    for (Eigen::Index i = 0; i < cfg.m; ++i) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        Subject& s = panel.subjects[i];
        s.id = std::to_string(i + 1);
        s.X = detail::draw_covariates(rng, cfg.n, p, xchol);
        Eigen::VectorXd eps = detail::draw_latent(rng, rchol);
        if (cfg.error_dist == ErrorDist::mvt3) {
            // one chi-squared divisor per subject keeps the within-subject
            // correlation of the t errors equal to R_T
            eps /= std::sqrt(rng.chisq3() / 3.0);
        }
        s.y = s.X * beta0 + eps;
    }
    return panel;
}

namespace detail {

template <typename MapFn>
inline Panel gen_copula_case(const SimConfig& cfg, const Eigen::VectorXd& beta0, MapFn&& map) {
    const Eigen::Index p = beta0.size();
    const Eigen::MatrixXd xchol = covariate_chol(p);
    const Eigen::MatrixXd rchol = true_corr_chol(cfg.true_corr, cfg.n);

    Panel panel;
    panel.p = p;
    panel.n = cfg.n;
    panel.subjects.resize(cfg.m);
    for (Eigen::Index i = 0; i < cfg.m; ++i) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        Subject& s = panel.subjects[i];
        s.id = std::to_string(i + 1);
        s.X = draw_covariates(rng, cfg.n, p, xchol);
        const Eigen::VectorXd z = draw_latent(rng, rchol);
        s.y.resize(cfg.n);
        for (Eigen::Index j = 0; j < cfg.n; ++j) {
            const double eta = s.X.row(j).dot(beta0);
            double u = normal_cdf(z[j]);
            u = std::min(std::max(u, 1e-300), 1.0 - 0x1.0p-53);
            s.y[j] = map(eta, u);
        }
    }
    return panel;
}

} // namespace detail

/// Count responses with exact Poisson(exp(eta)) marginals; within-subject
/// dependence comes from a Gaussian copula with correlation R_T.
inline Panel gen_case2(const SimConfig& cfg) {
    if (cfg.kase != SimCase::count) throw ConfigError("gen_case2 requires the count case");
    const Eigen::VectorXd beta0 = cfg.beta0.size() ? cfg.beta0 : default_beta0(cfg.kase);
    return detail::gen_copula_case(cfg, beta0, [](double eta, double u) {
        const double mu = std::exp(eta);
        if (!(mu <= 1e8)) {
            throw ConfigError("poisson mean exp(eta) exceeds 1e8; shrink beta0");
        }
        return poisson_quantile(mu, u);
    });
}

/// Binary responses with exact Bernoulli(logistic(eta)) marginals via the same
/// copula mechanism.
inline Panel gen_case3(const SimConfig& cfg) {
    if (cfg.kase != SimCase::binary) throw ConfigError("gen_case3 requires the binary case");
    const Eigen::VectorXd beta0 = cfg.beta0.size() ? cfg.beta0 : default_beta0(cfg.kase);
    return detail::gen_copula_case(cfg, beta0, [](double eta, double u) {
        const double mu = 1.0 / (1.0 + std::exp(-eta));
        return u < mu ? 1.0 : 0.0;
    });
}

inline Panel gen_panel(const SimConfig& cfg) {
    switch (cfg.kase) {
        case SimCase::linear: return gen_case1(cfg);
        case SimCase::count: return gen_case2(cfg);
        case SimCase::binary: return gen_case3(cfg);
    }
    throw ConfigError("unknown simulation case");
}

} // namespace geesub
