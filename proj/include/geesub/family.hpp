#pragma once

#include <cmath>
#include <string>

#include "geesub/errors.hpp"

namespace geesub {

enum class Family {
    gaussian_identity,
    poisson_log,
    binomial_logit,
};

/// Link/variance triple for the three marginal-model families. The binomial
/// and Poisson families fix the dispersion at 1; the Gaussian family
/// estimates it from residuals.
struct FamilySpec {
    Family kind = Family::gaussian_identity;
    bool dispersion_fixed = false;

    static FamilySpec gaussian() { return {Family::gaussian_identity, false}; }
    static FamilySpec poisson() { return {Family::poisson_log, true}; }
    static FamilySpec binomial() { return {Family::binomial_logit, true}; }
};

inline std::string family_name(Family f) {
    switch (f) {
        case Family::gaussian_identity: return "gaussian";
        case Family::poisson_log: return "poisson";
        case Family::binomial_logit: return "binomial";
    }
    return "?";
}

// Logistic means are clamped away from {0,1} instead of erroring: extreme
// pilot estimates can push |eta| past 700 and the fitter recovers via
// step-halving as long as the mean stays inside the open unit interval.
inline constexpr double kLogitClamp = 0x1.0p-52;

/// g(eta): inverse-link mean.
inline double mean(const FamilySpec& family, double eta) {
    switch (family.kind) {
        case Family::gaussian_identity:
            return eta;
        case Family::poisson_log: {
            const double mu = std::exp(eta);
            if (!std::isfinite(mu)) {
                throw NumericRangeError("poisson mean overflow at eta=" + std::to_string(eta));
            }
            return mu;
        }
        case Family::binomial_logit: {
            const double mu = 1.0 / (1.0 + std::exp(-eta));
            if (mu < kLogitClamp) return kLogitClamp;
            if (mu > 1.0 - kLogitClamp) return 1.0 - kLogitClamp;
            return mu;
        }
    }
    return 0.0;
}

/// dg/deta evaluated at eta. Row j of D_i is mean_deriv(eta_ij) * x_ij.
inline double mean_deriv(const FamilySpec& family, double eta) {
    switch (family.kind) {
        case Family::gaussian_identity:
            return 1.0;
        case Family::poisson_log: {
            const double d = std::exp(eta);
            if (!std::isfinite(d)) {
                throw NumericRangeError("poisson mean overflow at eta=" + std::to_string(eta));
            }
            return d;
        }
        case Family::binomial_logit: {
            const double mu = mean(family, eta);
            return mu * (1.0 - mu);
        }
    }
    return 0.0;
}

/// nu(mu): variance function without the dispersion factor.
inline double variance(const FamilySpec& family, double mu) {
    switch (family.kind) {
        case Family::gaussian_identity:
            return 1.0;
        case Family::poisson_log:
            if (!(mu > 0.0)) {
                throw DomainError("poisson variance requires mu > 0, got " + std::to_string(mu));
            }
            return mu;
        case Family::binomial_logit:
            if (!(mu > 0.0 && mu < 1.0)) {
                throw DomainError("binomial variance requires mu in (0,1), got " + std::to_string(mu));
            }
            return mu * (1.0 - mu);
    }
    return 0.0;
}

} // namespace geesub
