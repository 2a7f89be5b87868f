#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "geesub/errors.hpp"
#include "geesub/family.hpp"
#include "geesub/panel.hpp"

namespace geesub {

enum class CorrelationStructure {
    independent,
    exchangeable,
    ar1,
    unstructured,
};

inline std::string structure_name(CorrelationStructure s) {
    switch (s) {
        case CorrelationStructure::independent: return "ind";
        case CorrelationStructure::exchangeable: return "exch";
        case CorrelationStructure::ar1: return "ar1";
        case CorrelationStructure::unstructured: return "un";
    }
    return "?";
}

// Moment estimates are clamped this far inside the open parameter ranges.
inline constexpr double kRhoClampMargin = 1e-6;

/// Working correlation structure R(rho) with its dispersion. rho is empty for
/// independent, a scalar for exchangeable/ar1, and the strict upper triangle
/// (row-major) for unstructured.
struct CorrelationModel {
    CorrelationStructure structure = CorrelationStructure::independent;
    Eigen::VectorXd rho;
    double phi = 1.0;
    Eigen::Index n = 1;

    static CorrelationModel independent(Eigen::Index n, double phi = 1.0) {
        return {CorrelationStructure::independent, Eigen::VectorXd(), phi, n};
    }

    Eigen::Index rho_size() const {
        switch (structure) {
            case CorrelationStructure::independent: return 0;
            case CorrelationStructure::exchangeable:
            case CorrelationStructure::ar1: return 1;
            case CorrelationStructure::unstructured: return n * (n - 1) / 2;
        }
        return 0;
    }

    void check() const {
        if (!(phi > 0.0)) throw ConfigError("dispersion must be positive");
        if (n < 1) throw ConfigError("block size must be >= 1");
        if (rho.size() != rho_size()) {
            throw ConfigError("correlation parameter vector has size " +
                              std::to_string(rho.size()) + ", expected " +
                              std::to_string(rho_size()));
        }
        if (structure == CorrelationStructure::exchangeable && n > 1) {
            const double lo = -1.0 / static_cast<double>(n - 1);
            if (!(rho[0] > lo && rho[0] < 1.0)) {
                throw ConfigError("exchangeable rho out of (" + std::to_string(lo) + ", 1)");
            }
        }
        if (structure == CorrelationStructure::ar1) {
            if (!(rho[0] > -1.0 && rho[0] < 1.0)) {
                throw ConfigError("ar1 rho out of (-1, 1)");
            }
        }
    }
};

/// Index of pair (j,k), j<k, in the packed strict upper triangle.
inline Eigen::Index pair_index(Eigen::Index j, Eigen::Index k, Eigen::Index n) {
    return j * (2 * n - j - 1) / 2 + (k - j - 1);
}

/// Materialize R(rho) as a dense n x n matrix.
inline Eigen::MatrixXd correlation_matrix(const CorrelationModel& model) {
    const Eigen::Index n = model.n;
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(n, n);
    switch (model.structure) {
        case CorrelationStructure::independent:
            break;
        case CorrelationStructure::exchangeable:
            for (Eigen::Index j = 0; j < n; ++j)
                for (Eigen::Index k = 0; k < n; ++k)
                    if (j != k) R(j, k) = model.rho[0];
            break;
        case CorrelationStructure::ar1:
            for (Eigen::Index j = 0; j < n; ++j)
                for (Eigen::Index k = 0; k < n; ++k)
                    if (j != k) R(j, k) = std::pow(model.rho[0], std::abs(double(j - k)));
            break;
        case CorrelationStructure::unstructured:
            for (Eigen::Index j = 0; j < n; ++j)
                for (Eigen::Index k = j + 1; k < n; ++k) {
                    R(j, k) = model.rho[pair_index(j, k, n)];
                    R(k, j) = R(j, k);
                }
            break;
    }
    return R;
}

/// Pearson residuals r_ij = (y_ij - mu_ij) / sqrt(nu(mu_ij)) as an m x n matrix.
inline Eigen::MatrixXd pearson_residuals(const Panel& panel, const Eigen::VectorXd& beta,
                                         const FamilySpec& family) {
    const Eigen::Index m = panel.m();
    Eigen::MatrixXd res(m, panel.n);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Subject& s = panel.subjects[i];
        for (Eigen::Index j = 0; j < panel.n; ++j) {
            const double eta = s.X.row(j).dot(beta);
            const double mu = mean(family, eta);
            double nu;
            if (family.kind == Family::poisson_log) {
                nu = mu; // exp(eta) can underflow to 0; report as degenerate below
            } else {
                nu = variance(family, mu);
            }
            if (!(nu > 0.0)) {
                throw DegenerateVarianceError("variance is zero at subject " + std::to_string(i) +
                                              ", observation " + std::to_string(j));
            }
            res(i, j) = (s.y[j] - mu) / std::sqrt(nu);
        }
    }
    return res;
}

/// Moment estimate of the dispersion: sum of squared residuals over (M - p).
/// Returns 0 for a perfect fit; callers substitute 1 in that case.
inline double estimate_dispersion(const Eigen::MatrixXd& residuals, Eigen::Index p) {
    const Eigen::Index M = residuals.size();
    if (M <= p) {
        throw InsufficientDataError("dispersion needs M > p, got M=" + std::to_string(M) +
                                    ", p=" + std::to_string(p));
    }
    return residuals.squaredNorm() / static_cast<double>(M - p);
}

struct CorrEstimateStats {
    int clamps = 0;
    int projections = 0;
};

/// Moment estimates of the correlation parameters from Pearson residuals.
/// Exchangeable/ar1 estimates are clamped just inside their open ranges; the
/// raw unstructured estimate is projected to the nearest valid correlation
/// matrix when its smallest eigenvalue drops below 1e-6.
inline Eigen::VectorXd estimate_correlation(const Eigen::MatrixXd& residuals,
                                            CorrelationStructure structure, double phi,
                                            Eigen::Index p,
                                            CorrEstimateStats* stats = nullptr) {
    if (!(phi > 0.0)) throw ConfigError("dispersion must be positive");
    const Eigen::Index m = residuals.rows();
    const Eigen::Index n = residuals.cols();

    auto clamp_into = [&](double value, double lo, double hi) {
        const double clo = lo + kRhoClampMargin * (hi - lo);
        const double chi = hi - kRhoClampMargin * (hi - lo);
        if (value < clo) {
            if (stats) ++stats->clamps;
            return clo;
        }
        if (value > chi) {
            if (stats) ++stats->clamps;
            return chi;
        }
        return value;
    };

    switch (structure) {
        case CorrelationStructure::independent:
            return Eigen::VectorXd();

        case CorrelationStructure::exchangeable: {
            const double denom = static_cast<double>(m) * n * (n - 1) / 2.0 - p;
            if (!(denom > 0.0)) {
                throw InsufficientDataError("exchangeable moment estimator has denominator <= 0");
            }
            double sum = 0.0;
            for (Eigen::Index i = 0; i < m; ++i) {
                const double rowsum = residuals.row(i).sum();
                const double rowsq = residuals.row(i).squaredNorm();
                sum += 0.5 * (rowsum * rowsum - rowsq);
            }
            const double lo = n > 1 ? -1.0 / static_cast<double>(n - 1) : -1.0;
            Eigen::VectorXd rho(1);
            rho[0] = clamp_into(sum / (phi * denom), lo, 1.0);
            return rho;
        }

        case CorrelationStructure::ar1: {
            const double denom = static_cast<double>(m) * (n - 1) - p;
            if (!(denom > 0.0)) {
                throw InsufficientDataError("ar1 moment estimator has denominator <= 0");
            }
            double sum = 0.0;
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j + 1 < n; ++j) sum += residuals(i, j) * residuals(i, j + 1);
            Eigen::VectorXd rho(1);
            rho[0] = clamp_into(sum / (phi * denom), -1.0, 1.0);
            return rho;
        }

        case CorrelationStructure::unstructured: {
            const double denom = static_cast<double>(m) - p;
            if (!(denom > 0.0)) {
                throw InsufficientDataError("unstructured moment estimator has denominator <= 0");
            }
            Eigen::MatrixXd R = (residuals.transpose() * residuals) / (phi * denom);
            R.diagonal().setOnes();
            R = ((R + R.transpose()) / 2.0).eval();

            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(R);
            if (eig.eigenvalues().minCoeff() < 1e-6) {
                if (stats) ++stats->projections;
                Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(1e-6);
                R = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
                const Eigen::VectorXd d = R.diagonal().cwiseSqrt().cwiseInverse();
                R = (d.asDiagonal() * R * d.asDiagonal()).eval();
                R.diagonal().setOnes();
            }

            Eigen::VectorXd rho(n * (n - 1) / 2);
            for (Eigen::Index j = 0; j < n; ++j)
                for (Eigen::Index k = j + 1; k < n; ++k) rho[pair_index(j, k, n)] = R(j, k);
            return rho;
        }
    }
    return Eigen::VectorXd();
}

/// R(rho)^{-1}. Exchangeable and AR(1) use their closed forms; unstructured
/// goes through a dense Cholesky factorization.
inline Eigen::MatrixXd correlation_inverse(const CorrelationModel& model) {
    const Eigen::Index n = model.n;
    switch (model.structure) {
        case CorrelationStructure::independent:
            return Eigen::MatrixXd::Identity(n, n);

        case CorrelationStructure::exchangeable: {
            const double rho = model.rho[0];
            const double denom = 1.0 + static_cast<double>(n - 1) * rho;
            if (rho >= 1.0 || denom <= 0.0) {
                throw SingularityError("exchangeable correlation is singular at rho=" +
                                       std::to_string(rho));
            }
            // ((1-rho)I + rho J)^{-1} = (1-rho)^{-1} [I - rho J / (1+(n-1)rho)]
            Eigen::MatrixXd inv =
                Eigen::MatrixXd::Constant(n, n, -rho / ((1.0 - rho) * denom));
            inv.diagonal().array() += 1.0 / (1.0 - rho);
            return inv;
        }

        case CorrelationStructure::ar1: {
            const double rho = model.rho[0];
            if (!(std::abs(rho) < 1.0)) {
                throw SingularityError("ar1 correlation is singular at rho=" + std::to_string(rho));
            }
            const double f = 1.0 / (1.0 - rho * rho);
            Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(n, n);
            for (Eigen::Index j = 0; j < n; ++j) {
                inv(j, j) = (j == 0 || j == n - 1) ? f : f * (1.0 + rho * rho);
                if (j + 1 < n) {
                    inv(j, j + 1) = -rho * f;
                    inv(j + 1, j) = -rho * f;
                }
            }
            if (n == 1) inv(0, 0) = 1.0;
            return inv;
        }

        case CorrelationStructure::unstructured: {
            const Eigen::MatrixXd R = correlation_matrix(model);
            Eigen::LLT<Eigen::MatrixXd> llt(R);
            if (llt.info() != Eigen::Success) {
                throw FactorizationError("unstructured correlation matrix is not positive-definite");
            }
            return llt.solve(Eigen::MatrixXd::Identity(n, n));
        }
    }
    return Eigen::MatrixXd::Identity(n, n);
}

} // namespace geesub
