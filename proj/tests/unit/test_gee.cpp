#include <catch2/catch_amalgamated.hpp>

#include "geesub/gee.hpp"
#include "geesub/rng.hpp"
#include "geesub/simulate.hpp"
#include "geesub/subsample.hpp"

using namespace geesub;

namespace {

Panel single_obs_panel(double x, double y) {
    Panel p;
    p.p = 1;
    p.n = 1;
    p.subjects.push_back(
        {"1", Eigen::MatrixXd::Constant(1, 1, x), Eigen::VectorXd::Constant(1, y)});
    return p;
}

Panel random_gaussian_panel(Rng& rng, Eigen::Index m, Eigen::Index n, Eigen::Index p) {
    Panel panel;
    panel.p = p;
    panel.n = n;
    Eigen::VectorXd beta(p);
    for (Eigen::Index k = 0; k < p; ++k) beta[k] = 2.0 * rng.uniform01() - 1.0;
    panel.subjects.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        Subject& s = panel.subjects[i];
        s.id = std::to_string(i);
        s.X.resize(n, p);
        s.y.resize(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index k = 0; k < p; ++k) s.X(j, k) = rng.normal();
            s.y[j] = s.X.row(j).dot(beta) + rng.normal();
        }
    }
    return panel;
}

// stacked weighted least squares through QR, an independent route from the
// Fisher iteration
Eigen::VectorXd wls_oracle(const Panel& panel, const Eigen::VectorXd& weights) {
    const Eigen::Index rows = panel.m() * panel.n;
    Eigen::MatrixXd A(rows, panel.p);
    Eigen::VectorXd b(rows);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < panel.m(); ++i) {
        const double sw = std::sqrt(weights[i]);
        for (Eigen::Index j = 0; j < panel.n; ++j, ++r) {
            A.row(r) = sw * panel.subjects[i].X.row(j);
            b[r] = sw * panel.subjects[i].y[j];
        }
    }
    return A.colPivHouseholderQr().solve(b);
}

} // namespace

TEST_CASE("score is zero at an exact fit and linear in the weights", "[gee]") {
    Rng rng(5);
    Panel panel = random_gaussian_panel(rng, 20, 3, 2);
    Eigen::VectorXd beta(2);
    beta << 0.3, -0.7;
    for (auto& s : panel.subjects) s.y = s.X * beta; // S_i = 0 exactly
    const auto corr = CorrelationModel::independent(3);
    CHECK(score(panel, beta, FamilySpec::gaussian(), corr).norm() == 0.0);

    for (auto& s : panel.subjects) s.y.array() += 1.0;
    const Eigen::VectorXd u1 = score(panel, beta, FamilySpec::gaussian(), corr);
    const Eigen::VectorXd u2 = score(panel, beta, FamilySpec::gaussian(), corr,
                                     Eigen::VectorXd::Constant(panel.m(), 2.0));
    CHECK((u2 - 2.0 * u1).cwiseAbs().maxCoeff() < 1e-12 * u1.cwiseAbs().maxCoeff());
}

TEST_CASE("scalar score and information examples", "[gee]") {
    const Panel p = single_obs_panel(1.0, 2.0);
    const auto corr = CorrelationModel::independent(1);
    const Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
    CHECK(score(p, beta, FamilySpec::gaussian(), corr)(0) == Catch::Approx(2.0));

    const Panel q = single_obs_panel(2.0, 0.0);
    CHECK(information(q, beta, FamilySpec::gaussian(), corr)(0, 0) == Catch::Approx(4.0));
}

TEST_CASE("information equals weighted X'X for gaussian independence", "[gee]") {
    Rng rng(11);
    const Panel panel = random_gaussian_panel(rng, 30, 4, 3);
    Eigen::VectorXd w(panel.m());
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = 0.5 + rng.uniform01();

    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(3, 3);
    for (Eigen::Index i = 0; i < panel.m(); ++i) {
        xtx += w[i] * panel.subjects[i].X.transpose() * panel.subjects[i].X;
    }
    const Eigen::MatrixXd info = information(panel, Eigen::VectorXd::Zero(3),
                                             FamilySpec::gaussian(),
                                             CorrelationModel::independent(4), w);
    CHECK((info - xtx).cwiseAbs().maxCoeff() < 1e-10 * xtx.cwiseAbs().maxCoeff());

    const Eigen::MatrixXd doubled = information(panel, Eigen::VectorXd::Zero(3),
                                                FamilySpec::gaussian(),
                                                CorrelationModel::independent(4), 2.0 * w);
    CHECK((doubled - 2.0 * info).cwiseAbs().maxCoeff() < 1e-10 * info.cwiseAbs().maxCoeff());
}

TEST_CASE("gaussian independence fit equals the WLS oracle", "[gee]") {
    Rng rng(17);
    const Eigen::Index ms[] = {50, 200};
    const Eigen::Index ns[] = {2, 5};
    const Eigen::Index ps[] = {2, 4};
    for (Eigen::Index m : ms) {
        for (Eigen::Index n : ns) {
            for (Eigen::Index p : ps) {
                Panel panel = random_gaussian_panel(rng, m, n, p);
                Eigen::VectorXd w(m);
                for (Eigen::Index i = 0; i < m; ++i) w[i] = 0.5 + 1.5 * rng.uniform01();
                const FitResult res =
                    fit(panel, FamilySpec::gaussian(), CorrelationStructure::independent, w);
                const Eigen::VectorXd oracle = wls_oracle(panel, w);
                CHECK(res.converged);
                CHECK((res.beta - oracle).cwiseAbs().maxCoeff() < 1e-8);
            }
        }
    }
}

TEST_CASE("score equals the negative objective gradient for weighted least squares", "[gee]") {
    Rng rng(23);
    const Panel panel = random_gaussian_panel(rng, 40, 3, 3);
    Eigen::VectorXd w(panel.m());
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = 0.5 + rng.uniform01();
    Eigen::VectorXd beta(3);
    beta << 0.2, -0.4, 0.9;

    auto objective = [&](const Eigen::VectorXd& b) {
        double f = 0.0;
        for (Eigen::Index i = 0; i < panel.m(); ++i) {
            f += 0.5 * w[i] * (panel.subjects[i].y - panel.subjects[i].X * b).squaredNorm();
        }
        return f;
    };
    const Eigen::VectorXd u =
        score(panel, beta, FamilySpec::gaussian(), CorrelationModel::independent(3), w);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < 3; ++k) {
        Eigen::VectorXd bp = beta, bm = beta;
        bp[k] += h;
        bm[k] -= h;
        const double grad = (objective(bp) - objective(bm)) / (2.0 * h);
        CHECK(std::abs(-grad - u[k]) <= 1e-5 * std::max(1.0, std::abs(u[k])));
    }
}

TEST_CASE("noise-free gaussian panel converges to beta0 in at most 2 iterations", "[gee]") {
    Rng rng(31);
    Panel panel = random_gaussian_panel(rng, 25, 4, 3);
    Eigen::VectorXd beta0(3);
    beta0 << 1.0, -2.0, 0.5;
    for (auto& s : panel.subjects) s.y = s.X * beta0;
    const FitResult res = fit(panel, FamilySpec::gaussian(), CorrelationStructure::ar1);
    CHECK(res.converged);
    CHECK(res.iterations <= 2);
    CHECK((res.beta - beta0).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("constant weights cancel from the GEE root", "[gee]") {
    SimConfig cfg;
    cfg.kase = SimCase::count;
    cfg.m = 120;
    cfg.n = 4;
    cfg.seed = 7;
    const Panel panel = gen_case2(cfg);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(panel.m());
    const Eigen::VectorXd scaled = Eigen::VectorXd::Constant(panel.m(), 7.5);
    const FitResult a = fit(panel, FamilySpec::poisson(), CorrelationStructure::ar1, ones);
    const FitResult b = fit(panel, FamilySpec::poisson(), CorrelationStructure::ar1, scaled);
    CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("score norm decreases from initialization to termination", "[gee]") {
    SimConfig cfg;
    cfg.kase = SimCase::binary;
    cfg.m = 300;
    cfg.n = 5;
    cfg.seed = 13;
    const Panel panel = gen_case3(cfg);
    FitConfig fc;
    fc.init = Eigen::VectorXd::Zero(panel.p);
    const FitResult res = fit(panel, FamilySpec::binomial(), CorrelationStructure::exchangeable,
                              {}, fc);
    const CorrelationModel corr{CorrelationStructure::exchangeable, res.rho, res.phi, panel.n};
    const double at_end = score(panel, res.beta, FamilySpec::binomial(), corr).norm();
    const double at_start =
        score(panel, Eigen::VectorXd::Zero(panel.p), FamilySpec::binomial(), corr).norm();
    CHECK(at_end < at_start);
}

TEST_CASE("case 1 panel fit recovers the true coefficients", "[gee][mc]") {
    SimConfig cfg;
    cfg.kase = SimCase::linear;
    cfg.m = 2000;
    cfg.n = 5;
    cfg.true_corr = TrueCorr::ar1_05;
    cfg.seed = 101;
    const Panel panel = gen_case1(cfg);
    const Eigen::VectorXd beta0 = default_beta0(SimCase::linear);
    const FitResult res = fit(panel, FamilySpec::gaussian(), CorrelationStructure::ar1);
    CHECK(res.converged);
    CHECK((res.beta - beta0).cwiseAbs().maxCoeff() < 0.05);
    CHECK(std::abs(res.rho[0] - 0.5) < 0.05);
    CHECK(std::abs(res.phi - 1.0) < 0.1);
}

TEST_CASE("singular designs fail with the dedicated error", "[gee]") {
    Panel p;
    p.p = 2;
    p.n = 2;
    Eigen::MatrixXd X(2, 2);
    X << 1.0, 1.0, 1.0, 1.0; // rank 1
    Eigen::VectorXd y(2);
    y << 1.0, 2.0;
    p.subjects.push_back({"1", X, y});
    p.subjects.push_back({"2", X, y});
    CHECK_THROWS_AS(fit(p, FamilySpec::gaussian(), CorrelationStructure::independent),
                    SingularDesignError);
}

TEST_CASE("sandwich scalar example and 1/r scaling", "[gee]") {
    const Panel p = single_obs_panel(1.0, 2.0);
    const auto corr = CorrelationModel::independent(1);
    const Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
    const Eigen::VectorXd pi = Eigen::VectorXd::Ones(1);
    const Eigen::MatrixXd v1 = sandwich(p, beta, FamilySpec::gaussian(), corr, pi, 1);
    CHECK(v1(0, 0) == Catch::Approx(4.0));
    const Eigen::MatrixXd v2 = sandwich(p, beta, FamilySpec::gaussian(), corr, pi, 2);
    CHECK(v2(0, 0) == Catch::Approx(2.0));
}

TEST_CASE("sandwich is zero at an exact fit and PSD otherwise", "[gee]") {
    Rng rng(41);
    Panel panel = random_gaussian_panel(rng, 30, 3, 2);
    Eigen::VectorXd beta(2);
    beta << 0.5, 1.5;
    for (auto& s : panel.subjects) s.y = s.X * beta;
    const auto corr = CorrelationModel::independent(3);
    const Eigen::VectorXd pi = Eigen::VectorXd::Constant(30, 1.0 / 30.0);
    CHECK(sandwich(panel, beta, FamilySpec::gaussian(), corr, pi, 5).cwiseAbs().maxCoeff() ==
          0.0);

    for (auto& s : panel.subjects) s.y.array() += 0.3;
    const Eigen::MatrixXd v = sandwich(panel, beta, FamilySpec::gaussian(), corr, pi, 5);
    CHECK((v - v.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v);
    CHECK(eig.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("estimated sandwich tracks the Monte Carlo covariance", "[gee][mc]") {
    SimConfig cfg;
    cfg.kase = SimCase::linear;
    cfg.m = 2000;
    cfg.n = 5;
    cfg.true_corr = TrueCorr::ar1_05;
    cfg.seed = 404;
    const Panel panel = gen_case1(cfg);
    const FitResult full = fit(panel, FamilySpec::gaussian(), CorrelationStructure::ar1);

    const int reps = 500;
    const Eigen::Index r = 500;
    Eigen::MatrixXd errs(reps, panel.p);
    double mean_trace = 0.0;
    SubsampleOptions opts;
    for (int k = 0; k < reps; ++k) {
        const SubsampleFitResult sub =
            subsample_fit(panel, SamplingMethod::uniform, 200, r, FamilySpec::gaussian(),
                          CorrelationStructure::ar1, derive_seed(777, k), opts);
        errs.row(k) = (sub.result.beta - full.beta).transpose();
        mean_trace += sub.result.sandwich->trace();
    }
    mean_trace /= reps;
    const Eigen::MatrixXd centered = errs.rowwise() - errs.colwise().mean();
    const double emp_trace = (centered.transpose() * centered / double(reps - 1)).trace();
    CHECK(emp_trace > 0.5 * mean_trace);
    CHECK(emp_trace < 2.0 * mean_trace);
}
