#include <catch2/catch_amalgamated.hpp>

#include "geesub/family.hpp"

using namespace geesub;

TEST_CASE("mean evaluates the three inverse links", "[family]") {
    CHECK(mean(FamilySpec::gaussian(), 2.5) == 2.5);
    CHECK(mean(FamilySpec::binomial(), 0.0) == Catch::Approx(0.5));
    CHECK(mean(FamilySpec::poisson(), 0.0) == Catch::Approx(1.0));
}

TEST_CASE("mean_deriv matches the analytic derivatives", "[family]") {
    CHECK(mean_deriv(FamilySpec::gaussian(), -3.0) == 1.0);
    CHECK(mean_deriv(FamilySpec::binomial(), 0.0) == Catch::Approx(0.25));
    CHECK(mean_deriv(FamilySpec::poisson(), 1.0) == Catch::Approx(std::exp(1.0)));
}

TEST_CASE("variance functions", "[family]") {
    CHECK(variance(FamilySpec::gaussian(), 42.0) == 1.0);
    CHECK(variance(FamilySpec::binomial(), 0.5) == Catch::Approx(0.25));
    CHECK(variance(FamilySpec::poisson(), 3.0) == Catch::Approx(3.0));
}

TEST_CASE("variance domain errors", "[family]") {
    CHECK_THROWS_AS(variance(FamilySpec::binomial(), 1.5), DomainError);
    CHECK_THROWS_AS(variance(FamilySpec::binomial(), 0.0), DomainError);
    CHECK_THROWS_AS(variance(FamilySpec::poisson(), -1.0), DomainError);
    CHECK_THROWS_AS(variance(FamilySpec::poisson(), 0.0), DomainError);
}

TEST_CASE("logistic overflow saturates, poisson overflow errors", "[family]") {
    CHECK(mean(FamilySpec::binomial(), 800.0) == 1.0 - kLogitClamp);
    CHECK(mean(FamilySpec::binomial(), -800.0) == kLogitClamp);
    CHECK_THROWS_AS(mean(FamilySpec::poisson(), 800.0), NumericRangeError);
    CHECK_THROWS_AS(mean_deriv(FamilySpec::poisson(), 800.0), NumericRangeError);
}

TEST_CASE("mean_deriv agrees with central finite differences", "[family]") {
    const double grid[] = {-4.0, -2.0, 0.0, 2.0, 4.0};
    const FamilySpec families[] = {FamilySpec::gaussian(), FamilySpec::poisson(),
                                   FamilySpec::binomial()};
    const double h = 1e-6;
    for (const auto& fam : families) {
        for (double eta : grid) {
            const double fd = (mean(fam, eta + h) - mean(fam, eta - h)) / (2.0 * h);
            const double an = mean_deriv(fam, eta);
            CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(an)));
        }
    }
}

TEST_CASE("binomial mean strictly increasing and bounded, poisson positive", "[family]") {
    double prev = 0.0;
    for (double eta = -40.0; eta <= 40.0; eta += 0.5) {
        const double mu = mean(FamilySpec::binomial(), eta);
        CHECK(mu > 0.0);
        CHECK(mu < 1.0);
        if (eta > -40.0) CHECK(mu > prev);
        prev = mu;
        CHECK(mean(FamilySpec::poisson(), eta / 10.0) > 0.0);
    }
}

TEST_CASE("variance bounded below on compact mean ranges", "[family]") {
    for (double mu = 0.05; mu <= 0.95; mu += 0.05) {
        CHECK(variance(FamilySpec::binomial(), mu) >= 0.0475 * 0.999);
    }
    for (double mu = 0.1; mu <= 100.0; mu *= 2.0) {
        CHECK(variance(FamilySpec::poisson(), mu) >= 0.1 * 0.999);
    }
}
