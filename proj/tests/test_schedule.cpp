#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "tse/error.hpp"
#include "tse/schedule.hpp"

using tse::NoiseSchedule;

namespace {
// Brute-force oracle: alpha_bar as an explicit running product.
std::vector<double> alpha_bar_oracle(const std::vector<double>& betas) {
    std::vector<double> ab(betas.size());
    double prod = 1.0;
    for (size_t i = 0; i < betas.size(); ++i) {
        prod *= 1.0 - betas[i];
        ab[i] = prod;
    }
    return ab;
}
}  // namespace

TEST_CASE("build_schedule endpoints and derived arrays") {
    const auto s = NoiseSchedule::build(1000, 0.00085, 0.012);
    CHECK(s.T() == 1000);
    CHECK(s.beta(1) == 0.00085);
    CHECK(s.beta(1000) == 0.012);
    CHECK_FALSE(s.rescaled());

    // alpha_bar matches the brute-force product within 1e-12 relative.
    const auto oracle = alpha_bar_oracle(s.betas());
    for (int t = 1; t <= s.T(); ++t) {
        CHECK(s.alpha_bar(t) ==
              doctest::Approx(oracle[static_cast<size_t>(t) - 1]).epsilon(1e-12));
        CHECK(s.sqrt_alpha_bar(t) * s.sqrt_alpha_bar(t) +
                  s.sqrt_one_minus_alpha_bar(t) * s.sqrt_one_minus_alpha_bar(t) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
    // Strictly decreasing ladder.
    for (int t = 2; t <= s.T(); ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
}

TEST_CASE("constant-beta schedule product") {
    const double b = 0.25;
    const auto s = NoiseSchedule::build(2, b, b);
    CHECK(s.alpha_bar(1) == doctest::Approx(1.0 - b).epsilon(1e-15));
    CHECK(s.alpha_bar(2) == doctest::Approx((1.0 - b) * (1.0 - b)).epsilon(1e-15));
}

TEST_CASE("injected beta array") {
    const auto s = NoiseSchedule::from_betas({0.1, 0.2, 0.3, 0.4});
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-12));
    CHECK(s.alpha_bar(3) == doctest::Approx(0.504).epsilon(1e-12));
    CHECK(s.alpha_bar(4) == doctest::Approx(0.3024).epsilon(1e-12));
}

TEST_CASE("build_schedule parameter validation") {
    CHECK_THROWS_AS(NoiseSchedule::build(1, 0.1, 0.2), tse::ParameterError);
    CHECK_THROWS_AS(NoiseSchedule::build(10, 0.0, 0.2), tse::ParameterError);
    CHECK_THROWS_AS(NoiseSchedule::build(10, 0.3, 0.2), tse::ParameterError);
    CHECK_THROWS_AS(NoiseSchedule::build(10, 0.1, 1.0), tse::ParameterError);
}

TEST_CASE("terminal rescale endpoints and worked example") {
    const auto s = NoiseSchedule::from_betas({0.1, 0.2, 0.3, 0.4});
    const auto r = s.rescaled_terminal();
    CHECK(r.rescaled());

    // Endpoints are exact, not approximate.
    CHECK(r.sqrt_alpha_bar(1) == s.sqrt_alpha_bar(1));
    CHECK(r.sqrt_alpha_bar(4) == 0.0);

    // Shift-and-scale oracle applied by hand.
    CHECK(r.sqrt_alpha_bar(1) == doctest::Approx(0.948683).epsilon(1e-5));
    CHECK(r.sqrt_alpha_bar(2) == doctest::Approx(0.710424).epsilon(1e-5));
    CHECK(r.sqrt_alpha_bar(3) == doctest::Approx(0.380691).epsilon(1e-5));

    // Interior strictly decreasing; terminal beta is exactly 1.
    for (int t = 2; t <= 4; ++t) CHECK(r.sqrt_alpha_bar(t) < r.sqrt_alpha_bar(t - 1));
    CHECK(r.beta(4) == 1.0);
    CHECK(r.sqrt_one_minus_alpha_bar(4) == 1.0);

    CHECK_THROWS_AS(r.rescaled_terminal(), tse::ParameterError);
}

TEST_CASE("rescale of the paper schedule") {
    const auto s = NoiseSchedule::build(1000, 0.00085, 0.012).rescaled_terminal();
    CHECK(s.sqrt_alpha_bar(1) == std::sqrt(1.0 - 0.00085));
    CHECK(s.sqrt_alpha_bar(1000) == 0.0);
    CHECK(s.alpha_bar(1000) == 0.0);
    for (int t = 2; t <= 1000; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
}

TEST_CASE("schedule serialization round trip") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "tse_sched_test";
    fs::create_directories(dir);

    for (bool rescale : {false, true}) {
        auto s = NoiseSchedule::build(50, 0.001, 0.02);
        if (rescale) s = s.rescaled_terminal();
        const std::string path = (dir / (rescale ? "r.json" : "p.json")).string();
        s.save(path);
        const auto loaded = NoiseSchedule::load(path);
        CHECK(loaded.T() == s.T());
        CHECK(loaded.rescaled() == s.rescaled());
        for (int t = 1; t <= s.T(); ++t) {
            CHECK(loaded.beta(t) == s.beta(t));
            CHECK(loaded.sqrt_alpha_bar(t) ==
                  doctest::Approx(s.sqrt_alpha_bar(t)).epsilon(1e-14));
        }
        if (rescale) {
            CHECK(loaded.sqrt_alpha_bar(s.T()) == 0.0);
            CHECK(loaded.sqrt_alpha_bar(1) == s.sqrt_alpha_bar(1));
        }
    }
    fs::remove_all(dir);
}
