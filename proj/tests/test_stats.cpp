#include <catch2/catch_amalgamated.hpp>

#include "riskadj/stats.hpp"

using namespace riskadj;
using Catch::Approx;

TEST_CASE("normal quantile matches reference values") {
  // reference values computed independently with scipy.stats.norm.ppf
  CHECK(norm_quantile(0.025) == Approx(-1.95996398454005).epsilon(1e-12));
  CHECK(norm_quantile(0.975) == Approx(1.95996398454005).epsilon(1e-12));
  CHECK(norm_quantile(0.1) == Approx(-1.2815515655446).epsilon(1e-12));
  CHECK(norm_quantile(0.5) == Approx(0.0).margin(1e-15));
  CHECK(norm_quantile(0.85) == Approx(1.03643338949379).epsilon(1e-12));
  CHECK(norm_quantile(0.9975) == Approx(2.80703376834381).epsilon(1e-12));
  CHECK(norm_quantile(1e-9) == Approx(-5.99780701500769).epsilon(1e-12));
  CHECK(norm_quantile(0.35) == Approx(-0.385320466407568).epsilon(1e-12));
  CHECK_THROWS_AS(norm_quantile(-0.1), ValidationError);
}

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {0.001, 0.01, 0.2, 0.5, 0.77, 0.99, 0.9999})
    CHECK(norm_cdf(norm_quantile(p)) == Approx(p).epsilon(1e-12));
  CHECK(norm_cdf(1.23) == Approx(0.890651447574308).epsilon(1e-13));
}

TEST_CASE("student t cdf matches reference values") {
  // scipy.stats.t.cdf
  CHECK(student_t_cdf(1.0, 5.0) == Approx(0.818391266175439).epsilon(1e-12));
  CHECK(student_t_cdf(2.5, 3.0) == Approx(0.956146676495967).epsilon(1e-12));
  CHECK(student_t_cdf(-1.7, 12.5) == Approx(0.056929491836894).epsilon(1e-12));
  CHECK(student_t_cdf(0.3, 1.0) == Approx(0.592773579077742).epsilon(1e-12));
  CHECK(student_t_cdf(2.0, 100.0) == Approx(0.975893910634433).epsilon(1e-12));
  // df = inf falls back to the normal
  CHECK(student_t_cdf(1.23, std::numeric_limits<double>::infinity()) ==
        Approx(norm_cdf(1.23)).epsilon(1e-14));
}

TEST_CASE("two-sided t p-values") {
  CHECK(t_p_value(2.0, 9.0) == Approx(0.0765528237707009).epsilon(1e-12));
  CHECK(t_p_value(-1.0, 4.0) == Approx(0.373900966300059).epsilon(1e-12));
  CHECK(t_p_value(0.0, 7.0) == Approx(1.0));
}

TEST_CASE("spearman with ties matches reference") {
  std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6};
  std::vector<double> y{2, 7, 1, 8, 2, 8, 1, 8};
  CHECK(spearman(x, y) == Approx(0.198853681209925).epsilon(1e-12));
  CHECK(spearman(x, x) == Approx(1.0));
}

TEST_CASE("mean and sample variance") {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  CHECK(mean(v) == Approx(2.5));
  CHECK(sample_variance(v) == Approx(5.0 / 3.0));
  CHECK_THROWS_AS(mean(std::vector<double>{}), ValidationError);
}
