#include <cmath>
#include <limits>
#include <random>

#include "coordsim/linineq.hpp"
#include "doctest.h"

using namespace coordsim;

namespace {

// Exact feasibility of one eliminated variable z: each row reads a*z + b >= 0.
bool lift_one(const NumericPolytope& full, const std::vector<double>& y, std::size_t zIdx, double tol) {
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  for (const auto& h : full.rows) {
    double b = -h.rhs;
    for (std::size_t i = 0, k = 0; i < h.coeff.size(); ++i)
      if (i != zIdx) b += h.coeff[i] * y[k++];
    double a = h.coeff[zIdx];
    if (a > 0)
      lo = std::max(lo, -b / a);
    else if (a < 0)
      hi = std::min(hi, -b / a);
    else if (b < -tol)
      return false;
  }
  return lo <= hi + tol;
}

// Grid search over two eliminated variables stored in the last two slots.
double best_lift_slack(const NumericPolytope& full, const std::vector<double>& y, double r, int steps) {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> p(y);
  p.resize(y.size() + 2);
  for (int i = 0; i <= steps; ++i)
    for (int j = 0; j <= steps; ++j) {
      p[y.size()] = -r + 2 * r * i / steps;
      p[y.size() + 1] = -r + 2 * r * j / steps;
      best = std::max(best, poly_slack(full, p));
    }
  return best;
}

IneqSystem random_system(std::mt19937_64& rng, const std::vector<std::string>& vars, int rows) {
  std::uniform_int_distribution<int> coef(-3, 3), cst(-4, 4);
  IneqSystem s;
  s.rateVars = vars;
  s.atoms = {{"h", "atom"}};
  for (int r = 0; r < rows; ++r) {
    LinExpr e;
    for (const auto& v : vars) e.add_rate(v, coef(rng));
    e.add_atom("h", coef(rng));
    e.constant = cst(rng);
    s.rows.push_back({e});
  }
  return s;
}

}  // namespace

TEST_CASE("trivial projection of a triangle") {
  // R1 + R2 <= a, R1, R2 >= 0; dropping R2 leaves 0 <= R1 <= a.
  IneqSystem s;
  s.rateVars = {"R1", "R2"};
  s.atoms = {{"a", "budget"}};
  s.rows.push_back(Inequality::le(rate_sum({"R1", "R2"}), atom_term("a")));
  auto out = fme_eliminate(s, {"R2"});
  REQUIRE(out.rateVars == std::vector<std::string>{"R1"});
  auto poly = instantiate(out, {{"a", 2.0}});
  CHECK(poly_contains(poly, {0.0}, 1e-12));
  CHECK(poly_contains(poly, {2.0}, 1e-12));
  CHECK_FALSE(poly_contains(poly, {2.1}, 1e-12));
  CHECK_FALSE(poly_contains(poly, {-0.1}, 1e-12));
}

TEST_CASE("split rate substitution") {
  // R0 = R01 + R02 with R1 + R01 >= a, R2 + R02 >= b gives R1 + R2 + R0 >= a + b.
  IneqSystem s;
  s.rateVars = {"R0", "R01", "R02", "R1", "R2"};
  s.atoms = {{"a", ""}, {"b", ""}};
  s.rows.push_back(Inequality::ge(rate_sum({"R1", "R01"}), atom_term("a")));
  s.rows.push_back(Inequality::ge(rate_sum({"R2", "R02"}), atom_term("b")));
  s.equalities.push_back(rate_sum({"R0"}) - rate_sum({"R01", "R02"}));
  auto out = fme_eliminate(s, {"R01", "R02"});
  auto poly = instantiate(out, {{"a", 1.0}, {"b", 1.0}});
  REQUIRE(poly.rateVars == std::vector<std::string>{"R0", "R1", "R2"});
  CHECK(poly_contains(poly, {0.0, 1.0, 1.0}, 1e-12));
  CHECK(poly_contains(poly, {2.0, 0.0, 0.0}, 1e-12));
  CHECK(poly_contains(poly, {1.0, 0.0, 1.0}, 1e-12));
  CHECK_FALSE(poly_contains(poly, {1.0, 0.5, 0.0}, 1e-12));
  CHECK_FALSE(poly_contains(poly, {0.5, 0.0, 1.0}, 1e-12));
  // Nonnegativity of the split parts forces R1 + R0 >= a as well.
  CHECK_FALSE(poly_contains(poly, {0.5, 0.4, 5.0}, 1e-12));
}

TEST_CASE("equality equals two opposite inequalities") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    auto base = random_system(rng, {"A", "B", "C"}, 5);
    LinExpr eq = rate_sum({"A"}) - rate_sum({"B"}) * Rational(2) + atom_term("h");
    IneqSystem withEq = base, withPair = base;
    withEq.equalities.push_back(eq);
    withPair.rows.push_back({eq});
    withPair.rows.push_back({eq * Rational(-1)});
    auto a = instantiate(fme_eliminate(withEq, {"B"}), {{"h", 0.7}});
    auto b = instantiate(fme_eliminate(withPair, {"B"}), {{"h", 0.7}});
    auto v = poly_equiv_sampled(a, b, 10.0, 4000, 100 + trial);
    CHECK(v.agree);
  }
}

TEST_CASE("elimination order does not change the projection") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = random_system(rng, {"A", "B", "C", "D"}, 7);
    auto both = instantiate(fme_eliminate(s, {"C", "D"}), {{"h", 1.3}});
    auto first = fme_eliminate(s, {"C"});
    auto seq = instantiate(fme_eliminate(first, {"D"}, {false, 100000}), {{"h", 1.3}});
    auto v = poly_equiv_sampled(both, seq, 8.0, 4000, trial);
    CHECK(v.agree);
  }
}

TEST_CASE("one eliminated variable matches the exact interval oracle") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pt(-5, 5);
  for (int trial = 0; trial < 60; ++trial) {
    auto s = random_system(rng, {"A", "B", "Z"}, 6);
    auto proj = instantiate(fme_eliminate(s, {"Z"}, {false, 100000}), {{"h", 0.5}});
    auto full = instantiate(s, {{"h", 0.5}});
    for (int k = 0; k < 300; ++k) {
      std::vector<double> y = {pt(rng), pt(rng)};
      double slack = poly_slack(proj, y);
      if (std::abs(slack) < 1e-6) continue;
      CHECK(lift_one(full, y, 2, 1e-9) == (slack > 0));
    }
  }
}

TEST_CASE("two eliminated variables match a grid lift") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pt(-2, 2);
  const double r = 6.0;
  for (int trial = 0; trial < 12; ++trial) {
    auto s = random_system(rng, {"A", "B", "Z1", "Z2"}, 6);
    // Box the eliminated variables so the grid covers every lift.
    for (const char* z : {"Z1", "Z2"}) {
      LinExpr up = rate_sum({z}) * Rational(-1);
      up.constant = static_cast<int>(r);
      LinExpr lo = rate_sum({z});
      lo.constant = static_cast<int>(r);
      s.rows.push_back({up});
      s.rows.push_back({lo});
    }
    auto proj = instantiate(fme_eliminate(s, {"Z1", "Z2"}, {false, 100000}), {{"h", 0.25}});
    auto full = instantiate(s, {{"h", 0.25}});
    for (int k = 0; k < 40; ++k) {
      std::vector<double> y = {pt(rng), pt(rng)};
      double slack = poly_slack(proj, y);
      double lift = best_lift_slack(full, y, r, 200);
      // Only points with a robust margin are decisive at this grid step.
      if (slack > 0.2) CHECK(lift > 0);
      if (slack < -1e-6) CHECK(lift < 0);
    }
  }
}

TEST_CASE("infinite coordinates") {
  NumericPolytope p;
  p.rateVars = {"R1", "R2"};
  p.rows.push_back({{1.0, 1.0}, 3.0});
  p.rows.push_back({{-1.0, 0.0}, -2.0});
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(poly_contains(p, {0.0, inf}, 0.0));
  CHECK_FALSE(poly_contains(p, {inf, 0.0}, 0.0));
}

TEST_CASE("row cap and validation") {
  IneqSystem s;
  s.rateVars = {"A", "B"};
  for (int i = 0; i < 40; ++i) {
    LinExpr up = rate_sum({"A"}) * Rational(-1) + rate_sum({"B"}) * Rational(i + 1);
    LinExpr lo = rate_sum({"A"}) + rate_sum({"B"}) * Rational(i + 2);
    s.rows.push_back({up});
    s.rows.push_back({lo});
  }
  CHECK_THROWS_AS(fme_eliminate(s, {"A"}, {false, 100}), FmeBlowup);
  CHECK_NOTHROW(fme_eliminate(s, {"A"}, {false, 10000}));

  IneqSystem bad;
  bad.rateVars = {"A"};
  bad.rows.push_back({rate_sum({"Q"})});
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(fme_eliminate(s, {"Q"}));
}

TEST_CASE("json round trip and formatting") {
  IneqSystem s;
  s.rateVars = {"R1", "R2"};
  s.atoms = {{"I1", "I(X1;U1)"}};
  s.rows.push_back(Inequality::ge(rate_sum({"R1"}) * Rational(3, 2), atom_term("I1", Rational(-1, 3))));
  s.equalities.push_back(rate_sum({"R1", "R2"}));
  auto back = system_from_json(system_to_json(s));
  REQUIRE(back.rows.size() == 1);
  CHECK(back.rows[0].expr == s.rows[0].expr);
  CHECK(back.equalities[0] == s.equalities[0]);
  CHECK(back.atoms[0].description == "I(X1;U1)");
  CHECK(format_row(s.rows[0]) == "3/2*R1 + 1/3*I1 >= 0");
  auto j = system_to_json(s);
  j["rows"][0]["rate"]["R1"] = "abc";
  CHECK_THROWS_WITH(system_from_json(j), doctest::Contains("rows[0].rate.R1"));
}
