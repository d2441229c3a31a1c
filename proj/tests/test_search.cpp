#include <atomic>
#include <cmath>
#include <set>

#include "coordsim/examples.hpp"
#include "coordsim/search.hpp"
#include "doctest.h"

using namespace coordsim;

namespace {

JointPmf y_equals_z_target() {
  std::vector<double> p(16, 0.0);
  const double pxz[2][2][2] = {{{0.2, 0.05}, {0.1, 0.15}}, {{0.05, 0.15}, {0.1, 0.2}}};
  for (int x1 = 0; x1 < 2; ++x1)
    for (int x2 = 0; x2 < 2; ++x2)
      for (int z = 0; z < 2; ++z) p[((x1 * 2 + x2) * 2 + z) * 2 + z] = pxz[x1][x2][z];
  return JointPmf({{"X1", 2}, {"X2", 2}, {"Z", 2}, {"Y", 2}}, p);
}

SearchBudget small_budget(std::size_t restarts = 8) {
  SearchBudget b;
  b.sizes = {3, 3, 2, 1};
  b.restarts = restarts;
  b.iterations = 150;
  return b;
}

}  // namespace

TEST_CASE("zero rates suffice when the output is the side information") {
  auto q = y_equals_z_target();
  for (Theorem t : {Theorem::Thm1, Theorem::Thm2, Theorem::Thm4, Theorem::Thm5}) {
    RatePoint zero;
    auto r = region_membership(q, zero, t, small_budget());
    CHECK_MESSAGE(r.found, theorem_name(t));
    if (r.found) {
      CHECK(r.certificate->eval.certifies(zero, 1e-6));
      CHECK(r.certificate->eval.correctnessError <= 1e-6);
    }
  }
}

TEST_CASE("example corners are certified under the exact region") {
  auto q = example1_distribution();
  SearchBudget b;
  b.restarts = 64;
  for (const char* text : {"2,1,inf,inf", "1,2,inf,inf"}) {
    auto p = RatePoint::parse(text, Theorem::Thm3);
    auto r = region_membership(q, p, Theorem::Thm3, b);
    REQUIRE_MESSAGE(r.found, text);
    // The certificate stands on its own under an independent evaluation.
    auto again = evaluate(Theorem::Thm3, q, r.certificate->dec);
    CHECK(again.certifies(p, 1e-6));
    CHECK(r.bestMargin <= 1e-6);
    // Any larger point is certified by the same decomposition.
    auto bigger = p;
    bigger[kR1] += 0.5;
    bigger[kR2] += 0.25;
    CHECK(again.certifies(bigger, 1e-6));
  }
}

TEST_CASE("a point below the sum-rate corner is not certified") {
  auto q = example1_distribution();
  SearchBudget b;
  b.restarts = 16;
  auto r = region_membership(q, RatePoint::parse("1.2,1.2,inf,inf", Theorem::Thm3), Theorem::Thm3, b);
  CHECK_FALSE(r.found);
  CHECK(r.bestMargin > 1e-6);
  CHECK(r.restartsRun == 16);
}

TEST_CASE("up-closedness of certified membership") {
  auto q = y_equals_z_target();
  RatePoint p;
  p[kR1] = 0.3;
  p[kR2] = 0.7;
  p[kR01] = 0.1;
  auto r = region_membership(q, p, Theorem::Thm1, small_budget());
  REQUIRE(r.found);
  for (double d : {0.0, 0.5, 2.0}) {
    RatePoint bigger = p;
    for (int i : {kR1, kR2, kR01, kR02}) bigger[i] += d;
    CHECK(r.certificate->eval.certifies(bigger, 1e-6));
  }
}

TEST_CASE("boundary tracing") {
  SUBCASE("zero rates on the side-information target") {
    auto res = trace_boundary(y_equals_z_target(), Theorem::Thm1, {{1, 0, 0, 0, 0}, {1, 1, 0, 1, 1}}, small_budget());
    REQUIRE(res.size() == 2);
    for (const auto& tr : res) {
      REQUIRE(tr.certificate);
      CHECK(std::abs(tr.value) <= 1e-6);
    }
    CHECK(std::isinf(res[0].point[kR2]));
    CHECK(res[1].point[kR1] == doctest::Approx(0).epsilon(1e-9));
  }
  SUBCASE("the example's sum rate under the exact region is three") {
    SearchBudget b;
    b.restarts = 32;
    auto res = trace_boundary(example1_distribution(), Theorem::Thm3, {{1, 1, 0, 0, 0}, {1, 0, 0, 0, 0}}, b);
    REQUIRE(res[0].certificate);
    CHECK(res[0].value == doctest::Approx(3).epsilon(1e-6));
    REQUIRE(res[1].certificate);
    CHECK(res[1].value == doctest::Approx(1).epsilon(1e-6));
  }
  SUBCASE("encoder shared randomness brings the example's sum rate towards two") {
    SearchBudget b;
    b.restarts = 64;
    auto res = trace_boundary(example1_distribution(), Theorem::Thm4, {{1, 1, 0, 0, 0}}, b);
    REQUIRE(res[0].certificate);
    CHECK(res[0].value >= 2 - 1e-6);
    CHECK(res[0].value <= 2.05);
  }
}

TEST_CASE("results do not depend on the thread count") {
  auto q = example1_distribution();
  SearchBudget b;
  b.restarts = 40;
  b.seed = 7;
  auto p = RatePoint::parse("2,1,inf,inf", Theorem::Thm3);
  b.threads = 1;
  auto r1 = region_membership(q, p, Theorem::Thm3, b);
  b.threads = 3;
  auto r3 = region_membership(q, p, Theorem::Thm3, b);
  REQUIRE(r1.found == r3.found);
  CHECK(r1.restartsRun == r3.restartsRun);
  CHECK(r1.bestMargin == r3.bestMargin);
  if (r1.found) {
    CHECK(r1.certificate->restart == r3.certificate->restart);
    CHECK(r1.certificate->dec.u2Kernel->table == r3.certificate->dec.u2Kernel->table);
    CHECK(r1.certificate->dec.yKernel.table == r3.certificate->dec.yKernel.table);
  }
  b.restarts = 8;
  b.threads = 1;
  auto t1 = trace_boundary(q, Theorem::Thm3, {{1, 1, 0, 0, 0}}, b);
  b.threads = 2;
  auto t2 = trace_boundary(q, Theorem::Thm3, {{1, 1, 0, 0, 0}}, b);
  CHECK(t1[0].value == t2[0].value);
}

TEST_CASE("weighted minimum over a bound list") {
  auto bv = [](const char* n, RateCoeffs c, double rhs) { return BoundValue{n, c, rhs}; };
  std::vector<BoundValue> bounds = {bv("R1", {1, 0, 0, 0, 0}, 1), bv("R2", {0, 1, 0, 0, 0}, 1),
                                    bv("R1+R2", {1, 1, 0, 0, 0}, 3), bv("R1+R01", {1, 0, 0, 1, 0}, 2.5)};
  // The shared-randomness row is dropped when R01 carries no weight.
  auto p = weighted_min_point(bounds, {1, 2, 0, 0, 0}, Theorem::Thm1);
  CHECK(p[kR1] == doctest::Approx(2));
  CHECK(p[kR2] == doctest::Approx(1));
  CHECK(std::isinf(p[kR01]));
  p = weighted_min_point(bounds, {2, 1, 0, 0, 0}, Theorem::Thm1);
  CHECK(p[kR1] == doctest::Approx(1));
  CHECK(p[kR2] == doctest::Approx(2));
  // With R01 weighted: the vertices (2,1,0.5), (2.5,1,0), (1.5,1.5,1) and
  // (1,2,1.5) cost 3.25, 3.5, 3.5 and 3.75.
  p = weighted_min_point(bounds, {1, 1, 0, 0.5, 0}, Theorem::Thm1);
  CHECK(p[kR1] == doctest::Approx(2));
  CHECK(p[kR2] == doctest::Approx(1));
  CHECK(p[kR01] == doctest::Approx(0.5));
  CHECK(std::isinf(p[kR02]));
  CHECK_THROWS_AS(weighted_min_point(bounds, {0, 0, 0, 0, 0}, Theorem::Thm1), std::invalid_argument);
  CHECK_THROWS_AS(weighted_min_point(bounds, {-1, 0, 0, 0, 0}, Theorem::Thm1), std::invalid_argument);
}

TEST_CASE("restart seeds and the worker pool") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 1000; ++i) seeds.insert(restart_seed(3, i));
  CHECK(seeds.size() == 1000);
  CHECK(restart_seed(3, 5) == restart_seed(3, 5));
  CHECK(restart_seed(3, 5) != restart_seed(4, 5));

  std::vector<std::atomic<int>> hits(500);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 2, [](std::size_t i) {
                    if (i == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

TEST_CASE("search argument errors") {
  auto q = example1_distribution();
  SearchBudget b = small_budget();
  b.restarts = 0;
  CHECK_THROWS_AS(region_membership(q, RatePoint{}, Theorem::Thm1, b), std::invalid_argument);
  b = small_budget();
  b.threads = 0;
  CHECK_THROWS_AS(region_membership(q, RatePoint{}, Theorem::Thm1, b), std::invalid_argument);
  b = small_budget();
  RatePoint neg;
  neg[kR1] = -1;
  CHECK_THROWS_AS(region_membership(q, neg, Theorem::Thm1, b), std::invalid_argument);
  // The exact-region bounds need X1 and X2 independent given Z.
  std::vector<double> p = {0.5, 0, 0, 0.5};
  JointPmf corr({{"X1", 2}, {"X2", 2}}, p);
  CHECK_THROWS_AS(region_membership(corr, RatePoint{}, Theorem::Thm3, b), std::invalid_argument);
  CHECK_THROWS_AS(trace_boundary(q, Theorem::Thm1, {{0, 0, 0, 0, 0}}, b), std::invalid_argument);
}
