#include <cmath>
#include <random>

#include "coordsim/examples.hpp"
#include "coordsim/info_expr.hpp"
#include "coordsim/region.hpp"
#include "doctest.h"

using namespace coordsim;

namespace {

void require_pass(const ExampleReport& r) {
  for (const auto& e : r.entries) CHECK_MESSAGE(e.pass, r.name << ": " << e.name << " = " << e.computed);
  CHECK(r.pass());
}

// Output kernel that ignores the auxiliaries; correctness is not checked by
// claim_violation, so any row will do.
ConditionalKernel flat_output(int n1, int n2) {
  return kernel_from_fn({{"U1", n1}, {"U2", n2}}, {{"Y", 4}},
                        [](const std::vector<int>&) { return std::vector<double>(4, 0.25); });
}

}  // namespace

TEST_CASE("example distribution") {
  const JointPmf q = example1_distribution();
  CHECK(entropy(q, {"X1"}) == doctest::Approx(2).epsilon(1e-12));
  CHECK(entropy(q, {"X2"}) == doctest::Approx(2).epsilon(1e-12));
  CHECK(std::abs(mutual_info(q, {"X1"}, {"X2"})) <= 1e-12);
  // Y = (X1J, X2J) with J a fair bit: two fresh bits of output given nothing.
  CHECK(entropy(q, {"Y"}) == doctest::Approx(2).epsilon(1e-12));
}

TEST_CASE("worked-example reports") {
  require_pass(verify_prop1_corners());
  require_pass(remark3_eval());
  require_pass(enc_sr_point());
  auto r = verify_prop1_corners(8, 3);
  require_pass(r);
  CHECK(r.entries.back().name == "search certifies (1,1)");
  for (const auto& e : remark3_eval().entries) CHECK(!e.source.empty());
  const auto j = remark3_eval().to_json();
  CHECK(j["pass"] == true);
  CHECK(j["entries"].size() == remark3_eval().entries.size());
}

TEST_CASE("report bookkeeping") {
  ExampleReport r{"t", {}};
  r.check("near", 1 + 5e-10, 1, "computed");
  r.check("far", 1 + 5e-9, 1, "computed");
  r.check("loose", 1.05, 1, "computed", 0.1);
  r.check_flag("flag", true, true, "computed");
  REQUIRE(r.entries.size() == 4);
  CHECK(r.entries[0].pass);
  CHECK_FALSE(r.entries[1].pass);
  CHECK(r.entries[2].pass);
  CHECK(r.entries[3].pass);
  CHECK_FALSE(r.pass());
}

TEST_CASE("claim names") {
  CHECK(parse_claim("claim1") == Claim::Claim1);
  CHECK(parse_claim(claim_name(Claim::Claim2)) == Claim::Claim2);
  CHECK_THROWS_AS(parse_claim("claim3"), std::invalid_argument);
}

TEST_CASE("claim detectors flag hand-built violations") {
  SUBCASE("claim 2: parity of the two components") {
    AuxDecomposition d;
    d.u1Kernel = deterministic_kernel({{"X1", 4}}, {{"U1", 2}},
                                      [](const std::vector<int>& i) { return bit_of(i[0], 0) ^ bit_of(i[0], 1); });
    d.u2Kernel = deterministic_kernel({{"X2", 4}}, {{"U2", 4}}, [](const std::vector<int>& i) { return i[0]; });
    d.yKernel = flat_output(2, 4);
    const auto w = claim_violation(Claim::Claim2, d);
    REQUIRE(w);
    CHECK(w->find("H(X11|U=u)=1") != std::string::npos);
  }
  SUBCASE("claim 1: the encoders reveal different components") {
    AuxDecomposition d;
    d.u1Kernel = deterministic_kernel({{"X1", 4}}, {{"U1", 2}}, [](const std::vector<int>& i) { return bit_of(i[0], 0); });
    d.u2Kernel = deterministic_kernel({{"X2", 4}}, {{"U2", 2}}, [](const std::vector<int>& i) { return bit_of(i[0], 1); });
    d.yKernel = flat_output(2, 2);
    CHECK(claim_violation(Claim::Claim1, d));
  }
  SUBCASE("claim 1: hypotheses fail when U1 = X1") {
    AuxDecomposition d;
    d.u1Kernel = deterministic_kernel({{"X1", 4}}, {{"U1", 4}}, [](const std::vector<int>& i) { return i[0]; });
    d.u2Kernel = deterministic_kernel({{"X2", 4}}, {{"U2", 2}}, [](const std::vector<int>& i) { return bit_of(i[0], 1); });
    d.yKernel = flat_output(4, 2);
    CHECK_FALSE(claim_violation(Claim::Claim1, d));
  }
  SUBCASE("the valid decompositions of the example satisfy both claims") {
    CHECK_FALSE(claim_violation(Claim::Claim1, example1_corner_dec(false)));
    AuxDecomposition d = example1_corner_dec(false);
    CHECK_FALSE(claim_violation(Claim::Claim2, d));
  }
}

TEST_CASE("claim searches") {
  for (Claim c : {Claim::Claim1, Claim::Claim2}) {
    auto none = claim_search(c, 0, 1);
    CHECK(none.drawn == 0);
    CHECK_FALSE(none.counterexample);

    auto r = claim_search(c, 600, 11);
    CHECK(r.feasible == 600);
    CHECK(r.hypothesisMet > 300);
    CHECK_MESSAGE(!r.counterexample, r.witness);

    // Relaxed correctness admits decompositions that are not valid codes for
    // the target, and the detector must catch them.
    auto relaxed = claim_search(c, 600, 11, 0.3);
    REQUIRE(relaxed.counterexample);
    CHECK(claim_violation(c, *relaxed.counterexample));
    CHECK(!relaxed.witness.empty());

    auto again = claim_search(c, 600, 11, 0.3);
    CHECK(again.drawn == relaxed.drawn);
    CHECK(again.witness == relaxed.witness);
  }
}

TEST_CASE("split-rate elimination reproduces the six-row region") {
  require_pass(appendixA_region(6, 3000, 5));

  // Projection soundness: every point of the inner-bound polytope maps into
  // the derived region with R0 = R01 + R02.
  const IneqSystem sys = split_rate_system();
  const IneqSystem derived = fme_eliminate(sys, {"R01", "R02"});
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> box(0.0, 4.0);
  const auto& bounds = theorem_bounds(Theorem::Thm1);
  std::size_t inside = 0;
  for (int v = 0; v < 5; ++v) {
    const JointPmf p = random_valuation_joint(rng);
    const auto vals = atom_values(sys, p);
    const NumericPolytope poly = reorder(instantiate(derived, vals), {"R0", "R1", "R2"});
    for (int s = 0; s < 2000; ++s) {
      std::array<double, kNumRates> r{box(rng), box(rng), 0, box(rng), box(rng)};
      bool ok = true;
      for (std::size_t i = 0; i < bounds.size() && ok; ++i) {
        double lhs = 0;
        for (int k = 0; k < kNumRates; ++k) lhs += bounds[i].coeff[k] * r[k];
        ok = lhs >= vals.at("b" + std::to_string(i + 1));
      }
      if (!ok) continue;
      ++inside;
      CHECK(poly_contains(poly, {r[kR01] + r[kR02], r[kR1], r[kR2]}, 1e-9));
    }
  }
  CHECK(inside > 100);
}

TEST_CASE("binning elimination matches the reduced constraints") {
  require_pass(binning_fme_check(6, 3000, 9));
  // Keeping Rt >= 0 leaves an upper bound on R01 alone.
  const IneqSystem kept = binning_elimination(true);
  bool upperOnR01 = false;
  for (const auto& row : kept.rows) {
    bool onlyR01 = row.expr.rate_coeff("R01") < 0;
    for (const char* v : {"R1", "R2", "R02"}) onlyR01 = onlyR01 && row.expr.rate_coeff(v) == 0;
    upperOnR01 = upperOnR01 || onlyR01;
  }
  CHECK(upperOnR01);
}

TEST_CASE("redundancy identities for deterministic outputs") {
  SUBCASE("XOR target with U = X") {
    std::vector<double> p(8, 0.0);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) p[(a * 2 + b) * 2 + (a ^ b)] = 0.25;
    JointPmf q({{"X1", 2}, {"X2", 2}, {"Y", 2}}, p);
    AuxDecomposition d;
    d.u1Kernel = deterministic_kernel({{"X1", 2}}, {{"U1", 2}}, [](const std::vector<int>& i) { return i[0]; });
    d.u2Kernel = deterministic_kernel({{"X2", 2}}, {{"U2", 2}}, [](const std::vector<int>& i) { return i[0]; });
    d.yKernel = deterministic_kernel({{"U1", 2}, {"U2", 2}}, {{"Y", 2}},
                                     [](const std::vector<int>& i) { return i[0] ^ i[1]; });
    const auto r = det_fn_redundancy_check(q, d);
    require_pass(r);
    // The independent sources bring in the three extra identities.
    CHECK(r.entries.size() == 8);
  }
  SUBCASE("random instances") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 40; ++i) {
      auto [q, d] = random_deterministic_instance(rng, i % 2 == 0);
      const auto r = det_fn_redundancy_check(q, d);
      CHECK(r.pass());
      if (i % 2 == 0) CHECK(r.entries.size() == 8);
    }
  }
  SUBCASE("randomized output is rejected, and fails when forced") {
    std::mt19937_64 rng(29);
    auto [q, d] = random_deterministic_instance(rng, true, true);
    CHECK_THROWS_AS(det_fn_redundancy_check(q, d), std::invalid_argument);
    CHECK_FALSE(det_fn_redundancy_check(q, d, false).pass());
  }
}
