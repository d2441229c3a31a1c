#include <cmath>
#include <random>
#include <set>

#include "coordsim/osrb.hpp"
#include "doctest.h"

using namespace coordsim;

namespace {

// X1, X2 uniform independent bits and Y = X1 AND X2.
JointPmf and_target() {
  std::vector<double> p(8, 0.0);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) p[(a * 2 + b) * 2 + (a & b)] = 0.25;
  return JointPmf({{"X1", 2}, {"X2", 2}, {"Y", 2}}, p);
}

AuxDecomposition and_dec() {
  AuxDecomposition d;
  auto id = [](const std::vector<int>& i) { return i[0]; };
  d.u1Kernel = deterministic_kernel({{"X1", 2}}, {{"U1", 2}}, id);
  d.u2Kernel = deterministic_kernel({{"X2", 2}}, {{"U2", 2}}, id);
  d.yKernel = deterministic_kernel({{"U1", 2}, {"U2", 2}}, {{"Y", 2}},
                                   [](const std::vector<int>& i) { return i[0] & i[1]; });
  return d;
}

std::vector<double> random_pmf(std::mt19937_64& rng, std::size_t k) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> p(k);
  double s = 0;
  for (auto& v : p) s += (v = g(rng));
  for (auto& v : p) v /= s;
  return p;
}

// Random target over (X1, X2, Z, Y) of binary variables and a random decomposition.
std::pair<JointPmf, AuxDecomposition> random_instance(std::uint64_t seed, int nU1 = 3, int nU2 = 2) {
  std::mt19937_64 rng(seed);
  JointPmf q({{"X1", 2}, {"X2", 2}, {"Z", 2}, {"Y", 2}}, random_pmf(rng, 16));
  AuxDecomposition d;
  auto row = [&](int k) { return [&rng, k](const std::vector<int>&) { return random_pmf(rng, k); }; };
  d.u1Kernel = kernel_from_fn({{"X1", 2}}, {{"U1", nU1}}, row(nU1));
  d.u2Kernel = kernel_from_fn({{"X2", 2}}, {{"U2", nU2}}, row(nU2));
  d.yKernel = kernel_from_fn({{"U1", nU1}, {"U2", nU2}, {"Z", 2}}, {{"Y", 2}}, row(2));
  return {q, d};
}

ProtocolRates rates(double r1, double r2, double r01 = 0, double r02 = 0, double rt1 = 0, double rt2 = 0) {
  return {r1, r2, r01, r02, rt1, rt2};
}

bool injective(const std::vector<std::uint32_t>& t) { return std::set<std::uint32_t>(t.begin(), t.end()).size() == t.size(); }

// First seed whose message maps are both injective.
std::uint64_t injective_seed(const AuxDecomposition& d, int n, const ProtocolRates& r) {
  for (std::uint64_t s = 0;; ++s) {
    auto b = build_binning(d, n, r, s);
    if (injective(b.enc[0].tables[kBinMessage]) && injective(b.enc[1].tables[kBinMessage])) return s;
  }
}

std::size_t distinct(const std::vector<std::uint32_t>& t) { return std::set<std::uint32_t>(t.begin(), t.end()).size(); }

}  // namespace

TEST_CASE("bin counts") {
  CHECK(bin_count(5, 0) == 1);
  CHECK(bin_count(3, 1) == 8);
  CHECK(bin_count(1, std::log2(3.0)) == 3);
  CHECK(bin_count(2, 1.25) == 6);  // round(2^2.5)
  CHECK(bin_count(10, 0.75) == 181);
  CHECK_THROWS_AS(bin_count(2, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(bin_count(40, 1), CapExceeded);
}

TEST_CASE("binning construction") {
  auto d = and_dec();
  SUBCASE("rate zero gives one constant bin") {
    auto b = build_binning(d, 3, rates(0, 0), 5);
    for (const auto& e : b.enc) {
      CHECK(e.sequences == 8);
      for (int role = 0; role < 3; ++role) {
        CHECK(e.bins[role] == 1);
        for (auto v : e.tables[role]) CHECK(v == 0);
      }
    }
    CHECK(b.loadDeviation == 0);
  }
  SUBCASE("n = 1 at full rate maps into |U| bins") {
    auto b = build_binning(d, 1, rates(1, 1), 11);
    CHECK(b.enc[0].bins[kBinMessage] == 2);
    for (auto v : b.enc[0].tables[kBinMessage]) CHECK(v < 2);
    CHECK(b.realized_rates()[kPR1] == doctest::Approx(1));
  }
  SUBCASE("same seed, same maps") {
    auto a = build_binning(d, 6, rates(0.7, 0.5, 0.3, 0.2, 0.1, 0.4), 42);
    auto b = build_binning(d, 6, rates(0.7, 0.5, 0.3, 0.2, 0.1, 0.4), 42);
    auto c = build_binning(d, 6, rates(0.7, 0.5, 0.3, 0.2, 0.1, 0.4), 43);
    for (int j = 0; j < 2; ++j) {
      CHECK(a.enc[j].tables == b.enc[j].tables);
      CHECK(a.enc[j].buckets == b.enc[j].buckets);
    }
    CHECK(a.enc[0].tables[kBinMessage] != c.enc[0].tables[kBinMessage]);
    // Table lookups and the hash path agree.
    for (std::uint64_t u = 0; u < a.enc[0].sequences; ++u)
      CHECK(a.enc[0].bin(kBinMessage, u) == a.enc[0].tables[kBinMessage][u]);
    CHECK(std::isfinite(a.loadDeviation));
  }
  SUBCASE("unsupported decompositions and lazy mode") {
    AuxDecomposition joint = d;
    joint.uJointKernel = ConditionalKernel({{"X1", 2}, {"X2", 2}}, {{"U1", 1}, {"U2", 1}}, {1, 1, 1, 1});
    CHECK_THROWS_AS(build_binning(joint, 2, rates(1, 1), 0), std::invalid_argument);
    CHECK_THROWS_AS(build_binning(d, 0, rates(1, 1), 0), std::invalid_argument);
    auto big = build_binning(d, 23, rates(0.5, 0.5), 1);
    CHECK_FALSE(big.enc[0].tabled());
    CHECK(std::isnan(big.loadDeviation));
    CHECK(big.enc[0].bin(kBinMessage, 12345) < big.enc[0].bins[kBinMessage]);
    CHECK_THROWS_AS(exact_induced(and_target(), big, 0, 0), CapExceeded);
  }
}

TEST_CASE("Slepian-Wolf decoder") {
  auto q = and_target();
  auto d = and_dec();
  auto b = build_binning(d, 4, rates(0.75, 0.75), 3);
  const auto& t1 = b.enc[0].tables[kBinMessage];
  const auto& t2 = b.enc[1].tables[kBinMessage];
  // Every bin-consistent pair is equally likely here, so the lexicographic
  // tie-break returns the smallest sequence of each bin.
  for (std::uint64_t m1 = 0; m1 < b.enc[0].bins[kBinMessage]; ++m1)
    for (std::uint64_t m2 = 0; m2 < b.enc[1].bins[kBinMessage]; m2 += 3) {
      auto r = sw_decode(q, b, 0, 0, m1, 0, 0, m2, {0, 0, 0, 0});
      auto first = [](const std::vector<std::uint32_t>& t, std::uint64_t m) -> std::int64_t {
        for (std::size_t u = 0; u < t.size(); ++u)
          if (t[u] == m) return static_cast<std::int64_t>(u);
        return -1;
      };
      const auto a = first(t1, m1), c = first(t2, m2);
      CHECK(r.consistent == (a >= 0 && c >= 0));
      if (r.consistent) {
        CHECK(static_cast<std::int64_t>(r.u1) == a);
        CHECK(static_cast<std::int64_t>(r.u2) == c);
      }
    }
  CHECK_THROWS_AS(sw_decode(q, b, 0, 0, b.enc[0].bins[kBinMessage], 0, 0, 0, {0, 0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(sw_decode(q, b, 1, 0, 0, 0, 0, 0, {0, 0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(sw_decode(q, b, 0, 0, 0, 0, 0, 0, {0, 0}), std::invalid_argument);

  SUBCASE("MAP picks the most likely pair") {
    auto [q2, d2] = random_instance(9);
    // Rate zero: one bin holding every pair.
    auto b0 = build_binning(d2, 2, rates(0, 0), 1);
    auto joint = compose(q2, d2);
    auto puz = marginal(joint, {"Z", "U1", "U2"});
    std::vector<int> zn = {1, 0};
    double best = -1;
    std::pair<int, int> arg;
    for (int a = 0; a < 9; ++a)
      for (int c = 0; c < 4; ++c) {
        double p = 1;
        for (int i = 0; i < 2; ++i) p *= puz.at({zn[i], i == 0 ? a / 3 : a % 3, i == 0 ? c / 2 : c % 2});
        if (p > best * (1 + 1e-12)) {
          best = p;
          arg = {a, c};
        }
      }
    auto r = sw_decode(q2, b0, 0, 0, 0, 0, 0, 0, zn);
    CHECK(r.consistent);
    CHECK(static_cast<int>(r.u1) == arg.first);
    CHECK(static_cast<int>(r.u2) == arg.second);
  }
}

TEST_CASE("full-rate injective binning reproduces the target") {
  auto q = and_target();
  auto d = and_dec();
  for (int n : {1, 2, 3}) {
    auto r = rates(1, 1);
    auto b = build_binning(d, n, r, injective_seed(d, n, r));
    auto law = exact_induced_law(q, b, 0, 0);
    CHECK(law.swError == doctest::Approx(0).epsilon(1e-12));
    CHECK(total_variation(law.pmf, iid_extend(canonical_target(q), n)) <= 1e-12);
    auto mc = mc_simulate(q, b, 500, 2);
    CHECK(mc.swErrorRate == 0);
    auto rep = exact_report(q, b, 0);
    CHECK(*rep.tvExact <= 1e-12);
  }
}

TEST_CASE("induced law is a pmf for random decompositions") {
  for (std::uint64_t s = 0; s < 6; ++s) {
    auto [q, d] = random_instance(100 + s);
    auto b = build_binning(d, 2, rates(0.6, 0.4, 0.3, 0.5, 0.5, 0.2), s);
    for (std::uint64_t f1 = 0; f1 < b.enc[0].bins[kBinExtra]; ++f1)
      for (std::uint64_t f2 = 0; f2 < b.enc[1].bins[kBinExtra]; ++f2) {
        auto law = exact_induced_law(q, b, f1, f2);
        double sum = 0;
        for (double p : law.pmf.probs()) {
          CHECK(p >= 0);
          sum += p;
        }
        CHECK(sum == doctest::Approx(1).epsilon(1e-9));
        CHECK(law.swError >= 0);
        CHECK(law.swError <= 1 + 1e-12);
      }
    CHECK_THROWS_AS(exact_induced(q, b, b.enc[0].bins[kBinExtra], 0), std::invalid_argument);
  }
}

TEST_CASE("single-letter protocol matches a direct enumeration") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto [q, d] = random_instance(200 + s, 3, 3);
    // Two bins in every role at n = 1.
    auto b = build_binning(d, 1, rates(1, 1, 1, 1, 1, 1), s);
    auto joint = compose(q, d);
    auto puz = marginal(joint, {"Z", "U1", "U2"});
    const auto& e1 = b.enc[0];
    const auto& e2 = b.enc[1];
    for (std::uint64_t f1 = 0; f1 < 2; ++f1)
      for (std::uint64_t f2 = 0; f2 < 2; ++f2) {
        std::vector<double> direct(16, 0.0);
        double swErr = 0;
        for (int x1 = 0; x1 < 2; ++x1)
          for (int x2 = 0; x2 < 2; ++x2)
            for (int z = 0; z < 2; ++z) {
              double pxz = 0;
              for (int y = 0; y < 2; ++y) pxz += q.at({x1, x2, z, y});
              for (std::uint64_t s1 = 0; s1 < 2; ++s1)
                for (std::uint64_t s2 = 0; s2 < 2; ++s2) {
                  // Encoder laws over the sequences matching (s, f).
                  auto enc = [&](const EncoderBinning& e, const ConditionalKernel& k, int x, std::uint64_t sv,
                                 std::uint64_t fv) {
                    std::vector<double> w(3, 0.0);
                    double tot = 0;
                    for (int u = 0; u < 3; ++u)
                      if (e.tables[kBinShared][u] == sv && e.tables[kBinExtra][u] == fv) tot += (w[u] = k(x, u));
                    if (tot == 0)
                      for (int u = 0; u < 3; ++u) tot += (w[u] = k(x, u));
                    for (auto& v : w) v /= tot;
                    return w;
                  };
                  auto w1 = enc(e1, *d.u1Kernel, x1, s1, f1);
                  auto w2 = enc(e2, *d.u2Kernel, x2, s2, f2);
                  for (int u1 = 0; u1 < 3; ++u1)
                    for (int u2 = 0; u2 < 3; ++u2) {
                      const double w = pxz * 0.25 * w1[u1] * w2[u2];
                      if (w == 0) continue;
                      int h1 = -1, h2 = -1;
                      double best = -1;
                      for (int a = 0; a < 3; ++a)
                        for (int c = 0; c < 3; ++c) {
                          if (e1.tables[kBinShared][a] != s1 || e1.tables[kBinExtra][a] != f1 ||
                              e1.tables[kBinMessage][a] != e1.tables[kBinMessage][u1])
                            continue;
                          if (e2.tables[kBinShared][c] != s2 || e2.tables[kBinExtra][c] != f2 ||
                              e2.tables[kBinMessage][c] != e2.tables[kBinMessage][u2])
                            continue;
                          const double p = puz.at({z, a, c});
                          if (p > best * (1 + 1e-9) && p > best) {
                            best = p;
                            h1 = a;
                            h2 = c;
                          }
                        }
                      const bool failed = h1 < 0;
                      if (failed) h1 = h2 = 0;
                      if (failed || h1 != u1 || h2 != u2) swErr += w;
                      for (int y = 0; y < 2; ++y)
                        direct[((x1 * 2 + x2) * 2 + z) * 2 + y] += w * d.yKernel(h1 * 6 + h2 * 2 + z, y);
                    }
                }
            }
        auto law = exact_induced_law(q, b, f1, f2);
        for (std::size_t i = 0; i < 16; ++i) CHECK(law.pmf[i] == doctest::Approx(direct[i]).epsilon(1e-12));
        CHECK(law.swError == doctest::Approx(swErr).epsilon(1e-12));
      }
  }
}

TEST_CASE("decoding success counts the nonempty message bins") {
  auto q = and_target();
  auto d = and_dec();
  for (std::uint64_t seed : {1, 2, 3}) {
    auto b = build_binning(d, 4, rates(0.75, 0.75), seed);
    const double succ = distinct(b.enc[0].tables[kBinMessage]) / 16.0 * distinct(b.enc[1].tables[kBinMessage]) / 16.0;
    auto law = exact_induced_law(q, b, 0, 0);
    CHECK(law.swError == doctest::Approx(1 - succ).epsilon(1e-12));
    auto mc = mc_simulate(q, b, 20000, seed);
    CHECK(std::abs(mc.swErrorRate - (1 - succ)) <= 3 * mc.swStdErr + 1e-12);
    CHECK(mc.tvEstimate.has_value());
    CHECK_FALSE(mc.tvExact.has_value());
  }
}

TEST_CASE("best extra randomness beats the average") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto [q, d] = random_instance(300 + s);
    auto b = build_binning(d, 2, rates(0.5, 0.5, 0, 0, 0.5, 0.5), s);
    auto rep = exact_report(q, b, s);
    REQUIRE(rep.tvExact);
    REQUIRE(rep.tvAverage);
    CHECK(*rep.tvExact <= *rep.tvAverage + 1e-15);
    CHECK(rep.fixedF.first < b.enc[0].bins[kBinExtra]);
    auto again = exact_induced_law(q, b, rep.fixedF.first, rep.fixedF.second);
    CHECK(total_variation(again.pmf, iid_extend(canonical_target(q), 2)) == doctest::Approx(*rep.tvExact));
  }
}

TEST_CASE("Monte-Carlo determinism") {
  auto [q, d] = random_instance(7);
  auto b = build_binning(d, 3, rates(0.6, 0.6, 0.2, 0.2, 0.3, 0.3), 7);
  auto a = mc_simulate(q, b, 1, 99);
  auto c = mc_simulate(q, b, 1, 99);
  CHECK(a.swErrorRate == c.swErrorRate);
  CHECK(*a.tvEstimate == *c.tvEstimate);
  auto t1 = mc_simulate(q, b, 3000, 5, {1, 0}, 1);
  auto t3 = mc_simulate(q, b, 3000, 5, {1, 0}, 3);
  CHECK(t1.swErrorRate == t3.swErrorRate);
  CHECK(*t1.tvEstimate == *t3.tvEstimate);
  CHECK(t1.tvStdErr == t3.tvStdErr);
  CHECK(t1.fixedF == std::pair<std::uint64_t, std::uint64_t>{1, 0});
  CHECK_THROWS_AS(mc_simulate(q, b, 0, 1), std::invalid_argument);
}

TEST_CASE("protocol curves") {
  auto q = and_target();
  auto d = and_dec();
  auto one = protocol_curve(q, d, rates(1.25, 1.25), {1}, SimMode::Exact, 4);
  REQUIRE(one.size() == 1);
  CHECK(one[0].n == 1);
  CHECK(one[0].tvExact.has_value());
  auto again = protocol_curve(q, d, rates(1.25, 1.25), {1, 3}, SimMode::Exact, 4);
  CHECK(*again[0].tvExact == *one[0].tvExact);
  auto mc = protocol_curve(q, d, rates(1.25, 1.25), {2, 4}, SimMode::MonteCarlo, 4, 500);
  CHECK(mc[1].trials == 500);
  CHECK(mc[1].tvEstimate.has_value());
  CHECK_THROWS_AS(protocol_curve(q, d, rates(1, 1), {3, 2}, SimMode::Exact, 0), std::invalid_argument);
}

TEST_CASE("soft covering") {
  SoftCoveringConfig cfg;
  cfg.basePmf = {1.0};
  cfg.channel = ConditionalKernel({{"X0", 1}}, {{"U0", 2}}, {0.5, 0.5});
  cfg.nList = {2, 4, 6, 8};
  SUBCASE("rate one: (1 - 1/M)^M with M = 2^n codewords") {
    cfg.rate = 1;
    auto pts = soft_covering_sim(cfg);
    for (const auto& p : pts) {
      const double m = std::exp2(p.n);
      CHECK(p.exact);
      CHECK(p.codewords == static_cast<std::uint64_t>(m));
      CHECK(p.tv == doctest::Approx(std::pow(1 - 1 / m, m)).epsilon(1e-9));
    }
  }
  SUBCASE("rate zero: one codeword") {
    cfg.rate = 0;
    auto pts = soft_covering_sim(cfg);
    for (const auto& p : pts) {
      CHECK(p.tv == doctest::Approx(1 - std::exp2(-p.n)).epsilon(1e-9));
      CHECK(p.tv >= single_codeword_gap(cfg, p.n) - 1e-12);
    }
    CHECK(single_codeword_gap(cfg, 3) == doctest::Approx(0.875));
  }
  SUBCASE("deterministic channel needs no randomness") {
    cfg.basePmf = {0.3, 0.7};
    cfg.channel = deterministic_kernel({{"X0", 2}}, {{"U0", 3}}, [](const std::vector<int>& i) { return 2 * i[0]; });
    cfg.rate = 0;
    for (const auto& p : soft_covering_sim(cfg)) CHECK(p.tv == doctest::Approx(0).epsilon(1e-12));
  }
  SUBCASE("sampled codebooks") {
    // One codeword per x0^n: E TV = 1 - (sum_x p(x) sum_u p(u|x)^2)^n.
    cfg.basePmf = {0.4, 0.6};
    cfg.channel = ConditionalKernel({{"X0", 2}}, {{"U0", 2}}, {0.8, 0.2, 0.5, 0.5});
    cfg.rate = 0;
    cfg.nList = {13};
    cfg.trials = 200;
    auto p = soft_covering_sim(cfg).at(0);
    CHECK_FALSE(p.exact);
    const double want = 1 - std::pow(0.4 * 0.68 + 0.6 * 0.5, 13);
    CHECK(std::abs(p.tv - want) <= 4 * p.stdErr + 1e-9);
  }
  SUBCASE("invalid configurations") {
    cfg.rate = -1;
    CHECK_THROWS_AS(soft_covering_sim(cfg), std::invalid_argument);
    cfg.rate = 1;
    cfg.basePmf = {0.5, 0.4};
    CHECK_THROWS_AS(soft_covering_sim(cfg), std::invalid_argument);
  }
}
