#include <cmath>
#include <random>

#include "coordsim/compose.hpp"
#include "coordsim/json_io.hpp"
#include "coordsim/prob.hpp"
#include "doctest.h"

using namespace coordsim;

namespace {

// Example-1 target built from scratch: X1=(a1,a2), X2=(b1,b2) uniform bits,
// J uniform, Y=(a_J, b_J) encoded as 2*a_J + b_J.
JointPmf example1_oracle() {
  std::vector<double> p(4 * 4 * 4, 0.0);
  for (int x1 = 0; x1 < 4; ++x1)
    for (int x2 = 0; x2 < 4; ++x2)
      for (int j = 0; j < 2; ++j) {
        int a = j == 0 ? (x1 >> 1) : (x1 & 1);
        int b = j == 0 ? (x2 >> 1) : (x2 & 1);
        p[(x1 * 4 + x2) * 4 + 2 * a + b] += 1.0 / 32;
      }
  return JointPmf({{"X1", 4}, {"X2", 4}, {"Y", 4}}, p);
}

JointPmf random_pmf(std::mt19937_64& rng, std::vector<VarDecl> vars, double sparsity = 0.0) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> p(alphabet_product(vars));
  double s = 0;
  for (auto& x : p) {
    x = u(rng) < sparsity ? 0.0 : -std::log(u(rng) + 1e-300);
    s += x;
  }
  if (s == 0) {
    p[0] = 1;
    s = 1;
  }
  for (auto& x : p) x /= s;
  return JointPmf(std::move(vars), std::move(p));
}

std::vector<VarDecl> random_vars(std::mt19937_64& rng, int count, int maxSize) {
  std::vector<VarDecl> v;
  for (int i = 0; i < count; ++i)
    v.push_back({"V" + std::to_string(i), 1 + static_cast<int>(rng() % maxSize)});
  return v;
}

}  // namespace

TEST_CASE("construction rejects bad input") {
  CHECK_THROWS(JointPmf({{"A", 2}}, {0.5, 0.4}));
  CHECK_THROWS(JointPmf({{"A", 2}}, {1.5, -0.5}));
  CHECK_THROWS(JointPmf({{"A", 2}, {"A", 2}}, {0.25, 0.25, 0.25, 0.25}));
  CHECK_THROWS(JointPmf({{"A", 2}}, {1.0}));
  CHECK_NOTHROW(JointPmf({{"A", 2}}, {0.5, 0.5 + 5e-10}));
}

TEST_CASE("marginal") {
  auto u = JointPmf::uniform({{"A", 2}, {"B", 2}});
  CHECK(marginal(u, {"A", "B"}).probs() == u.probs());
  auto a = marginal(u, {"A"});
  CHECK(a.probs()[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(marginal(u, {"C"}), std::invalid_argument);
  auto y = marginal(example1_oracle(), {"Y"});
  for (double x : y.probs()) CHECK(x == doctest::Approx(0.25).epsilon(1e-12));
  auto swapped = marginal(u, {"B", "A"});
  CHECK(swapped.vars()[0].name == "B");
}

TEST_CASE("conditional") {
  std::mt19937_64 rng(7);
  auto a = random_pmf(rng, {{"A", 3}});
  auto b = random_pmf(rng, {{"B", 2}});
  std::vector<double> prod;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) prod.push_back(a[i] * b[j]);
  JointPmf ind({{"A", 3}, {"B", 2}}, prod);
  auto k = conditional(ind, {"A"}, {"B"});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(k(r, c) == doctest::Approx(a[c]));

  JointPmf eq({{"A", 2}, {"B", 2}}, {0.5, 0, 0, 0.5});
  auto id = conditional(eq, {"A"}, {"B"});
  CHECK(id(0, 0) == 1.0);
  CHECK(id(1, 1) == 1.0);

  JointPmf partial({{"A", 2}, {"B", 3}}, {0.5, 0, 0, 0.5, 0, 0});
  auto pk = conditional(partial, {"A"}, {"B"});
  CHECK(pk.row_defined(0));
  CHECK_FALSE(pk.row_defined(1));
  CHECK_FALSE(pk.row_defined(2));
  CHECK_THROWS(conditional(partial, {"A"}, {"A"}));

  auto q = example1_oracle();
  auto ky = conditional(q, {"Y"}, {"X1", "X2"});
  for (int x1 = 0; x1 < 4; ++x1)
    for (int x2 = 0; x2 < 4; ++x2) {
      int y0 = 2 * (x1 >> 1) + (x2 >> 1), y1 = 2 * (x1 & 1) + (x2 & 1);
      std::vector<double> expect(4, 0.0);
      expect[y0] += 0.5;
      expect[y1] += 0.5;
      for (int y = 0; y < 4; ++y) CHECK(ky(x1 * 4 + x2, y) == doctest::Approx(expect[y]));
    }
}

TEST_CASE("entropy and mutual information values") {
  CHECK(entropy(JointPmf::uniform({{"A", 4}}), {"A"}) == doctest::Approx(2.0));
  JointPmf eq({{"A", 2}, {"B", 2}}, {0.5, 0, 0, 0.5});
  CHECK(entropy(eq, {"A"}, {"B"}) == doctest::Approx(0.0));
  CHECK_THROWS(entropy(eq, {}, {"B"}));
  CHECK_THROWS(mutual_info(eq, {"A"}, {"A"}));
  auto q = example1_oracle();
  CHECK(entropy(q, {"X1"}) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(mutual_info(q, {"X1"}, {"X2"}) == doctest::Approx(0.0));
  CHECK(mutual_info(JointPmf::uniform({{"A", 3}, {"B", 5}}), {"A"}, {"B"}) <= 1e-12);
}

TEST_CASE("total variation") {
  auto u = JointPmf::uniform({{"A", 2}});
  auto pm = JointPmf::point_mass({{"A", 2}}, {0});
  CHECK(total_variation(u, u) == 0.0);
  CHECK(total_variation(pm, u) == doctest::Approx(0.5));
  CHECK_THROWS(total_variation(u, JointPmf::uniform({{"A", 3}})));
  auto q = example1_oracle();
  auto m1 = marginal(q, {"X1"}), m2 = marginal(q, {"X2"}), my = marginal(q, {"Y"});
  std::vector<double> prod;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int y = 0; y < 4; ++y) prod.push_back(m1[a] * m2[b] * my[y]);
  // 1/4 of (x1,x2) pairs give a deterministic Y, the rest split evenly.
  CHECK(total_variation(q, JointPmf(q.vars(), prod)) == doctest::Approx(0.5625).epsilon(1e-12));
}

TEST_CASE("iid extension") {
  std::mt19937_64 rng(11);
  auto p = random_pmf(rng, {{"A", 2}, {"B", 3}});
  CHECK(iid_extend(p, 1).probs() == p.probs());
  CHECK(entropy_of(iid_extend(JointPmf::uniform({{"A", 2}}), 5).probs()) == doctest::Approx(5.0));
  auto e2 = iid_extend(p, 2);
  CHECK(e2.vars()[2].name == copy_name("A", 2));
  CHECK(e2.at({1, 2, 0, 1}) == doctest::Approx(p.at({1, 2}) * p.at({0, 1})));
  CHECK_THROWS_AS(iid_extend(p, 20, 1 << 20), CapExceeded);
  for (int i = 0; i < 100; ++i) {
    auto a = random_pmf(rng, {{"A", 3}});
    auto b = random_pmf(rng, {{"A", 3}});
    CHECK(total_variation(iid_extend(a, 2), iid_extend(b, 2)) >= total_variation(a, b) - 1e-15);
  }
}

TEST_CASE("markov checks") {
  auto a = JointPmf::uniform({{"A", 2}});
  auto ab = extend(a, ConditionalKernel({{"A", 2}}, {{"B", 2}}, {0.9, 0.1, 0.2, 0.8}));
  auto abc = extend(ab, ConditionalKernel({{"B", 2}}, {{"C", 3}}, {0.5, 0.3, 0.2, 0.1, 0.1, 0.8}));
  CHECK(is_markov(abc, {"A"}, {"B"}, {"C"}, 1e-9));
  JointPmf fixed({{"A", 2}, {"C", 2}, {"B", 2}}, {0.25, 0.25, 0, 0, 0, 0, 0.25, 0.25});
  CHECK_FALSE(is_markov(fixed, {"A"}, {"B"}, {"C"}, 1e-9));
}

TEST_CASE("common part") {
  JointPmf eq({{"X1", 2}, {"X2", 2}}, {0.5, 0, 0, 0.5});
  auto l = common_part(eq);
  CHECK(l.count == 2);
  CHECK(l.labels1 == std::vector<int>{0, 1});
  CHECK(l.labels2 == std::vector<int>{0, 1});
  CHECK(common_part(JointPmf::uniform({{"X1", 3}, {"X2", 2}})).count == 1);
  std::vector<double> blk(16, 0.0);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      if (a / 2 == b / 2) blk[a * 4 + b] = 1.0 / 8;
  auto lb = common_part(JointPmf({{"X1", 4}, {"X2", 4}}, blk));
  CHECK(lb.count == 2);
  for (int a = 0; a < 4; ++a) CHECK(lb.labels1[a] == a / 2);
  CHECK_THROWS(common_part(JointPmf::uniform({{"X1", 2}})));

  // Idempotence: the joint of the labels has the identity labeling.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_pmf(rng, {{"X1", 5}, {"X2", 4}}, 0.7);
    auto cp = common_part(p);
    std::vector<double> lab(cp.count * cp.count, 0.0);
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 4; ++b) lab[cp.labels1[a] * cp.count + cp.labels2[b]] += p.at({a, b});
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 4; ++b)
        if (p.at({a, b}) > kSupportEps) CHECK(cp.labels1[a] == cp.labels2[b]);
    auto again = common_part(JointPmf({{"X1", cp.count}, {"X2", cp.count}}, lab));
    for (int i = 0; i < cp.count; ++i) {
      // labels with zero mass stay isolated, every used label maps to itself
      CHECK(again.labels1[i] == again.labels2[i]);
    }
    CHECK(again.count == cp.count);
  }
}

TEST_CASE("property suite on random instances") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    auto vars = random_vars(rng, 3, 4);
    auto p = random_pmf(rng, vars, trial % 3 == 0 ? 0.4 : 0.0);
    double hab = entropy(p, {"V0", "V1"});
    CHECK(std::abs(hab - entropy(p, {"V0"}) - entropy(p, {"V1"}, {"V0"})) <= 1e-9);
    double i1 = mutual_info(p, {"V0"}, {"V1"}, {"V2"});
    double i2 = mutual_info(p, {"V1"}, {"V0"}, {"V2"});
    CHECK(i1 >= -1e-9);
    CHECK(std::abs(i1 - i2) <= 1e-9);
    auto q = random_pmf(rng, vars);
    auto r = random_pmf(rng, vars);
    double pq = total_variation(p, q), qp = total_variation(q, p);
    CHECK(pq >= 0);
    CHECK(pq == qp);
    CHECK(pq <= total_variation(p, r) + total_variation(r, q) + 1e-12);
    int n = 1 + trial % 3;
    auto small = random_pmf(rng, random_vars(rng, 2, 3));
    CHECK(std::abs(entropy_of(iid_extend(small, n).probs()) - n * entropy_of(small.probs())) <= 1e-9 * n);
  }
}

TEST_CASE("compose") {
  auto q = example1_oracle();
  // Example-1 decomposition: U1 = X1, U2 = (J, X2_J), Y = (X1_J, X2_J).
  AuxDecomposition d;
  d.u1Kernel = deterministic_kernel({{"X1", 4}, {"T", 1}}, {{"U1", 4}}, [](auto& i) { return i[0]; });
  d.u2Kernel = kernel_from_fn({{"X2", 4}, {"T", 1}}, {{"U2", 4}}, [](auto& i) {
    std::vector<double> r(4, 0.0);
    r[0 * 2 + (i[0] >> 1)] += 0.5;
    r[1 * 2 + (i[0] & 1)] += 0.5;
    return r;
  });
  d.yKernel = deterministic_kernel({{"U1", 4}, {"U2", 4}, {"Z", 1}, {"T", 1}}, {{"Y", 4}}, [](auto& i) {
    int j = i[1] >> 1, b = i[1] & 1;
    int a = j == 0 ? (i[0] >> 1) : (i[0] & 1);
    return 2 * a + b;
  });
  auto joint = compose(q, d);
  CHECK(joint.names() == kCanonicalVars);
  auto back = marginal(joint, {"X1", "X2", "Y"});
  CHECK(total_variation(back, q) <= 1e-12);
  CHECK(is_markov(joint, {"U1"}, {"X1"}, {"X2", "U2"}, 1e-9));
  CHECK(total_variation(marginal(joint, {"X1", "X2", "Z"}), marginal(canonical_target(q), {"X1", "X2", "Z"})) <= 1e-15);

  // A uniform output kernel does not reproduce the target.
  AuxDecomposition bad = d;
  bad.yKernel = kernel_from_fn({{"U1", 4}, {"U2", 4}, {"Z", 1}, {"T", 1}}, {{"Y", 4}},
                               [](auto&) { return std::vector<double>(4, 0.25); });
  CHECK(total_variation(marginal(compose(q, bad), {"X1", "X2", "Y"}), q) > 0.1);

  // Y = Z with constant auxiliaries.
  JointPmf yz({{"X1", 2}, {"X2", 2}, {"Z", 2}, {"Y", 2}},
              {0.1, 0, 0, 0.2, 0.05, 0, 0, 0.15, 0.1, 0, 0, 0.1, 0.2, 0, 0, 0.1});
  AuxDecomposition c;
  c.yKernel = deterministic_kernel({{"U1", 1}, {"U2", 1}, {"Z", 2}, {"T", 1}}, {{"Y", 2}}, [](auto& i) { return i[2]; });
  CHECK(total_variation(marginal(compose(yz, c), {"X1", "X2", "Z", "Y"}), yz) <= 1e-15);

  AuxDecomposition wrong = d;
  wrong.u1Kernel = deterministic_kernel({{"X1", 3}, {"T", 1}}, {{"U1", 4}}, [](auto& i) { return i[0]; });
  CHECK_THROWS(compose(q, wrong));
}

TEST_CASE("json round trip and validation") {
  auto q = example1_oracle();
  auto j = pmf_to_json(q);
  CHECK(pmf_from_json(j).probs() == q.probs());
  j["probs"][0] = 0.5;
  CHECK_THROWS_AS(pmf_from_json(j), FormatError);
  CHECK_THROWS_AS(pmf_from_json(Json::parse(R"({"vars":[{"name":"A"}],"probs":[1]})")), FormatError);
  ConditionalKernel k({{"A", 2}}, {{"B", 2}}, {0.3, 0.7, 1, 0});
  auto k2 = kernel_from_json(kernel_to_json(k));
  CHECK(k2.table == k.table);
  auto bad = kernel_to_json(k);
  bad["probs"][0] = 0.9;
  CHECK_THROWS_AS(kernel_from_json(bad), FormatError);
}
