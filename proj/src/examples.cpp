#include "coordsim/examples.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "coordsim/info_expr.hpp"
#include "coordsim/region.hpp"
#include "coordsim/search.hpp"

namespace coordsim {

JointPmf example1_distribution() {
  std::vector<double> p(64, 0.0);
  for (int x1 = 0; x1 < 4; ++x1)
    for (int x2 = 0; x2 < 4; ++x2)
      for (int j = 0; j < 2; ++j) p[(x1 * 4 + x2) * 4 + example1_y(x1, x2, j)] += 1.0 / 32;
  return JointPmf({{"X1", 4}, {"X2", 4}, {"Y", 4}}, std::move(p));
}

AuxDecomposition example1_corner_dec(bool mirrored) {
  AuxDecomposition d;
  auto identity = deterministic_kernel({{"X1", 4}}, {{"U1", 4}}, [](const std::vector<int>& i) { return i[0]; });
  auto split = [](const std::string& x, const std::string& u) {
    // u = 2*j + x_j with j uniform.
    return kernel_from_fn({{x, 4}}, {{u, 4}}, [](const std::vector<int>& i) {
      std::vector<double> row(4, 0.0);
      for (int j = 0; j < 2; ++j) row[2 * j + bit_of(i[0], j)] += 0.5;
      return row;
    });
  };
  if (!mirrored) {
    d.u1Kernel = identity;
    d.u2Kernel = split("X2", "U2");
    d.yKernel = deterministic_kernel({{"U1", 4}, {"U2", 4}}, {{"Y", 4}}, [](const std::vector<int>& i) {
      int j = i[1] >> 1;
      return 2 * bit_of(i[0], j) + (i[1] & 1);
    });
  } else {
    d.u1Kernel = split("X1", "U1");
    d.u2Kernel = deterministic_kernel({{"X2", 4}}, {{"U2", 4}}, [](const std::vector<int>& i) { return i[0]; });
    d.yKernel = deterministic_kernel({{"U1", 4}, {"U2", 4}}, {{"Y", 4}}, [](const std::vector<int>& i) {
      int j = i[0] >> 1;
      return 2 * (i[0] & 1) + bit_of(i[1], j);
    });
  }
  return d;
}

AuxDecomposition example1_remark3_dec() {
  // u_k = 2*j + x_kj for k = 1, 2 with a common j.
  AuxDecomposition d;
  d.uJointKernel = kernel_from_fn({{"X1", 4}, {"X2", 4}}, {{"U1", 4}, {"U2", 4}}, [](const std::vector<int>& i) {
    std::vector<double> row(16, 0.0);
    for (int j = 0; j < 2; ++j) row[(2 * j + bit_of(i[0], j)) * 4 + 2 * j + bit_of(i[1], j)] += 0.5;
    return row;
  });
  d.yKernel = kernel_from_fn({{"U1", 4}, {"U2", 4}}, {{"Y", 4}}, [](const std::vector<int>& i) {
    std::vector<double> row(4, 0.0);
    // Pairs with mismatched j have zero probability; any valid row works there.
    row[2 * (i[0] & 1) + (i[1] & 1)] = 1.0;
    return row;
  });
  return d;
}

AuxDecomposition example1_encsr_dec() {
  AuxDecomposition d;
  d.u0Kernel = ConditionalKernel({{"X0", 1}}, {{"U0", 2}}, {0.5, 0.5});
  d.u1Kernel = deterministic_kernel({{"X1", 4}, {"U0", 2}}, {{"U1", 2}},
                                    [](const std::vector<int>& i) { return bit_of(i[0], i[1]); });
  d.u2Kernel = deterministic_kernel({{"X2", 4}, {"U0", 2}}, {{"U2", 2}},
                                    [](const std::vector<int>& i) { return bit_of(i[0], i[1]); });
  d.yKernel = deterministic_kernel({{"U1", 2}, {"U2", 2}}, {{"Y", 4}},
                                   [](const std::vector<int>& i) { return 2 * i[0] + i[1]; });
  return d;
}

JointPmf example1_augmented_distribution() {
  std::vector<double> p(8 * 8 * 4, 0.0);
  for (int x1 = 0; x1 < 4; ++x1)
    for (int x2 = 0; x2 < 4; ++x2)
      for (int w = 0; w < 2; ++w) p[((2 * x1 + w) * 8 + 2 * x2 + w) * 4 + example1_y(x1, x2, w)] += 1.0 / 32;
  return JointPmf({{"X1", 8}, {"X2", 8}, {"Y", 4}}, std::move(p));
}

AuxDecomposition example1_augmented_dec() {
  AuxDecomposition d;
  auto pick = [](const std::vector<int>& i) { return bit_of(i[0] >> 1, i[0] & 1); };
  d.u1Kernel = deterministic_kernel({{"X1", 8}}, {{"U1", 2}}, pick);
  d.u2Kernel = deterministic_kernel({{"X2", 8}}, {{"U2", 2}}, pick);
  d.yKernel = deterministic_kernel({{"U1", 2}, {"U2", 2}}, {{"Y", 4}},
                                   [](const std::vector<int>& i) { return 2 * i[0] + i[1]; });
  return d;
}


void ExampleReport::check(const std::string& what, double computed, double expected, const std::string& source,
                          double tol) {
  const bool ok = std::abs(computed - expected) <= tol || (std::isinf(computed) && computed == expected);
  entries.push_back({what, computed, expected, tol, source, ok});
}

void ExampleReport::check_flag(const std::string& what, bool computed, bool expected, const std::string& source) {
  entries.push_back({what, computed ? 1.0 : 0.0, expected ? 1.0 : 0.0, 0.0, source, computed == expected});
}

bool ExampleReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const ReportEntry& e) { return e.pass; });
}

nlohmann::json ExampleReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries)
    rows.push_back({{"name", e.name},
                    {"computed", e.computed},
                    {"expected", e.expected},
                    {"tol", e.tol},
                    {"source", e.source},
                    {"pass", e.pass}});
  return {{"report", name}, {"pass", pass()}, {"entries", rows}};
}

ExampleReport verify_prop1_corners(std::size_t searchRestarts, std::uint64_t seed) {
  ExampleReport r{"corners", {}};
  const JointPmf q = example1_distribution();
  const auto e = thm3_constraints(q, example1_corner_dec(false));
  r.check("corner: R1 bound", e.rhs("R1"), 2, "stated");
  r.check("corner: R2 bound", e.rhs("R2"), 1, "stated");
  const auto m = thm3_constraints(q, example1_corner_dec(true));
  r.check("mirror: R1 bound", m.rhs("R1"), 1, "stated");
  r.check("mirror: R2 bound", m.rhs("R2"), 2, "stated");
  r.check("corner: correctness error", e.correctnessError, 0, "construction", 1e-12);
  r.check("mirror: correctness error", m.correctnessError, 0, "construction", 1e-12);
  const auto i1 = thm1_constraints(q, example1_corner_dec(false));
  r.check("corner: inner-bound sum rate", i1.rhs("R1+R2"), 3, "stated");

  NumericPolytope poly{{"R1", "R2"}, {{{1, 0}, 1}, {{0, 1}, 1}, {{1, 1}, 3}}};
  r.check_flag("(2,1) in the region", poly_contains(poly, {2, 1}, 1e-12), true, "stated");
  r.check_flag("(1,2) in the region", poly_contains(poly, {1, 2}, 1e-12), true, "stated");
  r.check_flag("(1,1) in the region", poly_contains(poly, {1, 1}, 1e-12), false, "stated");
  // The bound points of both decompositions lie in the region.
  r.check_flag("corner bounds in the region", poly_contains(poly, {e.rhs("R1"), e.rhs("R2")}, 1e-9), true,
               "computed");
  r.check_flag("mirror bounds in the region", poly_contains(poly, {m.rhs("R1"), m.rhs("R2")}, 1e-9), true,
               "computed");
  if (searchRestarts > 0) {
    SearchBudget b;
    b.restarts = searchRestarts;
    b.seed = seed;
    auto res = region_membership(q, RatePoint::parse("1,1,inf,inf", Theorem::Thm3), Theorem::Thm3, b);
    r.check_flag("search certifies (1,1)", res.found, false, "computed");
  }
  return r;
}

ExampleReport remark3_eval() {
  ExampleReport r{"remark3", {}};
  const auto e = thm2_constraints(example1_distribution(), example1_remark3_dec());
  r.check("R1 bound", e.rhs("R1"), 1, "stated");
  r.check("R2 bound", e.rhs("R2"), 1, "stated");
  r.check("R1+R2 bound", e.rhs("R1+R2"), 2, "stated");
  r.check("correctness error", e.correctnessError, 0, "construction", 1e-12);
  r.check("largest Markov error", e.max_markov_error(), 0, "construction", 1e-12);
  return r;
}

ExampleReport enc_sr_point() {
  ExampleReport r{"encsr", {}};
  const JointPmf q = example1_distribution();
  const auto e = thm4_constraints(q, example1_encsr_dec());
  r.check("R00 bound", e.rhs("R00"), 1, "construction");
  r.check("R1 bound", e.rhs("R1"), 1, "stated");
  r.check("R2 bound", e.rhs("R2"), 1, "stated");
  r.check("correctness error", e.correctnessError, 0, "construction", 1e-12);
  // The exact region draws U0 independently of the sources.
  AuxDecomposition free = example1_encsr_dec();
  free.u0Kernel = ConditionalKernel({}, {{"U0", 2}}, {0.5, 0.5});
  const auto o = thm6_constraints(q, free);
  r.check("exact region R1 bound", o.rhs("R1"), 1, "stated");
  r.check("exact region R2 bound", o.rhs("R2"), 1, "stated");
  r.check("exact region R1+R2 bound", o.rhs("R1+R2"), 2, "computed");
  const JointPmf qa = example1_augmented_distribution();
  const JointPmf pa = compose(qa, example1_augmented_dec());
  r.check("augmented: I(U1;X1|U2)", mutual_info(pa, {"U1"}, {"X1"}, {"U2"}), 1, "stated");
  r.check("augmented: I(U2;X2|U1)", mutual_info(pa, {"U2"}, {"X2"}, {"U1"}), 1, "stated");
  r.check("augmented: I(U1,U2;X1,X2)", mutual_info(pa, {"U1", "U2"}, {"X1", "X2"}), 2, "stated");
  r.check("augmented: correctness error", correctness_error(qa, pa), 0, "construction", 1e-12);
  r.check("augmented sources sum to the example", total_variation(marginal(qa, {"Y"}), marginal(q, {"Y"})), 0,
          "construction", 1e-12);
  return r;
}

std::string claim_name(Claim c) { return c == Claim::Claim1 ? "claim1" : "claim2"; }

Claim parse_claim(const std::string& s) {
  if (s == "claim1") return Claim::Claim1;
  if (s == "claim2") return Claim::Claim2;
  throw std::invalid_argument("unknown claim '" + s + "' (expected claim1 or claim2)");
}

namespace {

// p(x, u) for a 4-symbol source X and auxiliary U, indexed [u][x].
std::vector<std::array<double, 4>> source_aux_table(const JointPmf& p, const std::string& x, const std::string& u) {
  const JointPmf m = marginal(p, {u, x});
  const int nu = m.size_of(u);
  std::vector<std::array<double, 4>> t(nu);
  for (int a = 0; a < nu; ++a)
    for (int b = 0; b < 4; ++b) t[a][b] = m[a * 4 + b];
  return t;
}

struct RowEntropies {
  double mass = 0, h = 0, hBit[2] = {0, 0};
};

RowEntropies row_entropies(const std::array<double, 4>& row) {
  RowEntropies r;
  for (double v : row) r.mass += v;
  if (r.mass <= 0) return r;
  std::vector<double> p(4), b0(2, 0.0), b1(2, 0.0);
  for (int x = 0; x < 4; ++x) {
    p[x] = row[x] / r.mass;
    b0[bit_of(x, 0)] += p[x];
    b1[bit_of(x, 1)] += p[x];
  }
  r.h = entropy_of(p);
  r.hBit[0] = entropy_of(b0);
  r.hBit[1] = entropy_of(b1);
  return r;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

constexpr double kMassFloor = 1e-9;

}  // namespace

std::optional<std::string> claim_violation(Claim c, const AuxDecomposition& dec, double tol) {
  const JointPmf p = compose(example1_distribution(), dec);
  if (c == Claim::Claim2) {
    const auto t = source_aux_table(p, "X1", "U1");
    for (std::size_t u = 0; u < t.size(); ++u) {
      const auto r = row_entropies(t[u]);
      if (r.mass <= kMassFloor || r.h <= tol) continue;
      if (r.hBit[0] > tol && r.hBit[1] > tol)
        return "u=" + std::to_string(u) + ": H(X1|U=u)=" + fmt(r.h) + ", H(X11|U=u)=" + fmt(r.hBit[0]) +
               ", H(X12|U=u)=" + fmt(r.hBit[1]);
    }
    return std::nullopt;
  }
  if (entropy(p, {"X1"}, {"U1"}) <= tol || entropy(p, {"X2"}, {"U2"}) <= tol) return std::nullopt;
  const auto t1 = source_aux_table(p, "X1", "U1");
  const auto t2 = source_aux_table(p, "X2", "U2");
  std::string why;
  for (int k = 0; k < 2; ++k) {
    std::string fail;
    for (int j = 0; j < 2 && fail.empty(); ++j) {
      const auto& t = j == 0 ? t1 : t2;
      for (std::size_t u = 0; u < t.size() && fail.empty(); ++u) {
        const auto r = row_entropies(t[u]);
        if (r.mass > kMassFloor && r.hBit[k] > tol)
          fail = "H(X" + std::to_string(j + 1) + std::to_string(k + 1) + "|U" + std::to_string(j + 1) + "=" +
                 std::to_string(u) + ")=" + fmt(r.hBit[k]);
      }
    }
    if (fail.empty()) return std::nullopt;
    why += (why.empty() ? "" : "; ") + std::string("k=") + std::to_string(k + 1) + ": " + fail;
  }
  return why;
}

namespace {

using Rng = std::mt19937_64;

double unif(Rng& rng, double lo = 0, double hi = 1) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Kernel rows over labels with their base label; splitting a label moves an
// x-dependent share of its mass to a fresh label with the same base.
struct LabelKernel {
  std::vector<std::vector<double>> rows;  // [x][label]
  std::vector<int> base;

  void split(Rng& rng) {
    const std::size_t l = std::uniform_int_distribution<std::size_t>(0, base.size() - 1)(rng);
    base.push_back(base[l]);
    for (auto& r : rows) {
      const double u = unif(rng);
      const double beta = u < 0.15 ? 0.0 : (u < 0.3 ? 1.0 : unif(rng));
      r.push_back(beta * r[l]);
      r[l] -= r.back();
    }
  }
  ConditionalKernel kernel(const std::string& from, const std::string& to) const {
    std::vector<double> t;
    for (const auto& r : rows) t.insert(t.end(), r.begin(), r.end());
    return ConditionalKernel({{from, static_cast<int>(rows.size())}}, {{to, static_cast<int>(base.size())}}, t);
  }
};

void random_splits(LabelKernel& k, Rng& rng) {
  const int s = std::uniform_int_distribution<int>(0, 3)(rng);
  for (int i = 0; i < s; ++i) k.split(rng);
}

// Labels 0..3 reveal x; label 4 + b reveals only component k with value b.
// Both encoders share k, and the decoder picks J = k whenever one of them
// is partial, balancing with the full-full case so that J stays uniform.
AuxDecomposition claim1_construction(Rng& rng) {
  const int k = std::uniform_int_distribution<int>(0, 1)(rng);
  std::array<std::array<double, 4>, 2> a{};
  for (int j = 0; j < 2; ++j) {
    const bool none = unif(rng) < 0.1;
    for (int x = 0; x < 4; ++x) a[j][x] = none ? 0.0 : unif(rng, 0.0, 0.29);
  }
  std::array<LabelKernel, 2> lk;
  for (int j = 0; j < 2; ++j) {
    lk[j].base = {0, 1, 2, 3, 4, 5};
    for (int x = 0; x < 4; ++x) {
      std::vector<double> r(6, 0.0);
      r[x] = 1 - a[j][x];
      r[4 + bit_of(x, k)] += a[j][x];
      lk[j].rows.push_back(r);
    }
    random_splits(lk[j], rng);
  }
  AuxDecomposition d;
  d.u1Kernel = lk[0].kernel("X1", "U1");
  d.u2Kernel = lk[1].kernel("X2", "U2");
  const int n1 = static_cast<int>(lk[0].base.size()), n2 = static_cast<int>(lk[1].base.size());
  d.yKernel = kernel_from_fn({{"U1", n1}, {"U2", n2}}, {{"Y", 4}}, [&](const std::vector<int>& i) {
    const int b1 = lk[0].base[i[0]], b2 = lk[1].base[i[1]];
    std::vector<double> row(4, 0.0);
    if (b1 < 4 && b2 < 4) {
      const double part = 1 - (1 - a[0][b1]) * (1 - a[1][b2]);
      const double c = (0.5 - part) / (1 - part);
      row[example1_y(b1, b2, k)] += c;
      row[example1_y(b1, b2, 1 - k)] += 1 - c;
    } else {
      const int v1 = b1 < 4 ? bit_of(b1, k) : b1 - 4, v2 = b2 < 4 ? bit_of(b2, k) : b2 - 4;
      row[2 * v1 + v2] = 1;
    }
    return row;
  });
  return d;
}

// Labels 0..3 reveal x1; label 4 + 2j + b reveals (j, x1j = b). The decoder
// sees x2 and picks J = j for partial labels, balancing on full labels.
AuxDecomposition claim2_construction(Rng& rng) {
  std::array<double, 4> a{}, r0{};
  for (int x = 0; x < 4; ++x) {
    const double u = unif(rng);
    a[x] = u < 0.2 ? 1.0 : (u < 0.3 ? 0.0 : unif(rng));
    const double lo = a[x] > 0.5 ? 1 - 0.5 / a[x] : 0.0, hi = a[x] > 0.5 ? 0.5 / a[x] : 1.0;
    r0[x] = unif(rng, lo, hi);
  }
  LabelKernel lk;
  lk.base = {0, 1, 2, 3, 4, 5, 6, 7};
  for (int x = 0; x < 4; ++x) {
    std::vector<double> r(8, 0.0);
    r[x] = 1 - a[x];
    r[4 + bit_of(x, 0)] += a[x] * r0[x];
    r[6 + bit_of(x, 1)] += a[x] * (1 - r0[x]);
    lk.rows.push_back(r);
  }
  random_splits(lk, rng);
  AuxDecomposition d;
  d.u1Kernel = lk.kernel("X1", "U1");
  d.u2Kernel = deterministic_kernel({{"X2", 4}}, {{"U2", 4}}, [](const std::vector<int>& i) { return i[0]; });
  const int n = static_cast<int>(lk.base.size());
  d.yKernel = kernel_from_fn({{"U1", n}, {"U2", 4}}, {{"Y", 4}}, [&](const std::vector<int>& i) {
    const int b = lk.base[i[0]], x2 = i[1];
    std::vector<double> row(4, 0.0);
    if (b < 4) {
      const double c = a[b] >= 1 ? 0.5 : (0.5 - a[b] * r0[b]) / (1 - a[b]);
      row[example1_y(b, x2, 0)] += c;
      row[example1_y(b, x2, 1)] += 1 - c;
    } else {
      const int j = (b - 4) / 2, v = (b - 4) % 2;
      row[2 * v + bit_of(x2, j)] = 1;
    }
    return row;
  });
  return d;
}

ConditionalKernel sparse_kernel(const std::string& from, int nFrom, const std::string& to, int nTo, Rng& rng) {
  return kernel_from_fn({{from, nFrom}}, {{to, nTo}}, [&](const std::vector<int>&) {
    std::vector<double> row(nTo, 0.0);
    double s = 0;
    for (auto& v : row) {
      v = unif(rng) < 0.5 ? 0.0 : -std::log(1 - unif(rng));
      s += v;
    }
    if (s == 0) {
      row[std::uniform_int_distribution<int>(0, nTo - 1)(rng)] = 1;
      s = 1;
    }
    for (auto& v : row) v /= s;
    return row;
  });
}

// Output kernel p(y|u1,u2) induced by the auxiliary kernels and the target;
// rows of unreachable pairs are uniform.
ConditionalKernel posterior_output(const JointPmf& q, const AuxDecomposition& d) {
  JointPmf p = extend(extend(q, *d.u1Kernel), *d.u2Kernel);
  ConditionalKernel k = conditional(p, {"Y"}, {"U1", "U2"});
  const std::size_t C = k.cols();
  for (std::size_t r = 0; r < k.rows(); ++r)
    if (!k.row_defined(r)) {
      std::fill(k.table.begin() + r * C, k.table.begin() + (r + 1) * C, 1.0 / C);
      k.defined[r] = 1;
    }
  return k;
}

AuxDecomposition random_claim_candidate(Claim c, const JointPmf& q, Rng& rng) {
  AuxDecomposition d;
  if (c == Claim::Claim1) {
    d.u1Kernel = sparse_kernel("X1", 4, "U1", std::uniform_int_distribution<int>(2, 5)(rng), rng);
    d.u2Kernel = sparse_kernel("X2", 4, "U2", std::uniform_int_distribution<int>(2, 5)(rng), rng);
  } else {
    d.u1Kernel = sparse_kernel("X1", 4, "U1", std::uniform_int_distribution<int>(2, 6)(rng), rng);
    d.u2Kernel = deterministic_kernel({{"X2", 4}}, {{"U2", 4}}, [](const std::vector<int>& i) { return i[0]; });
  }
  d.yKernel = posterior_output(q, d);
  return d;
}

}  // namespace

ClaimSearchResult claim_search(Claim c, std::size_t budget, std::uint64_t seed, double correctnessTol) {
  ClaimSearchResult res;
  if (budget == 0) return res;
  const JointPmf q = example1_distribution();
  const std::size_t maxDraws = 4 * budget + 100;
  while (res.feasible < budget && res.drawn < maxDraws) {
    Rng rng(restart_seed(seed ^ (c == Claim::Claim1 ? 0x1111 : 0x2222), res.drawn));
    AuxDecomposition d;
    if (res.drawn % 2 == 0)
      d = c == Claim::Claim1 ? claim1_construction(rng) : claim2_construction(rng);
    else
      d = random_claim_candidate(c, q, rng);
    ++res.drawn;
    const JointPmf p = compose(q, d);
    if (correctness_error(q, p) > correctnessTol) continue;
    ++res.feasible;
    const bool hyp = c == Claim::Claim1 ? entropy(p, {"X1"}, {"U1"}) > 1e-6 && entropy(p, {"X2"}, {"U2"}) > 1e-6
                                        : entropy(p, {"X1"}, {"U1"}) > 1e-6;
    if (hyp) ++res.hypothesisMet;
    if (auto w = claim_violation(c, d)) {
      res.counterexample = d;
      res.witness = *w;
      break;
    }
  }
  return res;
}

namespace {

LinExpr rates_of(const RateCoeffs& c) {
  LinExpr e;
  const char* names[kNumRates] = {"R1", "R2", "R00", "R01", "R02"};
  for (int i = 0; i < kNumRates; ++i)
    if (c[i] != 0) e.add_rate(names[i], c[i]);
  return e;
}

std::string bound_atom(std::size_t i) { return "b" + std::to_string(i + 1); }

}  // namespace

IneqSystem split_rate_system() {
  IneqSystem s;
  s.rateVars = {"R0", "R1", "R2", "R01", "R02"};
  const auto& bounds = theorem_bounds(Theorem::Thm1);
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    s.atoms.push_back({bound_atom(i), bounds[i].alternatives[0]});
    s.rows.push_back(Inequality::ge(rates_of(bounds[i].coeff), atom_term(bound_atom(i))));
  }
  s.equalities.push_back(rate_sum({"R0"}) - rate_sum({"R01", "R02"}));
  return s;
}

IneqSystem split_rate_region() {
  IneqSystem s;
  s.rateVars = {"R0", "R1", "R2"};
  const auto& bounds = theorem_bounds(Theorem::Thm1);
  // Bound indices: R1, R2, R1+R2, R1+R01, R2+R02, ..., R1+R2+R01+R02.
  const std::vector<std::pair<std::size_t, LinExpr>> rows = {
      {0, rate_sum({"R1"})},       {1, rate_sum({"R2"})},       {2, rate_sum({"R1", "R2"})},
      {3, rate_sum({"R1", "R0"})}, {4, rate_sum({"R2", "R0"})}, {7, rate_sum({"R1", "R2", "R0"})}};
  for (const auto& [i, lhs] : rows) {
    s.atoms.push_back({bound_atom(i), bounds[i].alternatives[0]});
    s.rows.push_back(Inequality::ge(lhs, atom_term(bound_atom(i))));
  }
  for (const char* v : {"R0", "R1", "R2"}) s.rows.push_back(Inequality::ge(rate_sum({v}), LinExpr{}));
  return s;
}

IneqSystem binning_rate_system() {
  IneqSystem s;
  s.rateVars = {"R1", "R2", "R01", "R02", "Rt1", "Rt2"};
  s.atoms = {{"h1", "H(U1|X1,X2,Z)"},     {"h2", "H(U2|X1,X2,Z)"},     {"h12", "H(U1,U2|X1,X2,Z)"},
             {"s1", "H(U1|U2,Z)"},        {"s2", "H(U2|U1,Z)"},        {"s12", "H(U1,U2|Z)"},
             {"e1", "H(U1|X1,X2,Y,Z)"},   {"e2", "H(U2|X1,X2,Y,Z)"},   {"e12", "H(U1,U2|X1,X2,Y,Z)"}};
  auto le = [&](std::initializer_list<std::string> v, const char* a) {
    s.rows.push_back(Inequality::le(rate_sum(v), atom_term(a)));
  };
  auto ge = [&](std::initializer_list<std::string> v, const char* a) {
    s.rows.push_back(Inequality::ge(rate_sum(v), atom_term(a)));
  };
  le({"R01", "Rt1"}, "h1");
  le({"R02", "Rt2"}, "h2");
  le({"R01", "Rt1", "R02", "Rt2"}, "h12");
  ge({"R01", "Rt1", "R1"}, "s1");
  ge({"R02", "Rt2", "R2"}, "s2");
  ge({"R01", "Rt1", "R1", "R02", "Rt2", "R2"}, "s12");
  le({"Rt1"}, "e1");
  le({"Rt2"}, "e2");
  le({"Rt1", "Rt2"}, "e12");
  return s;
}

IneqSystem binning_reduced_system() {
  IneqSystem s;
  s.rateVars = {"R1", "R2", "R01", "R02"};
  s.atoms = {{"s1", "H(U1|U2,Z)"},      {"c1", "H(U1|X1,U2,Z)"},   {"s2", "H(U2|U1,Z)"},
             {"c2", "H(U2|X2,U1,Z)"},   {"s12", "H(U1,U2|Z)"},     {"h12", "H(U1,U2|X1,X2,Z)"},
             {"e1", "H(U1|X1,X2,Y,Z)"}, {"e2", "H(U2|X1,X2,Y,Z)"}, {"g1", "H(U1|X1,Z)"},
             {"g2", "H(U2|X2,Z)"},      {"e12", "H(U1,U2|X1,X2,Y,Z)"}};
  auto ge = [&](std::initializer_list<std::string> v, LinExpr rhs) {
    s.rows.push_back(Inequality::ge(rate_sum(v), rhs));
  };
  auto A = [](const char* a, int c = 1) { return atom_term(a, c); };
  ge({"R1"}, A("s1") - A("c1"));
  ge({"R2"}, A("s2") - A("c2"));
  ge({"R1", "R2"}, A("s12") - A("h12"));
  ge({"R1", "R01"}, A("s1") - A("e1"));
  ge({"R2", "R02"}, A("s2") - A("e2"));
  ge({"R1", "R2", "R01"}, A("s12") - A("g2") - A("e1"));
  ge({"R1", "R2", "R02"}, A("s12") - A("g1") - A("e2"));
  ge({"R1", "R2", "R01", "R02"}, A("s12") - A("e12"));
  for (const char* v : {"R1", "R2", "R01", "R02"}) s.rows.push_back(Inequality::ge(rate_sum({v}), LinExpr{}));
  return s;
}

IneqSystem binning_elimination(bool extraNonnegativity) {
  IneqSystem s = binning_rate_system();
  for (const char* v : {"R1", "R2", "R01", "R02"}) s.rows.push_back(Inequality::ge(rate_sum({v}), LinExpr{}));
  if (extraNonnegativity)
    for (const char* v : {"Rt1", "Rt2"}) s.rows.push_back(Inequality::ge(rate_sum({v}), LinExpr{}));
  FmeOptions o;
  o.addNonnegativity = false;
  return fme_eliminate(s, {"Rt1", "Rt2"}, o);
}

std::map<std::string, double> atom_values(const IneqSystem& sys, const JointPmf& composed) {
  std::map<std::string, double> v;
  for (const auto& a : sys.atoms) v[a.id] = eval_info_expr(composed, a.description);
  return v;
}

JointPmf random_valuation_joint(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(3 * 2 * 2 * 2);
  double s = 0;
  for (auto& v : p) s += (v = u(rng) < 0.2 ? 0.0 : -std::log(1 - u(rng)));
  if (s == 0) p[0] = s = 1;
  for (auto& v : p) v /= s;
  JointPmf q({{"X1", 3}, {"X2", 2}, {"Z", 2}, {"Y", 2}}, p);
  return compose(q, random_decomposition(Theorem::Thm1, q, {3, 3, 1, 1}, rng));
}

namespace {

// Whether `poly` has a row proportional to sum_i coeff[i] R_i >= rhs.
bool has_row(const NumericPolytope& poly, const std::vector<double>& coeff, double rhs, double tol) {
  for (const auto& h : poly.rows) {
    double scale = 0;
    for (std::size_t i = 0; i < coeff.size(); ++i)
      if (coeff[i] != 0) {
        scale = h.coeff[i] / coeff[i];
        break;
      }
    if (!(scale > 0)) continue;
    bool same = true;
    for (std::size_t i = 0; i < coeff.size() && same; ++i) same = std::abs(h.coeff[i] - scale * coeff[i]) <= 1e-12;
    if (same && std::abs(h.rhs / scale - rhs) <= tol) return true;
  }
  return false;
}

bool has_rate_pattern(const IneqSystem& sys, const std::map<std::string, int>& pattern) {
  for (const auto& row : sys.rows) {
    Rational scale = 0;
    bool ok = true;
    for (const auto& v : sys.rateVars) {
      const Rational c = row.expr.rate_coeff(v);
      auto it = pattern.find(v);
      const int want = it == pattern.end() ? 0 : it->second;
      if (want == 0) {
        ok = ok && c == 0;
      } else if (scale == 0) {
        scale = c / want;
        ok = ok && scale > 0;
      } else {
        ok = ok && c == scale * want;
      }
    }
    if (ok && scale > 0) return true;
  }
  return false;
}

}  // namespace

ExampleReport appendixA_region(std::size_t valuations, std::size_t samples, std::uint64_t seed) {
  ExampleReport r{"appendixA", {}};
  const IneqSystem sys = split_rate_system();
  const IneqSystem region = split_rate_region();
  const IneqSystem withNonneg = fme_eliminate(sys, {"R01", "R02"});
  FmeOptions plain;
  plain.addNonnegativity = false;
  const IneqSystem without = fme_eliminate(sys, {"R01", "R02"}, plain);
  std::size_t agree = 0, rowsFound = 0, weaker = 0;
  Rng rng(seed);
  for (std::size_t i = 0; i < valuations; ++i) {
    const JointPmf p = random_valuation_joint(rng);
    const auto vals = atom_values(sys, p);
    const NumericPolytope a = instantiate(withNonneg, vals);
    const NumericPolytope b = instantiate(region, atom_values(region, p));
    const NumericPolytope c = instantiate(without, vals);
    if (poly_equiv_sampled(a, b, 6.0, samples, restart_seed(seed, i)).agree) ++agree;
    const auto pos = [&](const NumericPolytope& poly, const std::vector<double>& want) {
      // Coefficients over the polytope's own variable order.
      std::vector<double> coeff(poly.rateVars.size(), 0.0);
      const char* names[3] = {"R0", "R1", "R2"};
      for (std::size_t k = 0; k < poly.rateVars.size(); ++k)
        for (int j = 0; j < 3; ++j)
          if (poly.rateVars[k] == names[j]) coeff[k] = want[j];
      return coeff;
    };
    if (has_row(a, pos(a, {1, 1, 0}), vals.at("b4"), 1e-9) && has_row(a, pos(a, {1, 0, 1}), vals.at("b5"), 1e-9))
      ++rowsFound;
    // Without nonnegativity the derived region is weaker: it contains the
    // six-row region but not the other way round.
    NumericPolytope cNonneg = c;
    for (std::size_t k = 0; k < c.rateVars.size(); ++k) {
      HalfSpace h{std::vector<double>(c.rateVars.size(), 0.0), 0.0};
      h.coeff[k] = 1;
      cNonneg.rows.push_back(h);
    }
    if (!poly_equiv_sampled(cNonneg, b, 6.0, samples, restart_seed(seed, 1000 + i)).agree) ++weaker;
  }
  r.check("valuations where the derived region matches the six-row region", static_cast<double>(agree),
          static_cast<double>(valuations), "stated", 0);
  r.check("valuations with rows R1+R0 and R2+R0 at their bound values", static_cast<double>(rowsFound),
          static_cast<double>(valuations), "stated", 0);
  r.check_flag("derived system has an R1+R0 row", has_rate_pattern(withNonneg, {{"R1", 1}, {"R0", 1}}), true,
               "stated");
  r.check_flag("derived system has an R2+R0 row", has_rate_pattern(withNonneg, {{"R2", 1}, {"R0", 1}}), true,
               "stated");
  r.check_flag("no-nonnegativity variant has an R1+R0 row", has_rate_pattern(without, {{"R1", 1}, {"R0", 1}}),
               false, "stated");
  r.check_flag("no-nonnegativity variant has an R2+R0 row", has_rate_pattern(without, {{"R2", 1}, {"R0", 1}}),
               false, "stated");
  r.check_flag("no-nonnegativity variant differs on some valuation", weaker > 0, true, "stated");
  return r;
}

ExampleReport binning_fme_check(std::size_t valuations, std::size_t samples, std::uint64_t seed) {
  ExampleReport r{"binningFme", {}};
  const IneqSystem reduced = binning_reduced_system();
  const IneqSystem free = binning_elimination(false);
  const IneqSystem bounded = binning_elimination(true);
  std::size_t agree = 0, agreeBounded = 0;
  Rng rng(seed);
  for (std::size_t i = 0; i < valuations; ++i) {
    const JointPmf p = random_valuation_joint(rng);
    const auto vals = atom_values(binning_rate_system(), p);
    const NumericPolytope target = instantiate(reduced, atom_values(reduced, p));
    if (poly_equiv_sampled(instantiate(free, vals), target, 4.0, samples, restart_seed(seed, i)).agree) ++agree;
    if (poly_equiv_sampled(instantiate(bounded, vals), target, 4.0, samples, restart_seed(seed, 5000 + i)).agree)
      ++agreeBounded;
  }
  r.check("valuations where the eliminated system matches the eight constraints", static_cast<double>(agree),
          static_cast<double>(valuations), "stated", 0);
  // Keeping Rt >= 0 leaves upper bounds such as R01 <= H(U1|X1,X2,Z).
  r.check_flag("with Rt1, Rt2 >= 0 kept, every valuation matches", agreeBounded == valuations, false, "computed");
  return r;
}

ExampleReport det_fn_redundancy_check(const JointPmf& q, const AuxDecomposition& dec, bool requireDeterministic) {
  const JointPmf p = compose(q, dec);
  const double hy = entropy(p, {"Y"}, {"X1", "X2", "Z"});
  if (requireDeterministic && hy > 1e-9)
    throw std::invalid_argument("H(Y|X1,X2,Z) = " + fmt(hy) + " in the composed joint; Y is not a function of the sources");
  ExampleReport r{"detfn", {}};
  auto same = [&](const std::string& lhs, const std::string& rhs) {
    r.check(lhs + " = " + rhs, eval_info_expr(p, lhs), eval_info_expr(p, rhs), "stated");
  };
  same("I(U1;X1,X2,Y|Z,T) - I(U1;U2|Z,T)", "I(U1;X1|U2,Z,T)");
  same("I(U2;X1,X2,Y|Z,T) - I(U1;U2|Z,T)", "I(U2;X2|U1,Z,T)");
  same("I(U1;X1,X2,Y|Z,T) + I(U2;X2|U1,Z,T)", "I(U1,U2;X1,X2|Z,T)");
  same("I(U2;X1,X2,Y|Z,T) + I(U1;X1|U2,Z,T)", "I(U1,U2;X1,X2|Z,T)");
  same("I(U1,U2;X1,X2,Y|Z,T)", "I(U1,U2;X1,X2|Z,T)");
  if (mutual_info(p, {"X1"}, {"X2"}, {"Z"}) <= 1e-9) {
    same("I(U1;X1,Y|X2,Z,T)", "I(U1;X1|Z,T)");
    same("I(U2;X2,Y|X1,Z,T)", "I(U2;X2|Z,T)");
    same("I(U1,U2;X1,X2,Y|Z,T)", "I(U1;X1|Z,T) + I(U2;X2|Z,T)");
  }
  return r;
}

std::pair<JointPmf, AuxDecomposition> random_deterministic_instance(std::mt19937_64& rng, bool ci, bool randomizedY) {
  const int n1 = 3, n2 = 2, nz = 2;
  std::vector<double> p(n1 * n2 * nz * 2, 0.0);
  std::vector<double> pz(nz), a(n1 * nz), b(n2 * nz);
  for (auto& v : pz) v = unif(rng, 0.05, 1);
  for (auto& v : a) v = unif(rng, 0.05, 1);
  for (auto& v : b) v = unif(rng, 0.05, 1);
  double s = 0;
  for (int x1 = 0; x1 < n1; ++x1)
    for (int x2 = 0; x2 < n2; ++x2)
      for (int z = 0; z < nz; ++z) {
        // Y is left at 0 here; the target is the law induced by the decomposition.
        const double w = ci ? pz[z] * a[x1 * nz + z] * b[x2 * nz + z] : unif(rng, 0.05, 1);
        p[((x1 * n2 + x2) * nz + z) * 2] = w;
        s += w;
      }
  for (auto& v : p) v /= s;
  if (ci) {
    // Normalize each factor so p(x1, x2 | z) = p(x1|z) p(x2|z) exactly.
    double zs = 0;
    for (auto v : pz) zs += v;
    std::fill(p.begin(), p.end(), 0.0);
    for (int z = 0; z < nz; ++z) {
      double sa = 0, sb = 0;
      for (int x1 = 0; x1 < n1; ++x1) sa += a[x1 * nz + z];
      for (int x2 = 0; x2 < n2; ++x2) sb += b[x2 * nz + z];
      for (int x1 = 0; x1 < n1; ++x1)
        for (int x2 = 0; x2 < n2; ++x2)
          p[((x1 * n2 + x2) * nz + z) * 2] = pz[z] / zs * a[x1 * nz + z] / sa * b[x2 * nz + z] / sb;
    }
  }
  JointPmf base({{"X1", n1}, {"X2", n2}, {"Z", nz}, {"Y", 2}}, p);
  std::uniform_int_distribution<int> bit(0, 1);
  std::vector<int> f1(n1), f2(n2), g(8);
  for (auto& v : f1) v = bit(rng);
  for (auto& v : f2) v = bit(rng);
  for (auto& v : g) v = bit(rng);
  std::vector<double> e1(n1), e2(n2);
  for (auto& v : e1) v = unif(rng, 0.1, 0.9);
  for (auto& v : e2) v = unif(rng, 0.1, 0.9);
  AuxDecomposition d;
  d.u1Kernel = kernel_from_fn({{"X1", n1}}, {{"U1", 4}}, [&](const std::vector<int>& i) {
    std::vector<double> r(4, 0.0);
    r[2 * f1[i[0]]] = e1[i[0]];
    r[2 * f1[i[0]] + 1] = 1 - e1[i[0]];
    return r;
  });
  d.u2Kernel = kernel_from_fn({{"X2", n2}}, {{"U2", 4}}, [&](const std::vector<int>& i) {
    std::vector<double> r(4, 0.0);
    r[2 * f2[i[0]]] = e2[i[0]];
    r[2 * f2[i[0]] + 1] = 1 - e2[i[0]];
    return r;
  });
  if (randomizedY) {
    d.yKernel = kernel_from_fn({{"U1", 4}, {"U2", 4}, {"Z", nz}}, {{"Y", 2}}, [&](const std::vector<int>&) {
      const double t = unif(rng, 0.1, 0.9);
      return std::vector<double>{t, 1 - t};
    });
  } else {
    d.yKernel = deterministic_kernel({{"U1", 4}, {"U2", 4}, {"Z", nz}}, {{"Y", 2}}, [&](const std::vector<int>& i) {
      return g[((i[0] >> 1) * 2 + (i[1] >> 1)) * 2 + i[2]];
    });
  }
  JointPmf q = marginal(compose(base, d), {"X1", "X2", "Z", "Y"});
  return {q, d};
}

ExampleReport detfn_suite(std::size_t instances, std::uint64_t seed) {
  ExampleReport r{"detfn", {}};
  {
    std::vector<double> p(8, 0.0);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) p[(a * 2 + b) * 2 + (a ^ b)] = 0.25;
    AuxDecomposition d;
    d.u1Kernel = deterministic_kernel({{"X1", 2}}, {{"U1", 2}}, [](const std::vector<int>& i) { return i[0]; });
    d.u2Kernel = deterministic_kernel({{"X2", 2}}, {{"U2", 2}}, [](const std::vector<int>& i) { return i[0]; });
    d.yKernel = deterministic_kernel({{"U1", 2}, {"U2", 2}}, {{"Y", 2}},
                                     [](const std::vector<int>& i) { return i[0] ^ i[1]; });
    for (auto e : det_fn_redundancy_check(JointPmf({{"X1", 2}, {"X2", 2}, {"Y", 2}}, p), d).entries) {
      e.name = "xor: " + e.name;
      r.entries.push_back(e);
    }
  }
  Rng rng(seed);
  double worst = 0, worstCi = 0;
  std::size_t ok = 0, okCi = 0;
  for (std::size_t i = 0; i < 2 * instances; ++i) {
    const bool ci = i % 2 == 1;
    auto [q, d] = random_deterministic_instance(rng, ci);
    const auto rep = det_fn_redundancy_check(q, d);
    double w = 0;
    for (const auto& e : rep.entries) w = std::max(w, std::abs(e.computed - e.expected));
    (ci ? worstCi : worst) = std::max(ci ? worstCi : worst, w);
    if (rep.pass()) ++(ci ? okCi : ok);
  }
  r.check("random instances satisfying every identity", static_cast<double>(ok), static_cast<double>(instances),
          "computed", 0);
  r.check("conditionally independent instances satisfying every identity", static_cast<double>(okCi),
          static_cast<double>(instances), "computed", 0);
  r.check("largest identity gap", worst, 0, "computed");
  r.check("largest identity gap, independent sources", worstCi, 0, "computed");
  auto [q, d] = random_deterministic_instance(rng, true, true);
  r.check_flag("randomized output satisfies every identity", det_fn_redundancy_check(q, d, false).pass(), false,
               "computed");
  return r;
}

ExampleReport claims_report(std::size_t budget, std::uint64_t seed) {
  ExampleReport r{"claims", {}};
  for (Claim c : {Claim::Claim1, Claim::Claim2}) {
    const std::string n = claim_name(c);
    const auto s = claim_search(c, budget, seed);
    r.check(n + ": feasible decompositions checked", static_cast<double>(s.feasible), static_cast<double>(budget),
            "computed", 0);
    r.check_flag(n + ": " + std::to_string(s.hypothesisMet) + " decompositions meet the hypotheses",
                 budget == 0 || s.hypothesisMet > 0, true, "computed");
    r.check_flag(n + ": counterexample found" + (s.counterexample ? " (" + s.witness + ")" : std::string()),
                 s.counterexample.has_value(), false, "stated");
    if (budget == 0) continue;
    const auto relaxed = claim_search(c, budget, seed, 0.3);
    r.check_flag(n + ": violation found at correctness tolerance 0.3", relaxed.counterexample.has_value(), true,
                 "computed");
  }
  return r;
}

}  // namespace coordsim
