#include "coordsim/region.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "coordsim/info_expr.hpp"

namespace coordsim {

namespace {

constexpr RateCoeffs c(int r1, int r2, int r00, int r01, int r02) { return {r1, r2, r00, r01, r02}; }

const std::vector<BoundSpec> kThm1 = {
    {"R1", c(1, 0, 0, 0, 0), {"I(U1;X1|U2,Z,T)"}},
    {"R2", c(0, 1, 0, 0, 0), {"I(U2;X2|U1,Z,T)"}},
    {"R1+R2", c(1, 1, 0, 0, 0), {"I(U1,U2;X1,X2|Z,T)"}},
    {"R1+R01", c(1, 0, 0, 1, 0), {"I(U1;X1,X2,Y|Z,T) - I(U1;U2|Z,T)"}},
    {"R2+R02", c(0, 1, 0, 0, 1), {"I(U2;X1,X2,Y|Z,T) - I(U1;U2|Z,T)"}},
    {"R1+R2+R01", c(1, 1, 0, 1, 0), {"I(U1;X1,X2,Y|Z,T) + I(U2;X2|U1,Z,T)"}},
    {"R1+R2+R02", c(1, 1, 0, 0, 1), {"I(U2;X1,X2,Y|Z,T) + I(U1;X1|U2,Z,T)"}},
    {"R1+R2+R01+R02", c(1, 1, 0, 1, 1), {"I(U1,U2;X1,X2,Y|Z,T)"}},
};

const std::vector<BoundSpec> kThm2 = {
    {"R1", c(1, 0, 0, 0, 0), {"I(U1;X1|Z,T)", "I(U1;X1|U2,X2,Z,T)"}},
    {"R2", c(0, 1, 0, 0, 0), {"I(U2;X2|Z,T)", "I(U2;X2|U1,X1,Z,T)"}},
    {"R1+R2", c(1, 1, 0, 0, 0), {"I(U1,U2;X1,X2|Z,T)"}},
    {"R1+R01", c(1, 0, 0, 1, 0), {"I(U1;X1,X2,Y|Z,T)"}},
    {"R2+R02", c(0, 1, 0, 0, 1), {"I(U2;X1,X2,Y|Z,T)"}},
    {"R1+R2+R01+R02", c(1, 1, 0, 1, 1), {"I(U1,U2;X1,X2,Y|Z,T)"}},
};

const std::vector<BoundSpec> kThm3 = {
    {"R1", c(1, 0, 0, 0, 0), {"I(U1;X1|Z,T)"}},
    {"R2", c(0, 1, 0, 0, 0), {"I(U2;X2|Z,T)"}},
    {"R1+R01", c(1, 0, 0, 1, 0), {"I(U1;X1,Y|X2,Z,T)"}},
    {"R2+R02", c(0, 1, 0, 0, 1), {"I(U2;X2,Y|X1,Z,T)"}},
    {"R1+R2+R01+R02", c(1, 1, 0, 1, 1), {"I(U1,U2;X1,X2,Y|Z,T)"}},
};

const std::vector<BoundSpec> kThm4 = {
    {"R00", c(0, 0, 1, 0, 0), {"H(U0|X0,T)"}},
    {"R1", c(1, 0, 0, 0, 0), {"I(U1;X1,U0|U2,Z,T)"}},
    {"R2", c(0, 1, 0, 0, 0), {"I(U2;X2,U0|U1,Z,T)"}},
    {"R1+R2", c(1, 1, 0, 0, 0), {"I(U1,U2;X1,X2,U0|Z,T)"}},
    {"R1+R01", c(1, 0, 0, 1, 0), {"I(U1;X1,X2,U0,Y|Z,T) - I(U1;U2|Z,T)"}},
    {"R2+R02", c(0, 1, 0, 0, 1), {"I(U2;X1,X2,U0,Y|Z,T) - I(U1;U2|Z,T)"}},
    {"R1+R2+R01", c(1, 1, 0, 1, 0), {"I(U1;X1,X2,U0,Y|Z,T) + I(U2;X2,U0|U1,Z,T)"}},
    {"R1+R2+R02", c(1, 1, 0, 0, 1), {"I(U2;X1,X2,U0,Y|Z,T) + I(U1;X1,U0|U2,Z,T)"}},
    {"R1+R2+R01+R02", c(1, 1, 0, 1, 1), {"I(U1,U2;X1,X2,U0,Y|Z,T)"}},
};

const std::vector<BoundSpec> kThm5 = {
    {"R1", c(1, 0, 0, 0, 0), {"I(U1;X1|U0,Z,T)", "I(U1;X1|U0,U2,X2,Z,T)"}},
    {"R2", c(0, 1, 0, 0, 0), {"I(U2;X2|U0,Z,T)", "I(U2;X2|U0,U1,X1,Z,T)"}},
    {"R1+R2", c(1, 1, 0, 0, 0), {"I(U1,U2;X1,X2|U0,Z,T)"}},
    {"R1+R01", c(1, 0, 0, 1, 0), {"I(U1;X1,X2,Y|Z,T)"}},
    {"R2+R02", c(0, 1, 0, 0, 1), {"I(U2;X1,X2,Y|Z,T)"}},
    {"R00+R1+R01", c(1, 0, 1, 1, 0), {"I(U0,U1;X1,X2,Y|Z,T)"}},
    {"R00+R2+R02", c(0, 1, 1, 0, 1), {"I(U0,U2;X1,X2,Y|Z,T)"}},
    {"R1+R2+R01+R02", c(1, 1, 0, 1, 1), {"I(U1,U2;X1,X2,Y|Z,T)"}},
    {"R00+R1+R2+R01+R02", c(1, 1, 1, 1, 1), {"I(U0,U1,U2;X1,X2,Y|Z,T)"}},
};

const std::vector<BoundSpec> kThm6 = {
    {"R1", c(1, 0, 0, 0, 0), {"I(U0,U1;X1|Z,T)"}},
    {"R2", c(0, 1, 0, 0, 0), {"I(U0,U2;X2|Z,T)"}},
    {"R1+R2", c(1, 1, 0, 0, 0), {"I(U0,U1,U2;X1,X2|Z,T)"}},
    {"R1+R01", c(1, 0, 0, 1, 0), {"I(U1;X1,Y|X2,Z,T)"}},
    {"R2+R02", c(0, 1, 0, 0, 1), {"I(U2;X2,Y|X1,Z,T)"}},
    {"R00+R1+R01", c(1, 0, 1, 1, 0), {"I(U0,U1;X1,Y|X2,Z,T)"}},
    {"R00+R2+R02", c(0, 1, 1, 0, 1), {"I(U0,U2;X2,Y|X1,Z,T)"}},
    {"R1+R2+R01+R02", c(1, 1, 0, 1, 1), {"I(U1,U2;X1,X2,Y|Z,T)"}},
    {"R00+R1+R2+R01+R02", c(1, 1, 1, 1, 1), {"I(U0,U1,U2;X1,X2,Y|Z,T)"}},
};

const std::vector<std::string> kMarkovSeparate = {"I(U1;X2,Z,U2|X1,T)", "I(U2;X1,Z,U1|X2,T)",
                                                  "I(Y;X1,X2|U1,U2,Z,T)", "I(T;X1,X2,Z)"};
const std::vector<std::string> kMarkovJoint = {"I(U1;X2,Z|X1,T)", "I(U2;X1,Z|X2,T)", "I(Y;X1,X2|U1,U2,Z,T)",
                                               "I(T;X1,X2,Z)"};
const std::vector<std::string> kMarkovThm4 = {"I(U0;X1,X2,Z|X0,T)", "I(U1;X2,Z,U2|X1,U0,T)",
                                              "I(U2;X1,Z,U1|X2,U0,T)", "I(Y;X1,X2,U0|U1,U2,Z,T)",
                                              "I(T;X1,X2,Z)"};
const std::vector<std::string> kMarkovThm5 = {"I(U0;X1,X2,Z|T)", "I(U1;X2,Z|X1,U0,T)", "I(U2;X1,Z|X2,U0,T)",
                                              "I(Y;X1,X2,U0|U1,U2,Z,T)", "I(T;X1,X2,Z)"};
const std::vector<std::string> kMarkovThm6 = {"I(U0;X1,X2,Z|T)", "I(U1;X2,Z,U2|X1,U0,T)",
                                              "I(U2;X1,Z,U1|X2,U0,T)", "I(Y;X1,X2,U0|U1,U2,Z,T)",
                                              "I(T;X1,X2,Z)"};

void require_from(const std::optional<ConditionalKernel>& k, const char* what, std::set<std::string> allowed,
                  Theorem t) {
  if (!k) return;
  for (const auto& v : k->from)
    if (!allowed.count(v.name))
      throw std::invalid_argument(std::string(what) + " may not condition on '" + v.name + "' under " +
                                  theorem_name(t));
}

}  // namespace

std::string theorem_name(Theorem t) { return "thm" + std::to_string(static_cast<int>(t)); }

Theorem parse_theorem(const std::string& s) {
  for (int i = 1; i <= 6; ++i)
    if (s == "thm" + std::to_string(i)) return static_cast<Theorem>(i);
  throw std::invalid_argument("unknown theorem '" + s + "' (expected thm1..thm6)");
}

bool uses_r00(Theorem t) { return static_cast<int>(t) >= 4; }
bool needs_ci_target(Theorem t) { return t == Theorem::Thm3 || t == Theorem::Thm6; }
bool allows_joint_u(Theorem t) { return t == Theorem::Thm2 || t == Theorem::Thm5; }

RatePoint RatePoint::parse(const std::string& text, Theorem t) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), ::isspace), tok.end());
    if (tok == "inf" || tok == "+inf") {
      vals.push_back(kInf);
      continue;
    }
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad rate value '" + tok + "'");
    }
    if (used != tok.size() || !(v >= 0)) throw std::invalid_argument("bad rate value '" + tok + "'");
    vals.push_back(v);
  }
  RatePoint p;
  if (uses_r00(t)) {
    if (vals.size() != 5) throw std::invalid_argument("point needs R1,R2,R00,R01,R02");
    p.r = {vals[0], vals[1], vals[2], vals[3], vals[4]};
  } else {
    if (vals.size() != 4) throw std::invalid_argument("point needs R1,R2,R01,R02");
    p.r = {vals[0], vals[1], 0.0, vals[2], vals[3]};
  }
  return p;
}

std::string RatePoint::to_string(Theorem t) const {
  std::ostringstream os;
  os.precision(12);
  bool first = true;
  for (int i = 0; i < kNumRates; ++i) {
    if (i == kR00 && !uses_r00(t)) continue;
    if (!first) os << ',';
    if (std::isinf(r[i]))
      os << "inf";
    else
      os << r[i];
    first = false;
  }
  return os.str();
}

const std::vector<BoundSpec>& theorem_bounds(Theorem t) {
  switch (t) {
    case Theorem::Thm1: return kThm1;
    case Theorem::Thm2: return kThm2;
    case Theorem::Thm3: return kThm3;
    case Theorem::Thm4: return kThm4;
    case Theorem::Thm5: return kThm5;
    case Theorem::Thm6: return kThm6;
  }
  throw std::invalid_argument("bad theorem");
}

const std::vector<std::string>& markov_exprs(Theorem t) {
  switch (t) {
    case Theorem::Thm1:
    case Theorem::Thm3: return kMarkovSeparate;
    case Theorem::Thm2: return kMarkovJoint;
    case Theorem::Thm4: return kMarkovThm4;
    case Theorem::Thm5: return kMarkovThm5;
    case Theorem::Thm6: return kMarkovThm6;
  }
  throw std::invalid_argument("bad theorem");
}

double bound_violation(const std::vector<BoundValue>& bounds, const RatePoint& p) {
  double worst = -kInf;
  for (const auto& b : bounds) {
    double lhs = 0;
    bool off = false;
    for (int i = 0; i < kNumRates; ++i) {
      if (b.coeff[i] == 0) continue;
      if (std::isinf(p[i])) {
        off = true;
        break;
      }
      lhs += b.coeff[i] * p[i];
    }
    if (!off) worst = std::max(worst, b.rhs - lhs);
  }
  return worst;
}

double RegionEval::rhs(const std::string& name) const {
  for (const auto& b : bounds)
    if (b.name == name) return b.rhs;
  throw std::invalid_argument("no bound named '" + name + "'");
}

double RegionEval::max_markov_error() const {
  double m = 0;
  for (const auto& [name, v] : markovErrors) m = std::max(m, v);
  return m;
}

bool RegionEval::certifies(const RatePoint& p, double tol) const {
  return correctnessError <= tol && max_markov_error() <= tol && violation(p) <= tol;
}

void check_structure(Theorem t, const AuxDecomposition& dec) {
  const bool u0Allowed = uses_r00(t);
  if (!u0Allowed && dec.size_u0() > 1)
    throw std::invalid_argument(theorem_name(t) + " has no U0 but the decomposition declares one");
  if (dec.uJointKernel && !allows_joint_u(t))
    throw std::invalid_argument(theorem_name(t) + " requires separate kernels p(u1|.) and p(u2|.)");
  if (t == Theorem::Thm4)
    require_from(dec.u0Kernel, "p(u0|.)", {"X0", "T"}, t);
  else
    require_from(dec.u0Kernel, "p(u0|.)", {"T"}, t);
  std::set<std::string> a1 = {"X1", "T"}, a2 = {"X2", "T"}, a12 = {"X1", "X2", "T"};
  if (u0Allowed) {
    a1.insert("U0");
    a2.insert("U0");
    a12.insert("U0");
  }
  require_from(dec.u1Kernel, "p(u1|.)", a1, t);
  require_from(dec.u2Kernel, "p(u2|.)", a2, t);
  require_from(dec.uJointKernel, "p(u1,u2|.)", a12, t);
  std::optional<ConditionalKernel> y = dec.yKernel;
  require_from(y, "p(y|.)", {"U1", "U2", "Z", "T"}, t);
}

double correctness_error(const JointPmf& q, const JointPmf& composed) {
  JointPmf target = canonical_target(q);
  JointPmf m = marginal(composed, {"T", "X1", "X2", "Z", "Y"});
  const std::size_t nt = m.size_of("T"), block = target.size();
  double worst = 0;
  for (std::size_t t = 0; t < nt; ++t) {
    double pt = 0;
    for (std::size_t i = 0; i < block; ++i) pt += m[t * block + i];
    if (pt <= 0) continue;
    double tv = 0;
    for (std::size_t i = 0; i < block; ++i) tv += std::abs(m[t * block + i] / pt - target[i]);
    worst = std::max(worst, 0.5 * tv);
  }
  return worst;
}

RegionEval evaluate(Theorem t, const JointPmf& q, const AuxDecomposition& dec) {
  check_structure(t, dec);
  if (needs_ci_target(t)) {
    double ci = mutual_info(canonical_target(q), {"X1"}, {"X2"}, {"Z"});
    if (ci > 1e-9)
      throw std::invalid_argument(theorem_name(t) + " needs X1 and X2 conditionally independent given Z (I = " +
                                  std::to_string(ci) + ")");
  }
  JointPmf p = compose(q, dec, t == Theorem::Thm4);
  RegionEval e;
  e.theorem = t;
  for (const auto& b : theorem_bounds(t)) {
    double v = -kInf;
    for (const auto& alt : b.alternatives) v = std::max(v, eval_info_expr(p, alt));
    e.bounds.push_back({b.name, b.coeff, v});
  }
  e.correctnessError = correctness_error(q, p);
  for (const auto& m : markov_exprs(t)) e.markovErrors.emplace_back(m, eval_info_expr(p, m));
  return e;
}

RegionEval thm1_constraints(const JointPmf& q, const AuxDecomposition& dec) { return evaluate(Theorem::Thm1, q, dec); }
RegionEval thm2_constraints(const JointPmf& q, const AuxDecomposition& dec) { return evaluate(Theorem::Thm2, q, dec); }
RegionEval thm3_constraints(const JointPmf& q, const AuxDecomposition& dec) { return evaluate(Theorem::Thm3, q, dec); }
RegionEval thm4_constraints(const JointPmf& q, const AuxDecomposition& dec) { return evaluate(Theorem::Thm4, q, dec); }
RegionEval thm5_constraints(const JointPmf& q, const AuxDecomposition& dec) { return evaluate(Theorem::Thm5, q, dec); }
RegionEval thm6_constraints(const JointPmf& q, const AuxDecomposition& dec) { return evaluate(Theorem::Thm6, q, dec); }

nlohmann::json region_eval_to_json(const RegionEval& e) {
  nlohmann::json bounds = nlohmann::json::array(), markov = nlohmann::json::object();
  for (const auto& b : e.bounds) bounds.push_back({{"name", b.name}, {"coeff", b.coeff}, {"rhs", b.rhs}});
  for (const auto& [k, v] : e.markovErrors) markov[k] = v;
  return {{"theorem", theorem_name(e.theorem)},
          {"bounds", bounds},
          {"correctnessError", e.correctnessError},
          {"markovErrors", markov}};
}

AuxSizes default_sizes(const JointPmf& q) {
  JointPmf c = canonical_target(q);
  const int y = c.size_of("Y");
  AuxSizes s;
  s.u1 = c.size_of("X1") * y + 2;
  s.u2 = c.size_of("X2") * y + 2;
  s.u0 = source_common_part(c).count + 2;
  s.t = 1;
  return s;
}

namespace {

ConditionalKernel random_kernel(std::vector<VarDecl> from, std::vector<VarDecl> to, std::mt19937_64& rng,
                                double sparsity) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t C = alphabet_product(to);
  return kernel_from_fn(std::move(from), std::move(to), [&](const std::vector<int>&) {
    std::vector<double> row(C);
    double s = 0;
    for (auto& x : row) {
      x = u(rng) < sparsity ? 0.0 : -std::log(1.0 - u(rng));
      s += x;
    }
    if (s == 0) {
      row[std::uniform_int_distribution<std::size_t>(0, C - 1)(rng)] = 1.0;
      s = 1.0;
    }
    for (auto& x : row) x /= s;
    return row;
  });
}

}  // namespace

AuxDecomposition random_decomposition(Theorem t, const JointPmf& q, const AuxSizes& sizes, std::mt19937_64& rng,
                                      double sparsity) {
  JointPmf c = canonical_target(q);
  const VarDecl x1{"X1", c.size_of("X1")}, x2{"X2", c.size_of("X2")}, z{"Z", c.size_of("Z")},
      y{"Y", c.size_of("Y")};
  const VarDecl T{"T", sizes.t}, u0{"U0", sizes.u0}, u1{"U1", sizes.u1}, u2{"U2", sizes.u2};
  AuxDecomposition d;
  d.tPmf = random_kernel({}, {T}, rng, 0.0).table;
  const bool withU0 = uses_r00(t);
  if (t == Theorem::Thm4) {
    const VarDecl x0{"X0", source_common_part(c).count};
    d.u0Kernel = random_kernel({x0, T}, {u0}, rng, sparsity);
  } else if (withU0) {
    d.u0Kernel = random_kernel({T}, {u0}, rng, sparsity);
  }
  std::vector<VarDecl> f1 = {x1}, f2 = {x2}, f12 = {x1, x2};
  if (withU0) {
    f1.push_back(u0);
    f2.push_back(u0);
    f12.push_back(u0);
  }
  f1.push_back(T);
  f2.push_back(T);
  f12.push_back(T);
  if (allows_joint_u(t)) {
    d.uJointKernel = random_kernel(f12, {u1, u2}, rng, sparsity);
  } else {
    d.u1Kernel = random_kernel(f1, {u1}, rng, sparsity);
    d.u2Kernel = random_kernel(f2, {u2}, rng, sparsity);
  }
  d.yKernel = random_kernel({u1, u2, z, T}, {y}, rng, sparsity);
  return d;
}

}  // namespace coordsim
