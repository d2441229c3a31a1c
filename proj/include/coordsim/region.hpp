// Rate-region constraint evaluators for the six inner/outer bounds.
#pragma once

#include <array>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "coordsim/compose.hpp"
#include "json.hpp"

namespace coordsim {

enum class Theorem { Thm1 = 1, Thm2, Thm3, Thm4, Thm5, Thm6 };

std::string theorem_name(Theorem t);  // "thm1" ... "thm6"
Theorem parse_theorem(const std::string& s);
bool uses_r00(Theorem t);        // encoder shared randomness (thm4..thm6)
bool needs_ci_target(Theorem t);  // thm3 and thm6
bool allows_joint_u(Theorem t);   // thm2 and thm5

enum RateIndex { kR1 = 0, kR2, kR00, kR01, kR02 };
inline constexpr int kNumRates = 5;
inline const std::array<const char*, kNumRates> kRateNames = {"R1", "R2", "R00", "R01", "R02"};
using RateCoeffs = std::array<int, kNumRates>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Coordinates may be +inf (unlimited shared randomness). R00 is 0 and
// unused for thm1..thm3.
struct RatePoint {
  std::array<double, kNumRates> r{};

  double& operator[](int i) { return r[i]; }
  double operator[](int i) const { return r[i]; }

  // "R1,R2,R01,R02" for thm1..3 and "R1,R2,R00,R01,R02" otherwise; "inf" allowed.
  static RatePoint parse(const std::string& text, Theorem t);
  std::string to_string(Theorem t) const;
};

// One displayed bound: coeff . R >= max over alternatives of an information
// expression (see info_expr.hpp). Only the R1/R2 rows of thm2 and thm5 have
// two alternatives.
struct BoundSpec {
  std::string name;
  RateCoeffs coeff;
  std::vector<std::string> alternatives;
};

const std::vector<BoundSpec>& theorem_bounds(Theorem t);
// Conditional mutual informations that vanish under the theorem's pmf structure.
const std::vector<std::string>& markov_exprs(Theorem t);

struct BoundValue {
  std::string name;
  RateCoeffs coeff;
  double rhs = 0;
};

// Largest rhs - coeff . point over rows not switched off by an infinite
// coordinate; -inf when every row is switched off.
double bound_violation(const std::vector<BoundValue>& bounds, const RatePoint& p);

struct RegionEval {
  Theorem theorem = Theorem::Thm1;
  std::vector<BoundValue> bounds;
  double correctnessError = 0;  // max over t of TV(p(x1,x2,z,y|t), q)
  std::vector<std::pair<std::string, double>> markovErrors;

  double rhs(const std::string& name) const;
  double max_markov_error() const;
  double violation(const RatePoint& p) const { return bound_violation(bounds, p); }
  bool certifies(const RatePoint& p, double tol) const;
};

// Throws std::invalid_argument when dec does not have the theorem's factorization.
void check_structure(Theorem t, const AuxDecomposition& dec);

// Max over t with p(t) > 0 of the total variation between the composed
// (X1,X2,Z,Y)|T=t law and the target.
double correctness_error(const JointPmf& q, const JointPmf& composed);

RegionEval evaluate(Theorem t, const JointPmf& q, const AuxDecomposition& dec);

RegionEval thm1_constraints(const JointPmf& q, const AuxDecomposition& dec);
RegionEval thm2_constraints(const JointPmf& q, const AuxDecomposition& dec);
RegionEval thm3_constraints(const JointPmf& q, const AuxDecomposition& dec);
RegionEval thm4_constraints(const JointPmf& q, const AuxDecomposition& dec);
RegionEval thm5_constraints(const JointPmf& q, const AuxDecomposition& dec);
RegionEval thm6_constraints(const JointPmf& q, const AuxDecomposition& dec);

nlohmann::json region_eval_to_json(const RegionEval& e);

struct AuxSizes {
  int u1 = 1, u2 = 1, u0 = 1, t = 1;
};

// |U1| = |X1||Y| + 2, |U2| = |X2||Y| + 2, |U0| = |X0| + 2, |T| = 1.
AuxSizes default_sizes(const JointPmf& q);

// Random decomposition with the theorem's factorization. Kernel rows are
// normalized exponentials with a fraction `sparsity` of entries zeroed.
AuxDecomposition random_decomposition(Theorem t, const JointPmf& q, const AuxSizes& sizes, std::mt19937_64& rng,
                                      double sparsity = 0.3);

}  // namespace coordsim
