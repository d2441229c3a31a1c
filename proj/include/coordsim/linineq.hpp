// Exact linear inequality systems over rate variables and opaque entropy
// atoms, Fourier-Motzkin elimination, and numeric polytopes.
#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace coordsim {

using Rational = boost::multiprecision::cpp_rational;

struct EntropyAtom {
  std::string id;
  std::string description;
};

struct LinExpr {
  std::map<std::string, Rational> rate;
  std::map<std::string, Rational> atom;
  Rational constant = 0;

  LinExpr& add_rate(const std::string& v, const Rational& c);
  LinExpr& add_atom(const std::string& a, const Rational& c);
  LinExpr operator+(const LinExpr& o) const;
  LinExpr operator-(const LinExpr& o) const;
  LinExpr operator*(const Rational& s) const;
  bool has_rate(const std::string& v) const;
  Rational rate_coeff(const std::string& v) const;
  void prune();  // drops zero coefficients
  bool operator==(const LinExpr& o) const;
};

// Convenience constructors.
LinExpr rate_sum(std::initializer_list<std::string> vars);
LinExpr atom_term(const std::string& id, const Rational& c = 1);

// Normalized form: expr >= 0.
struct Inequality {
  LinExpr expr;
  static Inequality ge(const LinExpr& lhs, const LinExpr& rhs) { return {lhs - rhs}; }
  static Inequality le(const LinExpr& lhs, const LinExpr& rhs) { return {rhs - lhs}; }
};

struct IneqSystem {
  std::vector<std::string> rateVars;
  std::vector<EntropyAtom> atoms;
  std::vector<Inequality> rows;
  std::vector<LinExpr> equalities;  // each expr == 0

  void validate() const;
  std::vector<std::string> atom_ids() const;
};

struct FmeOptions {
  bool addNonnegativity = true;
  std::size_t rowCap = 100000;
};

struct FmeBlowup : std::runtime_error {
  using std::runtime_error::runtime_error;
};

IneqSystem fme_eliminate(const IneqSystem& sys, const std::set<std::string>& drop, const FmeOptions& opts = {});

// Half-space sum_i coeff[i] * R_i >= rhs.
struct HalfSpace {
  std::vector<double> coeff;
  double rhs = 0;
};

struct NumericPolytope {
  std::vector<std::string> rateVars;
  std::vector<HalfSpace> rows;
};

NumericPolytope instantiate(const IneqSystem& sys, const std::map<std::string, double>& atomValues);

// Coordinates may be +inf; a row with a positive coefficient on an infinite
// coordinate is satisfied.
bool poly_contains(const NumericPolytope& poly, const std::vector<double>& point, double tol);

// Smallest slack over the rows (negative when violated). +inf coordinates
// are handled as in poly_contains.
double poly_slack(const NumericPolytope& poly, const std::vector<double>& point);

struct EquivVerdict {
  bool agree = true;
  std::size_t checked = 0;
  std::optional<std::vector<double>> witness;
};

EquivVerdict poly_equiv_sampled(const NumericPolytope& a, const NumericPolytope& b, double boxRadius,
                                std::size_t samples, std::uint64_t seed);

// Reorders `poly` onto the variable order of `vars`; missing variables throw.
NumericPolytope reorder(const NumericPolytope& poly, const std::vector<std::string>& vars);

nlohmann::json system_to_json(const IneqSystem& sys);
IneqSystem system_from_json(const nlohmann::json& j);

std::string format_row(const Inequality& row);

}  // namespace coordsim
