#include "coordsim/linineq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace coordsim {

namespace {

void add_into(std::map<std::string, Rational>& m, const std::string& k, const Rational& c) {
  auto it = m.find(k);
  if (it == m.end()) {
    if (c != 0) m.emplace(k, c);
    return;
  }
  it->second += c;
  if (it->second == 0) m.erase(it);
}

bool is_zero(const LinExpr& e) { return e.rate.empty() && e.atom.empty() && e.constant == 0; }

// Scales so that the leading coefficient has absolute value one.
LinExpr normalized(LinExpr e) {
  e.prune();
  Rational lead = 0;
  if (!e.rate.empty())
    lead = e.rate.begin()->second;
  else if (!e.atom.empty())
    lead = e.atom.begin()->second;
  else
    return e;
  return e * Rational(1 / Rational(abs(lead)));
}

std::string coefficient_key(const LinExpr& e) {
  std::ostringstream os;
  for (const auto& [k, v] : e.rate) os << 'r' << k << '=' << v.str() << ';';
  for (const auto& [k, v] : e.atom) os << 'a' << k << '=' << v.str() << ';';
  return os.str();
}

// Removes duplicate and syntactically dominated rows.
std::vector<Inequality> prune_rows(const std::vector<Inequality>& rows) {
  std::map<std::string, std::size_t> best;
  std::vector<Inequality> out;
  bool infeasible = false;
  for (const auto& r : rows) {
    LinExpr e = normalized(r.expr);
    if (e.rate.empty() && e.atom.empty()) {
      if (e.constant < 0) infeasible = true;
      continue;
    }
    auto key = coefficient_key(e);
    auto it = best.find(key);
    if (it == best.end()) {
      best.emplace(key, out.size());
      out.push_back({e});
    } else if (e.constant < out[it->second].expr.constant) {
      out[it->second].expr.constant = e.constant;
    }
  }
  if (infeasible) {
    LinExpr bad;
    bad.constant = -1;
    out.push_back({bad});
  }
  return out;
}

std::string rational_str(const Rational& r) { return r.str(); }

Rational parse_rational(const nlohmann::json& j, const std::string& field) {
  try {
    if (j.is_string()) return Rational(j.get<std::string>());
    if (j.is_number_integer()) return Rational(j.get<long long>());
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("field '" + field + "' is not a rational \"num/den\"");
}

nlohmann::json expr_to_json(const LinExpr& e) {
  nlohmann::json r = nlohmann::json::object(), a = nlohmann::json::object();
  for (const auto& [k, v] : e.rate) r[k] = rational_str(v);
  for (const auto& [k, v] : e.atom) a[k] = rational_str(v);
  return {{"rate", r}, {"atom", a}, {"const", rational_str(e.constant)}};
}

LinExpr expr_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("field '" + where + "' must be an object");
  LinExpr e;
  if (j.contains("rate"))
    for (auto it = j["rate"].begin(); it != j["rate"].end(); ++it)
      e.add_rate(it.key(), parse_rational(it.value(), where + ".rate." + it.key()));
  if (j.contains("atom"))
    for (auto it = j["atom"].begin(); it != j["atom"].end(); ++it)
      e.add_atom(it.key(), parse_rational(it.value(), where + ".atom." + it.key()));
  if (j.contains("const")) e.constant = parse_rational(j["const"], where + ".const");
  return e;
}

}  // namespace

LinExpr& LinExpr::add_rate(const std::string& v, const Rational& c) {
  add_into(rate, v, c);
  return *this;
}

LinExpr& LinExpr::add_atom(const std::string& a, const Rational& c) {
  add_into(atom, a, c);
  return *this;
}

LinExpr LinExpr::operator+(const LinExpr& o) const {
  LinExpr r = *this;
  for (const auto& [k, v] : o.rate) add_into(r.rate, k, v);
  for (const auto& [k, v] : o.atom) add_into(r.atom, k, v);
  r.constant += o.constant;
  return r;
}

LinExpr LinExpr::operator-(const LinExpr& o) const { return *this + o * Rational(-1); }

LinExpr LinExpr::operator*(const Rational& s) const {
  LinExpr r;
  if (s == 0) return r;
  for (const auto& [k, v] : rate) r.rate.emplace(k, v * s);
  for (const auto& [k, v] : atom) r.atom.emplace(k, v * s);
  r.constant = constant * s;
  return r;
}

bool LinExpr::has_rate(const std::string& v) const { return rate.count(v) != 0; }

Rational LinExpr::rate_coeff(const std::string& v) const {
  auto it = rate.find(v);
  return it == rate.end() ? Rational(0) : it->second;
}

void LinExpr::prune() {
  std::erase_if(rate, [](const auto& kv) { return kv.second == 0; });
  std::erase_if(atom, [](const auto& kv) { return kv.second == 0; });
}

bool LinExpr::operator==(const LinExpr& o) const {
  return rate == o.rate && atom == o.atom && constant == o.constant;
}

LinExpr rate_sum(std::initializer_list<std::string> vars) {
  LinExpr e;
  for (const auto& v : vars) e.add_rate(v, 1);
  return e;
}

LinExpr atom_term(const std::string& id, const Rational& c) {
  LinExpr e;
  e.add_atom(id, c);
  return e;
}

std::vector<std::string> IneqSystem::atom_ids() const {
  std::vector<std::string> ids;
  for (const auto& a : atoms) ids.push_back(a.id);
  return ids;
}

void IneqSystem::validate() const {
  std::set<std::string> rv(rateVars.begin(), rateVars.end());
  if (rv.size() != rateVars.size()) throw std::invalid_argument("duplicate rate variable");
  std::set<std::string> av;
  for (const auto& a : atoms)
    if (!av.insert(a.id).second) throw std::invalid_argument("duplicate atom id '" + a.id + "'");
  auto check = [&](const LinExpr& e) {
    for (const auto& [k, v] : e.rate)
      if (!rv.count(k)) throw std::invalid_argument("undeclared rate variable '" + k + "'");
    for (const auto& [k, v] : e.atom)
      if (!av.count(k)) throw std::invalid_argument("undeclared atom '" + k + "'");
  };
  for (const auto& r : rows) check(r.expr);
  for (const auto& e : equalities) check(e);
}

IneqSystem fme_eliminate(const IneqSystem& sys, const std::set<std::string>& drop, const FmeOptions& opts) {
  sys.validate();
  for (const auto& d : drop)
    if (std::find(sys.rateVars.begin(), sys.rateVars.end(), d) == sys.rateVars.end())
      throw std::invalid_argument("cannot eliminate undeclared variable '" + d + "'");

  std::vector<Inequality> rows = sys.rows;
  if (opts.addNonnegativity)
    for (const auto& v : sys.rateVars) rows.push_back({rate_sum({v})});
  std::vector<std::string> vars = sys.rateVars;
  std::set<std::string> pending = drop;

  // Substitute equalities, preferring to solve for a variable being dropped.
  std::vector<LinExpr> eqs = sys.equalities;
  for (std::size_t i = 0; i < eqs.size(); ++i) {
    LinExpr eq = eqs[i];
    eq.prune();
    std::string pick;
    for (const auto& v : vars)
      if (eq.has_rate(v) && pending.count(v)) {
        pick = v;
        break;
      }
    if (pick.empty())
      for (const auto& v : vars)
        if (eq.has_rate(v)) {
          pick = v;
          break;
        }
    if (pick.empty()) {
      if (!is_zero(eq)) {
        rows.push_back({eq});
        rows.push_back({eq * Rational(-1)});
      }
      continue;
    }
    Rational a = eq.rate_coeff(pick);
    auto substitute = [&](LinExpr& e) {
      Rational c = e.rate_coeff(pick);
      if (c != 0) e = e - eq * (c / a);
      e.prune();
    };
    for (auto& r : rows) substitute(r.expr);
    for (std::size_t k = i + 1; k < eqs.size(); ++k) substitute(eqs[k]);
    vars.erase(std::find(vars.begin(), vars.end(), pick));
    pending.erase(pick);
  }
  rows = prune_rows(rows);

  while (!pending.empty()) {
    // Eliminate the variable producing the fewest new rows first.
    std::string best;
    long long bestCost = std::numeric_limits<long long>::max();
    for (const auto& v : vars) {
      if (!pending.count(v)) continue;
      long long pos = 0, neg = 0;
      for (const auto& r : rows) {
        Rational c = r.expr.rate_coeff(v);
        if (c > 0) ++pos;
        if (c < 0) ++neg;
      }
      long long cost = pos * neg - pos - neg;
      if (cost < bestCost) {
        bestCost = cost;
        best = v;
      }
    }
    std::vector<Inequality> pos, neg, next;
    for (const auto& r : rows) {
      Rational c = r.expr.rate_coeff(best);
      if (c > 0)
        pos.push_back(r);
      else if (c < 0)
        neg.push_back(r);
      else
        next.push_back(r);
    }
    if (next.size() + pos.size() * neg.size() > opts.rowCap)
      throw FmeBlowup("elimination of '" + best + "' exceeds the row cap of " + std::to_string(opts.rowCap));
    for (const auto& p : pos)
      for (const auto& n : neg) {
        Rational cp = p.expr.rate_coeff(best), cn = -n.expr.rate_coeff(best);
        LinExpr e = p.expr * cn + n.expr * cp;
        e.rate.erase(best);
        next.push_back({e});
      }
    rows = prune_rows(next);
    vars.erase(std::find(vars.begin(), vars.end(), best));
    pending.erase(best);
  }

  IneqSystem out;
  out.rateVars = vars;
  out.atoms = sys.atoms;
  out.rows = rows;
  return out;
}

NumericPolytope instantiate(const IneqSystem& sys, const std::map<std::string, double>& atomValues) {
  NumericPolytope poly;
  poly.rateVars = sys.rateVars;
  for (const auto& a : sys.atoms)
    if (!atomValues.count(a.id)) throw std::invalid_argument("missing value for atom '" + a.id + "'");
  auto emit = [&](const LinExpr& e) {
    HalfSpace h;
    h.coeff.assign(sys.rateVars.size(), 0.0);
    for (std::size_t i = 0; i < sys.rateVars.size(); ++i)
      h.coeff[i] = e.rate_coeff(sys.rateVars[i]).convert_to<double>();
    double v = e.constant.convert_to<double>();
    for (const auto& [k, c] : e.atom) v += c.convert_to<double>() * atomValues.at(k);
    h.rhs = -v;
    poly.rows.push_back(std::move(h));
  };
  for (const auto& r : sys.rows) emit(r.expr);
  for (const auto& e : sys.equalities) {
    emit(e);
    emit(e * Rational(-1));
  }
  return poly;
}

double poly_slack(const NumericPolytope& poly, const std::vector<double>& point) {
  if (point.size() != poly.rateVars.size()) throw std::invalid_argument("point dimension mismatch");
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& h : poly.rows) {
    bool posInf = false, negInf = false;
    double lhs = 0;
    for (std::size_t i = 0; i < point.size(); ++i) {
      if (h.coeff[i] == 0) continue;
      if (std::isinf(point[i])) {
        (h.coeff[i] > 0 ? posInf : negInf) = true;
        continue;
      }
      lhs += h.coeff[i] * point[i];
    }
    double s = posInf ? std::numeric_limits<double>::infinity()
                      : (negInf ? -std::numeric_limits<double>::infinity() : lhs - h.rhs);
    worst = std::min(worst, s);
  }
  return worst;
}

bool poly_contains(const NumericPolytope& poly, const std::vector<double>& point, double tol) {
  return poly_slack(poly, point) >= -tol;
}

NumericPolytope reorder(const NumericPolytope& poly, const std::vector<std::string>& vars) {
  NumericPolytope out;
  out.rateVars = vars;
  std::vector<int> where(vars.size(), -1);
  for (std::size_t i = 0; i < vars.size(); ++i)
    for (std::size_t j = 0; j < poly.rateVars.size(); ++j)
      if (poly.rateVars[j] == vars[i]) where[i] = static_cast<int>(j);
  for (std::size_t j = 0; j < poly.rateVars.size(); ++j)
    if (std::find(vars.begin(), vars.end(), poly.rateVars[j]) == vars.end())
      throw std::invalid_argument("reorder: variable '" + poly.rateVars[j] + "' not in target order");
  for (const auto& h : poly.rows) {
    HalfSpace g;
    g.rhs = h.rhs;
    g.coeff.assign(vars.size(), 0.0);
    for (std::size_t i = 0; i < vars.size(); ++i)
      if (where[i] >= 0) g.coeff[i] = h.coeff[where[i]];
    out.rows.push_back(std::move(g));
  }
  return out;
}

EquivVerdict poly_equiv_sampled(const NumericPolytope& a, const NumericPolytope& bIn, double boxRadius,
                                std::size_t samples, std::uint64_t seed) {
  if (a.rateVars.size() != bIn.rateVars.size()) throw std::invalid_argument("dimension mismatch");
  NumericPolytope b = reorder(bIn, a.rateVars);
  const std::size_t d = a.rateVars.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> box(-boxRadius, boxRadius);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double tol = 1e-9 * std::max(1.0, boxRadius);
  EquivVerdict v;
  std::vector<const HalfSpace*> planes;
  for (const auto& h : a.rows) planes.push_back(&h);
  for (const auto& h : b.rows) planes.push_back(&h);
  auto test = [&](const std::vector<double>& x) {
    ++v.checked;
    if (poly_contains(a, x, tol) != poly_contains(b, x, tol)) {
      v.agree = false;
      v.witness = x;
      return false;
    }
    return true;
  };
  std::vector<double> x(d);
  for (std::size_t s = 0; s < samples; ++s) {
    for (auto& c : x) c = box(rng);
    bool nearPlane = (s % 2 == 1) && !planes.empty();
    if (nearPlane) {
      const HalfSpace& h = *planes[rng() % planes.size()];
      double nn = 0, dot = 0;
      for (std::size_t i = 0; i < d; ++i) {
        nn += h.coeff[i] * h.coeff[i];
        dot += h.coeff[i] * x[i];
      }
      if (nn > 0) {
        // Project onto the hyperplane, then step off it by a small signed offset.
        double off = (unit(rng) < 0.5 ? -1 : 1) * boxRadius * std::pow(10.0, -3 - 3 * unit(rng));
        double t = (h.rhs - dot) / nn;
        for (std::size_t i = 0; i < d; ++i) x[i] += t * h.coeff[i] + off * h.coeff[i] / std::sqrt(nn);
      }
    }
    if (!test(x)) return v;
  }
  return v;
}

nlohmann::json system_to_json(const IneqSystem& sys) {
  nlohmann::json atoms = nlohmann::json::array(), rows = nlohmann::json::array(),
                 eqs = nlohmann::json::array();
  for (const auto& a : sys.atoms) atoms.push_back({{"id", a.id}, {"desc", a.description}});
  for (const auto& r : sys.rows) rows.push_back(expr_to_json(r.expr));
  for (const auto& e : sys.equalities) eqs.push_back(expr_to_json(e));
  return {{"rates", sys.rateVars}, {"atoms", atoms}, {"rows", rows}, {"equalities", eqs}};
}

IneqSystem system_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("rates") || !j.contains("rows"))
    throw std::invalid_argument("inequality file needs 'rates' and 'rows'");
  IneqSystem sys;
  for (const auto& r : j["rates"]) sys.rateVars.push_back(r.get<std::string>());
  if (j.contains("atoms"))
    for (std::size_t i = 0; i < j["atoms"].size(); ++i) {
      const auto& a = j["atoms"][i];
      if (!a.contains("id")) throw std::invalid_argument("field 'atoms[" + std::to_string(i) + "].id' missing");
      sys.atoms.push_back({a["id"].get<std::string>(), a.value("desc", std::string())});
    }
  for (std::size_t i = 0; i < j["rows"].size(); ++i)
    sys.rows.push_back({expr_from_json(j["rows"][i], "rows[" + std::to_string(i) + "]")});
  if (j.contains("equalities"))
    for (std::size_t i = 0; i < j["equalities"].size(); ++i)
      sys.equalities.push_back(expr_from_json(j["equalities"][i], "equalities[" + std::to_string(i) + "]"));
  sys.validate();
  return sys;
}

std::string format_row(const Inequality& row) {
  std::ostringstream os;
  bool first = true;
  auto term = [&](const Rational& c, const std::string& name) {
    if (c == 0) return;
    Rational a = Rational(abs(c));
    os << (c < 0 ? (first ? "-" : " - ") : (first ? "" : " + "));
    if (a != 1) os << a.str() << "*";
    os << name;
    first = false;
  };
  for (const auto& [k, v] : row.expr.rate) term(v, k);
  for (const auto& [k, v] : row.expr.atom) term(v, k);
  if (row.expr.constant != 0 || first) {
    if (first)
      os << row.expr.constant.str();
    else
      os << (row.expr.constant < 0 ? " - " : " + ") << Rational(abs(row.expr.constant)).str();
  }
  os << " >= 0";
  return os.str();
}

}  // namespace coordsim
