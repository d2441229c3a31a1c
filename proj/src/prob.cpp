#include "coordsim/prob.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace coordsim {

namespace {

void check_disjoint(const VarSet& a, const VarSet& b, const char* what) {
  for (const auto& x : a)
    if (std::find(b.begin(), b.end(), x) != b.end())
      throw std::invalid_argument(std::string(what) + ": variable '" + x + "' appears in two sets");
}

void check_unique(const VarSet& s) {
  std::set<std::string> seen;
  for (const auto& x : s)
    if (!seen.insert(x).second) throw std::invalid_argument("duplicate variable '" + x + "'");
}

VarSet concat(VarSet a, const VarSet& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::size_t alphabet_product(const std::vector<VarDecl>& vars) {
  std::size_t n = 1;
  for (const auto& v : vars) n *= static_cast<std::size_t>(v.size);
  return n;
}

JointPmf::JointPmf(std::vector<VarDecl> vars, std::vector<double> probs, double tol)
    : vars_(std::move(vars)), probs_(std::move(probs)) {
  std::set<std::string> names;
  for (const auto& v : vars_) {
    if (v.size < 1) throw std::invalid_argument("variable '" + v.name + "' has size < 1");
    if (!names.insert(v.name).second)
      throw std::invalid_argument("duplicate variable name '" + v.name + "'");
  }
  if (probs_.size() != alphabet_product(vars_))
    throw std::invalid_argument("probability tensor length " + std::to_string(probs_.size()) +
                                " does not match alphabet product " +
                                std::to_string(alphabet_product(vars_)));
  double s = 0;
  for (double x : probs_) {
    if (!(x >= 0) || !std::isfinite(x)) throw std::invalid_argument("negative or non-finite probability");
    s += x;
  }
  if (std::abs(s - 1.0) > tol)
    throw std::invalid_argument("probabilities sum to " + std::to_string(s) + ", not 1");
}

JointPmf JointPmf::uniform(std::vector<VarDecl> vars) {
  std::size_t n = alphabet_product(vars);
  return JointPmf(std::move(vars), std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

JointPmf JointPmf::point_mass(std::vector<VarDecl> vars, const std::vector<int>& at) {
  if (at.size() != vars.size()) throw std::invalid_argument("point_mass: index arity mismatch");
  std::vector<double> p(alphabet_product(vars), 0.0);
  std::size_t f = 0;
  for (std::size_t i = 0; i < at.size(); ++i) {
    if (at[i] < 0 || at[i] >= vars[i].size) throw std::out_of_range("point_mass: index out of range");
    f = f * vars[i].size + at[i];
  }
  p[f] = 1.0;
  return JointPmf(std::move(vars), std::move(p));
}

int JointPmf::axis(const std::string& name) const {
  for (std::size_t i = 0; i < vars_.size(); ++i)
    if (vars_[i].name == name) return static_cast<int>(i);
  return -1;
}

int JointPmf::size_of(const std::string& name) const {
  int a = axis(name);
  if (a < 0) throw std::invalid_argument("unknown variable '" + name + "'");
  return vars_[a].size;
}

VarSet JointPmf::names() const {
  VarSet out;
  for (const auto& v : vars_) out.push_back(v.name);
  return out;
}

std::vector<std::size_t> JointPmf::strides() const {
  std::vector<std::size_t> s(vars_.size(), 1);
  for (int i = static_cast<int>(vars_.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * vars_[i + 1].size;
  return s;
}

std::size_t JointPmf::flat_index(const std::vector<int>& idx) const {
  if (idx.size() != vars_.size()) throw std::invalid_argument("index arity mismatch");
  std::size_t f = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= vars_[i].size) throw std::out_of_range("index out of range");
    f = f * vars_[i].size + idx[i];
  }
  return f;
}

std::vector<int> JointPmf::unflatten(std::size_t flat) const {
  std::vector<int> idx(vars_.size());
  for (int i = static_cast<int>(vars_.size()) - 1; i >= 0; --i) {
    idx[i] = static_cast<int>(flat % vars_[i].size);
    flat /= vars_[i].size;
  }
  return idx;
}

ConditionalKernel::ConditionalKernel(std::vector<VarDecl> f, std::vector<VarDecl> t,
                                     std::vector<double> tab, double tol)
    : from(std::move(f)), to(std::move(t)), table(std::move(tab)) {
  defined.assign(rows(), 1);
  validate(tol);
}

std::size_t ConditionalKernel::rows() const { return alphabet_product(from); }
std::size_t ConditionalKernel::cols() const { return alphabet_product(to); }

bool ConditionalKernel::all_defined() const {
  return std::all_of(defined.begin(), defined.end(), [](char c) { return c != 0; });
}

void ConditionalKernel::validate(double tol) const {
  if (table.size() != rows() * cols()) throw std::invalid_argument("kernel table has wrong length");
  if (defined.size() != rows()) throw std::invalid_argument("kernel defined-flag count mismatch");
  for (std::size_t r = 0; r < rows(); ++r) {
    if (!defined[r]) continue;
    double s = 0;
    for (std::size_t c = 0; c < cols(); ++c) {
      double x = table[r * cols() + c];
      if (!(x >= 0) || !std::isfinite(x)) throw std::invalid_argument("negative kernel entry");
      s += x;
    }
    if (std::abs(s - 1.0) > tol)
      throw std::invalid_argument("kernel row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

std::vector<std::uint32_t> projection_map(const std::vector<VarDecl>& vars,
                                          const std::vector<int>& axes) {
  const std::size_t n = alphabet_product(vars);
  const std::size_t k = vars.size();
  std::vector<std::size_t> sub(k, 0);
  std::size_t m = 1;
  for (int j = static_cast<int>(axes.size()) - 1; j >= 0; --j) {
    sub[axes[j]] = m;
    m *= vars[axes[j]].size;
  }
  std::vector<std::uint32_t> out(n);
  std::vector<int> digit(k, 0);
  std::size_t cur = 0;
  for (std::size_t f = 0; f < n; ++f) {
    out[f] = static_cast<std::uint32_t>(cur);
    for (int i = static_cast<int>(k) - 1; i >= 0; --i) {
      if (++digit[i] < vars[i].size) {
        cur += sub[i];
        break;
      }
      cur -= sub[i] * (vars[i].size - 1);
      digit[i] = 0;
    }
  }
  return out;
}

std::vector<int> axes_of(const JointPmf& p, const VarSet& set) {
  check_unique(set);
  std::vector<int> axes;
  for (const auto& name : set) {
    int a = p.axis(name);
    if (a < 0) throw std::invalid_argument("unknown variable '" + name + "'");
    axes.push_back(a);
  }
  return axes;
}

JointPmf marginal(const JointPmf& p, const VarSet& keep) {
  auto axes = axes_of(p, keep);
  std::vector<VarDecl> vars;
  for (int a : axes) vars.push_back(p.vars()[a]);
  std::vector<double> out(alphabet_product(vars), 0.0);
  auto map = projection_map(p.vars(), axes);
  for (std::size_t i = 0; i < p.size(); ++i) out[map[i]] += p[i];
  double s = std::accumulate(out.begin(), out.end(), 0.0);
  if (s > 0)
    for (double& x : out) x /= s;
  return JointPmf(std::move(vars), std::move(out));
}

ConditionalKernel conditional(const JointPmf& p, const VarSet& to, const VarSet& given) {
  check_disjoint(to, given, "conditional");
  if (to.empty()) throw std::invalid_argument("conditional: empty target set");
  auto joint = marginal(p, concat(given, to));
  ConditionalKernel k;
  for (const auto& g : given) k.from.push_back(p.vars()[p.axis(g)]);
  for (const auto& t : to) k.to.push_back(p.vars()[p.axis(t)]);
  const std::size_t R = k.rows(), C = k.cols();
  k.table.assign(R * C, 0.0);
  k.defined.assign(R, 0);
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) s += joint[r * C + c];
    if (s <= 0) continue;
    k.defined[r] = 1;
    for (std::size_t c = 0; c < C; ++c) k.table[r * C + c] = joint[r * C + c] / s;
  }
  return k;
}

double entropy_of(const std::vector<double>& probs) {
  double h = 0;
  for (double x : probs)
    if (x > 0) h -= x * std::log2(x);
  return h;
}

double entropy(const JointPmf& p, const VarSet& of, const VarSet& given) {
  if (of.empty()) throw std::invalid_argument("entropy: empty variable set");
  check_disjoint(of, given, "entropy");
  double hj = entropy_of(marginal(p, concat(of, given)).probs());
  double hg = given.empty() ? 0.0 : entropy_of(marginal(p, given).probs());
  return std::max(0.0, hj - hg);
}

double mutual_info(const JointPmf& p, const VarSet& a, const VarSet& b, const VarSet& given) {
  check_disjoint(a, b, "mutual_info");
  check_disjoint(a, given, "mutual_info");
  check_disjoint(b, given, "mutual_info");
  if (a.empty() || b.empty()) return 0.0;
  auto h = [&](const VarSet& s) { return s.empty() ? 0.0 : entropy_of(marginal(p, s).probs()); };
  double v = h(concat(a, given)) + h(concat(b, given)) - h(concat(concat(a, b), given)) - h(given);
  return v < 0 ? 0.0 : v;
}

double total_variation(const JointPmf& p, const JointPmf& q) {
  if (p.vars() != q.vars()) throw std::invalid_argument("total_variation: mismatched alphabets");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

std::string copy_name(const std::string& base, int i) { return base + "@" + std::to_string(i); }

JointPmf iid_extend(const JointPmf& p, int n, std::size_t cap) {
  if (n < 1) throw std::invalid_argument("iid_extend: n must be positive");
  double total = std::pow(static_cast<double>(p.size()), n);
  if (total > static_cast<double>(cap))
    throw CapExceeded("iid_extend: " + std::to_string(total) + " entries exceed cap");
  std::vector<VarDecl> vars;
  for (int i = 1; i <= n; ++i)
    for (const auto& v : p.vars()) vars.push_back({copy_name(v.name, i), v.size});
  std::vector<double> cur = p.probs();
  for (int i = 2; i <= n; ++i) {
    std::vector<double> next(cur.size() * p.size());
    for (std::size_t a = 0; a < cur.size(); ++a)
      for (std::size_t b = 0; b < p.size(); ++b) next[a * p.size() + b] = cur[a] * p[b];
    cur.swap(next);
  }
  return JointPmf(std::move(vars), std::move(cur), 1e-9 * n);
}

bool is_markov(const JointPmf& p, const VarSet& a, const VarSet& b, const VarSet& c, double tol) {
  return mutual_info(p, a, c, b) <= tol;
}

CommonPartLabeling common_part(const JointPmf& p) {
  if (p.vars().size() != 2) throw std::invalid_argument("common_part: need exactly two variables");
  const int n1 = p.vars()[0].size, n2 = p.vars()[1].size;
  std::vector<int> parent(n1 + n2);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int a = 0; a < n1; ++a)
    for (int b = 0; b < n2; ++b)
      if (p[static_cast<std::size_t>(a) * n2 + b] > kSupportEps) parent[find(a)] = find(n1 + b);
  // Symbols outside the support carry no constraint; they share label 0.
  std::vector<char> touched(n1 + n2, 0);
  for (int a = 0; a < n1; ++a)
    for (int b = 0; b < n2; ++b)
      if (p[static_cast<std::size_t>(a) * n2 + b] > kSupportEps) touched[a] = touched[n1 + b] = 1;
  std::vector<int> label(n1 + n2, -1);
  CommonPartLabeling out;
  for (int v = 0; v < n1 + n2; ++v) {
    if (!touched[v]) continue;
    int r = find(v);
    if (label[r] < 0) label[r] = out.count++;
  }
  auto lab = [&](int v) { return touched[v] ? label[find(v)] : 0; };
  for (int a = 0; a < n1; ++a) out.labels1.push_back(lab(a));
  for (int b = 0; b < n2; ++b) out.labels2.push_back(lab(n1 + b));
  return out;
}

JointPmf extend(const JointPmf& p, const ConditionalKernel& k) {
  k.validate();
  std::vector<int> axes;
  for (const auto& f : k.from) {
    int a = p.axis(f.name);
    if (a < 0) throw std::invalid_argument("kernel conditions on unknown variable '" + f.name + "'");
    if (p.vars()[a].size != f.size)
      throw std::invalid_argument("kernel shape mismatch on variable '" + f.name + "'");
    axes.push_back(a);
  }
  for (const auto& t : k.to)
    if (p.has(t.name)) throw std::invalid_argument("kernel output '" + t.name + "' already present");
  auto map = projection_map(p.vars(), axes);
  const std::size_t C = k.cols();
  std::vector<VarDecl> vars = p.vars();
  vars.insert(vars.end(), k.to.begin(), k.to.end());
  std::vector<double> out(p.size() * C, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0) continue;
    std::size_t r = map[i];
    if (!k.row_defined(r)) throw std::invalid_argument("kernel row undefined on positive-mass event");
    for (std::size_t c = 0; c < C; ++c) out[i * C + c] = p[i] * k.table[r * C + c];
  }
  return JointPmf(std::move(vars), std::move(out), 1e-8);
}

}  // namespace coordsim
