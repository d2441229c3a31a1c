#include "coordsim/compose.hpp"

#include <algorithm>

namespace coordsim {

namespace {

int to_size(const std::optional<ConditionalKernel>& k, const std::string& name) {
  if (!k) return 1;
  for (const auto& v : k->to)
    if (v.name == name) return v.size;
  return 1;
}

bool conditions_on(const ConditionalKernel& k, const std::string& name) {
  return std::any_of(k.from.begin(), k.from.end(), [&](const VarDecl& v) { return v.name == name; });
}

}  // namespace

int AuxDecomposition::size_u0() const { return to_size(u0Kernel, "U0"); }
int AuxDecomposition::size_u1() const {
  return uJointKernel ? to_size(uJointKernel, "U1") : to_size(u1Kernel, "U1");
}
int AuxDecomposition::size_u2() const {
  return uJointKernel ? to_size(uJointKernel, "U2") : to_size(u2Kernel, "U2");
}
bool AuxDecomposition::u0_depends_on_x0() const { return u0Kernel && conditions_on(*u0Kernel, "X0"); }

JointPmf canonical_target(const JointPmf& q) {
  if (!q.has("X1") || !q.has("X2")) throw std::invalid_argument("target must contain X1 and X2");
  for (const auto& v : q.vars())
    if (v.name != "X1" && v.name != "X2" && v.name != "Z" && v.name != "Y")
      throw std::invalid_argument("unexpected target variable '" + v.name + "'");
  std::vector<VarDecl> vars;
  for (const char* n : {"X1", "X2", "Z", "Y"})
    vars.push_back({n, q.has(n) ? q.size_of(n) : 1});
  std::vector<int> axes;
  for (const char* n : {"X1", "X2", "Z", "Y"}) axes.push_back(q.axis(n));
  std::vector<double> out(alphabet_product(vars), 0.0);
  std::vector<std::size_t> strides(4, 1);
  for (int j = 2; j >= 0; --j) strides[j] = strides[j + 1] * vars[j + 1].size;
  for (std::size_t i = 0; i < q.size(); ++i) {
    auto idx = q.unflatten(i);
    std::size_t f = 0;
    for (int j = 0; j < 4; ++j)
      if (axes[j] >= 0) f += strides[j] * idx[axes[j]];
    out[f] += q[i];
  }
  return JointPmf(std::move(vars), std::move(out));
}

CommonPartLabeling source_common_part(const JointPmf& q) {
  return common_part(marginal(q, {"X1", "X2"}));
}

JointPmf compose(const JointPmf& q, const AuxDecomposition& dec, bool keepX0) {
  JointPmf base = marginal(canonical_target(q), {"X1", "X2", "Z"});
  if (dec.tPmf.empty()) throw std::invalid_argument("compose: empty T distribution");
  JointPmf cur = extend(base, ConditionalKernel({}, {{"T", dec.size_t_()}}, dec.tPmf));
  const bool needX0 = dec.u0_depends_on_x0();
  if (needX0 || keepX0) {
    auto cp = source_common_part(q);
    int x0size = cp.count;
    if (needX0)
      for (const auto& v : dec.u0Kernel->from)
        if (v.name == "X0") x0size = v.size;
    if (x0size != cp.count)
      throw std::invalid_argument("compose: X0 alphabet does not match the common part of the sources");
    auto labels = cp.labels1;
    cur = extend(cur, deterministic_kernel({{"X1", base.size_of("X1")}}, {{"X0", cp.count}},
                                           [&](const std::vector<int>& i) { return labels[i[0]]; }));
  }
  if (dec.u0Kernel)
    cur = extend(cur, *dec.u0Kernel);
  else
    cur = extend(cur, ConditionalKernel({}, {{"U0", 1}}, {1.0}));
  if (dec.uJointKernel) {
    if (dec.u1Kernel || dec.u2Kernel)
      throw std::invalid_argument("compose: joint and separate U kernels are exclusive");
    cur = extend(cur, *dec.uJointKernel);
  } else {
    cur = extend(cur, dec.u1Kernel ? *dec.u1Kernel : ConditionalKernel({}, {{"U1", 1}}, {1.0}));
    cur = extend(cur, dec.u2Kernel ? *dec.u2Kernel : ConditionalKernel({}, {{"U2", 1}}, {1.0}));
  }
  cur = extend(cur, dec.yKernel);
  if (keepX0) {
    VarSet keep = kCanonicalVars;
    keep.push_back("X0");
    return marginal(cur, keep);
  }
  return marginal(cur, kCanonicalVars);
}

ConditionalKernel kernel_from_fn(std::vector<VarDecl> from, std::vector<VarDecl> to,
                                 const std::function<std::vector<double>(const std::vector<int>&)>& row) {
  const std::size_t R = alphabet_product(from), C = alphabet_product(to);
  std::vector<double> table;
  table.reserve(R * C);
  std::vector<int> idx(from.size(), 0);
  for (std::size_t r = 0; r < R; ++r) {
    auto p = row(idx);
    if (p.size() != C) throw std::invalid_argument("kernel_from_fn: row has wrong length");
    table.insert(table.end(), p.begin(), p.end());
    for (int i = static_cast<int>(from.size()) - 1; i >= 0; --i) {
      if (++idx[i] < from[i].size) break;
      idx[i] = 0;
    }
  }
  return ConditionalKernel(std::move(from), std::move(to), std::move(table));
}

ConditionalKernel deterministic_kernel(std::vector<VarDecl> from, std::vector<VarDecl> to,
                                       const std::function<int(const std::vector<int>&)>& f) {
  const std::size_t C = alphabet_product(to);
  return kernel_from_fn(std::move(from), std::move(to), [&](const std::vector<int>& i) {
    std::vector<double> row(C, 0.0);
    int k = f(i);
    if (k < 0 || static_cast<std::size_t>(k) >= C) throw std::out_of_range("deterministic_kernel: output out of range");
    row[k] = 1.0;
    return row;
  });
}

}  // namespace coordsim
