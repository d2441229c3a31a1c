// Auxiliary decompositions p(t) p(u0|.) p(u1|.) p(u2|.) p(y|u1,u2,z,t) and
// their composition with a source distribution.
#pragma once

#include <functional>
#include <optional>

#include "coordsim/prob.hpp"

namespace coordsim {

// Canonical variable order of a composed joint.
inline const VarSet kCanonicalVars = {"X1", "X2", "Z", "T", "U0", "U1", "U2", "Y"};

struct AuxDecomposition {
  std::vector<double> tPmf{1.0};
  std::optional<ConditionalKernel> u0Kernel;      // from (X0,T) or (T) to U0
  std::optional<ConditionalKernel> u1Kernel;      // from (X1[,U0],T) to U1
  std::optional<ConditionalKernel> u2Kernel;      // from (X2[,U0],T) to U2
  std::optional<ConditionalKernel> uJointKernel;  // from (X1,X2[,U0],T) to (U1,U2)
  ConditionalKernel yKernel;                      // from (U1,U2,Z,T) to Y

  int size_t_() const { return static_cast<int>(tPmf.size()); }
  int size_u0() const;
  int size_u1() const;
  int size_u2() const;
  bool u0_depends_on_x0() const;
};

// Brings a target over X1, X2 and optionally Z, Y into the order (X1,X2,Z,Y),
// inserting singleton axes for absent Z or Y.
JointPmf canonical_target(const JointPmf& q);

// X0 labels for X1 and X2 symbols from the common part of q's (X1,X2) marginal.
CommonPartLabeling source_common_part(const JointPmf& q);

// Joint over kCanonicalVars. Absent T/U0 become singleton axes. With
// keepX0 the common-part label X0 is appended as a last axis.
JointPmf compose(const JointPmf& q, const AuxDecomposition& dec, bool keepX0 = false);

// Builds a fully defined kernel by evaluating `row` at every configuration of
// `from`; `row` returns a pmf over the configurations of `to`.
ConditionalKernel kernel_from_fn(std::vector<VarDecl> from, std::vector<VarDecl> to,
                                 const std::function<std::vector<double>(const std::vector<int>&)>& row);

// Deterministic kernel: every row is a point mass on `f(from)`.
ConditionalKernel deterministic_kernel(std::vector<VarDecl> from, std::vector<VarDecl> to,
                                       const std::function<int(const std::vector<int>&)>& f);

}  // namespace coordsim
