// Small grammar for information quantities over a JointPmf:
//   H(A,B|C)   I(A;B|C)   sums like I(U1;X1|Z) - I(U1;U2|Z) + 2*H(X1)
// and the bare forms "A,B;C|D" (mutual information) or "A,B|C" (entropy).
#pragma once

#include <string>

#include "coordsim/prob.hpp"

namespace coordsim {

struct InfoTerm {
  double coeff = 1;
  bool mutual = false;
  VarSet a, b, given;  // b is empty for entropies
};

std::vector<InfoTerm> parse_info_expr(const std::string& text);
double eval_info_expr(const JointPmf& p, const std::string& text);

}  // namespace coordsim
