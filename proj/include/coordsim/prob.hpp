// Finite-alphabet joint distributions and the information measures used by
// every other part of the toolkit. Logarithms are base 2.
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace coordsim {

struct VarDecl {
  std::string name;
  int size = 1;
  bool operator==(const VarDecl&) const = default;
};

using VarSet = std::vector<std::string>;

// Thrown when a dense tensor would exceed the configured entry cap.
struct CapExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultMemoryCap = std::size_t{1} << 26;
inline constexpr double kSumTol = 1e-9;
inline constexpr double kSupportEps = 1e-12;

std::size_t alphabet_product(const std::vector<VarDecl>& vars);

class JointPmf {
 public:
  JointPmf() = default;
  // Validates sizes, nonnegativity and normalization within `tol`.
  JointPmf(std::vector<VarDecl> vars, std::vector<double> probs, double tol = kSumTol);

  static JointPmf uniform(std::vector<VarDecl> vars);
  static JointPmf point_mass(std::vector<VarDecl> vars, const std::vector<int>& at);

  const std::vector<VarDecl>& vars() const { return vars_; }
  const std::vector<double>& probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

  int axis(const std::string& name) const;  // -1 when absent
  bool has(const std::string& name) const { return axis(name) >= 0; }
  int size_of(const std::string& name) const;
  VarSet names() const;
  std::vector<std::size_t> strides() const;
  std::size_t flat_index(const std::vector<int>& idx) const;
  std::vector<int> unflatten(std::size_t flat) const;
  double at(const std::vector<int>& idx) const { return probs_[flat_index(idx)]; }

 private:
  std::vector<VarDecl> vars_;
  std::vector<double> probs_;
};

// p(to | from). Rows whose conditioning event has zero probability are
// kept as explicit undefined markers instead of invented pmfs.
struct ConditionalKernel {
  std::vector<VarDecl> from;
  std::vector<VarDecl> to;
  std::vector<double> table;  // rows() x cols(), row-major
  std::vector<char> defined;  // one flag per row

  ConditionalKernel() = default;
  // Fully defined kernel; every row must sum to one.
  ConditionalKernel(std::vector<VarDecl> from, std::vector<VarDecl> to, std::vector<double> table,
                    double tol = kSumTol);

  std::size_t rows() const;
  std::size_t cols() const;
  double operator()(std::size_t row, std::size_t col) const { return table[row * cols() + col]; }
  bool row_defined(std::size_t row) const { return defined[row] != 0; }
  bool all_defined() const;
  void validate(double tol = kSumTol) const;
};

struct CommonPartLabeling {
  std::vector<int> labels1;
  std::vector<int> labels2;
  int count = 0;
};

// Maps every flat index of a tensor over `vars` to the flat index of its
// projection on `axes` (in the listed order).
std::vector<std::uint32_t> projection_map(const std::vector<VarDecl>& vars,
                                          const std::vector<int>& axes);

std::vector<int> axes_of(const JointPmf& p, const VarSet& set);

JointPmf marginal(const JointPmf& p, const VarSet& keep);
ConditionalKernel conditional(const JointPmf& p, const VarSet& to, const VarSet& given);
double entropy(const JointPmf& p, const VarSet& of, const VarSet& given = {});
double mutual_info(const JointPmf& p, const VarSet& a, const VarSet& b, const VarSet& given = {});
double total_variation(const JointPmf& p, const JointPmf& q);
JointPmf iid_extend(const JointPmf& p, int n, std::size_t cap = kDefaultMemoryCap);
bool is_markov(const JointPmf& p, const VarSet& a, const VarSet& b, const VarSet& c, double tol);
CommonPartLabeling common_part(const JointPmf& p);

// Appends the `to` variables of `k` to `p`: result(v, w) = p(v) k(w | from(v)).
// Throws when a row with positive conditioning mass is undefined.
JointPmf extend(const JointPmf& p, const ConditionalKernel& k);

// Entropy in bits of a raw probability vector.
double entropy_of(const std::vector<double>& probs);

// Name of the i-th copy (1-based) of a variable in an i.i.d. extension.
std::string copy_name(const std::string& base, int i);

}  // namespace coordsim
