// The worked example (X1, X2 pairs of fair bits, Y = (X1J, X2J) for a fair
// index J) and the derivation checks built on it.
#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coordsim/compose.hpp"
#include "coordsim/linineq.hpp"
#include "json.hpp"

namespace coordsim {

// Bit k (0 = first component) of a 2-bit symbol x = 2*x_1 + x_2.
inline int bit_of(int x, int k) { return k == 0 ? (x >> 1) : (x & 1); }

// Y symbol 2*a + b for (a, b) = (X1J, X2J).
inline int example1_y(int x1, int x2, int j) { return 2 * bit_of(x1, j) + bit_of(x2, j); }

JointPmf example1_distribution();

// U1 = X1, U2 = (J, X2J); mirrored swaps the roles of the encoders.
AuxDecomposition example1_corner_dec(bool mirrored = false);
// U1 = (X1J, J), U2 = (X2J, J) with J shared through a joint kernel.
AuxDecomposition example1_remark3_dec();
// U0 = J drawn from the (constant) common part, U1 = X1J, U2 = X2J.
AuxDecomposition example1_encsr_dec();
// Sources (X1, W) and (X2, W) with a common fair bit W (symbol 2*x + w) and
// Y = (X1W, X2W); summing out W gives example1_distribution().
JointPmf example1_augmented_distribution();
// U1 = X1W, U2 = X2W on the augmented sources.
AuxDecomposition example1_augmented_dec();

// One checked value. `source` says where the expected value comes from:
// "stated" (displayed in the worked example or its appendices),
// "construction" (true by how the instance is built) or "computed" (an
// independent computation in this code base).
struct ReportEntry {
  std::string name;
  double computed = 0;
  double expected = 0;
  double tol = 1e-9;
  std::string source;
  bool pass = false;
};

struct ExampleReport {
  std::string name;
  std::vector<ReportEntry> entries;

  // Records |computed - expected| <= tol.
  void check(const std::string& what, double computed, double expected, const std::string& source, double tol = 1e-9);
  // Records a yes/no outcome as 1/0 against the expected outcome.
  void check_flag(const std::string& what, bool computed, bool expected, const std::string& source);
  bool pass() const;
  nlohmann::json to_json() const;
};

// Exact-region bounds at the corner decomposition and its mirror, and the
// polytope {R1 >= 1, R2 >= 1, R1 + R2 >= 3}. With searchRestarts > 0 the
// point (1,1) is also searched for (and must stay uncertified).
ExampleReport verify_prop1_corners(std::size_t searchRestarts = 0, std::uint64_t seed = 0);
// Outer-bound values at the shared-index decomposition: (1, 1, 2).
ExampleReport remark3_eval();
// Encoder-randomness point U0 = J, U1 = X1J, U2 = X2J, and the augmented-source variant.
ExampleReport enc_sr_point();

// Claim 1: with separate kernels and H(X1|U1), H(X2|U2) > 0, one fixed
// component index k is revealed by every u1 and every u2.
// Claim 2: with p(u|x1) p(y|u,x2), every u leaving X1 uncertain reveals
// one component of X1.
enum class Claim { Claim1, Claim2 };
std::string claim_name(Claim c);
Claim parse_claim(const std::string& s);

// Decompositions of example1_distribution() in the claim's form. For
// Claim 2 the kernel p(u|x1) sits in u1Kernel, U2 = X2 and yKernel reads (U1, U2).
// Returns a violation witness, or nothing when the claimed structure holds
// (or its hypotheses fail). Entropies at most `tol` count as zero.
std::optional<std::string> claim_violation(Claim c, const AuxDecomposition& dec, double tol = 1e-6);

struct ClaimSearchResult {
  std::size_t drawn = 0;
  std::size_t feasible = 0;      // correctness within tolerance
  std::size_t hypothesisMet = 0;  // feasible and the claim's hypotheses hold
  std::optional<AuxDecomposition> counterexample;
  std::string witness;
};

// Draws candidate decompositions until `budget` are feasible (correctness
// error <= correctnessTol) or 4 * budget + 100 have been drawn, and checks
// the claim on each feasible one. Half the draws are exactly correct random
// constructions, half are random kernels with the output kernel fitted by
// posterior averaging.
ClaimSearchResult claim_search(Claim c, std::size_t budget, std::uint64_t seed, double correctnessTol = 1e-6);

// Split-rate inner-bound system: the eight inner-bound rows over R1, R2,
// R01, R02 plus R0 with R0 = R01 + R02. Atoms are the bound expressions.
IneqSystem split_rate_system();
// The six-row region over (R0, R1, R2) obtained after eliminating R01, R02.
IneqSystem split_rate_region();
// Random-binning rate system over R1, R2, R01, R02, Rt1, Rt2 (upper bounds
// for independence of the bin indices, Slepian-Wolf lower bounds, and the
// extra-randomness independence bounds). No nonnegativity rows.
IneqSystem binning_rate_system();
// The eight constraints left after eliminating Rt1, Rt2, plus R >= 0 for
// R1, R2, R01, R02.
IneqSystem binning_reduced_system();
// Eliminates Rt1, Rt2 from binning_rate_system(). Nonnegativity rows for
// R1, R2, R01, R02 are always added; those of Rt1, Rt2 only when asked.
IneqSystem binning_elimination(bool extraNonnegativity);

// Atom values of `sys` from a composed joint: each atom description is an
// information expression.
std::map<std::string, double> atom_values(const IneqSystem& sys, const JointPmf& composed);

// Composed joint of a random inner-bound decomposition on a random target
// over X1 (3), X2 (2), Z (2), Y (2); used to value entropy atoms.
JointPmf random_valuation_joint(std::mt19937_64& rng);

// Elimination of R01, R02 from split_rate_system() with and without
// nonnegativity, against split_rate_region().
ExampleReport appendixA_region(std::size_t valuations = 20, std::size_t samples = 10000, std::uint64_t seed = 0);
// Elimination of Rt1, Rt2 from binning_rate_system() against binning_reduced_system().
ExampleReport binning_fme_check(std::size_t valuations = 20, std::size_t samples = 10000, std::uint64_t seed = 0);

// Identities that make the shared-randomness bounds redundant when Y is a
// function of (X1, X2, Z); the conditionally independent ones are added
// when I(X1;X2|Z) <= 1e-9. Throws std::invalid_argument if H(Y|X1,X2,Z) >
// 1e-9 in compose(q, dec) unless requireDeterministic is false.
ExampleReport det_fn_redundancy_check(const JointPmf& q, const AuxDecomposition& dec,
                                      bool requireDeterministic = true);

// Random target and decomposition with U_j = (f_j(X_j), noise) and Y =
// g(f_1, f_2, Z); q is the induced law. With randomizedY the output kernel
// has random rows instead. With ci, X1 and X2 are independent given Z.
std::pair<JointPmf, AuxDecomposition> random_deterministic_instance(std::mt19937_64& rng, bool ci,
                                                                    bool randomizedY = false);

// The XOR target with U = X, `instances` random instances of each kind
// (general and conditionally independent sources), and the randomized-Y
// control, which must fail.
ExampleReport detfn_suite(std::size_t instances = 100, std::uint64_t seed = 0);
// Both claim searches at `budget` feasible draws (no counterexample
// expected), then at correctness tolerance 0.3 (a counterexample expected).
ExampleReport claims_report(std::size_t budget, std::uint64_t seed);

}  // namespace coordsim
