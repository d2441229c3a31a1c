// Finite-blocklength simulation of the random-binning protocol: three bin
// maps per encoder, MAP Slepian-Wolf decoding, output synthesis, and the
// soft-covering synthesizer used for encoder shared randomness.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coordsim/compose.hpp"

namespace coordsim {

// (R1, R2, R01, R02, Rt1, Rt2): message, pairwise shared randomness and
// extra decoder randomness rates of the two encoders.
using ProtocolRates = std::array<double, 6>;
enum ProtocolRateIndex { kPR1 = 0, kPR2, kPR01, kPR02, kPRt1, kPRt2 };

// Roles of an encoder's three bin maps.
enum BinRole { kBinShared = 0, kBinMessage = 1, kBinExtra = 2 };

inline constexpr std::size_t kTableCap = std::size_t{1} << 22;     // sequences per encoder kept in tables
inline constexpr double kExactWorkCap = 1073741824.0;              // 2^30 weighted operations

// Bins = max(1, round(2^(n * rate))).
std::uint64_t bin_count(int n, double rate);

struct EncoderBinning {
  int alphabet = 1;            // |U_j|
  std::uint64_t sequences = 1;  // |U_j|^n
  std::array<std::uint64_t, 3> bins{1, 1, 1};
  std::array<std::uint64_t, 3> salts{};
  // Tables of the three maps when sequences <= kTableCap, otherwise empty.
  std::array<std::vector<std::uint32_t>, 3> tables;
  // (key, sequence) pairs sorted by key = (s * F + f) * M + m; tabled mode only.
  std::vector<std::pair<std::uint64_t, std::uint32_t>> buckets;

  std::uint64_t bin(int role, std::uint64_t seq) const;
  std::uint64_t key(std::uint64_t s, std::uint64_t f, std::uint64_t m) const {
    return (s * bins[kBinExtra] + f) * bins[kBinMessage] + m;
  }
  bool tabled() const { return !buckets.empty(); }
};

struct BinningScheme {
  int n = 1;
  AuxDecomposition dec;
  ProtocolRates rates{};
  std::uint64_t seed = 0;
  std::array<EncoderBinning, 2> enc;
  // Largest relative deviation of a bin load from its mean over the maps
  // with fewer bins than sequences; NaN in lazy (untabled) mode.
  double loadDeviation = 0;

  // log2(bins) / n in the order of ProtocolRates.
  ProtocolRates realized_rates() const;
};

// Needs a decomposition with separate U1, U2 kernels, |T| = 1 and no U0.
BinningScheme build_binning(const AuxDecomposition& dec, int n, const ProtocolRates& rates, std::uint64_t seed);

struct SwResult {
  std::uint64_t u1 = 0, u2 = 0;
  bool consistent = true;  // false when no pair matches the bin indices
};

// MAP estimate of (u1^n, u2^n) among bin-consistent pairs under the
// single-letter law of compose(q, dec); lexicographic tie-break.
SwResult sw_decode(const JointPmf& q, const BinningScheme& scheme, std::uint64_t s1, std::uint64_t f1, std::uint64_t m1,
                   std::uint64_t s2, std::uint64_t f2, std::uint64_t m2, const std::vector<int>& zn);

struct InducedLaw {
  JointPmf pmf;           // over X1@i, X2@i, Z@i, Y@i letter by letter, like iid_extend
  double swError = 0;     // P(decoded pair != encoded pair)
  bool encoderFallback = false;  // some (s, f, x^n) had no consistent sequence
};

// Induced law of the random-coding protocol at fixed extra randomness.
InducedLaw exact_induced_law(const JointPmf& q, const BinningScheme& scheme, std::uint64_t f1, std::uint64_t f2,
                             double workCap = kExactWorkCap);
JointPmf exact_induced(const JointPmf& q, const BinningScheme& scheme, std::uint64_t f1, std::uint64_t f2);

struct SimReport {
  int n = 1;
  std::optional<double> tvExact;
  std::optional<double> tvEstimate;  // single-letter empirical proxy (mc mode)
  double tvStdErr = 0;
  std::optional<double> tvAverage;  // mean exact TV over the candidate (f1, f2)
  double swErrorRate = 0;
  double swStdErr = 0;
  std::uint64_t trials = 0;
  std::uint64_t seed = 0;
  std::pair<std::uint64_t, std::uint64_t> fixedF{0, 0};
  ProtocolRates realizedRates{};
};

// Exact mode: all (f1, f2) when at most 2^12 pairs, else 64 sampled pairs;
// keeps the pair with the smallest TV to the iid target.
SimReport exact_report(const JointPmf& q, const BinningScheme& scheme, std::uint64_t seed);

// Monte-Carlo runs of the protocol at the given fixed extra randomness.
SimReport mc_simulate(const JointPmf& q, const BinningScheme& scheme, std::uint64_t trials, std::uint64_t seed,
                      std::pair<std::uint64_t, std::uint64_t> fStar = {0, 0}, int threads = 1);

enum class SimMode { Exact, MonteCarlo };

std::vector<SimReport> protocol_curve(const JointPmf& q, const AuxDecomposition& dec, const ProtocolRates& rates,
                                      const std::vector<int>& nList, SimMode mode, std::uint64_t seed,
                                      std::uint64_t trials = 10000, int threads = 1);

struct SoftCoveringConfig {
  std::vector<double> basePmf;       // p(x0)
  ConditionalKernel channel;         // X0 -> U0
  double rate = 0;                   // R00
  std::vector<int> nList{1};
  std::uint64_t trials = 200;        // codebooks drawn when the exact average is too large
  std::uint64_t seed = 0;
};

struct SoftCoveringPoint {
  int n = 1;
  std::uint64_t codewords = 1;
  double tv = 0;
  double stdErr = 0;
  bool exact = true;
};

// Codebook of 2^(n R00) words drawn from p(u0^n | x0^n) for every x0^n; TV
// between the induced (X0^n, U0^n) law and the iid target, averaged over
// codebooks (exactly via binomial counts when small enough).
std::vector<SoftCoveringPoint> soft_covering_sim(const SoftCoveringConfig& cfg);

// Best single-sequence TV 1 - max p(x0^n, u0^n) summed over x0^n: the gap a
// one-codeword synthesizer cannot close.
double single_codeword_gap(const SoftCoveringConfig& cfg, int n);

}  // namespace coordsim
