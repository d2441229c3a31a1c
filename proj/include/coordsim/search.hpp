// Multi-start search for decompositions certifying region membership, and
// weighted boundary tracing.
#pragma once

#include <cstdint>
#include <optional>

#include "coordsim/region.hpp"

namespace coordsim {

struct SearchBudget {
  AuxSizes sizes{0, 0, 0, 0};  // zero entries take default_sizes()
  std::size_t restarts = 64;
  int iterations = 200;  // gradient steps per restart
  std::uint64_t seed = 0;
  double tol = 1e-6;  // correctness, Markov and bound tolerance of a certificate
  int threads = 1;

  void validate() const;
};

// Seed of restart `index` derived from the master seed.
std::uint64_t restart_seed(std::uint64_t master, std::uint64_t index);

struct Certificate {
  AuxDecomposition dec;
  RegionEval eval;
  std::uint64_t restart = 0;
};

struct MembershipResult {
  bool found = false;
  std::optional<Certificate> certificate;
  // Smallest max(bound violation, correctness error, Markov error) seen; a
  // not-found verdict never claims non-membership.
  double bestMargin = kInf;
  std::size_t restartsRun = 0;
};

MembershipResult region_membership(const JointPmf& q, const RatePoint& point, Theorem t, const SearchBudget& budget);

using RateWeights = std::array<double, kNumRates>;

struct TraceResult {
  RateWeights weights{};
  double value = kInf;  // weights . point; coordinates with zero weight are left unlimited
  RatePoint point;
  std::optional<Certificate> certificate;
};

std::vector<TraceResult> trace_boundary(const JointPmf& q, Theorem t, const std::vector<RateWeights>& weights,
                                        const SearchBudget& budget);

// min w . R subject to the bound rows and R >= 0, with zero-weight
// coordinates set to +inf (their rows dropped). Returns the minimizer.
RatePoint weighted_min_point(const std::vector<BoundValue>& bounds, const RateWeights& w, Theorem t);

// Runs `work(i)` for i in [0, count) on up to `threads` workers.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& work);

}  // namespace coordsim
