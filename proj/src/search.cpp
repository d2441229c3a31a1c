#include "coordsim/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "coordsim/info_expr.hpp"

namespace coordsim {

void SearchBudget::validate() const {
  if (restarts == 0) throw std::invalid_argument("search budget needs at least one restart");
  if (iterations < 0) throw std::invalid_argument("search budget iterations must be nonnegative");
  if (!(tol > 0)) throw std::invalid_argument("search tolerance must be positive");
  if (threads < 1) throw std::invalid_argument("search needs at least one thread");
  if (sizes.u1 < 0 || sizes.u2 < 0 || sizes.u0 < 0 || sizes.t < 0)
    throw std::invalid_argument("auxiliary sizes must be nonnegative");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t restart_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ (index * 0xd1b54a32d192ed03ULL + 1));
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& work) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failureMutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          work(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failureMutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

// Variable bits in canonical order; X0 sits last.
enum : unsigned { bX1 = 1, bX2 = 2, bZ = 4, bT = 8, bU0 = 16, bU1 = 32, bU2 = 64, bY = 128, bX0 = 256 };
constexpr int kNumBits = 9;

unsigned bit_of_name(const std::string& n) {
  static const std::map<std::string, unsigned> m = {{"X1", bX1}, {"X2", bX2}, {"Z", bZ},   {"T", bT},  {"U0", bU0},
                                                    {"U1", bU1}, {"U2", bU2}, {"Y", bY}, {"X0", bX0}};
  auto it = m.find(n);
  if (it == m.end()) throw std::invalid_argument("unknown variable '" + n + "' in bound expression");
  return it->second;
}

unsigned mask_of(const VarSet& vs) {
  unsigned m = 0;
  for (const auto& v : vs) m |= bit_of_name(v);
  return m;
}

// A linear combination of joint entropies H(mask).
using HCombo = std::map<unsigned, double>;

HCombo expand(const std::string& expr) {
  HCombo out;
  auto add = [&](unsigned m, double c) {
    if (m) out[m] += c;
  };
  for (const auto& t : parse_info_expr(expr)) {
    unsigned a = mask_of(t.a), b = mask_of(t.b), g = mask_of(t.given);
    if (t.mutual) {
      add(a | g, t.coeff);
      add(b | g, t.coeff);
      add(a | b | g, -t.coeff);
      add(g, -t.coeff);
    } else {
      add(a | g, t.coeff);
      add(g, -t.coeff);
    }
  }
  return out;
}

// A simplex-row parameter block.
struct Block {
  int rows = 0, cols = 0;
  std::vector<double> a;  // row-stochastic values
  bool operator==(const Block&) const = default;
  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }
  void init(int r, int c) {
    rows = r;
    cols = c;
    a.assign(static_cast<std::size_t>(r) * c, 1.0 / c);
  }
};

enum BlockId { kPT = 0, kA0, kA1, kA2, kA12, kK, kNumBlocks };
enum SourceId { kS0 = 0, kS1, kS2, kSU, kSC, kSF, kNumSources };

struct Params {
  std::array<Block, kNumBlocks> b;
};

struct Grads {
  std::array<std::vector<double>, kNumBlocks> g;
};

struct MaskTerm {
  unsigned mask = 0;
  int source = 0;
  std::size_t margSize = 0;
  std::vector<std::uint32_t> map;  // source index -> marginal index
};

struct ActiveBound {
  std::string name;
  RateCoeffs coeff{};
  std::vector<std::vector<std::pair<int, double>>> alternatives;  // (mask-term index, coefficient)
};

// Everything shared by the restarts of one search: dimensions, the target on
// its support, entropy-term plan and objective.
struct Model {
  Theorem theorem = Theorem::Thm1;
  JointPmf q;  // canonical target
  bool joint = false;
  int nX1 = 1, nX2 = 1, nZ = 1, nY = 1, nT = 1, nU0 = 1, nU1 = 1, nU2 = 1, nX0 = 1;
  // Support of q(x1,x2,z).
  int nS = 0;
  std::vector<int> sx1, sx2, sz, sx0;
  std::vector<double> sq, sqy;  // q(x1,x2,z) and q(y|x1,x2,z)
  std::vector<double> px0;

  std::vector<MaskTerm> terms;
  std::vector<ActiveBound> bounds;                           // all theorem rows (for reporting)
  std::vector<int> active;                                   // indices into bounds used by the objective
  std::vector<std::vector<std::pair<int, double>>> markov;  // penalized Markov MIs (joint kernels)
  std::array<bool, kNumSources> sourceUsed{};

  // Separate kernels with no entropy over (U1,U2) jointly: the output law can
  // be contracted one encoder at a time.
  bool factored() const { return !joint && !sourceUsed[kSU] && !sourceUsed[kSF]; }
  std::size_t b_size() const {
    return static_cast<std::size_t>(nT) * nU0 * nX2 * nZ * nU1 * nY;
  }
  std::size_t b_index(int t, int u0, int x2, int z, int u1) const {
    return ((((static_cast<std::size_t>(t) * nU0 + u0) * nX2 + x2) * nZ + z) * nU1 + u1) * nY;
  }

  // Objective.
  bool weighted = false;
  RatePoint point;
  RateWeights weights{};
  std::vector<std::vector<double>> dualVertices;  // over `active`
  double margin = 1e-3;

  std::size_t src_size(int s) const {
    const std::size_t u = static_cast<std::size_t>(nT) * nU0;
    switch (s) {
      case kS0: return static_cast<std::size_t>(nT) * nU0 * nX0;
      case kS1: return nS * u * nU1;
      case kS2: return nS * u * nU2;
      case kSU: return nS * u * nU1 * nU2;
      case kSC: return static_cast<std::size_t>(nS) * nT * nY;
      case kSF: return nS * u * nU1 * nU2 * nY;
    }
    return 0;
  }

  unsigned src_vars(int s) const {
    switch (s) {
      case kS0: return bT | bU0 | bX0;
      case kS1: return bX1 | bX2 | bZ | bT | bU0 | bU1;
      case kS2: return bX1 | bX2 | bZ | bT | bU0 | bU2;
      case kSU: return bX1 | bX2 | bZ | bT | bU0 | bU1 | bU2;
      case kSC: return bX1 | bX2 | bZ | bT | bY;
      case kSF: return bX1 | bX2 | bZ | bT | bU0 | bU1 | bU2 | bY;
    }
    return 0;
  }

  int var_size(int bitIndex) const {
    const int sizes[kNumBits] = {nX1, nX2, nZ, nT, nU0, nU1, nU2, nY, nX0};
    return sizes[bitIndex];
  }

  // Values of all nine variables at flat source index i.
  void decode(int s, std::size_t i, std::array<int, kNumBits>& v) const {
    v.fill(0);
    auto take = [&](int n) {
      int r = static_cast<int>(i % n);
      i /= n;
      return r;
    };
    int sup = 0;
    switch (s) {
      case kS0:
        v[8] = take(nX0);
        v[4] = take(nU0);
        v[3] = take(nT);
        return;
      case kS1:
        v[5] = take(nU1);
        break;
      case kS2:
        v[6] = take(nU2);
        break;
      case kSU:
        v[6] = take(nU2);
        v[5] = take(nU1);
        break;
      case kSC:
        v[7] = take(nY);
        v[3] = take(nT);
        sup = static_cast<int>(i);
        v[0] = sx1[sup];
        v[1] = sx2[sup];
        v[2] = sz[sup];
        v[8] = sx0[sup];
        return;
      case kSF:
        v[7] = take(nY);
        v[6] = take(nU2);
        v[5] = take(nU1);
        break;
    }
    v[4] = take(nU0);
    v[3] = take(nT);
    sup = static_cast<int>(i);
    v[0] = sx1[sup];
    v[1] = sx2[sup];
    v[2] = sz[sup];
    v[8] = sx0[sup];
  }

  int add_term(unsigned mask) {
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (terms[i].mask == mask) return static_cast<int>(i);
    int best = -1;
    for (int s = 0; s < kNumSources; ++s) {
      if ((src_vars(s) & mask) != mask) continue;
      if (best < 0 || src_size(s) < src_size(best)) best = s;
    }
    if (best < 0) throw std::logic_error("no source tensor covers an entropy term");
    MaskTerm t;
    t.mask = mask;
    t.source = best;
    std::size_t n = src_size(best);
    t.map.resize(n);
    std::array<int, kNumBits> v;
    t.margSize = 1;
    for (int b = 0; b < kNumBits; ++b)
      if (mask & (1u << b)) t.margSize *= var_size(b);
    for (std::size_t i = 0; i < n; ++i) {
      decode(best, i, v);
      std::size_t m = 0;
      for (int b = 0; b < kNumBits; ++b)
        if (mask & (1u << b)) m = m * var_size(b) + v[b];
      t.map[i] = static_cast<std::uint32_t>(m);
    }
    sourceUsed[best] = true;
    terms.push_back(std::move(t));
    return static_cast<int>(terms.size()) - 1;
  }

  std::vector<std::pair<int, double>> plan(const std::string& expr) {
    std::vector<std::pair<int, double>> out;
    for (const auto& [m, c] : expand(expr))
      if (c != 0) out.emplace_back(add_term(m), c);
    return out;
  }
};

// Row index helpers.
struct Idx {
  const Model& m;
  int a0(int t, int x0) const { return t * m.nX0 + x0; }
  int a1(int t, int u0, int x1) const { return (t * m.nU0 + u0) * m.nX1 + x1; }
  int a2(int t, int u0, int x2) const { return (t * m.nU0 + u0) * m.nX2 + x2; }
  int a12(int t, int u0, int x1, int x2) const { return ((t * m.nU0 + u0) * m.nX1 + x1) * m.nX2 + x2; }
  int k(int t, int z, int u1, int u2) const { return ((t * m.nZ + z) * m.nU1 + u1) * m.nU2 + u2; }
};

// Forward values and gradients for one parameter set.
struct Workspace {
  std::array<std::vector<double>, kNumSources> src, gsrc;
  std::vector<double> suc, gsuc, M, gM, B, gB;
  std::vector<double> H;       // per mask term
  std::vector<double> dLdH;    // per mask term
  std::vector<double> marg;    // scratch
  std::vector<double> rhs;     // per bound
  double corrPenalty = 0, corrTV = 0, objective = 0, total = 0, markovSum = 0;
};

void alloc(const Model& m, Workspace& w) {
  for (int s = 0; s < kNumSources; ++s) {
    bool need = m.sourceUsed[s] || (s == kSU && !m.factored());
    w.src[s].assign(need ? m.src_size(s) : 0, 0.0);
    w.gsrc[s].assign(need ? m.src_size(s) : 0, 0.0);
  }
  w.suc.assign(m.src_size(kSU), 0.0);
  w.gsuc.assign(m.factored() ? 0 : m.src_size(kSU), 0.0);
  w.M.assign(m.src_size(kSC), 0.0);
  w.gM.assign(m.src_size(kSC), 0.0);
  if (m.factored()) {
    w.B.assign(m.b_size(), 0.0);
    w.gB.assign(m.b_size(), 0.0);
  }
  w.H.assign(m.terms.size(), 0.0);
  w.dLdH.assign(m.terms.size(), 0.0);
  w.rhs.assign(m.bounds.size(), 0.0);
}

// Conditional law of (U0,U1,U2) given the sources and T, indexed (s,t,u0,u1,u2).
void fill_conditional(const Model& m, const Params& p, std::vector<double>& suc) {
  const Idx ix{m};
  const auto& A0 = p.b[kA0].a;
  const std::size_t uu = static_cast<std::size_t>(m.nU1) * m.nU2;
  std::size_t idx = 0;
  for (int s = 0; s < m.nS; ++s)
    for (int t = 0; t < m.nT; ++t)
      for (int u0 = 0; u0 < m.nU0; ++u0) {
        const double a0 = A0[ix.a0(t, m.sx0[s]) * m.nU0 + u0];
        if (m.joint) {
          const double* r = p.b[kA12].row(ix.a12(t, u0, m.sx1[s], m.sx2[s]));
          for (std::size_t k = 0; k < uu; ++k) suc[idx++] = a0 * r[k];
        } else {
          const double* r1 = p.b[kA1].row(ix.a1(t, u0, m.sx1[s]));
          const double* r2 = p.b[kA2].row(ix.a2(t, u0, m.sx2[s]));
          for (int u1 = 0; u1 < m.nU1; ++u1) {
            const double c = a0 * r1[u1];
            for (int u2 = 0; u2 < m.nU2; ++u2) suc[idx++] = c * r2[u2];
          }
        }
      }
}

void forward(const Model& m, const Params& p, Workspace& w) {
  const Idx ix{m};
  const auto& PT = p.b[kPT].a;
  const auto& A0 = p.b[kA0].a;
  const auto& K = p.b[kK].a;
  const std::size_t uu = static_cast<std::size_t>(m.nU1) * m.nU2;
  std::size_t idx = 0;
  if (m.factored()) {
    for (int t = 0; t < m.nT; ++t)
      for (int u0 = 0; u0 < m.nU0; ++u0)
        for (int x2 = 0; x2 < m.nX2; ++x2)
          for (int z = 0; z < m.nZ; ++z) {
            const double* a2 = p.b[kA2].row(ix.a2(t, u0, x2));
            for (int u1 = 0; u1 < m.nU1; ++u1) {
              double* b = &w.B[m.b_index(t, u0, x2, z, u1)];
              std::fill(b, b + m.nY, 0.0);
              const double* krow = &K[static_cast<std::size_t>(ix.k(t, z, u1, 0)) * m.nY];
              for (int u2 = 0; u2 < m.nU2; ++u2, krow += m.nY) {
                const double c = a2[u2];
                if (c == 0) continue;
                for (int y = 0; y < m.nY; ++y) b[y] += c * krow[y];
              }
            }
          }
    std::fill(w.M.begin(), w.M.end(), 0.0);
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t) {
        double* out = &w.M[(static_cast<std::size_t>(s) * m.nT + t) * m.nY];
        for (int u0 = 0; u0 < m.nU0; ++u0) {
          const double a0 = A0[ix.a0(t, m.sx0[s]) * m.nU0 + u0];
          const double* r1 = p.b[kA1].row(ix.a1(t, u0, m.sx1[s]));
          for (int u1 = 0; u1 < m.nU1; ++u1) {
            const double c = a0 * r1[u1];
            const double* b = &w.B[m.b_index(t, u0, m.sx2[s], m.sz[s], u1)];
            for (int y = 0; y < m.nY; ++y) out[y] += c * b[y];
          }
        }
      }
  } else {
    fill_conditional(m, p, w.suc);
    // Output law M(y | s, t).
    std::fill(w.M.begin(), w.M.end(), 0.0);
    idx = 0;
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t) {
        double* out = &w.M[(static_cast<std::size_t>(s) * m.nT + t) * m.nY];
        for (int u0 = 0; u0 < m.nU0; ++u0)
          for (int u1 = 0; u1 < m.nU1; ++u1) {
            const double* krow = &K[static_cast<std::size_t>(ix.k(t, m.sz[s], u1, 0)) * m.nY];
            for (int u2 = 0; u2 < m.nU2; ++u2, ++idx, krow += m.nY) {
              const double v = w.suc[idx];
              if (v == 0) continue;
              for (int y = 0; y < m.nY; ++y) out[y] += v * krow[y];
            }
          }
      }
  }
  w.corrPenalty = 0;
  w.corrTV = 0;
  for (int t = 0; t < m.nT; ++t) {
    if (PT[t] <= 0) continue;
    double tv = 0;
    for (int s = 0; s < m.nS; ++s)
      for (int y = 0; y < m.nY; ++y) {
        const double d = w.M[(static_cast<std::size_t>(s) * m.nT + t) * m.nY + y] - m.sqy[s * m.nY + y];
        w.corrPenalty += m.sq[s] * d * d;
        tv += m.sq[s] * std::abs(d);
      }
    w.corrTV = std::max(w.corrTV, 0.5 * tv);
  }
  // Source tensors for entropies.
  const std::size_t blk = static_cast<std::size_t>(m.nU0) * uu;
  if (m.sourceUsed[kSU] || m.sourceUsed[kSF] || (m.joint && (m.sourceUsed[kS1] || m.sourceUsed[kS2]))) {
    idx = 0;
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t) {
        const double c = m.sq[s] * PT[t];
        for (std::size_t k = 0; k < blk; ++k, ++idx) w.src[kSU][idx] = c * w.suc[idx];
      }
  }
  if (m.sourceUsed[kS1] || m.sourceUsed[kS2]) {
    if (m.joint) {
      if (m.sourceUsed[kS1]) std::fill(w.src[kS1].begin(), w.src[kS1].end(), 0.0);
      if (m.sourceUsed[kS2]) std::fill(w.src[kS2].begin(), w.src[kS2].end(), 0.0);
      idx = 0;
      for (std::size_t o = 0; o < static_cast<std::size_t>(m.nS) * m.nT * m.nU0; ++o)
        for (int u1 = 0; u1 < m.nU1; ++u1)
          for (int u2 = 0; u2 < m.nU2; ++u2, ++idx) {
            const double v = w.src[kSU][idx];
            if (m.sourceUsed[kS1]) w.src[kS1][o * m.nU1 + u1] += v;
            if (m.sourceUsed[kS2]) w.src[kS2][o * m.nU2 + u2] += v;
          }
    } else {
      std::size_t o = 0;
      for (int s = 0; s < m.nS; ++s)
        for (int t = 0; t < m.nT; ++t)
          for (int u0 = 0; u0 < m.nU0; ++u0, ++o) {
            const double c = m.sq[s] * PT[t] * A0[ix.a0(t, m.sx0[s]) * m.nU0 + u0];
            if (m.sourceUsed[kS1]) {
              const double* r1 = p.b[kA1].row(ix.a1(t, u0, m.sx1[s]));
              for (int u1 = 0; u1 < m.nU1; ++u1) w.src[kS1][o * m.nU1 + u1] = c * r1[u1];
            }
            if (m.sourceUsed[kS2]) {
              const double* r2 = p.b[kA2].row(ix.a2(t, u0, m.sx2[s]));
              for (int u2 = 0; u2 < m.nU2; ++u2) w.src[kS2][o * m.nU2 + u2] = c * r2[u2];
            }
          }
    }
  }
  if (m.sourceUsed[kS0]) {
    std::size_t o = 0;
    for (int t = 0; t < m.nT; ++t)
      for (int u0 = 0; u0 < m.nU0; ++u0)
        for (int x0 = 0; x0 < m.nX0; ++x0, ++o) w.src[kS0][o] = PT[t] * m.px0[x0] * A0[ix.a0(t, x0) * m.nU0 + u0];
  }
  if (m.sourceUsed[kSC]) {
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t)
        for (int y = 0; y < m.nY; ++y) {
          const std::size_t i = (static_cast<std::size_t>(s) * m.nT + t) * m.nY + y;
          w.src[kSC][i] = m.sq[s] * PT[t] * w.M[i];
        }
  }
  if (m.sourceUsed[kSF]) {
    idx = 0;
    std::size_t f = 0;
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t)
        for (int u0 = 0; u0 < m.nU0; ++u0)
          for (int u1 = 0; u1 < m.nU1; ++u1) {
            const double* krow = &K[static_cast<std::size_t>(ix.k(t, m.sz[s], u1, 0)) * m.nY];
            for (int u2 = 0; u2 < m.nU2; ++u2, ++idx, krow += m.nY)
              for (int y = 0; y < m.nY; ++y) w.src[kSF][f++] = w.src[kSU][idx] * krow[y];
          }
  }
  // Entropies.
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    const auto& t = m.terms[k];
    const auto& src = w.src[t.source];
    w.marg.assign(t.margSize, 0.0);
    for (std::size_t i = 0; i < src.size(); ++i) w.marg[t.map[i]] += src[i];
    double h = 0;
    for (double v : w.marg)
      if (v > 0) h -= v * std::log2(v);
    w.H[k] = h;
  }
  for (std::size_t b = 0; b < m.bounds.size(); ++b) {
    double best = -kInf;
    for (const auto& alt : m.bounds[b].alternatives) {
      double v = 0;
      for (const auto& [term, c] : alt) v += c * w.H[term];
      best = std::max(best, v);
    }
    w.rhs[b] = best;
  }
  w.markovSum = 0;
  for (const auto& mk : m.markov) {
    double v = 0;
    for (const auto& [term, c] : mk) v += c * w.H[term];
    w.markovSum += v;
  }
}

// Objective value from bound values; fills dL/d(rhs) for active rows.
double objective_of(const Model& m, const std::vector<double>& rhs, std::vector<double>* dRhs) {
  if (dRhs) dRhs->assign(m.bounds.size(), 0.0);
  if (!m.weighted) {
    double L = 0;
    for (int b : m.active) {
      double lhs = 0;
      for (int i = 0; i < kNumRates; ++i)
        if (m.bounds[b].coeff[i]) lhs += m.bounds[b].coeff[i] * m.point[i];
      double v = rhs[b] - lhs + m.margin;
      if (v > 0) {
        L += v;
        if (dRhs) (*dRhs)[b] = 1.0;
      }
    }
    return L;
  }
  double best = 0;
  int arg = -1;
  for (std::size_t k = 0; k < m.dualVertices.size(); ++k) {
    double v = 0;
    for (std::size_t j = 0; j < m.active.size(); ++j) v += m.dualVertices[k][j] * rhs[m.active[j]];
    if (arg < 0 || v > best) {
      best = v;
      arg = static_cast<int>(k);
    }
  }
  if (dRhs && arg >= 0)
    for (std::size_t j = 0; j < m.active.size(); ++j) (*dRhs)[m.active[j]] = m.dualVertices[arg][j];
  return best;
}

// Total loss = objective + lambda * (correctness + Markov); gradients w.r.t. block values.
double loss_and_grad(const Model& m, const Params& p, Workspace& w, Grads* gr, double lambda) {
  forward(m, p, w);
  std::vector<double> dRhs;
  w.objective = objective_of(m, w.rhs, gr ? &dRhs : nullptr);
  w.total = w.objective + lambda * (w.corrPenalty + w.markovSum);
  if (!gr) return w.total;

  for (int b = 0; b < kNumBlocks; ++b) gr->g[b].assign(p.b[b].a.size(), 0.0);
  std::fill(w.dLdH.begin(), w.dLdH.end(), 0.0);
  for (std::size_t b = 0; b < m.bounds.size(); ++b) {
    if (dRhs[b] == 0) continue;
    // Gradient flows through the maximizing alternative.
    int arg = 0;
    double best = -kInf;
    for (std::size_t a = 0; a < m.bounds[b].alternatives.size(); ++a) {
      double v = 0;
      for (const auto& [term, c] : m.bounds[b].alternatives[a]) v += c * w.H[term];
      if (v > best) {
        best = v;
        arg = static_cast<int>(a);
      }
    }
    for (const auto& [term, c] : m.bounds[b].alternatives[arg]) w.dLdH[term] += dRhs[b] * c;
  }
  for (const auto& mk : m.markov)
    for (const auto& [term, c] : mk) w.dLdH[term] += lambda * c;

  for (int s = 0; s < kNumSources; ++s) std::fill(w.gsrc[s].begin(), w.gsrc[s].end(), 0.0);
  for (std::size_t k = 0; k < m.terms.size(); ++k) {
    if (w.dLdH[k] == 0) continue;
    const auto& t = m.terms[k];
    const auto& src = w.src[t.source];
    auto& g = w.gsrc[t.source];
    w.marg.assign(t.margSize, 0.0);
    for (std::size_t i = 0; i < src.size(); ++i) w.marg[t.map[i]] += src[i];
    // dH/dP = -log2 P_marg; the constant part cancels because every source sums to one.
    for (double& v : w.marg) v = v > 0 ? -std::log2(v) * w.dLdH[k] : 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) g[i] += w.marg[t.map[i]];
  }

  const Idx ix{m};
  const auto& PT = p.b[kPT].a;
  const auto& A0 = p.b[kA0].a;
  const auto& K = p.b[kK].a;
  auto& gPT = gr->g[kPT];
  auto& gA0 = gr->g[kA0];
  auto& gK = gr->g[kK];
  const std::size_t uu = static_cast<std::size_t>(m.nU1) * m.nU2;
  const std::size_t blk = static_cast<std::size_t>(m.nU0) * uu;

  // Output-law gradient from correctness and from the (X,T,Y) source.
  for (int s = 0; s < m.nS; ++s)
    for (int t = 0; t < m.nT; ++t)
      for (int y = 0; y < m.nY; ++y) {
        const std::size_t i = (static_cast<std::size_t>(s) * m.nT + t) * m.nY + y;
        double g = PT[t] > 0 ? lambda * 2 * m.sq[s] * (w.M[i] - m.sqy[s * m.nY + y]) : 0.0;
        if (m.sourceUsed[kSC]) {
          g += m.sq[s] * PT[t] * w.gsrc[kSC][i];
          gPT[t] += m.sq[s] * w.M[i] * w.gsrc[kSC][i];
        }
        w.gM[i] = g;
      }
  if (m.factored()) {
    std::fill(w.gB.begin(), w.gB.end(), 0.0);
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t) {
        const double* gm = &w.gM[(static_cast<std::size_t>(s) * m.nT + t) * m.nY];
        for (int u0 = 0; u0 < m.nU0; ++u0) {
          const int r0 = ix.a0(t, m.sx0[s]) * m.nU0 + u0;
          const double a0 = A0[r0];
          const std::size_t r1 = static_cast<std::size_t>(ix.a1(t, u0, m.sx1[s])) * m.nU1;
          const double* a1 = &p.b[kA1].a[r1];
          double* g1 = &gr->g[kA1][r1];
          double g0 = 0;
          for (int u1 = 0; u1 < m.nU1; ++u1) {
            const std::size_t bi = m.b_index(t, u0, m.sx2[s], m.sz[s], u1);
            const double* b = &w.B[bi];
            double* gb = &w.gB[bi];
            double dot = 0;
            const double c = a0 * a1[u1];
            for (int y = 0; y < m.nY; ++y) {
              dot += b[y] * gm[y];
              gb[y] += c * gm[y];
            }
            g1[u1] += a0 * dot;
            g0 += a1[u1] * dot;
          }
          gA0[r0] += g0;
        }
      }
    for (int t = 0; t < m.nT; ++t)
      for (int u0 = 0; u0 < m.nU0; ++u0)
        for (int x2 = 0; x2 < m.nX2; ++x2)
          for (int z = 0; z < m.nZ; ++z) {
            const std::size_t r2 = static_cast<std::size_t>(ix.a2(t, u0, x2)) * m.nU2;
            const double* a2 = &p.b[kA2].a[r2];
            double* g2 = &gr->g[kA2][r2];
            for (int u1 = 0; u1 < m.nU1; ++u1) {
              const double* gb = &w.gB[m.b_index(t, u0, x2, z, u1)];
              const std::size_t kr = static_cast<std::size_t>(ix.k(t, z, u1, 0)) * m.nY;
              const double* krow = &K[kr];
              double* gkrow = &gK[kr];
              for (int u2 = 0; u2 < m.nU2; ++u2, krow += m.nY, gkrow += m.nY) {
                double dot = 0;
                for (int y = 0; y < m.nY; ++y) {
                  dot += gb[y] * krow[y];
                  gkrow[y] += a2[u2] * gb[y];
                }
                g2[u2] += dot;
              }
            }
          }
  } else {
  // Through the full source and M into K and the conditional U law.
  auto& gSU = w.gsrc[kSU];
  if (m.joint && (m.sourceUsed[kS1] || m.sourceUsed[kS2])) {
    std::size_t idx = 0;
    for (std::size_t o = 0; o < static_cast<std::size_t>(m.nS) * m.nT * m.nU0; ++o)
      for (int u1 = 0; u1 < m.nU1; ++u1)
        for (int u2 = 0; u2 < m.nU2; ++u2, ++idx) {
          if (m.sourceUsed[kS1]) gSU[idx] += w.gsrc[kS1][o * m.nU1 + u1];
          if (m.sourceUsed[kS2]) gSU[idx] += w.gsrc[kS2][o * m.nU2 + u2];
        }
  }
  {
    std::size_t idx = 0, f = 0;
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t) {
        const double* gm = &w.gM[(static_cast<std::size_t>(s) * m.nT + t) * m.nY];
        for (int u0 = 0; u0 < m.nU0; ++u0)
          for (int u1 = 0; u1 < m.nU1; ++u1) {
            const std::size_t kr = static_cast<std::size_t>(ix.k(t, m.sz[s], u1, 0)) * m.nY;
            const double* krow = &K[kr];
            double* gkrow = &gK[kr];
            for (int u2 = 0; u2 < m.nU2; ++u2, ++idx, krow += m.nY, gkrow += m.nY) {
              double gs = 0;
              const double v = w.suc[idx];
              for (int y = 0; y < m.nY; ++y) {
                gs += krow[y] * gm[y];
                gkrow[y] += v * gm[y];
              }
              if (m.sourceUsed[kSF]) {
                const double su = w.src[kSU][idx];
                for (int y = 0; y < m.nY; ++y, ++f) {
                  gSU[idx] += krow[y] * w.gsrc[kSF][f];
                  gkrow[y] += su * w.gsrc[kSF][f];
                }
              }
              w.gsuc[idx] = gs;
            }
          }
      }
  }
  // Weighted source into the conditional law and p(t).
  if (m.sourceUsed[kSU] || m.sourceUsed[kSF] || (m.joint && (m.sourceUsed[kS1] || m.sourceUsed[kS2]))) {
    std::size_t idx = 0;
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t) {
        const double c = m.sq[s] * PT[t];
        double acc = 0;
        for (std::size_t k = 0; k < blk; ++k, ++idx) {
          w.gsuc[idx] += c * gSU[idx];
          acc += w.suc[idx] * gSU[idx];
        }
        gPT[t] += m.sq[s] * acc;
      }
  }
  // Conditional law into kernel blocks.
  {
    std::size_t idx = 0;
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t)
        for (int u0 = 0; u0 < m.nU0; ++u0) {
          const int r0 = ix.a0(t, m.sx0[s]) * m.nU0 + u0;
          const double a0 = A0[r0];
          double g0 = 0;
          if (m.joint) {
            const std::size_t r = static_cast<std::size_t>(ix.a12(t, u0, m.sx1[s], m.sx2[s])) * uu;
            const double* a = &p.b[kA12].a[r];
            double* g = &gr->g[kA12][r];
            for (std::size_t k = 0; k < uu; ++k, ++idx) {
              g[k] += a0 * w.gsuc[idx];
              g0 += a[k] * w.gsuc[idx];
            }
          } else {
            const std::size_t r1 = static_cast<std::size_t>(ix.a1(t, u0, m.sx1[s])) * m.nU1;
            const std::size_t r2 = static_cast<std::size_t>(ix.a2(t, u0, m.sx2[s])) * m.nU2;
            const double* a1 = &p.b[kA1].a[r1];
            const double* a2 = &p.b[kA2].a[r2];
            double* g1 = &gr->g[kA1][r1];
            double* g2 = &gr->g[kA2][r2];
            for (int u1 = 0; u1 < m.nU1; ++u1) {
              double acc = 0;
              for (int u2 = 0; u2 < m.nU2; ++u2, ++idx) {
                const double gg = w.gsuc[idx];
                acc += a2[u2] * gg;
                g2[u2] += a0 * a1[u1] * gg;
              }
              g1[u1] += a0 * acc;
              g0 += a1[u1] * acc;
            }
          }
          gA0[r0] += g0;
        }
  }
  }
  // Direct single-encoder sources (separate kernels).
  if (!m.joint && (m.sourceUsed[kS1] || m.sourceUsed[kS2])) {
    std::size_t o = 0;
    for (int s = 0; s < m.nS; ++s)
      for (int t = 0; t < m.nT; ++t)
        for (int u0 = 0; u0 < m.nU0; ++u0, ++o) {
          const int r0 = ix.a0(t, m.sx0[s]) * m.nU0 + u0;
          const double base = m.sq[s] * PT[t];
          const double c = base * A0[r0];
          double gc = 0;
          if (m.sourceUsed[kS1]) {
            const std::size_t r1 = static_cast<std::size_t>(ix.a1(t, u0, m.sx1[s])) * m.nU1;
            for (int u1 = 0; u1 < m.nU1; ++u1) {
              const double g = w.gsrc[kS1][o * m.nU1 + u1];
              gr->g[kA1][r1 + u1] += c * g;
              gc += p.b[kA1].a[r1 + u1] * g;
            }
          }
          if (m.sourceUsed[kS2]) {
            const std::size_t r2 = static_cast<std::size_t>(ix.a2(t, u0, m.sx2[s])) * m.nU2;
            for (int u2 = 0; u2 < m.nU2; ++u2) {
              const double g = w.gsrc[kS2][o * m.nU2 + u2];
              gr->g[kA2][r2 + u2] += c * g;
              gc += p.b[kA2].a[r2 + u2] * g;
            }
          }
          gA0[r0] += base * gc;
          gPT[t] += m.sq[s] * A0[r0] * gc;
        }
  }
  if (m.sourceUsed[kS0]) {
    std::size_t o = 0;
    for (int t = 0; t < m.nT; ++t)
      for (int u0 = 0; u0 < m.nU0; ++u0)
        for (int x0 = 0; x0 < m.nX0; ++x0, ++o) {
          const int r0 = ix.a0(t, x0) * m.nU0 + u0;
          gA0[r0] += PT[t] * m.px0[x0] * w.gsrc[kS0][o];
          gPT[t] += m.px0[x0] * A0[r0] * w.gsrc[kS0][o];
        }
  }
  return w.total;
}

// ---------------------------------------------------------------------------
// Small LPs over the rate coordinates.

bool solve_dense(std::vector<double> A, std::vector<double> b, int n, std::vector<double>& x) {
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
    if (std::abs(A[piv * n + c]) < 1e-12) return false;
    if (piv != c) {
      for (int k = 0; k < n; ++k) std::swap(A[c * n + k], A[piv * n + k]);
      std::swap(b[c], b[piv]);
    }
    for (int r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = A[r * n + c] / A[c * n + c];
      if (f == 0) continue;
      for (int k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
      b[r] -= f * b[c];
    }
  }
  x.resize(n);
  for (int i = 0; i < n; ++i) x[i] = b[i] / A[i * n + i];
  return true;
}

// Vertices of {x in R^n : G x <= h} by brute force over n-subsets of rows.
std::vector<std::vector<double>> vertices(const std::vector<std::vector<double>>& G, const std::vector<double>& h,
                                          int n) {
  std::vector<std::vector<double>> out;
  const int m = static_cast<int>(G.size());
  if (n == 0) return {std::vector<double>{}};
  std::vector<int> pick(n);
  std::iota(pick.begin(), pick.end(), 0);
  while (true) {
    std::vector<double> A(n * n), b(n), x;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) A[i * n + j] = G[pick[i]][j];
      b[i] = h[pick[i]];
    }
    if (solve_dense(A, b, n, x)) {
      bool ok = true;
      for (int r = 0; r < m && ok; ++r) {
        double v = 0;
        for (int j = 0; j < n; ++j) v += G[r][j] * x[j];
        if (v > h[r] + 1e-9) ok = false;
      }
      if (ok) {
        bool dup = false;
        for (const auto& o : out) {
          double d = 0;
          for (int j = 0; j < n; ++j) d = std::max(d, std::abs(o[j] - x[j]));
          if (d < 1e-9) dup = true;
        }
        if (!dup) out.push_back(x);
      }
    }
    int i = n - 1;
    while (i >= 0 && pick[i] == m - n + i) --i;
    if (i < 0) break;
    ++pick[i];
    for (int j = i + 1; j < n; ++j) pick[j] = pick[j - 1] + 1;
  }
  return out;
}

bool row_active_for_weights(const RateCoeffs& c, const RateWeights& w, Theorem t) {
  for (int i = 0; i < kNumRates; ++i) {
    if (!c[i]) continue;
    if (i == kR00 && !uses_r00(t)) continue;
    if (w[i] == 0) return false;
  }
  return true;
}

std::vector<int> free_coords(const RateWeights& w, Theorem t) {
  std::vector<int> v;
  for (int i = 0; i < kNumRates; ++i)
    if (w[i] > 0 && (i != kR00 || uses_r00(t))) v.push_back(i);
  return v;
}

}  // namespace

RatePoint weighted_min_point(const std::vector<BoundValue>& bounds, const RateWeights& w, Theorem t) {
  for (double x : w)
    if (!(x >= 0)) throw std::invalid_argument("rate weights must be nonnegative");
  auto coords = free_coords(w, t);
  if (coords.empty()) throw std::invalid_argument("rate weights are all zero");
  const int n = static_cast<int>(coords.size());
  // Feasible set {R >= 0, C R >= rhs} written as G R <= h.
  std::vector<std::vector<double>> G;
  std::vector<double> h;
  for (const auto& b : bounds) {
    if (!row_active_for_weights(b.coeff, w, t)) continue;
    std::vector<double> row(n);
    for (int j = 0; j < n; ++j) row[j] = -b.coeff[coords[j]];
    G.push_back(row);
    h.push_back(-b.rhs);
  }
  for (int j = 0; j < n; ++j) {
    std::vector<double> row(n, 0.0);
    row[j] = -1;
    G.push_back(row);
    h.push_back(0);
  }
  RatePoint best;
  double bestVal = kInf;
  for (const auto& v : vertices(G, h, n)) {
    double val = 0;
    for (int j = 0; j < n; ++j) val += w[coords[j]] * v[j];
    if (val < bestVal - 1e-12) {
      bestVal = val;
      for (int i = 0; i < kNumRates; ++i) best[i] = (i == kR00 && !uses_r00(t)) ? 0.0 : kInf;
      for (int j = 0; j < n; ++j) best[coords[j]] = std::max(0.0, v[j]);
    }
  }
  return best;
}

namespace {

Model build_model(const JointPmf& qIn, Theorem t, const AuxSizes& sz) {
  Model m;
  m.theorem = t;
  m.q = canonical_target(qIn);
  m.joint = allows_joint_u(t);
  m.nX1 = m.q.size_of("X1");
  m.nX2 = m.q.size_of("X2");
  m.nZ = m.q.size_of("Z");
  m.nY = m.q.size_of("Y");
  m.nT = sz.t;
  m.nU0 = uses_r00(t) ? sz.u0 : 1;
  m.nU1 = sz.u1;
  m.nU2 = sz.u2;
  auto cp = source_common_part(m.q);
  m.nX0 = t == Theorem::Thm4 ? cp.count : 1;
  m.px0.assign(m.nX0, 0.0);
  for (int x1 = 0; x1 < m.nX1; ++x1)
    for (int x2 = 0; x2 < m.nX2; ++x2)
      for (int z = 0; z < m.nZ; ++z) {
        double p = 0;
        std::vector<double> py(m.nY);
        for (int y = 0; y < m.nY; ++y) p += py[y] = m.q.at({x1, x2, z, y});
        if (p <= 0) continue;
        m.sx1.push_back(x1);
        m.sx2.push_back(x2);
        m.sz.push_back(z);
        int x0 = t == Theorem::Thm4 ? cp.labels1[x1] : 0;
        m.sx0.push_back(x0);
        m.px0[x0] += p;
        m.sq.push_back(p);
        for (double v : py) m.sqy.push_back(v / p);
      }
  m.nS = static_cast<int>(m.sq.size());
  for (const auto& b : theorem_bounds(t)) {
    ActiveBound ab;
    ab.name = b.name;
    ab.coeff = b.coeff;
    m.bounds.push_back(ab);
  }
  if (m.joint) {
    m.markov.push_back(m.plan("I(U1;X2,Z|X1,U0,T)"));
    m.markov.push_back(m.plan("I(U2;X1,Z|X2,U0,T)"));
  }
  return m;
}

void plan_objective(Model& m) {
  const auto& specs = theorem_bounds(m.theorem);
  m.active.clear();
  for (std::size_t b = 0; b < specs.size(); ++b) {
    bool on;
    if (m.weighted) {
      on = row_active_for_weights(specs[b].coeff, m.weights, m.theorem);
    } else {
      on = true;
      for (int i = 0; i < kNumRates; ++i)
        if (specs[b].coeff[i] && std::isinf(m.point[i])) on = false;
    }
    if (!on) continue;
    m.active.push_back(static_cast<int>(b));
    for (const auto& alt : specs[b].alternatives) m.bounds[b].alternatives.push_back(m.plan(alt));
  }
  if (m.weighted) {
    // Dual feasible set {y >= 0 : sum_b y_b c_b <= w} over the active rows.
    const auto coords = free_coords(m.weights, m.theorem);
    const int n = static_cast<int>(m.active.size());
    std::vector<std::vector<double>> G;
    std::vector<double> h;
    for (int c : coords) {
      std::vector<double> row(n);
      for (int j = 0; j < n; ++j) row[j] = m.bounds[m.active[j]].coeff[c];
      G.push_back(row);
      h.push_back(m.weights[c]);
    }
    for (int j = 0; j < n; ++j) {
      std::vector<double> row(n, 0.0);
      row[j] = -1;
      G.push_back(row);
      h.push_back(0);
    }
    m.dualVertices = vertices(G, h, n);
  }
}

// Conversion of a parameter set into a library decomposition.
AuxDecomposition to_decomposition(const Model& m, const Params& p) {
  AuxDecomposition d;
  const VarDecl T{"T", m.nT}, U0{"U0", m.nU0}, U1{"U1", m.nU1}, U2{"U2", m.nU2};
  const VarDecl X1{"X1", m.nX1}, X2{"X2", m.nX2}, Z{"Z", m.nZ}, Y{"Y", m.nY};
  d.tPmf = p.b[kPT].a;
  const bool u0 = uses_r00(m.theorem);
  if (u0) {
    // Rows are stored (t, x0); the kernel conditions on (X0, T).
    std::vector<double> tab;
    if (m.theorem == Theorem::Thm4) {
      for (int x0 = 0; x0 < m.nX0; ++x0)
        for (int t = 0; t < m.nT; ++t) {
          const double* r = p.b[kA0].row(t * m.nX0 + x0);
          tab.insert(tab.end(), r, r + m.nU0);
        }
      d.u0Kernel = ConditionalKernel({{"X0", m.nX0}, T}, {U0}, tab);
    } else {
      d.u0Kernel = ConditionalKernel({T}, {U0}, p.b[kA0].a);
    }
  }
  auto reorder = [&](const Block& blk, int nx, int nu) {
    // Stored (t, u0, x) rows; kernel order (x, u0, t).
    std::vector<double> tab;
    for (int x = 0; x < nx; ++x)
      for (int a = 0; a < m.nU0; ++a)
        for (int t = 0; t < m.nT; ++t) {
          const double* r = blk.row((t * m.nU0 + a) * nx + x);
          tab.insert(tab.end(), r, r + nu);
        }
    return tab;
  };
  if (m.joint) {
    std::vector<double> tab;
    const int uu = m.nU1 * m.nU2;
    for (int x1 = 0; x1 < m.nX1; ++x1)
      for (int x2 = 0; x2 < m.nX2; ++x2)
        for (int a = 0; a < m.nU0; ++a)
          for (int t = 0; t < m.nT; ++t) {
            const double* r = p.b[kA12].row(((t * m.nU0 + a) * m.nX1 + x1) * m.nX2 + x2);
            tab.insert(tab.end(), r, r + uu);
          }
    std::vector<VarDecl> from = {X1, X2};
    if (u0) from.push_back(U0);
    from.push_back(T);
    d.uJointKernel = ConditionalKernel(from, {U1, U2}, tab);
  } else {
    std::vector<VarDecl> f1 = {X1}, f2 = {X2};
    if (u0) {
      f1.push_back(U0);
      f2.push_back(U0);
    }
    f1.push_back(T);
    f2.push_back(T);
    d.u1Kernel = ConditionalKernel(f1, {U1}, reorder(p.b[kA1], m.nX1, m.nU1));
    d.u2Kernel = ConditionalKernel(f2, {U2}, reorder(p.b[kA2], m.nX2, m.nU2));
  }
  // K rows are stored (t, z, u1, u2); the kernel order is (u1, u2, z, t).
  std::vector<double> tab;
  for (int u1 = 0; u1 < m.nU1; ++u1)
    for (int u2 = 0; u2 < m.nU2; ++u2)
      for (int z = 0; z < m.nZ; ++z)
        for (int t = 0; t < m.nT; ++t) {
          const double* r = p.b[kK].row(((t * m.nZ + z) * m.nU1 + u1) * m.nU2 + u2);
          tab.insert(tab.end(), r, r + m.nY);
        }
  d.yKernel = ConditionalKernel({U1, U2, Z, T}, {Y}, tab);
  return d;
}

void init_blocks(const Model& m, Params& p) {
  p.b[kPT].init(1, m.nT);
  p.b[kA0].init(m.nT * m.nX0, m.nU0);
  if (m.joint) {
    p.b[kA12].init(m.nT * m.nU0 * m.nX1 * m.nX2, m.nU1 * m.nU2);
    p.b[kA1].init(0, 1);
    p.b[kA2].init(0, 1);
  } else {
    p.b[kA1].init(m.nT * m.nU0 * m.nX1, m.nU1);
    p.b[kA2].init(m.nT * m.nU0 * m.nX2, m.nU2);
    p.b[kA12].init(0, 1);
  }
  p.b[kK].init(m.nT * m.nZ * m.nU1 * m.nU2, m.nY);
}

// Euclidean projection of v onto the probability simplex.
void project_simplex(double* v, int n, std::vector<double>& scratch) {
  scratch.assign(v, v + n);
  std::sort(scratch.begin(), scratch.end(), std::greater<double>());
  double cum = 0, theta = 0;
  for (int i = 0; i < n; ++i) {
    cum += scratch[i];
    double t = (cum - 1) / (i + 1);
    if (i == n - 1 || scratch[i + 1] <= t) {
      theta = t;
      break;
    }
  }
  for (int i = 0; i < n; ++i) v[i] = std::max(0.0, v[i] - theta);
}

Model correctness_only(const Model& m) {
  Model plain = m;
  plain.terms.clear();
  plain.markov.clear();
  for (auto& b : plain.bounds) b.alternatives.clear();
  plain.active.clear();
  plain.dualVertices.clear();
  plain.weighted = false;
  plain.sourceUsed.fill(false);
  return plain;
}

// Sets every reachable output row to the posterior mean of the target output
// given (T, Z, U1, U2); unreachable rows are left as they are.
void posterior_output_kernel(const Model& plain, Params& p, Workspace& pw) {
  fill_conditional(plain, p, pw.suc);
  const Idx ix{plain};
  auto& K = p.b[kK];
  std::vector<double> num(K.a.size(), 0.0), den(K.rows, 0.0);
  std::size_t idx = 0;
  for (int s = 0; s < plain.nS; ++s)
    for (int t = 0; t < plain.nT; ++t)
      for (int u0 = 0; u0 < plain.nU0; ++u0)
        for (int u1 = 0; u1 < plain.nU1; ++u1)
          for (int u2 = 0; u2 < plain.nU2; ++u2, ++idx) {
            const double v = plain.sq[s] * pw.suc[idx];
            if (v == 0) continue;
            const int r = ix.k(t, plain.sz[s], u1, u2);
            den[r] += v;
            for (int y = 0; y < plain.nY; ++y) num[static_cast<std::size_t>(r) * plain.nY + y] += v * plain.sqy[s * plain.nY + y];
          }
  for (int r = 0; r < K.rows; ++r) {
    if (den[r] <= 0) continue;
    for (int y = 0; y < K.cols; ++y) K.row(r)[y] = num[static_cast<std::size_t>(r) * K.cols + y] / den[r];
  }
}

// Minimizes the correctness residual over K with the U kernels fixed. The
// residual's gradient is 2-Lipschitz in K, so a fixed step of 1/2 is safe.
double project_output_kernel(const Model& plain, Params& p, int maxIter, double tvGoal) {
  Workspace pw;
  alloc(plain, pw);
  posterior_output_kernel(plain, p, pw);
  forward(plain, p, pw);
  if (pw.corrTV <= tvGoal || maxIter <= 0) return pw.corrTV;
  Grads g;
  std::vector<double> scratch;
  auto& K = p.b[kK];
  std::vector<double> x = K.a, yk = K.a, prev;
  const double step = 0.5;
  double tk = 1;
  double lastPen = kInf;
  for (int it = 0; it < maxIter; ++it) {
    K.a = yk;
    loss_and_grad(plain, p, pw, &g, 1.0);
    prev.swap(x);
    x.resize(yk.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = yk[i] - step * g.g[kK][i];
    for (int r = 0; r < K.rows; ++r) project_simplex(&x[static_cast<std::size_t>(r) * K.cols], K.cols, scratch);
    const double tn = (1 + std::sqrt(1 + 4 * tk * tk)) / 2;
    for (std::size_t i = 0; i < x.size(); ++i) yk[i] = x[i] + (tk - 1) / tn * (x[i] - prev[i]);
    tk = tn;
    if (it % 20 == 19) {
      K.a = x;
      forward(plain, p, pw);
      if (pw.corrTV <= tvGoal) break;
      if (pw.corrPenalty > 0.98 * lastPen) break;
      lastPen = pw.corrPenalty;
    }
  }
  K.a = x;
  forward(plain, p, pw);
  return pw.corrTV;
}

void prune_rows(Block& blk, double thr) {
  for (int r = 0; r < blk.rows; ++r) {
    double* a = blk.row(r);
    double s = 0;
    for (int c = 0; c < blk.cols; ++c) {
      if (a[c] < thr) a[c] = 0;
      s += a[c];
    }
    if (s <= 0) {
      int best = 0;
      for (int c = 1; c < blk.cols; ++c) best = a[c] > a[best] ? c : best;
      a[best] = 1;
      s = 1;
    }
    for (int c = 0; c < blk.cols; ++c) a[c] /= s;
  }
}

// Rounds rows close to a 1/L grid onto it.
void snap_rows(Block& blk, int L, double maxDev) {
  for (int r = 0; r < blk.rows; ++r) {
    double* a = blk.row(r);
    std::vector<int> k(blk.cols);
    int total = 0;
    double dev = 0;
    for (int c = 0; c < blk.cols; ++c) {
      k[c] = static_cast<int>(std::lround(a[c] * L));
      total += k[c];
      dev = std::max(dev, std::abs(a[c] - static_cast<double>(k[c]) / L));
    }
    if (total != L || dev > maxDev) continue;
    for (int c = 0; c < blk.cols; ++c) a[c] = static_cast<double>(k[c]) / L;
  }
}

// Merges labels whose row-support patterns coincide. Columns are indexed
// a * nB + b; the merged label is a when onFirst, else b.
void merge_labels(Block& blk, int nA, int nB, bool onFirst) {
  const int n = onFirst ? nA : nB, other = onFirst ? nB : nA;
  auto col = [&](int l, int o) { return onFirst ? l * nB + o : o * nB + l; };
  std::map<std::vector<bool>, int> seen;
  std::vector<int> target(n);
  for (int l = 0; l < n; ++l) {
    std::vector<bool> pat(blk.rows);
    bool any = false;
    for (int r = 0; r < blk.rows; ++r) {
      double v = 0;
      for (int o = 0; o < other; ++o) v += blk.row(r)[col(l, o)];
      pat[r] = v > 0;
      any = any || pat[r];
    }
    target[l] = any ? seen.emplace(pat, l).first->second : l;
  }
  for (int r = 0; r < blk.rows; ++r) {
    double* a = blk.row(r);
    for (int l = 0; l < n; ++l) {
      if (target[l] == l) continue;
      for (int o = 0; o < other; ++o) {
        a[col(target[l], o)] += a[col(l, o)];
        a[col(l, o)] = 0;
      }
    }
  }
}

struct Candidate {
  Params params;
  double margin = kInf;     // fast estimate
  double objective = kInf;  // weighted objective at the candidate
  double corrTV = kInf;
};

double fast_margin(const Model& m, const Workspace& w) {
  double v = std::max(w.corrTV, std::max(0.0, w.markovSum));
  if (!m.weighted) {
    double viol = -kInf;
    for (int b : m.active) {
      double lhs = 0;
      for (int i = 0; i < kNumRates; ++i)
        if (m.bounds[b].coeff[i]) lhs += m.bounds[b].coeff[i] * m.point[i];
      viol = std::max(viol, w.rhs[b] - lhs);
    }
    v = std::max(v, viol);
  }
  return v;
}

struct RestartResult {
  bool ok = false;  // produced a verified candidate
  double margin = kInf;
  double objective = kInf;
  std::optional<Certificate> cert;
};

class Restart {
 public:
  Restart(const Model& m, const Model& plain, const SearchBudget& b, std::uint64_t seed)
      : m_(m), plain_(plain), budget_(b), rng_(seed) {}

  RestartResult run(const JointPmf& qOrig, std::uint64_t index) {
    Params p;
    init_blocks(m_, p);
    // Random logits per block.
    std::array<std::vector<double>, kNumBlocks> theta, mom, vel;
    std::normal_distribution<double> nd(0.0, 1.5);
    for (int b = 0; b < kNumBlocks; ++b) {
      theta[b].resize(p.b[b].a.size());
      for (auto& v : theta[b]) v = nd(rng_);
      if (b == kPT) std::fill(theta[b].begin(), theta[b].end(), 0.0);
      mom[b].assign(theta[b].size(), 0.0);
      vel[b].assign(theta[b].size(), 0.0);
      softmax(p.b[b], theta[b]);
    }
    Workspace w;
    alloc(m_, w);
    Grads g;
    const double lr = 0.08, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    // The penalty weight climbs from 10 to 10^6 over the run.
    double lambda = 10.0;
    const int period = std::max(1, budget_.iterations / 6);
    for (int it = 0; it < budget_.iterations; ++it) {
      if (it > 0 && it % period == 0 && lambda < 1e6) lambda *= 10;
      loss_and_grad(m_, p, w, &g, lambda);
      const double c1 = 1 - std::pow(b1, it + 1), c2 = 1 - std::pow(b2, it + 1);
      for (int b = 0; b < kNumBlocks; ++b) {
        Block& blk = p.b[b];
        for (int r = 0; r < blk.rows; ++r) {
          const double* a = blk.row(r);
          double* gr = &g.g[b][static_cast<std::size_t>(r) * blk.cols];
          double mean = 0;
          for (int c = 0; c < blk.cols; ++c) mean += a[c] * gr[c];
          for (int c = 0; c < blk.cols; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * blk.cols + c;
            const double gt = a[c] * (gr[c] - mean);
            mom[b][i] = b1 * mom[b][i] + (1 - b1) * gt;
            vel[b][i] = b2 * vel[b][i] + (1 - b2) * gt * gt;
            theta[b][i] -= lr * (mom[b][i] / c1) / (std::sqrt(vel[b][i] / c2) + eps);
          }
        }
        softmax(blk, theta[b]);
      }
    }
    return polish(p, qOrig, index);
  }

 private:
  static void softmax(Block& blk, const std::vector<double>& th) {
    for (int r = 0; r < blk.rows; ++r) {
      const double* t = &th[static_cast<std::size_t>(r) * blk.cols];
      double* a = blk.row(r);
      double mx = -kInf;
      for (int c = 0; c < blk.cols; ++c) mx = std::max(mx, t[c]);
      double s = 0;
      for (int c = 0; c < blk.cols; ++c) s += a[c] = std::exp(t[c] - mx);
      for (int c = 0; c < blk.cols; ++c) a[c] /= s;
    }
  }

  RestartResult polish(const Params& raw, const JointPmf& qOrig, std::uint64_t index) {
    Workspace w;
    alloc(m_, w);
    Workspace pw;
    alloc(plain_, pw);
    std::vector<Candidate> cands;
    auto screen = [&](Params p) {
      for (const auto& c : cands)
        if (c.params.b == p.b) return;
      Params alt = p;
      posterior_output_kernel(plain_, alt, pw);
      forward(plain_, alt, pw);
      const double tvAlt = pw.corrTV;
      forward(plain_, p, pw);
      if (tvAlt < pw.corrTV) p = std::move(alt);
      loss_and_grad(m_, p, w, nullptr, 0.0);
      Candidate c;
      c.margin = fast_margin(m_, w);
      c.objective = w.objective;
      c.corrTV = w.corrTV;
      c.params = std::move(p);
      cands.push_back(std::move(c));
    };
    for (double thr : {1e-3, 2e-2}) {
      Params p = raw;
      for (int b : {kPT, kA0, kA1, kA2, kA12}) prune_rows(p.b[b], thr);
      Params merged = p;
      if (m_.joint) {
        merge_labels(merged.b[kA12], m_.nU1, m_.nU2, true);
        merge_labels(merged.b[kA12], m_.nU1, m_.nU2, false);
      } else {
        merge_labels(merged.b[kA1], m_.nU1, 1, true);
        merge_labels(merged.b[kA2], m_.nU2, 1, true);
      }
      merge_labels(merged.b[kA0], m_.nU0, 1, true);
      for (const Params* base : {&p, &merged}) {
        screen(*base);
        for (int L : {2, 3, 4}) {
          Params s = *base;
          for (int b : {kPT, kA0, kA1, kA2, kA12}) snap_rows(s.b[b], L, 0.08);
          screen(s);
        }
      }
    }
    // Refine the output kernel of the most promising few.
    auto key0 = [&](const Candidate& c) {
      return m_.weighted ? c.objective + 10 * c.corrTV : std::max(c.margin, 0.0) + c.corrTV;
    };
    std::stable_sort(cands.begin(), cands.end(), [&](const auto& a, const auto& b) { return key0(a) < key0(b); });
    for (std::size_t i = 0; i < cands.size() && i < 2; ++i) {
      auto& c = cands[i];
      if (c.corrTV <= budget_.tol / 10 || c.corrTV > 0.05) continue;
      project_output_kernel(plain_, c.params, 120, budget_.tol / 10);
      loss_and_grad(m_, c.params, w, nullptr, 0.0);
      c.margin = fast_margin(m_, w);
      c.objective = w.objective;
      c.corrTV = w.corrTV;
    }
    RestartResult res;
    // Fast screening, then exact verification in order of promise.
    std::vector<std::size_t> order(cands.size());
    std::iota(order.begin(), order.end(), 0);
    auto key = [&](const Candidate& c) { return m_.weighted ? c.objective + (c.corrTV > budget_.tol ? 1e6 : 0) : c.margin; };
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key(cands[a]) < key(cands[b]); });
    res.margin = cands[order[0]].margin;
    res.objective = cands[order[0]].objective;
    int verified = 0;
    for (auto i : order) {
      const auto& c = cands[i];
      if (c.margin > 10 * budget_.tol && !(m_.weighted && c.corrTV <= 10 * budget_.tol)) break;
      if (++verified > 3) break;
      AuxDecomposition dec = to_decomposition(m_, c.params);
      RegionEval ev;
      try {
        ev = evaluate(m_.theorem, qOrig, dec);
      } catch (const std::invalid_argument&) {
        continue;
      }
      double margin = std::max(ev.correctnessError, ev.max_markov_error());
      if (!m_.weighted) margin = std::max(margin, ev.violation(m_.point));
      res.margin = std::min(res.margin, margin);
      if (margin <= budget_.tol) {
        res.ok = true;
        res.cert = Certificate{std::move(dec), std::move(ev), index};
        if (m_.weighted) {
          std::vector<double> rhs(m_.bounds.size());
          for (std::size_t b = 0; b < rhs.size(); ++b) rhs[b] = res.cert->eval.bounds[b].rhs;
          res.objective = objective_of(m_, rhs, nullptr);
        }
        break;
      }
    }
    return res;
  }

  const Model& m_;
  const Model& plain_;
  const SearchBudget& budget_;
  std::mt19937_64 rng_;
};

AuxSizes resolve_sizes(const JointPmf& q, Theorem t, const AuxSizes& s) {
  AuxSizes d = default_sizes(q), r = s;
  if (r.u1 == 0) r.u1 = d.u1;
  if (r.u2 == 0) r.u2 = d.u2;
  if (r.u0 == 0) r.u0 = uses_r00(t) ? d.u0 : 1;
  if (r.t == 0) r.t = d.t;
  return r;
}

constexpr std::size_t kChunk = 32;

}  // namespace

MembershipResult region_membership(const JointPmf& q, const RatePoint& point, Theorem t, const SearchBudget& budget) {
  budget.validate();
  for (int i = 0; i < kNumRates; ++i)
    if (!(point[i] >= 0)) throw std::invalid_argument("rate point must be nonnegative");
  if (needs_ci_target(t)) {
    double ci = mutual_info(canonical_target(q), {"X1"}, {"X2"}, {"Z"});
    if (ci > 1e-9) throw std::invalid_argument(theorem_name(t) + " needs X1 and X2 conditionally independent given Z");
  }
  Model m = build_model(q, t, resolve_sizes(q, t, budget.sizes));
  m.point = point;
  plan_objective(m);
  const Model plain = correctness_only(m);

  MembershipResult out;
  for (std::size_t start = 0; start < budget.restarts && !out.found; start += kChunk) {
    const std::size_t n = std::min(kChunk, budget.restarts - start);
    std::vector<RestartResult> results(n);
    parallel_for(n, budget.threads, [&](std::size_t i) {
      Restart r(m, plain, budget, restart_seed(budget.seed, start + i));
      results[i] = r.run(q, start + i);
    });
    for (std::size_t i = 0; i < n; ++i) {
      out.bestMargin = std::min(out.bestMargin, results[i].margin);
      if (results[i].ok && !out.found) {
        out.found = true;
        out.certificate = results[i].cert;
      }
    }
    out.restartsRun = start + n;
  }
  return out;
}

std::vector<TraceResult> trace_boundary(const JointPmf& q, Theorem t, const std::vector<RateWeights>& weights,
                                        const SearchBudget& budget) {
  budget.validate();
  std::vector<TraceResult> out;
  for (const auto& w : weights) {
    for (double x : w)
      if (!(x >= 0)) throw std::invalid_argument("rate weights must be nonnegative");
    if (free_coords(w, t).empty()) throw std::invalid_argument("rate weights are all zero");
    Model m = build_model(q, t, resolve_sizes(q, t, budget.sizes));
    m.weighted = true;
    m.weights = w;
    plan_objective(m);
    const Model plain = correctness_only(m);
    std::vector<RestartResult> results(budget.restarts);
    parallel_for(budget.restarts, budget.threads, [&](std::size_t i) {
      Restart r(m, plain, budget, restart_seed(budget.seed, i));
      results[i] = r.run(q, i);
    });
    TraceResult tr;
    tr.weights = w;
    for (auto& r : results) {
      if (!r.ok) continue;
      if (!tr.certificate || r.objective < tr.value - 1e-12) {
        tr.value = r.objective;
        tr.certificate = r.cert;
      }
    }
    if (tr.certificate) {
      tr.point = weighted_min_point(tr.certificate->eval.bounds, w, t);
      double v = 0;
      for (int i = 0; i < kNumRates; ++i)
        if (w[i] > 0) v += w[i] * tr.point[i];
      tr.value = v;
    }
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace coordsim
