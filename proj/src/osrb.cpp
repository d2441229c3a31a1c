#include "coordsim/osrb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "coordsim/search.hpp"

namespace coordsim {

namespace {

constexpr double kInfLog = std::numeric_limits<double>::infinity();

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix(mix(seed ^ mix(a + 0x51ed27)) ^ mix(b + 0x2545f491));
}

std::uint64_t ipow(std::uint64_t b, int e) {
  std::uint64_t r = 1;
  for (int i = 0; i < e; ++i) {
    if (b != 0 && r > std::numeric_limits<std::uint64_t>::max() / b)
      throw CapExceeded("sequence space overflows 64 bits");
    r *= b;
  }
  return r;
}

// Letter `i` (0 = first, most significant) of a base-`a` sequence index.
void digits(std::uint64_t seq, int a, int n, int* out) {
  for (int i = n - 1; i >= 0; --i) {
    out[i] = static_cast<int>(seq % a);
    seq /= a;
  }
}

const double* kernel_row(const ConditionalKernel& k, const std::map<std::string, int>& at) {
  std::size_t r = 0;
  for (const auto& v : k.from) {
    auto it = at.find(v.name);
    r = r * v.size + (it == at.end() ? 0 : it->second);
  }
  return &k.table[r * k.cols()];
}

// Single-letter quantities of the protocol.
struct LetterLaw {
  int nX1 = 1, nX2 = 1, nZ = 1, nY = 1, nU1 = 1, nU2 = 1;
  std::vector<double> pxz;    // (x1, x2, z)
  std::vector<double> pu1;    // (x1, u1)
  std::vector<double> pu2;    // (x2, u2)
  std::vector<double> logpu;  // (z, u1, u2): log p(u1, u2 | z)
  std::vector<double> ky;     // (u1, u2, z, y)
  JointPmf target;            // canonical q

  double py(int u1, int u2, int z, int y) const { return ky[((static_cast<std::size_t>(u1) * nU2 + u2) * nZ + z) * nY + y]; }
};

void check_protocol_dec(const AuxDecomposition& dec) {
  if (dec.size_t_() != 1) throw std::invalid_argument("the binning protocol runs with |T| = 1");
  if (dec.size_u0() > 1) throw std::invalid_argument("the binning protocol takes no U0");
  if (dec.uJointKernel) throw std::invalid_argument("the binning protocol needs separate U1 and U2 kernels");
  if (!dec.u1Kernel || !dec.u2Kernel) throw std::invalid_argument("the binning protocol needs U1 and U2 kernels");
}

LetterLaw letter_law(const JointPmf& q, const AuxDecomposition& dec) {
  check_protocol_dec(dec);
  LetterLaw L;
  L.target = canonical_target(q);
  L.nX1 = L.target.size_of("X1");
  L.nX2 = L.target.size_of("X2");
  L.nZ = L.target.size_of("Z");
  L.nY = L.target.size_of("Y");
  L.nU1 = dec.size_u1();
  L.nU2 = dec.size_u2();
  L.pxz.assign(static_cast<std::size_t>(L.nX1) * L.nX2 * L.nZ, 0.0);
  for (int x1 = 0; x1 < L.nX1; ++x1)
    for (int x2 = 0; x2 < L.nX2; ++x2)
      for (int z = 0; z < L.nZ; ++z)
        for (int y = 0; y < L.nY; ++y) L.pxz[(x1 * L.nX2 + x2) * L.nZ + z] += L.target.at({x1, x2, z, y});
  L.pu1.resize(static_cast<std::size_t>(L.nX1) * L.nU1);
  for (int x = 0; x < L.nX1; ++x) {
    const double* r = kernel_row(*dec.u1Kernel, {{"X1", x}});
    std::copy(r, r + L.nU1, &L.pu1[x * L.nU1]);
  }
  L.pu2.resize(static_cast<std::size_t>(L.nX2) * L.nU2);
  for (int x = 0; x < L.nX2; ++x) {
    const double* r = kernel_row(*dec.u2Kernel, {{"X2", x}});
    std::copy(r, r + L.nU2, &L.pu2[x * L.nU2]);
  }
  L.ky.resize(static_cast<std::size_t>(L.nU1) * L.nU2 * L.nZ * L.nY);
  for (int u1 = 0; u1 < L.nU1; ++u1)
    for (int u2 = 0; u2 < L.nU2; ++u2)
      for (int z = 0; z < L.nZ; ++z) {
        const double* r = kernel_row(dec.yKernel, {{"U1", u1}, {"U2", u2}, {"Z", z}});
        std::copy(r, r + L.nY, &L.ky[((static_cast<std::size_t>(u1) * L.nU2 + u2) * L.nZ + z) * L.nY]);
      }
  L.logpu.assign(static_cast<std::size_t>(L.nZ) * L.nU1 * L.nU2, 0.0);
  for (int z = 0; z < L.nZ; ++z) {
    std::vector<double> p(static_cast<std::size_t>(L.nU1) * L.nU2, 0.0);
    double pz = 0;
    for (int x1 = 0; x1 < L.nX1; ++x1)
      for (int x2 = 0; x2 < L.nX2; ++x2) {
        const double w = L.pxz[(x1 * L.nX2 + x2) * L.nZ + z];
        pz += w;
        if (w == 0) continue;
        for (int u1 = 0; u1 < L.nU1; ++u1)
          for (int u2 = 0; u2 < L.nU2; ++u2) p[u1 * L.nU2 + u2] += w * L.pu1[x1 * L.nU1 + u1] * L.pu2[x2 * L.nU2 + u2];
      }
    for (std::size_t k = 0; k < p.size(); ++k)
      L.logpu[z * p.size() + k] = (pz > 0 && p[k] > 0) ? std::log(p[k] / pz) : -kInfLog;
  }
  return L;
}


using Range = std::pair<std::size_t, std::size_t>;

// Index range of bucket entries with keys in [lo, hi).
Range key_range(const EncoderBinning& e, std::uint64_t lo, std::uint64_t hi) {
  auto cmp = [](const std::pair<std::uint64_t, std::uint32_t>& a, std::uint64_t k) { return a.first < k; };
  auto b = std::lower_bound(e.buckets.begin(), e.buckets.end(), lo, cmp);
  auto en = std::lower_bound(b, e.buckets.end(), hi, cmp);
  return {static_cast<std::size_t>(b - e.buckets.begin()), static_cast<std::size_t>(en - e.buckets.begin())};
}

void require_tabled(const BinningScheme& s) {
  for (const auto& e : s.enc)
    if (!e.tabled())
      throw CapExceeded("|U|^n = " + std::to_string(e.sequences) + " exceeds the enumeration cap of the simulator");
}

void check_f(const BinningScheme& s, std::uint64_t f1, std::uint64_t f2) {
  if (f1 >= s.enc[0].bins[kBinExtra] || f2 >= s.enc[1].bins[kBinExtra])
    throw std::invalid_argument("extra-randomness index out of range");
}

// Decoder with precomputed letters; `zd` holds the letters of z^n.
SwResult decode(const LetterLaw& L, const BinningScheme& sc, std::uint64_t s1, std::uint64_t f1, std::uint64_t m1,
                std::uint64_t s2, std::uint64_t f2, std::uint64_t m2, const int* zd) {
  const auto& e1 = sc.enc[0];
  const auto& e2 = sc.enc[1];
  const std::uint64_t k1 = e1.key(s1, f1, m1), k2 = e2.key(s2, f2, m2);
  const Range r1 = key_range(e1, k1, k1 + 1), r2 = key_range(e2, k2, k2 + 1);
  SwResult res;
  if (r1.first == r1.second || r2.first == r2.second) {
    res.consistent = false;
    return res;
  }
  const int n = sc.n;
  const std::size_t c2 = r2.second - r2.first;
  std::vector<int> d2(c2 * n), d1(n);
  for (std::size_t j = 0; j < c2; ++j) digits(e2.buckets[r2.first + j].second, e2.alphabet, n, &d2[j * n]);
  double best = 0;
  bool have = false;
  const std::size_t zs = static_cast<std::size_t>(L.nU1) * L.nU2;
  for (std::size_t i = r1.first; i < r1.second; ++i) {
    digits(e1.buckets[i].second, e1.alphabet, n, d1.data());
    for (std::size_t j = 0; j < c2; ++j) {
      double lp = 0;
      for (int t = 0; t < n && lp > -kInfLog; ++t) lp += L.logpu[zd[t] * zs + d1[t] * L.nU2 + d2[j * n + t]];
      if (!have || lp > best + 1e-9 * std::max(1.0, std::abs(best))) {
        if (have && !(lp > best)) continue;
        best = lp;
        have = true;
        res.u1 = e1.buckets[i].second;
        res.u2 = e2.buckets[r2.first + j].second;
      }
    }
  }
  return res;
}

// p(u^n | x^n) for letters held in ud and xd.
double seq_prob(const std::vector<double>& pu, int nU, const int* xd, const int* ud, int n) {
  double p = 1;
  for (int t = 0; t < n && p > 0; ++t) p *= pu[xd[t] * nU + ud[t]];
  return p;
}

// Encoder laws P(u^n | s, f, x^n) as sparse lists per (x^n, s).
struct EncoderLaw {
  std::vector<std::vector<std::pair<std::uint32_t, double>>> lists;  // index x * S + s
  bool fallback = false;
};

EncoderLaw encoder_law(const EncoderBinning& e, const std::vector<double>& pu, int nX, int n, std::uint64_t f) {
  EncoderLaw out;
  const std::uint64_t X = ipow(nX, n);
  const std::uint64_t S = e.bins[kBinShared], M = e.bins[kBinMessage];
  out.lists.resize(X * S);
  std::vector<int> xd(n), ud(n);
  std::vector<std::vector<int>> seqDigits(e.sequences, std::vector<int>(n));
  for (std::uint64_t u = 0; u < e.sequences; ++u) digits(u, e.alphabet, n, seqDigits[u].data());
  for (std::uint64_t x = 0; x < X; ++x) {
    digits(x, nX, n, xd.data());
    for (std::uint64_t s = 0; s < S; ++s) {
      auto& list = out.lists[x * S + s];
      const std::uint64_t lo = e.key(s, f, 0);
      const Range r = key_range(e, lo, lo + M);
      double total = 0;
      for (std::size_t i = r.first; i < r.second; ++i) {
        const std::uint32_t u = e.buckets[i].second;
        const double p = seq_prob(pu, e.alphabet, xd.data(), seqDigits[u].data(), n);
        if (p > 0) {
          list.emplace_back(u, p);
          total += p;
        }
      }
      if (total <= 0) {
        // No bin-consistent sequence: the encoder draws from p(u^n | x^n).
        out.fallback = true;
        list.clear();
        for (std::uint64_t u = 0; u < e.sequences; ++u) {
          const double p = seq_prob(pu, e.alphabet, xd.data(), seqDigits[u].data(), n);
          if (p > 0) {
            list.emplace_back(static_cast<std::uint32_t>(u), p);
            total += p;
          }
        }
      }
      std::sort(list.begin(), list.end());
      for (auto& [u, p] : list) p /= total;
    }
  }
  return out;
}

struct KeyHash {
  std::size_t operator()(const std::array<std::uint64_t, 5>& k) const {
    std::uint64_t h = 0;
    for (auto v : k) h = mix(h ^ v);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

std::uint64_t bin_count(int n, double rate) {
  if (!(rate >= 0) || std::isinf(rate)) throw std::invalid_argument("bin rates must be finite and nonnegative");
  const double b = std::round(std::exp2(n * rate));
  if (b > 2147483648.0) throw CapExceeded("bin count 2^(n*rate) exceeds 2^31");
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(b));
}

std::uint64_t EncoderBinning::bin(int role, std::uint64_t seq) const {
  if (!tables[role].empty()) return tables[role][seq];
  return mix(salts[role] ^ mix(seq)) % bins[role];
}

ProtocolRates BinningScheme::realized_rates() const {
  ProtocolRates r{};
  r[kPR1] = std::log2(static_cast<double>(enc[0].bins[kBinMessage])) / n;
  r[kPR2] = std::log2(static_cast<double>(enc[1].bins[kBinMessage])) / n;
  r[kPR01] = std::log2(static_cast<double>(enc[0].bins[kBinShared])) / n;
  r[kPR02] = std::log2(static_cast<double>(enc[1].bins[kBinShared])) / n;
  r[kPRt1] = std::log2(static_cast<double>(enc[0].bins[kBinExtra])) / n;
  r[kPRt2] = std::log2(static_cast<double>(enc[1].bins[kBinExtra])) / n;
  return r;
}

BinningScheme build_binning(const AuxDecomposition& dec, int n, const ProtocolRates& rates, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("blocklength must be positive");
  check_protocol_dec(dec);
  BinningScheme s;
  s.n = n;
  s.dec = dec;
  s.rates = rates;
  s.seed = seed;
  const int sizes[2] = {dec.size_u1(), dec.size_u2()};
  const int rateIdx[2][3] = {{kPR01, kPR1, kPRt1}, {kPR02, kPR2, kPRt2}};
  double dev = 0;
  bool lazy = false;
  for (int j = 0; j < 2; ++j) {
    auto& e = s.enc[j];
    if (sizes[j] < 1) throw std::invalid_argument("zero-size auxiliary alphabet");
    e.alphabet = sizes[j];
    e.sequences = ipow(sizes[j], n);
    for (int role = 0; role < 3; ++role) {
      e.bins[role] = bin_count(n, rates[rateIdx[j][role]]);
      e.salts[role] = derive(seed, j, role);
    }
    if (e.sequences > kTableCap) {
      lazy = true;
      continue;
    }
    const std::uint64_t F = e.bins[kBinExtra], M = e.bins[kBinMessage];
    if (static_cast<double>(e.bins[kBinShared]) * F * M > 1.8e19) throw CapExceeded("bin key space overflows 64 bits");
    for (int role = 0; role < 3; ++role) {
      auto& t = e.tables[role];
      t.resize(e.sequences);
      std::vector<std::uint64_t> load(e.bins[role] <= e.sequences ? e.bins[role] : 0, 0);
      for (std::uint64_t u = 0; u < e.sequences; ++u) {
        t[u] = static_cast<std::uint32_t>(mix(e.salts[role] ^ mix(u)) % e.bins[role]);
        if (!load.empty()) ++load[t[u]];
      }
      if (!load.empty() && e.bins[role] > 1) {
        const double mean = static_cast<double>(e.sequences) / e.bins[role];
        for (auto c : load) dev = std::max(dev, std::abs(c - mean) / mean);
      }
    }
    e.buckets.resize(e.sequences);
    for (std::uint64_t u = 0; u < e.sequences; ++u)
      e.buckets[u] = {e.key(e.tables[kBinShared][u], e.tables[kBinExtra][u], e.tables[kBinMessage][u]),
                      static_cast<std::uint32_t>(u)};
    std::sort(e.buckets.begin(), e.buckets.end());
  }
  s.loadDeviation = lazy ? std::nan("") : dev;
  return s;
}

SwResult sw_decode(const JointPmf& q, const BinningScheme& scheme, std::uint64_t s1, std::uint64_t f1, std::uint64_t m1,
                   std::uint64_t s2, std::uint64_t f2, std::uint64_t m2, const std::vector<int>& zn) {
  require_tabled(scheme);
  const auto& e1 = scheme.enc[0];
  const auto& e2 = scheme.enc[1];
  if (s1 >= e1.bins[kBinShared] || f1 >= e1.bins[kBinExtra] || m1 >= e1.bins[kBinMessage] ||
      s2 >= e2.bins[kBinShared] || f2 >= e2.bins[kBinExtra] || m2 >= e2.bins[kBinMessage])
    throw std::invalid_argument("bin index out of range");
  LetterLaw L = letter_law(q, scheme.dec);
  if (static_cast<int>(zn.size()) != scheme.n) throw std::invalid_argument("z^n has the wrong length");
  for (int z : zn)
    if (z < 0 || z >= L.nZ) throw std::invalid_argument("z^n symbol out of range");
  return decode(L, scheme, s1, f1, m1, s2, f2, m2, zn.data());
}

InducedLaw exact_induced_law(const JointPmf& q, const BinningScheme& scheme, std::uint64_t f1, std::uint64_t f2,
                             double workCap) {
  require_tabled(scheme);
  check_f(scheme, f1, f2);
  const LetterLaw L = letter_law(q, scheme.dec);
  const int n = scheme.n;
  const double work = std::pow(static_cast<double>(L.nX1) * L.nX2 * L.nZ, n) *
                      (std::pow(static_cast<double>(L.nU1) * L.nU2, n) + std::pow(static_cast<double>(L.nY), n));
  if (work > workCap)
    throw CapExceeded("exact induced law needs " + std::to_string(work) + " operations, above the cap");
  const auto& e1 = scheme.enc[0];
  const auto& e2 = scheme.enc[1];
  const EncoderLaw E1 = encoder_law(e1, L.pu1, L.nX1, n, f1);
  const EncoderLaw E2 = encoder_law(e2, L.pu2, L.nX2, n, f2);
  const std::uint64_t S1 = e1.bins[kBinShared], S2 = e2.bins[kBinShared];
  const std::uint64_t X1 = ipow(L.nX1, n), X2 = ipow(L.nX2, n), Zs = ipow(L.nZ, n);
  const std::uint64_t B = static_cast<std::uint64_t>(L.nX1) * L.nX2 * L.nZ * L.nY;
  std::vector<std::uint64_t> place(n);
  for (int i = 0; i < n; ++i) place[i] = ipow(B, n - 1 - i);

  std::vector<VarDecl> vars;
  for (int i = 1; i <= n; ++i)
    for (const auto& v : L.target.vars()) vars.push_back({copy_name(v.name, i), v.size});
  std::vector<double> out(ipow(B, n), 0.0);

  std::unordered_map<std::array<std::uint64_t, 5>, SwResult, KeyHash> memo;
  std::vector<int> x1d(n), x2d(n), zd(n), u1d(n), u2d(n);
  std::map<std::pair<std::uint64_t, std::uint64_t>, double> acc;
  double swError = 0;
  const double sNorm = 1.0 / (static_cast<double>(S1) * S2);
  for (std::uint64_t a = 0; a < X1; ++a) {
    digits(a, L.nX1, n, x1d.data());
    for (std::uint64_t b = 0; b < X2; ++b) {
      digits(b, L.nX2, n, x2d.data());
      for (std::uint64_t c = 0; c < Zs; ++c) {
        digits(c, L.nZ, n, zd.data());
        double p = 1;
        std::uint64_t baseIdx = 0;
        for (int t = 0; t < n && p > 0; ++t) {
          const int letter = (x1d[t] * L.nX2 + x2d[t]) * L.nZ + zd[t];
          p *= L.pxz[letter];
          baseIdx += static_cast<std::uint64_t>(letter) * L.nY * place[t];
        }
        if (p <= 0) continue;
        acc.clear();
        for (std::uint64_t s1 = 0; s1 < S1; ++s1)
          for (std::uint64_t s2 = 0; s2 < S2; ++s2) {
            const auto& l1 = E1.lists[a * S1 + s1];
            const auto& l2 = E2.lists[b * S2 + s2];
            for (const auto& [u1, w1] : l1) {
              const std::uint64_t m1 = e1.bin(kBinMessage, u1);
              for (const auto& [u2, w2] : l2) {
                const std::uint64_t m2 = e2.bin(kBinMessage, u2);
                const std::array<std::uint64_t, 5> key{s1, m1, s2, m2, c};
                auto it = memo.find(key);
                if (it == memo.end()) it = memo.emplace(key, decode(L, scheme, s1, f1, m1, s2, f2, m2, zd.data())).first;
                const SwResult& d = it->second;
                const double w = p * sNorm * w1 * w2;
                if (!d.consistent || d.u1 != u1 || d.u2 != u2) swError += w;
                acc[{d.u1, d.u2}] += w;
              }
            }
          }
        // Synthesize y^n from the decoded pair, letter by letter.
        for (const auto& [pair, w] : acc) {
          digits(pair.first, L.nU1, n, u1d.data());
          digits(pair.second, L.nU2, n, u2d.data());
          std::vector<std::pair<std::uint64_t, double>> cur{{baseIdx, w}}, next;
          for (int t = 0; t < n; ++t) {
            next.clear();
            for (const auto& [idx, pr] : cur)
              for (int y = 0; y < L.nY; ++y) {
                const double py = L.py(u1d[t], u2d[t], zd[t], y);
                if (py > 0) next.emplace_back(idx + static_cast<std::uint64_t>(y) * place[t], pr * py);
              }
            cur.swap(next);
          }
          for (const auto& [idx, pr] : cur) out[idx] += pr;
        }
      }
    }
  }
  InducedLaw res{JointPmf(std::move(vars), std::move(out), 1e-9), swError, E1.fallback || E2.fallback};
  return res;
}

JointPmf exact_induced(const JointPmf& q, const BinningScheme& scheme, std::uint64_t f1, std::uint64_t f2) {
  return exact_induced_law(q, scheme, f1, f2).pmf;
}

SimReport exact_report(const JointPmf& q, const BinningScheme& scheme, std::uint64_t seed) {
  const std::uint64_t F1 = scheme.enc[0].bins[kBinExtra], F2 = scheme.enc[1].bins[kBinExtra];
  std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
  if (static_cast<double>(F1) * F2 <= 4096) {
    for (std::uint64_t a = 0; a < F1; ++a)
      for (std::uint64_t b = 0; b < F2; ++b) pairs.emplace_back(a, b);
  } else {
    std::mt19937_64 rng(derive(seed, 0xF));
    std::uniform_int_distribution<std::uint64_t> d1(0, F1 - 1), d2(0, F2 - 1);
    for (int i = 0; i < 64; ++i) {
      const auto a = d1(rng);
      const auto b = d2(rng);
      pairs.emplace_back(a, b);
    }
  }
  const JointPmf target = iid_extend(canonical_target(q), scheme.n);
  SimReport r;
  r.n = scheme.n;
  r.seed = seed;
  r.realizedRates = scheme.realized_rates();
  double sum = 0;
  for (const auto& [a, b] : pairs) {
    InducedLaw law = exact_induced_law(q, scheme, a, b);
    const double tv = total_variation(law.pmf, target);
    sum += tv;
    if (!r.tvExact || tv < *r.tvExact) {
      r.tvExact = tv;
      r.fixedF = {a, b};
      r.swErrorRate = law.swError;
    }
  }
  r.tvAverage = sum / pairs.size();
  return r;
}

SimReport mc_simulate(const JointPmf& q, const BinningScheme& scheme, std::uint64_t trials, std::uint64_t seed,
                      std::pair<std::uint64_t, std::uint64_t> fStar, int threads) {
  if (trials < 1) throw std::invalid_argument("mc_simulate needs at least one trial");
  require_tabled(scheme);
  check_f(scheme, fStar.first, fStar.second);
  const LetterLaw L = letter_law(q, scheme.dec);
  const int n = scheme.n;
  const auto& e1 = scheme.enc[0];
  const auto& e2 = scheme.enc[1];
  const std::size_t cells = static_cast<std::size_t>(L.nX1) * L.nX2 * L.nZ * L.nY;

  struct TrialOut {
    bool error = false;
    std::vector<std::uint32_t> letters;  // single-letter cells of (x1, x2, z, y)
  };
  std::vector<TrialOut> outs(trials);
  parallel_for(trials, threads, [&](std::size_t trial) {
    std::mt19937_64 rng(derive(seed, trial, 0x7));
    std::discrete_distribution<int> src(L.pxz.begin(), L.pxz.end());
    std::vector<int> x1(n), x2(n), z(n), d(n);
    for (int t = 0; t < n; ++t) {
      const int c = src(rng);
      z[t] = c % L.nZ;
      x2[t] = (c / L.nZ) % L.nX2;
      x1[t] = c / (L.nZ * L.nX2);
    }
    auto encode = [&](const EncoderBinning& e, const std::vector<double>& pu, const std::vector<int>& x, std::uint64_t s,
                      std::uint64_t f) -> std::uint64_t {
      const std::uint64_t lo = e.key(s, f, 0);
      const Range r = key_range(e, lo, lo + e.bins[kBinMessage]);
      std::vector<double> w;
      w.reserve(r.second - r.first);
      double total = 0;
      for (std::size_t i = r.first; i < r.second; ++i) {
        digits(e.buckets[i].second, e.alphabet, n, d.data());
        w.push_back(seq_prob(pu, e.alphabet, x.data(), d.data(), n));
        total += w.back();
      }
      if (total > 0) {
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        return e.buckets[r.first + pick(rng)].second;
      }
      // No bin-consistent sequence: draw from p(u^n | x^n).
      std::uint64_t u = 0;
      for (int t = 0; t < n; ++t) {
        std::discrete_distribution<int> letter(pu.begin() + x[t] * e.alphabet, pu.begin() + (x[t] + 1) * e.alphabet);
        u = u * e.alphabet + letter(rng);
      }
      return u;
    };
    std::uniform_int_distribution<std::uint64_t> ds1(0, e1.bins[kBinShared] - 1), ds2(0, e2.bins[kBinShared] - 1);
    const std::uint64_t s1 = ds1(rng), s2 = ds2(rng);
    const std::uint64_t u1 = encode(e1, L.pu1, x1, s1, fStar.first);
    const std::uint64_t u2 = encode(e2, L.pu2, x2, s2, fStar.second);
    const SwResult dec = decode(L, scheme, s1, fStar.first, e1.bin(kBinMessage, u1), s2, fStar.second,
                                e2.bin(kBinMessage, u2), z.data());
    TrialOut& o = outs[trial];
    o.error = !dec.consistent || dec.u1 != u1 || dec.u2 != u2;
    std::vector<int> h1(n), h2(n);
    digits(dec.u1, L.nU1, n, h1.data());
    digits(dec.u2, L.nU2, n, h2.data());
    o.letters.resize(n);
    for (int t = 0; t < n; ++t) {
      const double* row = &L.ky[((static_cast<std::size_t>(h1[t]) * L.nU2 + h2[t]) * L.nZ + z[t]) * L.nY];
      std::discrete_distribution<int> py(row, row + L.nY);
      const int y = py(rng);
      o.letters[t] = static_cast<std::uint32_t>(((x1[t] * L.nX2 + x2[t]) * L.nZ + z[t]) * L.nY + y);
    }
  });

  SimReport r;
  r.n = n;
  r.trials = trials;
  r.seed = seed;
  r.fixedF = fStar;
  r.realizedRates = scheme.realized_rates();
  std::uint64_t errors = 0;
  for (const auto& o : outs) errors += o.error;
  r.swErrorRate = static_cast<double>(errors) / trials;
  r.swStdErr = std::sqrt(r.swErrorRate * (1 - r.swErrorRate) / trials);
  auto tv_of = [&](std::size_t from, std::size_t to) {
    std::vector<double> counts(cells, 0.0);
    for (std::size_t i = from; i < to; ++i)
      for (auto c : outs[i].letters) counts[c] += 1;
    const double total = static_cast<double>(to - from) * n;
    double tv = 0;
    for (std::size_t c = 0; c < cells; ++c) tv += std::abs(counts[c] / total - L.target[c]);
    return 0.5 * tv;
  };
  r.tvEstimate = tv_of(0, trials);
  const std::size_t batches = std::min<std::uint64_t>(trials, 20);
  if (batches > 1) {
    std::vector<double> tvs;
    for (std::size_t b = 0; b < batches; ++b) tvs.push_back(tv_of(b * trials / batches, (b + 1) * trials / batches));
    double mean = 0, var = 0;
    for (double v : tvs) mean += v / batches;
    for (double v : tvs) var += (v - mean) * (v - mean) / (batches - 1);
    // Batch TVs overestimate the full-sample TV; the spread still sizes its noise.
    r.tvStdErr = std::sqrt(var / batches);
  }
  return r;
}

std::vector<SimReport> protocol_curve(const JointPmf& q, const AuxDecomposition& dec, const ProtocolRates& rates,
                                      const std::vector<int>& nList, SimMode mode, std::uint64_t seed,
                                      std::uint64_t trials, int threads) {
  for (std::size_t i = 1; i < nList.size(); ++i)
    if (nList[i] <= nList[i - 1]) throw std::invalid_argument("blocklengths must be strictly ascending");
  std::vector<SimReport> out;
  for (int n : nList) {
    const std::uint64_t s = derive(seed, static_cast<std::uint64_t>(n), 0xB);
    BinningScheme scheme = build_binning(dec, n, rates, s);
    out.push_back(mode == SimMode::Exact ? exact_report(q, scheme, s) : mc_simulate(q, scheme, trials, s, {0, 0}, threads));
  }
  return out;
}

namespace {

struct SoftLaw {
  int a = 1, b = 1;
  std::vector<double> px, pu;  // p(x0), p(u0 | x0) rows
};

SoftLaw soft_law(const SoftCoveringConfig& cfg) {
  SoftLaw s;
  s.a = static_cast<int>(cfg.basePmf.size());
  if (s.a < 1) throw std::invalid_argument("empty X0 distribution");
  double tot = 0;
  for (double p : cfg.basePmf) {
    if (!(p >= 0)) throw std::invalid_argument("X0 probabilities must be nonnegative");
    tot += p;
  }
  if (std::abs(tot - 1) > kSumTol) throw std::invalid_argument("X0 probabilities must sum to one");
  if (cfg.channel.from.size() != 1 || cfg.channel.to.size() != 1 || cfg.channel.from[0].size != s.a)
    throw std::invalid_argument("channel must map X0 to U0");
  cfg.channel.validate();
  if (!cfg.channel.all_defined()) throw std::invalid_argument("channel rows must all be defined");
  if (!(cfg.rate >= 0)) throw std::invalid_argument("soft-covering rate must be nonnegative");
  s.b = cfg.channel.to[0].size;
  s.px = cfg.basePmf;
  s.pu = cfg.channel.table;
  return s;
}

// E|K/N - p| for K ~ Binomial(N, p).
double binomial_abs_dev(std::uint64_t N, double p) {
  if (p <= 0 || p >= 1) return 0;
  const double lg = std::lgamma(static_cast<double>(N) + 1), lp = std::log(p), lq = std::log1p(-p);
  double e = 0;
  for (std::uint64_t k = 0; k <= N; ++k) {
    const double lw = lg - std::lgamma(static_cast<double>(k) + 1) - std::lgamma(static_cast<double>(N - k) + 1) +
                      k * lp + (N - k) * lq;
    e += std::exp(lw) * std::abs(static_cast<double>(k) / N - p);
  }
  return e;
}

}  // namespace

double single_codeword_gap(const SoftCoveringConfig& cfg, int n) {
  const SoftLaw s = soft_law(cfg);
  double best = 0;
  for (int x = 0; x < s.a; ++x) best += s.px[x] * *std::max_element(s.pu.begin() + x * s.b, s.pu.begin() + (x + 1) * s.b);
  return 1 - std::pow(best, n);
}

std::vector<SoftCoveringPoint> soft_covering_sim(const SoftCoveringConfig& cfg) {
  const SoftLaw s = soft_law(cfg);
  std::vector<SoftCoveringPoint> out;
  for (int n : cfg.nList) {
    if (n < 1) throw std::invalid_argument("blocklength must be positive");
    SoftCoveringPoint pt;
    pt.n = n;
    pt.codewords = bin_count(n, cfg.rate);
    const std::uint64_t N = pt.codewords;
    const std::uint64_t X = ipow(s.a, n), U = ipow(s.b, n);
    // Group (x0^n, u0^n) cells by their probabilities; E|K/N - p| only depends on p.
    std::map<double, double> weightByP;  // p(u|x) -> sum of p(x) over cells
    const bool enumerable = static_cast<double>(X) * U <= 16777216.0;
    if (enumerable) {
      std::vector<int> xd(n), ud(n);
      for (std::uint64_t x = 0; x < X; ++x) {
        digits(x, s.a, n, xd.data());
        double px = 1;
        for (int t = 0; t < n; ++t) px *= s.px[xd[t]];
        if (px <= 0) continue;
        for (std::uint64_t u = 0; u < U; ++u) {
          digits(u, s.b, n, ud.data());
          double p = 1;
          for (int t = 0; t < n && p > 0; ++t) p *= s.pu[xd[t] * s.b + ud[t]];
          if (p > 0) weightByP[p] += px;
        }
      }
    }
    if (enumerable && static_cast<double>(weightByP.size()) * (N + 1) <= 268435456.0) {
      double tv = 0;
      for (const auto& [p, w] : weightByP) tv += w * binomial_abs_dev(N, p);
      pt.tv = 0.5 * tv;
      pt.exact = true;
    } else {
      if (static_cast<double>(X) * N * n * cfg.trials > 4e9 || cfg.trials < 1)
        throw CapExceeded("soft-covering estimate exceeds the work cap");
      pt.exact = false;
      std::vector<double> tvs(cfg.trials);
      parallel_for(cfg.trials, 1, [&](std::size_t trial) {
        std::mt19937_64 rng(derive(cfg.seed, static_cast<std::uint64_t>(n), trial));
        std::vector<int> xd(n);
        std::vector<std::discrete_distribution<int>> rows;
        for (int x = 0; x < s.a; ++x) rows.emplace_back(s.pu.begin() + x * s.b, s.pu.begin() + (x + 1) * s.b);
        double tv = 0;
        std::unordered_map<std::uint64_t, std::uint64_t> hits;
        for (std::uint64_t x = 0; x < X; ++x) {
          digits(x, s.a, n, xd.data());
          double px = 1;
          for (int t = 0; t < n; ++t) px *= s.px[xd[t]];
          if (px <= 0) continue;
          hits.clear();
          for (std::uint64_t c = 0; c < N; ++c) {
            std::uint64_t u = 0;
            for (int t = 0; t < n; ++t) u = u * s.b + rows[xd[t]](rng);
            ++hits[u];
          }
          // Cells never hit contribute their full probability.
          double covered = 0, dev = 0;
          for (const auto& [u, k] : hits) {
            double p = 1;
            std::uint64_t v = u;
            for (int t = n - 1; t >= 0; --t) {
              p *= s.pu[xd[t] * s.b + static_cast<int>(v % s.b)];
              v /= s.b;
            }
            covered += p;
            dev += std::abs(static_cast<double>(k) / N - p);
          }
          tv += px * (dev + (1 - covered));
        }
        tvs[trial] = 0.5 * tv;
      });
      double mean = 0, var = 0;
      for (double v : tvs) mean += v / tvs.size();
      for (double v : tvs) var += (v - mean) * (v - mean) / std::max<std::size_t>(1, tvs.size() - 1);
      pt.tv = mean;
      pt.stdErr = std::sqrt(var / tvs.size());
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace coordsim
