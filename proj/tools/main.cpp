// coordsim: command-line front end for region evaluation and search,
// protocol simulation, soft covering, elimination and the worked example.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "coordsim/examples.hpp"
#include "coordsim/info_expr.hpp"
#include "coordsim/json_io.hpp"
#include "coordsim/osrb.hpp"
#include "coordsim/search.hpp"

#ifndef COORDSIM_VERSION
#define COORDSIM_VERSION "dev"
#endif

using namespace coordsim;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr const char* kBuiltinExample = "builtin:example1";

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

// Rounds every float to 12 significant digits; non-finite values become strings.
Json round_floats(const Json& j) {
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (!std::isfinite(v)) return num(v);
    return std::stod(num(v));
  }
  if (j.is_array() || j.is_object()) {
    Json out = j;
    for (auto it = out.begin(); it != out.end(); ++it) *it = round_floats(*it);
    return out;
  }
  return j;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const auto& t : split(s, ',')) {
    try {
      std::size_t used = 0;
      const double v = t == "inf" ? kInf : std::stod(t, &used);
      if (t != "inf" && used != t.size()) throw std::invalid_argument(t);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + t + "' is not a number");
    }
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s, const std::string& flag) {
  std::vector<int> out;
  for (double v : parse_doubles(s, flag)) {
    if (v != std::floor(v) || std::isinf(v)) throw UsageError(flag + ": expected integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

struct Run {
  std::string subcommand;
  std::vector<std::string> argv;
  int threads = 1;
  std::string outPath;
  std::vector<std::string> inputs;
  Json inputEcho = Json::object();

  Json config(std::optional<std::uint64_t> seed) const {
    Json c = {{"tool", "coordsim"}, {"version", COORDSIM_VERSION}, {"subcommand", subcommand},
              {"argv", argv},       {"threads", threads},          {"inputs", inputEcho}};
    if (seed) c["seed"] = *seed;
    return c;
  }

  JointPmf load_pmf(const std::string& path) {
    if (path == kBuiltinExample) {
      inputEcho["pmf"] = kBuiltinExample;
      return example1_distribution();
    }
    inputs.push_back(path);
    const Json j = read_json_file(path);
    inputEcho["pmf"] = j;
    return pmf_from_json(j);
  }
  AuxDecomposition load_dec(const std::string& path) {
    inputs.push_back(path);
    const Json j = read_json_file(path);
    inputEcho["dec"] = j;
    return dec_from_json(j);
  }
  Json load_json(const std::string& key, const std::string& path) {
    inputs.push_back(path);
    Json j = read_json_file(path);
    inputEcho[key] = j;
    return j;
  }

  void check_output_path() const {
    if (outPath.empty()) return;
    namespace fs = std::filesystem;
    const auto out = fs::weakly_canonical(outPath);
    for (const auto& in : inputs)
      if (fs::weakly_canonical(in) == out) throw UsageError("--out would overwrite input '" + in + "'");
  }

  void emit(const std::string& text) const {
    if (outPath.empty()) {
      std::cout << text;
      return;
    }
    std::ofstream f(outPath);
    if (!f) throw FormatError("cannot write '" + outPath + "'");
    f << text;
  }
  void emit_json(const Json& j) const { emit(round_floats(j).dump(2) + "\n"); }
  // CSV with the config as leading '#' lines.
  void emit_csv(const Json& config, const std::string& body) const {
    emit("# config " + round_floats(config).dump() + "\n" + body);
  }
};

std::uint64_t require_seed(const std::optional<std::uint64_t>& s, const std::string& cmd) {
  if (!s) throw UsageError(cmd + " is stochastic and needs --seed");
  return *s;
}

Json trace_row_json(const TraceResult& t, Theorem th) {
  Json j = {{"weights", t.weights}, {"value", t.value}, {"point", t.point.to_string(th)}};
  if (t.certificate) {
    j["dec"] = dec_to_json(t.certificate->dec);
    j["eval"] = region_eval_to_json(t.certificate->eval);
    j["restart"] = t.certificate->restart;
  }
  return j;
}

// ---- region ----

struct RegionOpts {
  std::string pmf, theorem = "thm1", point, sizes, dec;
  std::size_t restarts = 64;
  int iterations = 200;
  std::optional<std::uint64_t> seed;
  double tol = 1e-6;
};

AuxSizes parse_sizes(const std::string& s) {
  AuxSizes a{0, 0, 0, 0};
  if (s.empty()) return a;
  const auto v = parse_ints(s, "--sizes");
  if (v.size() != 4) throw UsageError("--sizes needs U1,U2,U0,T");
  return {v[0], v[1], v[2], v[3]};
}

int cmd_region(Run& run, const RegionOpts& o) {
  const Theorem t = parse_theorem(o.theorem);
  const JointPmf q = run.load_pmf(o.pmf);
  RatePoint p;
  try {
    p = RatePoint::parse(o.point, t);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--point: ") + e.what());
  }
  if (!o.dec.empty()) {
    // Evaluates the given decomposition; no search.
    const AuxDecomposition d = run.load_dec(o.dec);
    run.check_output_path();
    const RegionEval e = evaluate(t, q, d);
    const bool ok = e.certifies(p, o.tol);
    run.emit_json({{"config", run.config(std::nullopt)},
                   {"point", p.to_string(t)},
                   {"certified", ok},
                   {"violation", e.violation(p)},
                   {"eval", region_eval_to_json(e)}});
    return ok ? 0 : 1;
  }
  run.check_output_path();
  SearchBudget b;
  b.sizes = parse_sizes(o.sizes);
  b.restarts = o.restarts;
  b.iterations = o.iterations;
  b.seed = require_seed(o.seed, "region");
  b.tol = o.tol;
  b.threads = run.threads;
  const auto r = region_membership(q, p, t, b);
  Json j = {{"config", run.config(b.seed)},
            {"theorem", theorem_name(t)},
            {"point", p.to_string(t)},
            {"found", r.found},
            {"bestMargin", r.bestMargin},
            {"restartsRun", r.restartsRun}};
  if (r.certificate) {
    j["certificate"] = {{"restart", r.certificate->restart},
                        {"dec", dec_to_json(r.certificate->dec)},
                        {"eval", region_eval_to_json(r.certificate->eval)}};
  } else {
    j["verdict"] = "not found within budget (not a non-membership claim)";
  }
  run.emit_json(j);
  return r.found ? 0 : 1;
}

// ---- trace ----

struct TraceOpts {
  std::string pmf, theorem = "thm1", weights, sizes, certDir;
  std::size_t restarts = 64;
  int iterations = 200;
  std::optional<std::uint64_t> seed;
};

int cmd_trace(Run& run, const TraceOpts& o) {
  const Theorem t = parse_theorem(o.theorem);
  const JointPmf q = run.load_pmf(o.pmf);
  run.check_output_path();
  std::vector<RateWeights> ws;
  for (const auto& part : split(o.weights, ';')) {
    const auto v = parse_doubles(part, "--weights");
    if (v.size() != kNumRates) throw UsageError("--weights: each vector needs R1,R2,R00,R01,R02 weights");
    RateWeights w{};
    std::copy(v.begin(), v.end(), w.begin());
    ws.push_back(w);
  }
  if (ws.empty()) throw UsageError("--weights is empty");
  SearchBudget b;
  b.sizes = parse_sizes(o.sizes);
  b.restarts = o.restarts;
  b.iterations = o.iterations;
  b.seed = require_seed(o.seed, "trace");
  b.threads = run.threads;
  const auto res = trace_boundary(q, t, ws, b);
  std::ostringstream csv;
  csv << "wR1,wR2,wR00,wR01,wR02,value,R1,R2,R00,R01,R02,certificate\n";
  bool all = true;
  for (std::size_t i = 0; i < res.size(); ++i) {
    const auto& r = res[i];
    for (double w : r.weights) csv << num(w) << ",";
    csv << num(r.value);
    for (double c : r.point.r) csv << "," << num(c);
    std::string cert;
    if (r.certificate && !o.certDir.empty()) {
      std::filesystem::create_directories(o.certDir);
      cert = (std::filesystem::path(o.certDir) / ("trace_" + std::to_string(i) + ".json")).string();
      write_json_file(cert, round_floats({{"config", run.config(b.seed)}, {"trace", trace_row_json(r, t)}}));
    } else if (!r.certificate) {
      cert = "none";
      all = false;
    }
    csv << "," << cert << "\n";
  }
  run.emit_csv(run.config(b.seed), csv.str());
  return all ? 0 : 1;
}

// ---- simulate ----

struct SimulateOpts {
  std::string pmf, dec, rates, n = "1,2,3,4", mode = "exact";
  std::uint64_t trials = 10000;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(Run& run, const SimulateOpts& o) {
  const JointPmf q = run.load_pmf(o.pmf);
  const AuxDecomposition d = run.load_dec(o.dec);
  run.check_output_path();
  const auto rv = parse_doubles(o.rates, "--rates");
  if (rv.size() != 6) throw UsageError("--rates needs R1,R2,R01,R02,Rt1,Rt2");
  ProtocolRates rates{};
  std::copy(rv.begin(), rv.end(), rates.begin());
  const auto ns = parse_ints(o.n, "--n");
  if (o.mode != "exact" && o.mode != "mc") throw UsageError("--mode must be exact or mc");
  const auto mode = o.mode == "exact" ? SimMode::Exact : SimMode::MonteCarlo;
  const std::uint64_t seed = require_seed(o.seed, "simulate");
  const auto curve = protocol_curve(q, d, rates, ns, mode, seed, o.trials, run.threads);
  std::ostringstream csv;
  csv << "n,tv,tvStdErr,tvAverage,swError,swStdErr,fStar,trials\n";
  for (const auto& r : curve) {
    const double tv = r.tvExact ? *r.tvExact : (r.tvEstimate ? *r.tvEstimate : std::nan(""));
    csv << r.n << "," << num(tv) << "," << num(r.tvStdErr) << ","
        << (r.tvAverage ? num(*r.tvAverage) : std::string()) << "," << num(r.swErrorRate) << ","
        << num(r.swStdErr) << "," << r.fixedF.first << ":" << r.fixedF.second << "," << r.trials << "\n";
  }
  run.emit_csv(run.config(seed), csv.str());
  return 0;
}

// ---- softcover ----

struct SoftcoverOpts {
  std::string base = "1", channel, n = "2,4,6,8";
  int uniform = 2;
  double rate = 1;
  std::uint64_t trials = 200;
  std::optional<std::uint64_t> seed;
};

int cmd_softcover(Run& run, const SoftcoverOpts& o) {
  SoftCoveringConfig cfg;
  cfg.basePmf = parse_doubles(o.base, "--base");
  if (!o.channel.empty()) {
    cfg.channel = kernel_from_json(run.load_json("channel", o.channel));
  } else {
    if (o.uniform < 1) throw UsageError("--uniform needs a positive alphabet size");
    const int nx = static_cast<int>(cfg.basePmf.size());
    cfg.channel = ConditionalKernel({{"X0", nx}}, {{"U0", o.uniform}},
                                    std::vector<double>(static_cast<std::size_t>(nx) * o.uniform, 1.0 / o.uniform));
  }
  run.check_output_path();
  cfg.rate = o.rate;
  cfg.nList = parse_ints(o.n, "--n");
  cfg.trials = o.trials;
  cfg.seed = require_seed(o.seed, "softcover");
  const auto pts = soft_covering_sim(cfg);
  std::ostringstream csv;
  csv << "n,codewords,tv,stdErr,exact,singleCodewordGap\n";
  for (const auto& p : pts)
    csv << p.n << "," << p.codewords << "," << num(p.tv) << "," << num(p.stdErr) << "," << (p.exact ? 1 : 0) << ","
        << num(single_codeword_gap(cfg, p.n)) << "\n";
  run.emit_csv(run.config(cfg.seed), csv.str());
  return 0;
}

// ---- fme ----

struct FmeOpts {
  std::string in, eliminate;
  bool noNonnegativity = false;
  std::size_t rowCap = 100000;
};

int cmd_fme(Run& run, const FmeOpts& o) {
  const IneqSystem sys = system_from_json(run.load_json("system", o.in));
  run.check_output_path();
  std::set<std::string> drop;
  for (const auto& v : split(o.eliminate, ','))
    if (!v.empty()) drop.insert(v);
  FmeOptions opts;
  opts.addNonnegativity = !o.noNonnegativity;
  opts.rowCap = o.rowCap;
  const IneqSystem out = fme_eliminate(sys, drop, opts);
  Json j = system_to_json(out);
  j["config"] = run.config(std::nullopt);
  Json text = Json::array();
  for (const auto& r : out.rows) text.push_back(format_row(r));
  j["display"] = text;
  run.emit_json(j);
  return 0;
}

// ---- example1 ----

struct Example1Opts {
  std::string check = "all";
  std::size_t budget = 10000, restarts = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_example1(Run& run, const Example1Opts& o) {
  static const std::set<std::string> kChecks = {"corners", "remark3", "encsr", "claims", "appendixA", "detfn", "all"};
  if (!kChecks.count(o.check)) throw UsageError("--check: unknown check '" + o.check + "'");
  const bool all = o.check == "all";
  const bool stochastic = all || o.check == "claims" || o.check == "appendixA" || o.check == "detfn" ||
                          (o.check == "corners" && o.restarts > 0);
  const std::optional<std::uint64_t> seed =
      stochastic ? std::optional<std::uint64_t>(require_seed(o.seed, "example1 --check " + o.check)) : o.seed;
  const std::uint64_t s = seed.value_or(0);
  run.check_output_path();
  std::vector<ExampleReport> reports;
  if (all || o.check == "corners") reports.push_back(verify_prop1_corners(o.restarts, s));
  if (all || o.check == "remark3") reports.push_back(remark3_eval());
  if (all || o.check == "encsr") reports.push_back(enc_sr_point());
  if (all || o.check == "claims") reports.push_back(claims_report(o.budget, s));
  if (all || o.check == "appendixA") {
    reports.push_back(appendixA_region(20, 10000, s));
    reports.push_back(binning_fme_check(20, 10000, s));
  }
  if (all || o.check == "detfn") reports.push_back(detfn_suite(100, s));
  bool pass = true;
  Json arr = Json::array();
  for (const auto& r : reports) {
    pass = pass && r.pass();
    arr.push_back(r.to_json());
  }
  run.emit_json({{"config", run.config(seed)}, {"pass", pass}, {"reports", arr}});
  return pass ? 0 : 1;
}

// ---- info ----

struct InfoOpts {
  std::string pmf, entropy, mi, expr, tv, markov, commonPart;
  double tol = 1e-9;
};

VarSet names(const std::string& s) {
  VarSet v;
  for (const auto& t : split(s, ','))
    if (!t.empty()) v.push_back(t);
  return v;
}

int cmd_info(Run& run, const InfoOpts& o) {
  const JointPmf p = run.load_pmf(o.pmf);
  std::optional<JointPmf> other;
  if (!o.tv.empty()) other = run.load_pmf(o.tv);
  run.check_output_path();
  const int chosen = !o.entropy.empty() + !o.mi.empty() + !o.expr.empty() + !o.tv.empty() + !o.markov.empty() +
                     !o.commonPart.empty();
  if (chosen != 1)
    throw UsageError("info needs exactly one of --entropy, --mi, --expr, --tv, --markov, --common-part");
  std::ostringstream out;
  out << "# config " << round_floats(run.config(std::nullopt)).dump() << "\n";
  int code = 0;
  if (!o.entropy.empty()) {
    if (o.entropy.find(';') != std::string::npos) throw UsageError("--entropy takes A,B|C (no ';')");
    out << num(eval_info_expr(p, o.entropy)) << "\n";
  } else if (!o.mi.empty()) {
    if (o.mi.find(';') == std::string::npos) throw UsageError("--mi takes A,B;C|D");
    out << num(eval_info_expr(p, o.mi)) << "\n";
  } else if (!o.expr.empty()) {
    out << num(eval_info_expr(p, o.expr)) << "\n";
  } else if (other) {
    out << num(total_variation(p, *other)) << "\n";
  } else if (!o.markov.empty()) {
    // A;B|C holds when I(A;B|C) <= tol.
    const double v = eval_info_expr(p, o.markov);
    out << (v <= o.tol ? "markov" : "not-markov") << " " << num(v) << "\n";
    code = v <= o.tol ? 0 : 1;
  } else {
    const auto parts = split(o.commonPart, ';');
    if (parts.size() != 2) throw UsageError("--common-part takes A;B");
    const auto cp = common_part(marginal(p, {parts[0], parts[1]}));
    std::vector<double> mass(cp.count, 0.0);
    const JointPmf m = marginal(p, {parts[0]});
    for (std::size_t a = 0; a < cp.labels1.size(); ++a) mass[cp.labels1[a]] += m[a];
    out << "count " << cp.count << "\nentropy " << num(entropy_of(mass)) << "\n";
    out << parts[0] << " labels";
    for (int l : cp.labels1) out << " " << l;
    out << "\n" << parts[1] << " labels";
    for (int l : cp.labels2) out << " " << l;
    out << "\n";
  }
  run.emit(out.str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  Run run;
  for (int i = 0; i < argc; ++i) run.argv.push_back(argv[i]);

  CLI::App app{"coordsim: rate regions and random-binning simulation for distributed coordination"};
  app.set_version_flag("--version", COORDSIM_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--threads", run.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", run.outPath, "Write the result here instead of stdout");

  const char* pmfHelp = "Target pmf JSON file, or builtin:example1";

  RegionOpts ro;
  auto* region = app.add_subcommand("region", "Search for a decomposition certifying a rate point");
  region->add_option("--pmf", ro.pmf, pmfHelp)->required();
  region->add_option("--theorem", ro.theorem, "thm1 ... thm6")->capture_default_str();
  region->add_option("--point", ro.point, "R1,R2[,R00],R01,R02 ('inf' allowed)")->required();
  region->add_option("--sizes", ro.sizes, "U1,U2,U0,T alphabet sizes (0 = default)");
  region->add_option("--restarts", ro.restarts)->capture_default_str();
  region->add_option("--iterations", ro.iterations)->capture_default_str();
  region->add_option("--seed", ro.seed);
  region->add_option("--tol", ro.tol)->capture_default_str();
  region->add_option("--dec", ro.dec, "Evaluate this decomposition instead of searching");

  TraceOpts to;
  auto* trace = app.add_subcommand("trace", "Weighted boundary points of a region");
  trace->add_option("--pmf", to.pmf, pmfHelp)->required();
  trace->add_option("--theorem", to.theorem)->capture_default_str();
  trace->add_option("--weights", to.weights, "Vectors wR1,wR2,wR00,wR01,wR02 separated by ';'")->required();
  trace->add_option("--sizes", to.sizes);
  trace->add_option("--restarts", to.restarts)->capture_default_str();
  trace->add_option("--iterations", to.iterations)->capture_default_str();
  trace->add_option("--seed", to.seed);
  trace->add_option("--cert-dir", to.certDir, "Directory for certificate files");

  SimulateOpts so;
  auto* simulate = app.add_subcommand("simulate", "Finite-blocklength random-binning protocol");
  simulate->add_option("--pmf", so.pmf, pmfHelp)->required();
  simulate->add_option("--dec", so.dec, "Decomposition JSON file")->required();
  simulate->add_option("--rates", so.rates, "R1,R2,R01,R02,Rt1,Rt2")->required();
  simulate->add_option("--n", so.n, "Blocklengths, ascending")->capture_default_str();
  simulate->add_option("--mode", so.mode, "exact or mc")->capture_default_str();
  simulate->add_option("--trials", so.trials)->capture_default_str();
  simulate->add_option("--seed", so.seed);

  SoftcoverOpts co;
  auto* softcover = app.add_subcommand("softcover", "Soft-covering synthesis of encoder shared randomness");
  softcover->add_option("--base", co.base, "p(x0) as a list")->capture_default_str();
  softcover->add_option("--channel", co.channel, "Kernel JSON file from X0 to U0");
  softcover->add_option("--uniform", co.uniform, "Uniform U0 alphabet size when no --channel")->capture_default_str();
  softcover->add_option("--rate", co.rate, "R00")->capture_default_str();
  softcover->add_option("--n", co.n)->capture_default_str();
  softcover->add_option("--trials", co.trials)->capture_default_str();
  softcover->add_option("--seed", co.seed);

  FmeOpts fo;
  auto* fme = app.add_subcommand("fme", "Fourier-Motzkin elimination of an inequality file");
  fme->add_option("--in", fo.in, "Inequality system JSON file")->required();
  fme->add_option("--eliminate", fo.eliminate, "Variables to eliminate, comma separated")->required();
  fme->add_flag("--no-nonnegativity", fo.noNonnegativity, "Do not add R >= 0 rows before eliminating");
  fme->add_option("--row-cap", fo.rowCap)->capture_default_str();

  Example1Opts eo;
  auto* example1 = app.add_subcommand("example1", "Checks on the worked example");
  example1->add_option("--check", eo.check, "corners|remark3|encsr|claims|appendixA|detfn|all")->capture_default_str();
  example1->add_option("--budget", eo.budget, "Feasible decompositions per claim search")->capture_default_str();
  example1->add_option("--restarts", eo.restarts, "Search restarts for the (1,1) exclusion in corners")
      ->capture_default_str();
  example1->add_option("--seed", eo.seed);

  InfoOpts io;
  auto* info = app.add_subcommand("info", "Information quantities of a pmf");
  info->add_option("--pmf", io.pmf, pmfHelp)->required();
  info->add_option("--entropy", io.entropy, "A,B|C");
  info->add_option("--mi", io.mi, "A,B;C|D");
  info->add_option("--expr", io.expr, "e.g. 'I(X1;Y|Z) - H(X2)'");
  info->add_option("--tv", io.tv, "Second pmf file");
  info->add_option("--markov", io.markov, "A;B|C");
  info->add_option("--common-part", io.commonPart, "A;B");
  info->add_option("--tol", io.tol)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*region) return run.subcommand = "region", cmd_region(run, ro);
    if (*trace) return run.subcommand = "trace", cmd_trace(run, to);
    if (*simulate) return run.subcommand = "simulate", cmd_simulate(run, so);
    if (*softcover) return run.subcommand = "softcover", cmd_softcover(run, co);
    if (*fme) return run.subcommand = "fme", cmd_fme(run, fo);
    if (*example1) return run.subcommand = "example1", cmd_example1(run, eo);
    if (*info) return run.subcommand = "info", cmd_info(run, io);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
