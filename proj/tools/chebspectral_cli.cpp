// chebspectral: eigensolver, clustering pipeline, cost benchmark and
// self-verification from the command line.
//
// Exit codes: 0 ok, 1 verification or convergence failure, 2 usage or I/O.

#include <chebspectral/chebspectral.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace chebspectral;

namespace {

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;
constexpr int kDefaultMaxRanks = 64;

// ---------------------------------------------------------------------------
// logging

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level g_level = Level::warn;

void init_log() {
  const char* env = std::getenv("CHEBSPECTRAL_LOG");
  if (!env) return;
  const std::string v = env;
  if (v == "error") g_level = Level::error;
  else if (v == "warn") g_level = Level::warn;
  else if (v == "info") g_level = Level::info;
  else if (v == "debug") g_level = Level::debug;
  else std::cerr << "warning: unknown CHEBSPECTRAL_LOG value '" << v << "', using warn\n";
}

void log(Level l, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (l <= g_level) std::cerr << '[' << names[static_cast<int>(l)] << "] " << msg << '\n';
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// run configuration

struct RunConfig {
  std::string input;
  std::string format = "auto";
  Index k = 0;
  Index kb = 4;
  int deg = 11;
  double tol = 1e-8;
  Index itmax = 300;
  std::uint64_t seed = 42;
  std::string mode = "seq";
  int p = 1;
  bool allow_many_ranks = false;
  std::string truth;
  std::string out_dir = ".";
  std::string report;
  std::string vectors_format = "csv";
  int repeats = 20;
  std::string metrics;
  std::vector<int> p_list{1, 4, 9, 16};
  Index sbm_n = 400;
  Index sbm_blocks = 4;
  double sbm_pin = 0.2;
  double sbm_pout = 0.01;
  std::string fault = "none";

  SolverConfig solver() const {
    SolverConfig c;
    c.k_want = k;
    c.k_b = kb;
    c.m = deg;
    c.tol = tol;
    c.itmax = itmax;
    c.seed = seed;
    if (mode == "dist") c.ortho = OrthoMethod::block_cgs_qr;
    return c;
  }

  fs::path out(const std::string& name) const { return fs::path(out_dir) / name; }
};

GraphFormat resolve_format(const RunConfig& rc) {
  if (rc.format == "tsv") return GraphFormat::tsv;
  if (rc.format == "mm") return GraphFormat::matrix_market;
  const std::string ext = fs::path(rc.input).extension().string();
  return ext == ".mtx" || ext == ".mm" ? GraphFormat::matrix_market : GraphFormat::tsv;
}

void check_ranks(const RunConfig& rc, int p) {
  if (p < 1) throw UsageError("--p must be >= 1");
  if (p > kDefaultMaxRanks && !rc.allow_many_ranks)
    throw UsageError("--p " + std::to_string(p) + " exceeds the default cap of " +
                     std::to_string(kDefaultMaxRanks) + " simulated ranks; pass --allow-many-ranks");
  const int q = static_cast<int>(std::lround(std::sqrt(static_cast<double>(p))));
  if (q * q != p) throw UsageError("--p must be a perfect square, got " + std::to_string(p));
}

EdgeList load_graph(const RunConfig& rc) {
  if (rc.input.empty()) throw UsageError("--input is required");
  if (!fs::exists(rc.input)) throw IoError("cannot open " + rc.input);
  const EdgeList g = load_edge_list(rc.input, resolve_format(rc));
  std::ostringstream os;
  os << "loaded " << rc.input << ": " << g.n_nodes << " nodes, " << g.edges.size() << " edges";
  log(Level::info, os.str());
  return g;
}

json config_json(const SolverConfig& c, const FilterBounds& b) {
  return {{"k_want", c.k_want}, {"k_b", c.k_b},       {"m", c.m},
          {"act_max", c.act_max}, {"dim_max", c.dim_max}, {"k_ri", c.k_ri},
          {"tol", c.tol},         {"itmax", c.itmax},     {"seed", c.seed},
          {"ortho", c.ortho == OrthoMethod::dgks ? "dgks" : "block_cgs_qr"},
          {"bounds", {{"a", b.a}, {"b", b.b}, {"a0", b.a0}}}};
}

json counters_json(const CostCounters& c) {
  json phases = json::object();
  std::map<std::string, CollectiveCost> by_phase;
  for (const auto& [key, v] : c.by_collective) by_phase[key.first] += v;
  for (const auto& [name, v] : by_phase)
    phases[name] = {{"count", v.count}, {"messages", v.messages}, {"words", v.words}};
  return {{"messages", c.messages}, {"words", c.words}, {"flops", c.flops}, {"phases", phases}};
}

void write_text_values(const fs::path& path, const Eigen::VectorXd& v) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (Index i = 0; i < v.size(); ++i) out << v(i) << '\n';
}

void write_vectors_csv(const fs::path& path, const DenseBlock& x) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << x(i, j);
    out << '\n';
  }
}

template <class T>
void put_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  auto u = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

// 16-byte header: 8-byte magic "CHEBVEC1", uint32 N, uint32 k; then N*k
// little-endian float64, row-major.
void write_vectors_binary(const fs::path& path, const DenseBlock& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("CHEBVEC1", 8);
  put_le(out, static_cast<std::uint32_t>(x.rows()));
  put_le(out, static_cast<std::uint32_t>(x.cols()));
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) put_le(out, x(i, j));
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// solve (shared by eigs and cluster)

struct Solved {
  EigResult result;
  std::optional<CostCounters> counters;  // max over ranks, distributed only
  double seconds = 0.0;
};

Solved solve(const RunConfig& rc, const CsrMatrix& a) {
  if (rc.k < 1) throw UsageError("--k must be >= 1");
  const SolverConfig cfg = rc.solver();
  cfg.resolved(a.rows());  // throws invalid_argument on bad parameters
  const auto hook = [](const SolverState& st) {
    if (g_level < Level::debug) return;
    std::ostringstream os;
    os << "iter " << st.iteration << ": locked " << st.k_c << ", active " << st.k_act;
    log(Level::debug, os.str());
  };
  Solved s;
  const auto t0 = std::chrono::steady_clock::now();
  if (rc.mode == "seq") {
    s.result = bchdav_solve(a, cfg, std::nullopt, std::nullopt, hook);
  } else {
    check_ranks(rc, rc.p);
    const DistRunResult d = dist_bchdav_run(a, cfg, rc.p);
    s.result = d.result;
    s.counters = max_over_ranks(d.counters);
  }
  s.seconds = seconds_since(t0);
  std::ostringstream os;
  os << "solve: " << s.result.iterations << " iterations, " << s.result.n_converged << "/"
     << cfg.k_want << " converged, " << s.seconds << " s";
  log(Level::info, os.str());
  return s;
}

json solve_report(const std::string& command, const RunConfig& rc, const Solved& s) {
  json j;
  j["command"] = command;
  j["input"] = rc.input;
  j["mode"] = rc.mode;
  j["p"] = rc.mode == "dist" ? rc.p : 1;
  j["config"] = config_json(s.result.config, s.result.bounds);
  j["iterations"] = s.result.iterations;
  j["converged"] = s.result.converged;
  j["n_converged"] = s.result.n_converged;
  j["eigenvalues"] = std::vector<double>(s.result.values.data(),
                                         s.result.values.data() + s.result.values.size());
  j["residuals"] = std::vector<double>(s.result.residuals.data(),
                                       s.result.residuals.data() + s.result.residuals.size());
  j["seconds"] = s.seconds;
  j["counters"] = s.counters ? counters_json(*s.counters) : json(nullptr);
  return j;
}

fs::path report_path(const RunConfig& rc) {
  return rc.report.empty() ? rc.out("report.json") : fs::path(rc.report);
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_eigs(const RunConfig& rc) {
  const EdgeList g = load_graph(rc);
  fs::create_directories(rc.out_dir);
  const Solved s = solve(rc, normalized_laplacian(g));
  write_text_values(rc.out("eigenvalues.txt"), s.result.values);
  if (rc.vectors_format == "binary")
    write_vectors_binary(rc.out("eigenvectors.bin"), s.result.vectors);
  else
    write_vectors_csv(rc.out("eigenvectors.csv"), s.result.vectors);
  write_json(report_path(rc), solve_report("eigs", rc, s));
  if (!s.result.converged) {
    log(Level::error, "solver did not converge within itmax");
    return kFail;
  }
  return kOk;
}

int cmd_cluster(const RunConfig& rc) {
  const EdgeList g = load_graph(rc);
  std::optional<Partition> truth;
  if (!rc.truth.empty()) {
    if (!fs::exists(rc.truth)) throw IoError("cannot open " + rc.truth);
    try {
      truth = read_partition(rc.truth);
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
    if (truth->size() != g.n_nodes)
      throw IoError("truth has " + std::to_string(truth->size()) +
                                   " labels, graph has " + std::to_string(g.n_nodes) + " nodes");
  }
  if (rc.repeats < 1) throw UsageError("--repeats must be >= 1");
  fs::create_directories(rc.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const Solved s = solve(rc, normalized_laplacian(g));
  KMeansOptions ko;
  ko.seed = rc.seed;
  const Partition part = spectral_partition(s.result.vectors, rc.k, ko);
  write_partition(rc.out("partition.txt").string(), part);
  write_text_values(rc.out("eigenvalues.txt"), s.result.values);

  json rep = solve_report("cluster", rc, s);
  rep["n_zero_rows"] = row_normalize(s.result.vectors).n_zero_rows();
  if (truth) {
    const ClusterScores sc = evaluate_repeats(s.result.vectors, *truth, rc.k, rc.repeats, ko);
    const double secs = seconds_since(t0);
    rep["ari"] = sc.ari;
    rep["nmi"] = sc.nmi;
    rep["ari_mean"] = sc.ari_mean;
    rep["nmi_mean"] = sc.nmi_mean;
    rep["repeats"] = rc.repeats;
    const fs::path mpath = rc.metrics.empty() ? rc.out("metrics.csv") : fs::path(rc.metrics);
    const bool fresh = !fs::exists(mpath) || fs::file_size(mpath) == 0;
    std::ofstream m(mpath, std::ios::app);
    if (!m) throw IoError("cannot write " + mpath.string());
    if (fresh) m << "graph,k,ari_mean,nmi_mean,seconds\n";
    m << std::setprecision(10) << fs::path(rc.input).stem().string() << ',' << rc.k << ','
      << sc.ari_mean << ',' << sc.nmi_mean << ',' << secs << '\n';
    std::ostringstream os;
    os << "ARI " << sc.ari_mean << ", NMI " << sc.nmi_mean << " over " << rc.repeats << " repeats";
    log(Level::info, os.str());
  }
  write_json(report_path(rc), rep);
  if (!s.result.converged) {
    log(Level::error, "solver did not converge within itmax");
    return kFail;
  }
  return kOk;
}

int cmd_bench(const RunConfig& rc) {
  if (rc.k < 1) throw UsageError("--k must be >= 1");
  for (int p : rc.p_list) check_ranks(rc, p);
  CsrMatrix a;
  std::string graph_name;
  if (!rc.input.empty()) {
    a = normalized_laplacian(load_graph(rc));
    graph_name = fs::path(rc.input).stem().string();
  } else {
    a = normalized_laplacian(gen_sbm(rc.sbm_n, rc.sbm_blocks, rc.sbm_pin, rc.sbm_pout, rc.seed).graph);
    graph_name = "sbm" + std::to_string(rc.sbm_n);
  }
  fs::create_directories(rc.out_dir);
  SolverConfig cfg = rc.solver();
  cfg.ortho = OrthoMethod::block_cgs_qr;
  cfg.resolved(a.rows());

  const fs::path path = rc.report.empty() ? rc.out("bench.csv") : fs::path(rc.report);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "graph,n,p,q,component,calls,messages,words,flops,iterations,seconds\n";
  static const char* components[] = {"filter", "spmm", "orthonormalization", "rq_update",
                                     "residual"};
  bool all_converged = true;
  for (int p : rc.p_list) {
    const auto t0 = std::chrono::steady_clock::now();
    const DistRunResult d = dist_bchdav_run(a, cfg, p);
    const double secs = seconds_since(t0);
    const CostCounters c = max_over_ranks(d.counters);
    all_converged = all_converged && d.result.converged;
    for (const char* comp : components) {
      const CollectiveCost t = c.phase_total(comp);
      const auto f = c.flops_by_phase.find(comp);
      out << graph_name << ',' << a.rows() << ',' << p << ',' << GridTopology(p).q() << ','
          << comp << ',' << t.count << ',' << t.messages << ',' << t.words << ','
          << (f == c.flops_by_phase.end() ? 0 : f->second) << ',' << d.result.iterations << ','
          << secs << '\n';
    }
    std::ostringstream os;
    os << "bench p=" << p << ": " << d.result.iterations << " iterations, " << secs << " s";
    log(Level::info, os.str());
  }
  return all_converged ? kOk : kFail;
}

int cmd_verify(const RunConfig& rc) {
  VerifyOptions vo;
  vo.seed = rc.seed;
  check_ranks(rc, rc.p);
  vo.p = rc.p == 1 ? 4 : rc.p;
  if (rc.fault == "layout") vo.faults.skip_redistribute = true;
  else if (rc.fault == "rsign") vo.faults.flip_r_sign = true;
  const VerifyReport rep = run_verify(vo);
  json j = json::array();
  for (const auto& c : rep.checks) {
    std::cout << (c.passed ? "ok   " : "FAIL ") << c.name << "  err=" << std::setprecision(3)
              << c.value << " tol=" << c.tol << (c.detail.empty() ? "" : "  (" + c.detail + ")")
              << '\n';
    j.push_back({{"name", c.name}, {"passed", c.passed}, {"tol", c.tol}, {"detail", c.detail},
                 {"value", std::isfinite(c.value) ? json(c.value) : json(nullptr)}});
  }
  if (!rc.report.empty()) write_json(rc.report, {{"seed", rc.seed}, {"p", vo.p}, {"checks", j}});
  if (const PropertyCheck* f = rep.first_failure()) {
    std::cerr << "verification failed: " << f->name << '\n';
    return kFail;
  }
  std::cout << "all checks passed\n";
  return kOk;
}

int cmd_sbm(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  const SbmGraph s = gen_sbm(rc.sbm_n, rc.sbm_blocks, rc.sbm_pin, rc.sbm_pout, rc.seed);
  const fs::path gpath = rc.out("graph.tsv");
  std::ofstream out(gpath);
  if (!out) throw IoError("cannot write " + gpath.string());
  write_edge_list_tsv(out, s.graph);
  write_partition(rc.out("truth.txt").string(), s.truth);
  return kOk;
}

void add_solver_flags(CLI::App* sub, RunConfig& rc, bool need_input) {
  auto* in = sub->add_option("--input", rc.input, "Edge list (TSV) or Matrix Market file");
  if (need_input) in->required();
  sub->add_option("--format", rc.format, "Input format; auto picks mm for .mtx/.mm")
      ->check(CLI::IsMember({"auto", "tsv", "mm"}));
  sub->add_option("--k", rc.k, "Number of eigenpairs / clusters")->required();
  sub->add_option("--kb", rc.kb, "Block size")->capture_default_str();
  sub->add_option("--deg", rc.deg, "Chebyshev filter degree")->capture_default_str();
  sub->add_option("--tol", rc.tol, "Relative residual tolerance")->capture_default_str();
  sub->add_option("--itmax", rc.itmax, "Maximum outer iterations")->capture_default_str();
  sub->add_option("--seed", rc.seed, "Random seed")->capture_default_str();
  sub->add_option("--out-dir", rc.out_dir, "Output directory")->capture_default_str();
  sub->add_option("--report", rc.report, "Report path");
}

void add_rank_flags(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--p", rc.p, "Simulated ranks (perfect square)")->capture_default_str();
  sub->add_flag("--allow-many-ranks", rc.allow_many_ranks,
                "Lift the 64-rank cap. Every rank is a thread holding its own blocks, so memory "
                "grows with p");
}

}  // namespace

int main(int argc, char** argv) {
  init_log();
  RunConfig rc;
  CLI::App app{"Spectral clustering with a block Chebyshev-Davidson eigensolver"};
  app.require_subcommand(1);

  auto* eigs = app.add_subcommand("eigs", "Smallest eigenpairs of the normalized Laplacian");
  add_solver_flags(eigs, rc, true);
  add_rank_flags(eigs, rc);
  eigs->add_option("--mode", rc.mode, "seq or dist")->check(CLI::IsMember({"seq", "dist"}));
  eigs->add_option("--vectors-format", rc.vectors_format, "csv or binary")
      ->check(CLI::IsMember({"csv", "binary"}));

  auto* cluster = app.add_subcommand("cluster", "Full spectral clustering pipeline");
  add_solver_flags(cluster, rc, true);
  add_rank_flags(cluster, rc);
  cluster->add_option("--mode", rc.mode, "seq or dist")->check(CLI::IsMember({"seq", "dist"}));
  cluster->add_option("--truth", rc.truth, "Ground-truth labels, one per line");
  cluster->add_option("--repeats", rc.repeats, "k-means repeats for scoring")->capture_default_str();
  cluster->add_option("--metrics", rc.metrics, "Metrics CSV to append to (default out-dir/metrics.csv)");

  auto* bench = app.add_subcommand("bench", "Charged communication per solver component over p");
  add_solver_flags(bench, rc, false);
  bench->add_flag("--allow-many-ranks", rc.allow_many_ranks, "Lift the 64-rank cap");
  bench->add_option("--p-list", rc.p_list, "Rank counts to sweep")->delimiter(',');
  bench->add_option("--sbm-n", rc.sbm_n, "SBM size when no --input is given")->capture_default_str();
  bench->add_option("--sbm-blocks", rc.sbm_blocks, "SBM blocks")->capture_default_str();

  auto* verify = app.add_subcommand("verify", "Check every component against dense references");
  verify->add_option("--seed", rc.seed, "Instance seed")->capture_default_str();
  add_rank_flags(verify, rc);
  verify->add_option("--inject-fault", rc.fault, "none, layout or rsign")
      ->check(CLI::IsMember({"none", "layout", "rsign"}));
  verify->add_option("--report", rc.report, "JSON report path");

  auto* sbm = app.add_subcommand("sbm", "Write a stochastic block model graph and its labels");
  sbm->add_option("--n", rc.sbm_n, "Nodes")->required();
  sbm->add_option("--blocks", rc.sbm_blocks, "Blocks")->required();
  sbm->add_option("--p-in", rc.sbm_pin, "Within-block edge probability")->capture_default_str();
  sbm->add_option("--p-out", rc.sbm_pout, "Between-block edge probability")->capture_default_str();
  sbm->add_option("--seed", rc.seed, "Seed")->capture_default_str();
  sbm->add_option("--out-dir", rc.out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*eigs) return cmd_eigs(rc);
    if (*cluster) return cmd_cluster(rc);
    if (*bench) return cmd_bench(rc);
    if (*verify) return cmd_verify(rc);
    if (*sbm) return cmd_sbm(rc);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const GraphParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFail;
  }
  return kUsage;
}
