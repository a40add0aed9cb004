// Acceptance harness: exercises every advertised guarantee end to end and
// prints one PASS/FAIL line per criterion. Criteria that depend on external
// raw data report REPLACED when that data is absent and are covered by the
// synthetic criteria instead. Exit status is 0 only if every runnable
// criterion holds.
//
// Usage: acceptance <path-to-cli-binary>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dgcn/analysis.hpp"
#include "dgcn/dataset.hpp"
#include "dgcn/deform_conv.hpp"
#include "dgcn/model.hpp"
#include "dgcn/positional.hpp"
#include "dgcn/tensor.hpp"
#include "dgcn/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Criterion {
  int id;
  std::string name;
  bool pass = false;
  bool replaced = false;
  std::string detail;
};

void report(const Criterion& c) {
  const char* tag = c.replaced ? "REPLACED" : (c.pass ? "PASS" : "FAIL");
  std::cout << "[" << c.id << "] " << tag << " " << c.name << ": " << c.detail << "\n"
            << std::flush;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream ss;
  ss << std::setprecision(4) << x;
  return ss.str();
}

int run_cli(const std::string& cli, const std::vector<std::string>& args,
            const std::string& log_path) {
  std::string cmd = "'" + cli + "'";
  for (const std::string& a : args) cmd += " '" + a + "'";
  cmd += " > '" + log_path + "' 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ------------------------------------------------- 1: gradient correctness

Criterion check_gradients(const std::string& cli, const fs::path& work) {
  Criterion c{1, "gradient correctness"};
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run_cli(cli, {"gradcheck"}, (work / "gradcheck.log").string());
  const double secs = seconds_since(t0);
  c.pass = rc == 0 && secs < 30.0;
  c.detail = "all parameter groups vs central differences, exit " + std::to_string(rc) + ", " +
             fmt(secs) + " s (limit 30)";
  return c;
}

// -------------------------------------------- 2: factored-form equivalence

struct RandomCase {
  dgcn::NeighborhoodGraph graph;
  std::size_t n, d_phi, d_h, d_y, d_x, d_def, K;
  std::vector<double> phi, H, e;
  dgcn::KernelParams params;
};

RandomCase make_random_case(std::uint64_t seed, std::size_t n = 10) {
  RandomCase c;
  c.n = n;
  c.d_phi = 3;
  c.d_h = 4;
  c.d_y = 4;
  c.d_x = 5;
  c.d_def = 6;
  c.K = 3;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> coords(n * 2);
  for (double& x : coords) x = gauss(rng);
  c.graph = dgcn::build_knn_graph(coords, n, 2, 3, "0");
  c.phi.resize(n * c.d_phi);
  for (double& x : c.phi) x = gauss(rng);
  c.H.resize(n * c.d_h);
  for (double& x : c.H) x = gauss(rng);
  c.e.resize(n * c.d_x);
  for (double& x : c.e) x = gauss(rng);
  c.params = dgcn::init_kernel_params(c.K, c.d_phi, c.d_h, c.d_y, c.d_x, c.d_def, rng);
  return c;
}

oracle::ConvInstance to_oracle(const RandomCase& c, bool with_deform) {
  oracle::ConvInstance in;
  in.n = c.n;
  in.d_phi = c.d_phi;
  in.d_h = c.d_h;
  in.d_y = c.d_y;
  in.K = c.K;
  in.graph = &c.graph;
  in.phi = c.phi;
  in.H = c.H;
  for (const dgcn::Tensor& t : c.params.phi_tilde)
    in.phi_tilde.insert(in.phi_tilde.end(), t.values.begin(), t.values.end());
  for (const dgcn::Tensor& t : c.params.W_k)
    in.W.insert(in.W.end(), t.values.begin(), t.values.end());
  if (with_deform)
    in.delta = oracle::deformation_mlp(
        c.e, c.n, c.d_x, c.params.def_W1.values, c.params.def_b1.values, c.d_def,
        c.params.def_W2.values, c.params.def_b2.values, c.K * (c.d_phi + 1));
  return in;
}

dgcn::ConvOutput run_library_conv(dgcn::Tape& tape, const RandomCase& c, bool with_deform) {
  dgcn::Tensor phi = tape.leaf(dgcn::Tensor({c.n, c.d_phi}, c.phi));
  dgcn::Tensor H = tape.leaf(dgcn::Tensor({c.n, c.d_h}, c.H));
  dgcn::Tensor e({c.n, c.d_x}, c.e);
  dgcn::KernelParams bound = c.params.bind(tape);
  return dgcn::deform_gconv(tape, c.graph, H, phi, e, bound, with_deform);
}

Criterion check_oracle_equivalence() {
  Criterion c{2, "factored aggregation equivalence"};
  double worst_deform = 0.0, worst_static = 0.0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    RandomCase rc = make_random_case(seed);
    {
      dgcn::Tape tape;
      dgcn::ConvOutput out = run_library_conv(tape, rc, true);
      std::vector<double> ref = oracle::deform_conv_direct(to_oracle(rc, true));
      for (std::size_t i = 0; i < ref.size(); ++i)
        worst_deform = std::max(worst_deform, std::abs(out.Y.values[i] - ref[i]));
    }
    {
      dgcn::Tape tape;
      dgcn::ConvOutput out = run_library_conv(tape, rc, false);
      std::vector<double> ref = oracle::static_kernel_conv(to_oracle(rc, false));
      for (std::size_t i = 0; i < ref.size(); ++i)
        worst_static = std::max(worst_static, std::abs(out.Y.values[i] - ref[i]));
    }
  }
  c.pass = worst_deform <= 1e-10 && worst_static <= 1e-10;
  c.detail = "20 random 10-node instances; max |diff| vs literal double sum " +
             fmt(worst_deform) + ", vs shared-normalizer form " + fmt(worst_static) +
             " (limit 1e-10)";
  return c;
}

// --------------------------------------------- 3: normalization identities

Criterion check_normalization() {
  Criterion c{3, "normalization identities"};
  dgcn::Dataset ds = dgcn::generate_synthetic(120, 3, 0.3, 8, 3, 1.0, 5);
  dgcn::ModelConfig cfg;
  cfg.L = 2;
  cfg.K = 3;
  cfg.knn = 5;
  cfg.d_phi = 8;
  cfg.d_h = 16;
  cfg.dropout = 0.0;
  dgcn::DeformableModel m = dgcn::DeformableModel::make(ds, cfg, 9);
  dgcn::Tape tape;
  dgcn::ModelPass pass = m.run(tape, false, nullptr);

  double a_dev = 0.0;
  for (std::size_t l = 0; l < m.graphs.size(); ++l) {
    const dgcn::NeighborhoodGraph& g = m.graphs[l];
    for (std::size_t k = 0; k < pass.out.conv[l].a_hat.size(); ++k)
      for (std::size_t v = 0; v < g.num_nodes; ++v) {
        double s = 0.0;
        for (std::size_t e = g.offsets[v]; e < g.offsets[v + 1]; ++e)
          s += pass.out.conv[l].a_hat[k][e];
        a_dev = std::max(a_dev, std::abs(s - 1.0));
      }
  }

  double s_dev = 0.0;
  const std::size_t levels = m.graphs.size();
  for (std::size_t v = 0; v < ds.num_nodes; ++v) {
    double s = 0.0;
    for (std::size_t l = 0; l < levels; ++l) s += pass.out.scores.values[v * levels + l];
    s_dev = std::max(s_dev, std::abs(s - 1.0));
  }

  double mass_dev = 0.0;
  for (std::size_t v = 0; v < ds.num_nodes; ++v) {
    std::vector<double> intensity =
        dgcn::receptive_field(v, pass.out.scores, m.graphs, pass.out.conv);
    double mass = 0.0;
    for (double x : intensity) mass += x;
    mass_dev = std::max(mass_dev, std::abs(mass - static_cast<double>(cfg.K)));
  }

  c.pass = a_dev <= 1e-9 && s_dev <= 1e-9 && mass_dev <= 1e-8;
  c.detail = "kernel weight row sums off by " + fmt(a_dev) + " (limit 1e-9), score sums by " +
             fmt(s_dev) + " (limit 1e-9), receptive mass by " + fmt(mass_dev) + " (limit 1e-8)";
  return c;
}

// ------------------------------------- 4: reference benchmark reproduction

struct NamedTarget {
  std::string name;
  double dgcn_ref, gcn_ref;  // reference mean test accuracies, percent
};

fs::path find_webkb_root() {
  std::vector<fs::path> bases;
  if (const char* env = std::getenv("DGCN_WEBKB_RAW")) bases.emplace_back(env);
  bases.emplace_back("data/webkb");
  bases.emplace_back("../data/webkb");
  bases.emplace_back("../../data/webkb");
  for (const fs::path& b : bases) {
    if (fs::exists(b / "texas" / "out1_node_feature_label.txt")) return b;
  }
  return {};
}

Criterion check_reference_benchmarks(const std::string& cli, const fs::path& work) {
  Criterion c{4, "reference benchmark accuracy"};
  const fs::path root = find_webkb_root();
  if (root.empty()) {
    c.replaced = true;
    c.detail = "raw WebKB files not found (DGCN_WEBKB_RAW or ./data/webkb); covered by the "
               "synthetic heterophily criterion";
    return c;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<NamedTarget> targets = {
      {"texas", 84.32, 64.32}, {"wisconsin", 87.06, 62.94}, {"cornell", 85.95, 60.27}};
  std::string detail;
  bool ok = true;
  for (const NamedTarget& t : targets) {
    const fs::path out = work / ("webkb_" + t.name);
    const int rc = run_cli(cli,
                           {"import", "--raw-dir", (root / t.name).string(), "--out",
                            out.string()},
                           (work / ("import_" + t.name + ".log")).string());
    if (rc != 0) {
      c.detail = "import of " + t.name + " failed with exit " + std::to_string(rc);
      return c;
    }
    dgcn::Dataset ds =
        dgcn::load_dataset((out / "nodes.tsv").string(), (out / "edges.tsv").string());
    std::vector<dgcn::SplitMasks> splits = dgcn::make_splits(ds, {}, 10, 0);

    double dgcn_sum = 0.0, gcn_sum = 0.0;
    for (std::size_t s = 0; s < splits.size(); ++s) {
      dgcn::TrainConfig tc;
      tc.epochs = 200;
      tc.seed = s;
      dgcn::ModelConfig cfg;
      {
        dgcn::DeformableModel m = dgcn::DeformableModel::make(ds, cfg, tc.seed);
        dgcn_sum += dgcn::train_model(m, ds, splits[s], tc).test_at_best;
      }
      {
        dgcn::GCNModel m = dgcn::GCNModel::make(ds, cfg, tc.seed);
        gcn_sum += dgcn::train_model(m, ds, splits[s], tc).test_at_best;
      }
    }
    const double dgcn_acc = 100.0 * dgcn_sum / static_cast<double>(splits.size());
    const double gcn_acc = 100.0 * gcn_sum / static_cast<double>(splits.size());
    const bool hit = std::abs(dgcn_acc - t.dgcn_ref) <= 5.0 && std::abs(gcn_acc - t.gcn_ref) <= 5.0;
    ok = ok && hit;
    detail += t.name + " " + fmt(dgcn_acc) + "/" + fmt(t.dgcn_ref) + " vs gcn " + fmt(gcn_acc) +
              "/" + fmt(t.gcn_ref) + (hit ? " ok; " : " MISS; ");
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 1800.0;
  c.pass = ok;
  c.detail = detail + fmt(secs) + " s (limit 1800)";
  return c;
}

// ------------------------- 5, 6, 8: synthetic heterophily suite (shared runs)

struct SyntheticOutcome {
  // mean test accuracies in percent over the seed repetitions
  double dgcn_low = 0, gcn_low = 0, noreg_low = 0, dgcn_high = 0, gcn_high = 0;
  double input_score_low = 0, input_score_high = 0;  // mean s over the input graph level
  double h_weight_min = 0, h_weight_max_excess = 0;  // bound violations across all models
  double attention_sum_dev = 0;
  double secs = 0;
  std::size_t kernels = 0;
};

SyntheticOutcome run_synthetic_suite() {
  SyntheticOutcome so;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t seeds = 5;
  dgcn::ModelConfig cfg;  // stock configuration
  so.kernels = cfg.K;

  double hw_min = 0.0, hw_excess = 0.0, att_dev = 0.0;
  auto scan_report = [&](const dgcn::AnalysisReport& rep, double K) {
    double total = 0.0;
    for (double s : rep.avg_scores) total += s;
    att_dev = std::max(att_dev, std::abs(total - 1.0));
    for (const auto* table : {&rep.h_deform, &rep.h_no_deform})
      for (const auto& row : *table)
        for (double h : row) {
          hw_min = std::min(hw_min, h);
          hw_excess = std::max(hw_excess, h - K);
        }
  };

  for (std::size_t s = 0; s < seeds; ++s) {
    // heterophilic regime
    {
      dgcn::Dataset ds = dgcn::generate_synthetic(800, 5, 0.1, 64, 5, 1.0, 1000 + s);
      dgcn::SplitMasks split = dgcn::make_splits(ds, {}, 1, 2000 + s)[0];
      dgcn::TrainConfig tc;
      tc.epochs = 50;
      tc.seed = 3000 + s;
      {
        dgcn::DeformableModel m = dgcn::DeformableModel::make(ds, cfg, tc.seed);
        so.dgcn_low += 100.0 * dgcn::train_model(m, ds, split, tc).test_at_best;
        dgcn::AnalysisReport rep = dgcn::analyze(ds, m.graphs, m.smoothed, m.params, {});
        scan_report(rep, static_cast<double>(cfg.K));
        so.input_score_low += rep.avg_scores.back();
      }
      {
        dgcn::TrainConfig noreg = tc;
        noreg.alpha = 0.0;
        noreg.beta = 0.0;
        dgcn::DeformableModel m = dgcn::DeformableModel::make(ds, cfg, tc.seed);
        so.noreg_low += 100.0 * dgcn::train_model(m, ds, split, noreg).test_at_best;
      }
      {
        dgcn::TrainConfig gcn_tc = tc;
        gcn_tc.epochs = 200;
        dgcn::GCNModel m = dgcn::GCNModel::make(ds, cfg, tc.seed);
        so.gcn_low += 100.0 * dgcn::train_model(m, ds, split, gcn_tc).test_at_best;
      }
    }
    // homophilic regime
    {
      dgcn::Dataset ds = dgcn::generate_synthetic(800, 5, 0.8, 64, 5, 1.0, 1500 + s);
      dgcn::SplitMasks split = dgcn::make_splits(ds, {}, 1, 2500 + s)[0];
      dgcn::TrainConfig tc;
      tc.epochs = 50;
      tc.seed = 3500 + s;
      {
        dgcn::DeformableModel m = dgcn::DeformableModel::make(ds, cfg, tc.seed);
        so.dgcn_high += 100.0 * dgcn::train_model(m, ds, split, tc).test_at_best;
        dgcn::AnalysisReport rep = dgcn::analyze(ds, m.graphs, m.smoothed, m.params, {});
        scan_report(rep, static_cast<double>(cfg.K));
        so.input_score_high += rep.avg_scores.back();
      }
      {
        dgcn::TrainConfig gcn_tc = tc;
        gcn_tc.epochs = 200;
        dgcn::GCNModel m = dgcn::GCNModel::make(ds, cfg, tc.seed);
        so.gcn_high += 100.0 * dgcn::train_model(m, ds, split, gcn_tc).test_at_best;
      }
    }
  }
  const double denom = static_cast<double>(seeds);
  so.dgcn_low /= denom;
  so.gcn_low /= denom;
  so.noreg_low /= denom;
  so.dgcn_high /= denom;
  so.gcn_high /= denom;
  so.input_score_low /= denom;
  so.input_score_high /= denom;
  so.h_weight_min = hw_min;
  so.h_weight_max_excess = hw_excess;
  so.attention_sum_dev = att_dev;
  so.secs = seconds_since(t0);
  return so;
}

Criterion check_heterophily(const SyntheticOutcome& so) {
  Criterion c{5, "heterophily advantage"};
  const double gap = so.dgcn_low - so.gcn_low;
  const double parity = std::abs(so.dgcn_high - so.gcn_high);
  c.pass = gap >= 10.0 && parity <= 3.0 && so.secs < 600.0;
  c.detail = "h=0.1 deformable " + fmt(so.dgcn_low) + " vs gcn " + fmt(so.gcn_low) + " (gap " +
             fmt(gap) + ", need >= 10); h=0.8 " + fmt(so.dgcn_high) + " vs " + fmt(so.gcn_high) +
             " (|diff| " + fmt(parity) + ", limit 3); " + fmt(so.secs) + " s (limit 600)";
  return c;
}

Criterion check_regularizer_trend(const SyntheticOutcome& so) {
  Criterion c{6, "regularizer trend"};
  c.pass = so.dgcn_low >= so.noreg_low - 0.5;
  c.detail = "h=0.1 with both regularizers " + fmt(so.dgcn_low) + " vs without " +
             fmt(so.noreg_low) + " (allowed drop 0.5)";
  return c;
}

Criterion check_analysis_identities(const SyntheticOutcome& so) {
  Criterion c{8, "analysis identities"};
  const bool bounds = so.h_weight_min >= -1e-12 && so.h_weight_max_excess <= 1e-12;
  const bool sums = so.attention_sum_dev <= 1e-6;
  const bool direction = so.input_score_high > so.input_score_low;
  c.pass = bounds && sums && direction;
  c.detail = "homophilic weights within [0, K] (min " + fmt(so.h_weight_min) + ", excess " +
             fmt(so.h_weight_max_excess) + "); attention level means sum to 1 off by " +
             fmt(so.attention_sum_dev) + " (limit 1e-6); input-graph score homophilic " +
             fmt(so.input_score_high) + " > heterophilic " + fmt(so.input_score_low);
  return c;
}

// ------------------------------------------------------------ 7: determinism

Criterion check_determinism(const std::string& cli, const fs::path& work) {
  Criterion c{7, "determinism"};
  const std::vector<std::string> base = {
      "train",  "--synthetic", "n=60,c=3,h=0.2,d=8,degree=2,noise=1.0",
      "--model", "deformable", "--epochs", "20", "--hidden", "8", "--d-phi", "4",
      "--kernels", "2", "--levels", "1", "--knn", "2", "--seed", "5"};
  for (int i = 0; i < 2; ++i) {
    std::vector<std::string> args = base;
    args.push_back("--out");
    args.push_back((work / ("det" + std::to_string(i))).string());
    const int rc = run_cli(cli, args, (work / ("det" + std::to_string(i) + ".log")).string());
    if (rc != 0) {
      c.detail = "training invocation " + std::to_string(i) + " failed with exit " +
                 std::to_string(rc);
      return c;
    }
  }
  const std::string s0 = slurp((work / "det0" / "summary.json").string());
  const std::string s1 = slurp((work / "det1" / "summary.json").string());
  const std::string m0 = slurp((work / "det0" / "runs" / "split0_seed0" / "metrics.jsonl").string());
  const std::string m1 = slurp((work / "det1" / "runs" / "split0_seed0" / "metrics.jsonl").string());
  c.pass = !s0.empty() && s0 == s1 && !m0.empty() && m0 == m1;
  c.detail = std::string("repeated identical invocations: summaries ") +
             (s0 == s1 && !s0.empty() ? "byte-identical" : "DIFFER") + ", per-epoch logs " +
             (m0 == m1 && !m0.empty() ? "byte-identical" : "DIFFER");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <cli-binary>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = fs::temp_directory_path() / "dgcn_acceptance_work";
  std::error_code ec;
  fs::remove_all(work, ec);
  fs::create_directories(work);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Criterion> results;
  auto add = [&](Criterion c) {
    report(c);
    results.push_back(std::move(c));
  };

  add(check_gradients(cli, work));
  add(check_oracle_equivalence());
  add(check_normalization());
  add(check_reference_benchmarks(cli, work));
  const SyntheticOutcome so = run_synthetic_suite();
  add(check_heterophily(so));
  add(check_regularizer_trend(so));
  add(check_determinism(cli, work));
  add(check_analysis_identities(so));

  std::size_t passed = 0, replaced = 0;
  bool ok = true;
  for (const Criterion& c : results) {
    if (c.replaced)
      ++replaced;
    else if (c.pass)
      ++passed;
    else
      ok = false;
  }
  std::cout << "acceptance: " << passed << " passed, " << replaced << " replaced, "
            << (results.size() - passed - replaced) << " failed; total " << fmt(seconds_since(t0))
            << " s\n";
  return ok ? 0 : 1;
}
