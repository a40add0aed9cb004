// Command-line driver for deformable graph convolutional networks:
// training sweeps with grid search, checkpoint evaluation, analysis exports,
// finite-difference gradient checks, synthetic data generation, and import of
// raw public node-classification files.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dgcn/analysis.hpp"
#include "dgcn/dataset.hpp"
#include "dgcn/grad_check.hpp"
#include "dgcn/model.hpp"
#include "dgcn/positional.hpp"
#include "dgcn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- utilities

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream in(s);
  while (std::getline(in, tok, ',')) {
    // trim surrounding whitespace
    const auto b = tok.find_first_not_of(" \t");
    const auto e = tok.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : tok.substr(b, e - b + 1));
  }
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CliError("cannot parse " + what + " value '" + s + "' as a number");
  }
}

std::uint64_t parse_uint(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw CliError("cannot parse " + what + " value '" + s + "' as an unsigned integer");
  return v;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const std::string& tok : split_csv(s)) out.push_back(parse_double(tok, what));
  if (out.empty()) throw CliError(what + ": empty value list");
  return out;
}

std::vector<std::size_t> parse_uint_list(const std::string& s, const std::string& what) {
  std::vector<std::size_t> out;
  for (const std::string& tok : split_csv(s))
    out.push_back(static_cast<std::size_t>(parse_uint(tok, what)));
  if (out.empty()) throw CliError(what + ": empty value list");
  return out;
}

// The seed environment variable outranks every other seed source.
void apply_env_seed(std::uint64_t& seed) {
  if (const char* s = std::getenv("DEFORM_GNN_SEED")) {
    seed = parse_uint(s, "DEFORM_GNN_SEED");
  }
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CliError("cannot write " + path);
  out << content;
}

void write_json(const std::string& path, const ordered_json& j) {
  write_text(path, j.dump(1) + "\n");
}

// CLI11 only processes config files hung on the root command, so the flat
// key=value file is applied by hand: every option the command line left
// untouched picks up the file's value, which keeps the precedence order
// flag > file > built-in default.
void apply_config_file(CLI::App* sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError("cannot open config file: " + path);
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path + ":" + std::to_string(line_no);
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw CliError(where + ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    std::string val = trim(stripped.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
      val = val.substr(1, val.size() - 2);
    if (key == "config") throw CliError(where + ": config files cannot nest");
    if (std::find(seen.begin(), seen.end(), key) != seen.end())
      throw CliError(where + ": duplicate config key '" + key + "'");
    seen.push_back(key);
    CLI::Option* op = sub->get_option_no_throw("--" + key);
    if (op == nullptr) throw CliError(where + ": unknown config key '" + key + "'");
    if (op->count() > 0) continue;  // an explicit flag outranks the file
    op->add_result(val);
    op->run_callback();
  }
}

// ------------------------------------------------------------ dataset wiring

struct SynthSpec {
  std::size_t n = 200;
  std::size_t c = 5;
  double h = 0.1;
  std::size_t d = 32;
  std::size_t degree = 5;
  double noise = 1.0;
};

SynthSpec parse_synth_spec(const std::string& spec) {
  SynthSpec s;
  for (const std::string& tok : split_csv(spec)) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw CliError("synthetic spec entry '" + tok + "' is not key=value");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "n")
      s.n = static_cast<std::size_t>(parse_uint(val, "n"));
    else if (key == "c")
      s.c = static_cast<std::size_t>(parse_uint(val, "c"));
    else if (key == "h")
      s.h = parse_double(val, "h");
    else if (key == "d")
      s.d = static_cast<std::size_t>(parse_uint(val, "d"));
    else if (key == "degree")
      s.degree = static_cast<std::size_t>(parse_uint(val, "degree"));
    else if (key == "noise")
      s.noise = parse_double(val, "noise");
    else
      throw CliError("unknown synthetic spec key '" + key +
                     "' (expected n, c, h, d, degree, noise)");
  }
  return s;
}

ordered_json synth_spec_json(const SynthSpec& s) {
  ordered_json j;
  j["n"] = s.n;
  j["c"] = s.c;
  j["h"] = s.h;
  j["d"] = s.d;
  j["degree"] = s.degree;
  j["noise"] = s.noise;
  return j;
}

struct DataSource {
  std::string dataset_dir;  // exactly one of the two is set
  std::string synth_spec;

  bool synthetic() const { return !synth_spec.empty(); }

  void validate() const {
    if (dataset_dir.empty() == synth_spec.empty())
      throw CliError("exactly one of --dataset and --synthetic is required");
  }

  dgcn::Dataset load(std::uint64_t seed) const {
    if (synthetic()) {
      const SynthSpec s = parse_synth_spec(synth_spec);
      return dgcn::generate_synthetic(s.n, s.c, s.h, s.d, s.degree, s.noise, seed);
    }
    return dgcn::load_dataset(dataset_dir + "/nodes.tsv", dataset_dir + "/edges.tsv");
  }

  ordered_json echo() const {
    ordered_json j;
    if (synthetic()) {
      j["source"] = "synthetic";
      j["spec"] = synth_spec_json(parse_synth_spec(synth_spec));
    } else {
      j["source"] = "files";
      j["dir"] = dataset_dir;
    }
    return j;
  }
};

ordered_json model_config_json(const dgcn::ModelConfig& c) {
  ordered_json j;
  j["L"] = c.L;
  j["K"] = c.K;
  j["knn"] = c.knn;
  j["d_phi"] = c.d_phi;
  j["d_h"] = c.d_h;
  j["d_def"] = c.resolved_d_def();
  j["dropout"] = c.dropout;
  j["num_features"] = c.d_x;
  j["num_classes"] = c.num_classes;
  return j;
}

dgcn::ModelConfig model_config_from_json(const ordered_json& j) {
  dgcn::ModelConfig c;
  c.L = j.at("L").get<std::size_t>();
  c.K = j.at("K").get<std::size_t>();
  c.knn = j.at("knn").get<std::size_t>();
  c.d_phi = j.at("d_phi").get<std::size_t>();
  c.d_h = j.at("d_h").get<std::size_t>();
  c.d_def = j.at("d_def").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.d_x = j.at("num_features").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  return c;
}

// ----------------------------------------------------------------- training

struct TrainOpts {
  std::string config;
  std::string model = "deformable";
  DataSource data;
  std::string out;
  std::string lr = "0.01";
  std::string weight_decay = "5e-4";
  std::string hidden = "64";
  double alpha = 1e-2;
  double beta = 1e-2;
  double dropout = 0.5;
  std::size_t epochs = 500;
  std::size_t L = 2;
  std::size_t K = 4;
  std::size_t knn = 5;
  std::size_t d_phi = 16;
  std::size_t d_def = 0;  // 0 resolves to the hidden width
  std::size_t splits = 1;
  std::size_t seeds = 1;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
};

struct GridPoint {
  double lr, weight_decay;
  std::size_t hidden;
};

struct RunSpec {
  std::size_t gi, si, ri;
  dgcn::TrainConfig tc;
  dgcn::ModelConfig mcfg;
  std::string dir;
};

struct RunOutcome {
  std::size_t best_epoch = 0;
  double val_acc = 0.0, test_acc = 0.0;
};

template <typename Model>
RunOutcome execute_run(const dgcn::Dataset& ds, const dgcn::SplitMasks& split,
                       const RunSpec& spec, const ordered_json& echo,
                       const std::string& model_kind) {
  fs::create_directories(spec.dir);
  write_json(spec.dir + "/config.json", echo);

  Model model = Model::make(ds, spec.mcfg, spec.tc.seed);
  std::ofstream log(spec.dir + "/metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw CliError("cannot write " + spec.dir + "/metrics.jsonl");
  dgcn::RunMetrics rm = dgcn::train_model(model, ds, split, spec.tc, &log);
  log.close();

  ordered_json ck_cfg = echo;
  dgcn::save_checkpoint(spec.dir + "/checkpoint.json", model_kind, ck_cfg, model.param_refs());

  RunOutcome out;
  out.best_epoch = rm.best_epoch;
  out.val_acc = rm.best_val_acc;
  out.test_acc = rm.test_at_best;
  return out;
}

int cmd_train(CLI::App* sub, TrainOpts& o) {
  if (!o.config.empty()) apply_config_file(sub, o.config);
  o.data.validate();
  apply_env_seed(o.seed);
  if (o.out.empty()) throw CliError("--out is required for train");
  if (o.model != "deformable" && o.model != "gcn" && o.model != "mlp")
    throw CliError("unknown model '" + o.model + "' (expected deformable, gcn, or mlp)");
  if (o.splits < 1 || o.seeds < 1) throw CliError("--splits and --seeds must be >= 1");
  if (o.jobs < 1) throw CliError("--jobs must be >= 1");

  const std::vector<double> lrs = parse_double_list(o.lr, "--lr");
  const std::vector<double> wds = parse_double_list(o.weight_decay, "--weight-decay");
  const std::vector<std::size_t> hiddens = parse_uint_list(o.hidden, "--hidden");
  std::vector<GridPoint> grid;
  for (double lr : lrs)
    for (double wd : wds)
      for (std::size_t h : hiddens) grid.push_back({lr, wd, h});
  const bool gridded = grid.size() > 1;

  // A file-backed dataset and its splits are fixed across all runs; synthetic
  // data is regenerated per seed index inside the worker.
  dgcn::Dataset shared_ds;
  std::vector<dgcn::SplitMasks> shared_splits;
  if (!o.data.synthetic()) {
    shared_ds = o.data.load(o.seed);
    shared_splits = dgcn::make_splits(shared_ds, {}, o.splits, o.seed);
  }

  fs::create_directories(o.out);

  std::vector<RunSpec> specs;
  for (std::size_t gi = 0; gi < grid.size(); ++gi)
    for (std::size_t si = 0; si < o.splits; ++si)
      for (std::size_t ri = 0; ri < o.seeds; ++ri) {
        RunSpec s;
        s.gi = gi;
        s.si = si;
        s.ri = ri;
        s.tc.lr = grid[gi].lr;
        s.tc.weight_decay = grid[gi].weight_decay;
        s.tc.epochs = o.epochs;
        s.tc.alpha = o.alpha;
        s.tc.beta = o.beta;
        s.tc.seed = o.seed + ri;
        s.mcfg.L = o.L;
        s.mcfg.K = o.K;
        s.mcfg.knn = o.knn;
        s.mcfg.d_phi = o.d_phi;
        s.mcfg.d_h = grid[gi].hidden;
        s.mcfg.d_def = o.d_def;
        s.mcfg.dropout = o.dropout;
        s.dir = o.out + "/runs/" + (gridded ? "g" + std::to_string(gi) + "/" : "") + "split" +
                std::to_string(si) + "_seed" + std::to_string(ri);
        specs.push_back(std::move(s));
      }

  std::vector<RunOutcome> outcomes(specs.size());
  std::atomic<std::size_t> next{0};
  std::mutex fail_mu;
  std::string failure;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      {
        std::lock_guard<std::mutex> lk(fail_mu);
        if (!failure.empty()) return;
      }
      try {
        const RunSpec& s = specs[i];
        dgcn::Dataset local_ds;
        const dgcn::Dataset* ds = &shared_ds;
        dgcn::SplitMasks split;
        if (o.data.synthetic()) {
          local_ds = o.data.load(o.seed + s.ri);
          split = dgcn::make_splits(local_ds, {}, o.splits, o.seed + s.ri)[s.si];
          ds = &local_ds;
        } else {
          split = shared_splits[s.si];
        }

        ordered_json echo;
        echo["model"] = o.model;
        echo["dataset"] = o.data.echo();
        echo["dataset_stats"] = dgcn::stats_to_json(dgcn::dataset_stats(*ds));
        const ordered_json mj = model_config_json(s.mcfg);
        for (const auto& [k, v] : mj.items()) echo[k] = v;
        echo["lr"] = s.tc.lr;
        echo["weight_decay"] = s.tc.weight_decay;
        echo["alpha"] = s.tc.alpha;
        echo["beta"] = s.tc.beta;
        echo["epochs"] = s.tc.epochs;
        echo["seed"] = s.tc.seed;
        echo["split_index"] = s.si;
        echo["seed_index"] = s.ri;
        // the checkpoint echo must carry the resolved feature/class counts
        echo["num_features"] = ds->num_features;
        echo["num_classes"] = ds->num_classes;

        if (o.model == "deformable")
          outcomes[i] = execute_run<dgcn::DeformableModel>(*ds, split, s, echo, o.model);
        else if (o.model == "gcn")
          outcomes[i] = execute_run<dgcn::GCNModel>(*ds, split, s, echo, o.model);
        else
          outcomes[i] = execute_run<dgcn::MLPModel>(*ds, split, s, echo, o.model);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(fail_mu);
        if (failure.empty()) failure = e.what();
        return;
      }
    }
  };

  const std::size_t n_threads = std::min<std::size_t>(o.jobs, specs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (!failure.empty()) throw CliError(failure);

  // pick the grid point with the best mean validation accuracy (ties to the
  // earliest point in enumeration order)
  const std::size_t per_point = o.splits * o.seeds;
  std::vector<double> point_val(grid.size(), 0.0);
  for (std::size_t i = 0; i < specs.size(); ++i)
    point_val[specs[i].gi] += outcomes[i].val_acc / static_cast<double>(per_point);
  std::size_t best_gi = 0;
  for (std::size_t gi = 1; gi < grid.size(); ++gi)
    if (point_val[gi] > point_val[best_gi]) best_gi = gi;

  std::vector<double> vals, tests;
  ordered_json run_rows = ordered_json::array();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].gi != best_gi) continue;
    vals.push_back(outcomes[i].val_acc);
    tests.push_back(outcomes[i].test_acc);
    ordered_json row;
    row["split"] = specs[i].si;
    row["seed"] = specs[i].ri;
    row["best_epoch"] = outcomes[i].best_epoch;
    row["val_acc"] = outcomes[i].val_acc;
    row["test_acc"] = outcomes[i].test_acc;
    run_rows.push_back(std::move(row));
  }
  const dgcn::MeanCI val_ci = dgcn::mean_ci95(vals);
  const dgcn::MeanCI test_ci = dgcn::mean_ci95(tests);

  ordered_json summary;
  summary["model"] = o.model;
  summary["dataset"] = o.data.echo();
  summary["epochs"] = o.epochs;
  summary["alpha"] = o.alpha;
  summary["beta"] = o.beta;
  summary["splits"] = o.splits;
  summary["seeds"] = o.seeds;
  summary["base_seed"] = o.seed;
  if (gridded) {
    ordered_json gj = ordered_json::array();
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      ordered_json p;
      p["lr"] = grid[gi].lr;
      p["weight_decay"] = grid[gi].weight_decay;
      p["hidden"] = grid[gi].hidden;
      p["mean_val_acc"] = point_val[gi];
      gj.push_back(std::move(p));
    }
    summary["grid"] = std::move(gj);
  }
  ordered_json sel;
  sel["lr"] = grid[best_gi].lr;
  sel["weight_decay"] = grid[best_gi].weight_decay;
  sel["hidden"] = grid[best_gi].hidden;
  summary["selected"] = std::move(sel);
  summary["runs"] = std::move(run_rows);
  ordered_json va;
  va["mean"] = val_ci.mean;
  va["ci95"] = val_ci.half_width;
  summary["val_acc"] = std::move(va);
  ordered_json ta;
  ta["mean"] = test_ci.mean;
  ta["ci95"] = test_ci.half_width;
  summary["test_acc"] = std::move(ta);

  ordered_json cfg_echo;
  cfg_echo["command"] = "train";
  cfg_echo["model"] = o.model;
  cfg_echo["dataset"] = o.data.echo();
  cfg_echo["out"] = o.out;
  cfg_echo["lr"] = lrs;
  cfg_echo["weight_decay"] = wds;
  cfg_echo["hidden"] = hiddens;
  cfg_echo["alpha"] = o.alpha;
  cfg_echo["beta"] = o.beta;
  cfg_echo["dropout"] = o.dropout;
  cfg_echo["epochs"] = o.epochs;
  cfg_echo["L"] = o.L;
  cfg_echo["K"] = o.K;
  cfg_echo["knn"] = o.knn;
  cfg_echo["d_phi"] = o.d_phi;
  cfg_echo["d_def"] = o.d_def;
  cfg_echo["splits"] = o.splits;
  cfg_echo["seeds"] = o.seeds;
  cfg_echo["jobs"] = o.jobs;
  cfg_echo["seed"] = o.seed;
  write_json(o.out + "/config.json", cfg_echo);
  write_json(o.out + "/summary.json", summary);

  std::cout << "runs: " << vals.size() << "\n";
  std::cout << "mean val acc:  " << val_ci.mean << " +/- " << val_ci.half_width << "\n";
  std::cout << "mean test acc: " << test_ci.mean << " +/- " << test_ci.half_width << "\n";
  std::cout << "summary: " << o.out << "/summary.json\n";
  return 0;
}

// -------------------------------------------------------- checkpoint rebuild

struct LoadedCheckpoint {
  std::string kind;
  ordered_json config;
  ordered_json full;
};

LoadedCheckpoint load_ckpt(const std::string& path) {
  LoadedCheckpoint lc;
  lc.full = dgcn::read_checkpoint(path);
  lc.kind = lc.full.at("model").get<std::string>();
  lc.config = lc.full.at("config");
  return lc;
}

// ------------------------------------------------------------------- eval

struct EvalOpts {
  std::string config;
  std::string checkpoint;
  DataSource data;
  std::size_t splits = 1;
  std::size_t split_index = 0;
  std::uint64_t seed = 0;
};

int cmd_eval(CLI::App* sub, EvalOpts& o) {
  if (!o.config.empty()) apply_config_file(sub, o.config);
  o.data.validate();
  apply_env_seed(o.seed);
  if (o.checkpoint.empty()) throw CliError("--checkpoint is required for eval");
  if (o.split_index >= o.splits) throw CliError("--split-index must be below --splits");

  LoadedCheckpoint lc = load_ckpt(o.checkpoint);
  dgcn::ModelConfig mcfg = model_config_from_json(lc.config);
  dgcn::Dataset ds = o.data.load(o.seed);
  dgcn::SplitMasks split = dgcn::make_splits(ds, {}, o.splits, o.seed)[o.split_index];

  dgcn::Tensor logits;
  if (lc.kind == "deformable") {
    auto m = dgcn::DeformableModel::make(ds, mcfg, 0);
    dgcn::assign_checkpoint_tensors(lc.full, m.params.param_refs());
    dgcn::Tape tape;
    logits = m.run(tape, false, nullptr).logits;
  } else if (lc.kind == "gcn") {
    auto m = dgcn::GCNModel::make(ds, mcfg, 0);
    dgcn::assign_checkpoint_tensors(lc.full, m.params.param_refs());
    dgcn::Tape tape;
    logits = m.run(tape, false, nullptr).logits;
  } else if (lc.kind == "mlp") {
    auto m = dgcn::MLPModel::make(ds, mcfg, 0);
    dgcn::assign_checkpoint_tensors(lc.full, m.params.param_refs());
    dgcn::Tape tape;
    logits = m.run(tape, false, nullptr).logits;
  } else {
    throw CliError("checkpoint has unknown model kind '" + lc.kind + "'");
  }

  ordered_json out;
  out["model"] = lc.kind;
  out["train_acc"] = dgcn::evaluate(logits, ds.labels, split.train);
  out["val_acc"] = dgcn::evaluate(logits, ds.labels, split.val);
  out["test_acc"] = dgcn::evaluate(logits, ds.labels, split.test);
  std::cout << out.dump(1) << "\n";
  return 0;
}

// ----------------------------------------------------------------- analyze

struct AnalyzeOpts {
  std::string config;
  std::string checkpoint;
  DataSource data;
  std::string out;
  std::string target_nodes;  // comma list, may stay empty
  std::uint64_t seed = 0;
};

int cmd_analyze(CLI::App* sub, AnalyzeOpts& o) {
  if (!o.config.empty()) apply_config_file(sub, o.config);
  o.data.validate();
  apply_env_seed(o.seed);
  if (o.checkpoint.empty()) throw CliError("--checkpoint is required for analyze");
  if (o.out.empty()) throw CliError("--out is required for analyze");

  LoadedCheckpoint lc = load_ckpt(o.checkpoint);
  if (lc.kind != "deformable")
    throw CliError("analyze requires a deformable checkpoint, got '" + lc.kind + "'");
  dgcn::ModelConfig mcfg = model_config_from_json(lc.config);
  dgcn::Dataset ds = o.data.load(o.seed);

  std::vector<std::size_t> targets;
  if (!o.target_nodes.empty()) {
    targets = parse_uint_list(o.target_nodes, "--target-nodes");
    for (std::size_t t : targets)
      if (t >= ds.num_nodes)
        throw CliError("--target-nodes entry " + std::to_string(t) + " is out of range");
  }

  auto m = dgcn::DeformableModel::make(ds, mcfg, 0);
  dgcn::assign_checkpoint_tensors(lc.full, m.params.param_refs());

  fs::create_directories(o.out);
  dgcn::AnalysisReport rep = dgcn::analyze(ds, m.graphs, m.smoothed, m.params, targets);
  dgcn::export_report(rep, o.out);
  {
    dgcn::Tape tape;
    auto fwd = dgcn::dgcn_forward(tape, ds, m.graphs, m.smoothed, m.params.bind(tape), false,
                                  nullptr, true);
    dgcn::export_conv_diagnostics_csv(o.out + "/conv_diagnostics.csv", m.graphs, fwd.conv);
  }

  ordered_json echo;
  echo["command"] = "analyze";
  echo["checkpoint"] = o.checkpoint;
  echo["dataset"] = o.data.echo();
  echo["out"] = o.out;
  echo["target_nodes"] = targets;
  echo["seed"] = o.seed;
  write_json(o.out + "/config.json", echo);

  std::cout << "wrote " << o.out << "/attention.csv, h_weight.csv, receptive_field.csv, "
            << "conv_diagnostics.csv\n";
  return 0;
}

// ---------------------------------------------------------------- gradcheck

dgcn::Dataset gradcheck_toy(std::uint64_t seed) {
  dgcn::Dataset ds;
  ds.num_nodes = 6;
  ds.num_classes = 2;
  ds.num_features = 5;
  ds.labels = {0, 1, 0, 1, 1, 0};
  ds.edges = {{0, 1}, {0, 5}, {1, 2}, {1, 4}, {2, 3}, {3, 4}, {4, 5}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ds.features.resize(ds.num_nodes * ds.num_features);
  for (double& x : ds.features) x = gauss(rng);
  dgcn::validate_dataset(ds);
  return ds;
}

std::string group_label(const std::string& name) {
  if (name.rfind("encoder.", 0) == 0) return "encoder";
  if (name.rfind("W_phi.", 0) == 0) return name;  // one group per level
  if (name.find(".phi_tilde.") != std::string::npos) return "phi_tilde";
  if (name.find(".W_k.") != std::string::npos) return "W_k";
  if (name.find(".def.") != std::string::npos) return "deformation";
  if (name == "fusion.z") return "z";
  if (name.rfind("classifier.", 0) == 0) return "classifier";
  return name;
}

struct GradcheckOpts {
  std::string config;
  double eps = 1e-5;
  double threshold = 1e-4;
  double dropout = 0.0;
  std::uint64_t seed = 7;
};

int cmd_gradcheck(CLI::App* sub, GradcheckOpts& o) {
  if (!o.config.empty()) apply_config_file(sub, o.config);
  apply_env_seed(o.seed);
  if (o.dropout != 0.0)
    throw CliError("gradient checking requires dropout off (stochastic masks break "
                   "finite differences)");

  dgcn::Dataset ds = gradcheck_toy(o.seed);
  dgcn::ModelConfig mcfg;
  mcfg.L = 1;
  mcfg.K = 2;
  mcfg.knn = 2;
  mcfg.d_phi = 2;
  mcfg.d_h = 3;
  mcfg.d_def = 3;
  mcfg.dropout = 0.0;
  auto model = dgcn::DeformableModel::make(ds, mcfg, o.seed);
  std::vector<dgcn::ParamRef> refs = model.param_refs();
  const std::vector<std::uint8_t> all_train(ds.num_nodes, 1);

  // group the parameter tensors; order follows first appearance
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::string label = group_label(refs[i].name);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.first == label; });
    if (it == groups.end())
      groups.push_back({label, {i}});
    else
      it->second.push_back(i);
  }

  bool ok = true;
  for (const auto& [label, members] : groups) {
    std::vector<double> point;
    for (std::size_t i : members)
      point.insert(point.end(), refs[i].tensor->values.begin(), refs[i].tensor->values.end());

    auto fn = [&](const std::vector<double>& x) {
      std::size_t off = 0;
      for (std::size_t i : members) {
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(off),
                  x.begin() + static_cast<std::ptrdiff_t>(off + refs[i].tensor->numel()),
                  refs[i].tensor->values.begin());
        off += refs[i].tensor->numel();
      }
      dgcn::Tape tape;
      dgcn::ModelPass pass = model.run(tape, false, nullptr);
      dgcn::LossTerms lt = dgcn::loss_total(tape, pass.logits, ds.labels, all_train,
                                            pass.loss_sep, pass.loss_focus, 0.1, 0.1);
      auto grads = tape.backward(lt.total);
      std::vector<double> flat;
      flat.reserve(x.size());
      for (std::size_t i : members) {
        const auto& gv = grads.at(pass.param_nodes[i]).values;
        flat.insert(flat.end(), gv.begin(), gv.end());
      }
      return std::make_pair(lt.total.values[0], flat);
    };

    const dgcn::GradCheckResult res = dgcn::grad_check(fn, point, o.eps);
    {
      // park the model back at the unperturbed point before the next group
      std::size_t off = 0;
      for (std::size_t i : members) {
        std::copy(point.begin() + static_cast<std::ptrdiff_t>(off),
                  point.begin() + static_cast<std::ptrdiff_t>(off + refs[i].tensor->numel()),
                  refs[i].tensor->values.begin());
        off += refs[i].tensor->numel();
      }
    }
    const bool pass = res.max_rel_err < o.threshold;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << label << "  max_rel_err " << res.max_rel_err
              << "\n";
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return ok ? 0 : 1;
}

// -------------------------------------------------------------------- synth

struct SynthOpts {
  std::string config;
  std::string out;
  std::size_t n = 200;
  std::size_t classes = 5;
  double h = 0.1;
  std::size_t d_x = 32;
  std::size_t degree = 5;
  double noise = 1.0;
  std::size_t splits = 0;
  std::uint64_t seed = 0;
};

int cmd_synth(CLI::App* sub, SynthOpts& o) {
  if (!o.config.empty()) apply_config_file(sub, o.config);
  apply_env_seed(o.seed);
  if (o.out.empty()) throw CliError("--out is required for synth");
  dgcn::Dataset ds =
      dgcn::generate_synthetic(o.n, o.classes, o.h, o.d_x, o.degree, o.noise, o.seed);
  fs::create_directories(o.out);
  dgcn::save_dataset(ds, o.out + "/nodes.tsv", o.out + "/edges.tsv");
  const ordered_json stats = dgcn::stats_to_json(dgcn::dataset_stats(ds));
  write_json(o.out + "/stats.json", stats);
  if (o.splits > 0) {
    auto masks = dgcn::make_splits(ds, {}, o.splits, o.seed);
    for (std::size_t i = 0; i < masks.size(); ++i)
      dgcn::save_split(masks[i], o.out + "/split_" + std::to_string(i) + ".tsv");
  }
  std::cout << stats.dump(1) << "\n";
  return 0;
}

// ------------------------------------------------------------------- import

struct ImportOpts {
  std::string config;
  std::string raw_dir;
  std::string out;
};

int cmd_import(CLI::App* sub, ImportOpts& o) {
  if (!o.config.empty()) apply_config_file(sub, o.config);
  if (o.raw_dir.empty() || o.out.empty())
    throw CliError("import requires --raw-dir and --out");
  const std::string raw_nodes = o.raw_dir + "/out1_node_feature_label.txt";
  const std::string raw_edges = o.raw_dir + "/out1_graph_edges.txt";

  auto strip_header = [](const std::string& src) {
    std::ifstream in(src);
    if (!in) throw CliError("cannot open raw file: " + src);
    std::ostringstream body;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (first) {
        first = false;
        // tolerate a column-name header
        if (!line.empty() && !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
      }
      if (line.empty()) continue;
      body << line << '\n';
    }
    return body.str();
  };

  fs::create_directories(o.out);
  write_text(o.out + "/nodes.tsv", strip_header(raw_nodes));
  write_text(o.out + "/edges.tsv", strip_header(raw_edges));

  // reload for validation and normalized rewriting (dedup, sorted edges)
  dgcn::Dataset ds = dgcn::load_dataset(o.out + "/nodes.tsv", o.out + "/edges.tsv");
  dgcn::save_dataset(ds, o.out + "/nodes.tsv", o.out + "/edges.tsv");
  const ordered_json stats = dgcn::stats_to_json(dgcn::dataset_stats(ds));
  write_json(o.out + "/stats.json", stats);
  std::cout << stats.dump(1) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable graph convolution for node classification"};
  app.require_subcommand(1);

  TrainOpts to;
  CLI::App* train = app.add_subcommand("train", "Train a model over splits and seeds");
  train->add_option("--config", to.config, "flat key=value config file; flags override it");
  train->add_option("--model", to.model, "deformable | gcn | mlp")->capture_default_str();
  train->add_option("--dataset", to.data.dataset_dir, "dataset directory (nodes.tsv, edges.tsv)");
  train->add_option("--synthetic", to.data.synth_spec,
                    "synthetic spec, e.g. n=200,c=5,h=0.1,d=32,degree=5,noise=1.0");
  train->add_option("--out", to.out, "output directory");
  train->add_option("--lr", to.lr, "learning rate, comma list enables grid search")
      ->capture_default_str();
  train->add_option("--weight-decay", to.weight_decay, "weight decay, comma list for grid")
      ->capture_default_str();
  train->add_option("--hidden", to.hidden, "hidden width, comma list for grid")
      ->capture_default_str();
  train->add_option("--alpha", to.alpha, "separating-regularizer strength")
      ->capture_default_str();
  train->add_option("--beta", to.beta, "focusing-regularizer strength")->capture_default_str();
  train->add_option("--dropout", to.dropout, "dropout rate")->capture_default_str();
  train->add_option("--epochs", to.epochs, "training epochs")->capture_default_str();
  train->add_option("--levels", to.L, "number of smoothing levels L")->capture_default_str();
  train->add_option("--kernels", to.K, "kernels per level K")->capture_default_str();
  train->add_option("--knn", to.knn, "neighbors per node in latent graphs")
      ->capture_default_str();
  train->add_option("--d-phi", to.d_phi, "positional embedding width")->capture_default_str();
  train->add_option("--d-def", to.d_def, "deformation hidden width (0 = hidden)")
      ->capture_default_str();
  train->add_option("--splits", to.splits, "split instances per dataset")->capture_default_str();
  train->add_option("--seeds", to.seeds, "seed repetitions")->capture_default_str();
  train->add_option("--jobs", to.jobs, "concurrent training runs")->capture_default_str();
  train->add_option("--seed", to.seed, "base seed (DEFORM_GNN_SEED overrides)")
      ->capture_default_str();

  EvalOpts eo;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--config", eo.config, "flat key=value config file; flags override it");
  eval->add_option("--checkpoint", eo.checkpoint, "checkpoint JSON file");
  eval->add_option("--dataset", eo.data.dataset_dir, "dataset directory");
  eval->add_option("--synthetic", eo.data.synth_spec, "synthetic spec");
  eval->add_option("--splits", eo.splits, "split instances to generate")->capture_default_str();
  eval->add_option("--split-index", eo.split_index, "which split to score")
      ->capture_default_str();
  eval->add_option("--seed", eo.seed, "seed for data/splits (DEFORM_GNN_SEED overrides)")
      ->capture_default_str();

  AnalyzeOpts ao;
  CLI::App* analyze = app.add_subcommand("analyze", "Export analysis CSVs from a checkpoint");
  analyze->add_option("--config", ao.config, "flat key=value config file; flags override it");
  analyze->add_option("--checkpoint", ao.checkpoint, "deformable checkpoint JSON");
  analyze->add_option("--dataset", ao.data.dataset_dir, "dataset directory");
  analyze->add_option("--synthetic", ao.data.synth_spec, "synthetic spec");
  analyze->add_option("--out", ao.out, "output directory");
  analyze->add_option("--target-nodes", ao.target_nodes,
                      "comma list of receptive-field target nodes");
  analyze->add_option("--seed", ao.seed, "seed for data (DEFORM_GNN_SEED overrides)")
      ->capture_default_str();

  GradcheckOpts go;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  gradcheck->add_option("--config", go.config, "flat key=value config file; flags override it");
  gradcheck->add_option("--eps", go.eps, "finite-difference step")->capture_default_str();
  gradcheck->add_option("--threshold", go.threshold, "max relative error allowed")
      ->capture_default_str();
  gradcheck->add_option("--dropout", go.dropout, "must stay 0; the check is deterministic")
      ->capture_default_str();
  gradcheck->add_option("--seed", go.seed, "toy instance seed (DEFORM_GNN_SEED overrides)")
      ->capture_default_str();

  SynthOpts so;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", so.config, "flat key=value config file; flags override it");
  synth->add_option("--out", so.out, "output directory");
  synth->add_option("--n", so.n, "number of nodes")->capture_default_str();
  synth->add_option("--classes", so.classes, "number of classes")->capture_default_str();
  synth->add_option("--homophily", so.h, "target homophily in [0,1]")->capture_default_str();
  synth->add_option("--d-x", so.d_x, "feature dimension")->capture_default_str();
  synth->add_option("--degree", so.degree, "partners drawn per node")->capture_default_str();
  synth->add_option("--noise", so.noise, "feature noise scale")->capture_default_str();
  synth->add_option("--splits", so.splits, "also write this many split files")
      ->capture_default_str();
  synth->add_option("--seed", so.seed, "generator seed (DEFORM_GNN_SEED overrides)")
      ->capture_default_str();

  ImportOpts io;
  CLI::App* imp = app.add_subcommand(
      "import", "Convert raw node-classification files (out1_* layout) to this format");
  imp->add_option("--config", io.config, "flat key=value config file; flags override it");
  imp->add_option("--raw-dir", io.raw_dir,
                  "directory with out1_node_feature_label.txt and out1_graph_edges.txt");
  imp->add_option("--out", io.out, "output dataset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train->parsed()) return cmd_train(train, to);
    if (eval->parsed()) return cmd_eval(eval, eo);
    if (analyze->parsed()) return cmd_analyze(analyze, ao);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck, go);
    if (synth->parsed()) return cmd_synth(synth, so);
    if (imp->parsed()) return cmd_import(imp, io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
