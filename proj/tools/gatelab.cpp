// Command-line front door: synth | train | grid | probe | analyze | report.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gatelab/analysis.hpp"
#include "gatelab/probes.hpp"
#include "gatelab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gatelab;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += " ";
    s += argv[i];
  }
  return s;
}

void write_manifest(const fs::path& dir, const std::string& cmdline,
                    const std::vector<std::uint64_t>& seeds, const std::string& config_text) {
  json j;
  j["command"] = cmdline;
  j["seeds"] = seeds;
  j["config_hash"] = fnv1a(config_text);
  j["version"] = kVersion;
  std::ofstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("cli: cannot write manifest in " + dir.string());
  f << j.dump(2) << "\n";
}

std::string seed_dir_name(std::uint64_t seed) { return "seed" + std::to_string(seed); }

// One training run persisted to dir: checkpoint, utilization grid, metrics.
void save_run(const fs::path& dir, const TrainResult& res, std::uint64_t seed) {
  fs::create_directories(dir);
  save_checkpoint((dir / "checkpoint").string(), res.model.base.params, seed,
                  static_cast<std::int64_t>(res.history.size()));
  write_utilization_csv((dir / "utilization.csv").string(), res.grid, res.grid.task_set,
                        static_cast<int>(seed));
  json j;
  j["seed"] = seed;
  j["dev_score"] = res.dev_score;
  j["best_epoch"] = res.best_epoch;
  j["gates_active"] = res.model.base.gates_active;
  j["kept_percent"] = heads_kept_percent(res.model);
  json hist = json::array();
  for (const EpochMetrics& e : res.history)
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"dev_mean", e.dev_mean},
                    {"kept_percent", e.kept_percent},
                    {"task_dev", e.task_dev}});
  j["history"] = hist;
  std::ofstream f(dir / "metrics.json");
  f << j.dump(2) << "\n";
}

FullModel load_run_model(const fs::path& run_dir, const TrainPlan& plan, const Vocab& vocab,
                         const TaskLabels& labels) {
  FullModel fm;
  Rng init_rng = Rng::substream(1, "init");  // layout only; weights overwritten below
  init_full_model(fm, plan.encoder, plan.heads, vocab.size(), plan.tasks, labels, init_rng,
                  plan.init_alpha, plan.gate_l, plan.gate_r);
  Checkpoint ck = load_checkpoint((run_dir / "checkpoint").string());
  if (ck.params.count() != fm.base.params.count())
    throw std::runtime_error("cli: checkpoint does not match the plan's model layout");
  for (int i = 0; i < ck.params.count(); ++i) {
    if (ck.params.names[i] != fm.base.params.names[i])
      throw std::runtime_error("cli: checkpoint parameter mismatch at " + ck.params.names[i]);
    fm.base.params.tensors[i] = ck.params.tensors[i];
  }
  std::ifstream mf(run_dir / "metrics.json");
  if (mf) {
    json j = json::parse(mf);
    fm.base.gates_active = j.value("gates_active", false);
  }
  return fm;
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// --- verbs -------------------------------------------------------------------

int run_synth(const std::string& grammar, int count, std::uint64_t seed,
              const std::string& out, const std::string& cmdline) {
  GrammarConfig g = grammar.empty() ? GrammarConfig::builtin()
                                    : GrammarConfig::from_json_file(grammar);
  std::vector<Sentence> corpus = synth_generate(g, count, seed);
  write_jsonl(out, corpus);
  fs::path dir = fs::path(out).parent_path();
  if (!dir.empty()) write_manifest(dir, cmdline, {seed}, std::to_string(count));
  std::cout << "wrote " << corpus.size() << " sentences to " << out << "\n";
  return 0;
}

int run_train(const std::string& plan_path, const std::string& data, const std::string& out,
              const std::string& cmdline) {
  TrainPlan plan = TrainPlan::from_json_file(plan_path);
  std::vector<Sentence> corpus = read_jsonl(data);
  Vocab vocab = build_vocab(corpus);
  fs::create_directories(out);
  fs::copy_file(plan_path, fs::path(out) / "plan.json", fs::copy_options::overwrite_existing);
  vocab.save((fs::path(out) / "vocab.json").string());
  write_manifest(out, cmdline, plan.seeds, plan.to_json());
  for (std::uint64_t seed : plan.seeds) {
    TrainResult res = train(plan, corpus, vocab, seed);
    save_run(fs::path(out) / seed_dir_name(seed), res, seed);
    std::cout << "seed " << seed << ": dev " << res.dev_score << " (epoch " << res.best_epoch
              << "), heads kept " << heads_kept_percent(res.model) << "%\n";
  }
  return 0;
}

int run_grid(const std::vector<std::string>& tasks, const std::string& data,
             const std::string& out, const std::string& pruning, double lambda, int epochs,
             const std::string& cmdline) {
  if (tasks.size() < 2) throw std::runtime_error("cli: grid needs at least two tasks");
  std::vector<Sentence> corpus = read_jsonl(data);
  Vocab vocab = build_vocab(corpus);
  fs::create_directories(out);
  vocab.save((fs::path(out) / "vocab.json").string());

  struct Config {
    std::string name;
    std::vector<std::string> tasks;
    std::string mode;
  };
  std::vector<Config> configs;
  for (const std::string& t : tasks) configs.push_back({"stl-" + t, {t}, "stl"});
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j)
      configs.push_back({"pair-" + tasks[i] + "+" + tasks[j], {tasks[i], tasks[j]}, "mtl-pair"});
  if (tasks.size() == 5) {
    Config all{"mtl5", tasks, "mtl-5"};
    configs.push_back(all);
  }

  TrainPlan base;
  base.pruning = pruning;
  base.lambda = lambda;
  base.epochs = epochs;
  json results;
  results["tasks"] = tasks;
  json runs = json::array();
  int total = 0;
  for (const Config& c : configs) {
    TrainPlan plan = base;
    plan.tasks = c.tasks;
    plan.mode = c.mode;
    plan.validate();
    for (std::uint64_t seed : plan.seeds) {
      TrainResult res = train(plan, corpus, vocab, seed);
      fs::path dir = fs::path(out) / c.name / seed_dir_name(seed);
      save_run(dir, res, seed);
      json r;
      r["config"] = c.name;
      r["mode"] = c.mode;
      r["tasks"] = c.tasks;
      r["seed"] = seed;
      r["dev_score"] = res.dev_score;
      r["task_dev"] = res.history[res.best_epoch].task_dev;
      r["kept_percent"] = heads_kept_percent(res.model);
      runs.push_back(std::move(r));
      ++total;
      std::cout << c.name << " seed " << seed << ": dev " << res.dev_score << "\n";
    }
    std::ofstream pf(fs::path(out) / c.name / "plan.json");
    pf << plan.to_json() << "\n";
  }
  results["runs"] = runs;
  results["run_count"] = total;
  std::ofstream rf(fs::path(out) / "grid_results.json");
  rf << results.dump(2) << "\n";
  write_manifest(out, cmdline, base.seeds, results.dump());
  std::cout << "grid complete: " << total << " runs\n";
  return 0;
}

int run_probe(const std::string& model_dir, const std::string& snapshots,
              const std::string& data, const std::string& task, const std::string& out,
              bool pure_mean, bool include_bos) {
  std::vector<Sentence> corpus = read_jsonl(data);
  ProbeOptions opts;
  opts.pure_mean = pure_mean;
  opts.include_bos = include_bos;
  std::vector<std::vector<SnapshotRecord>> runs;
  if (!snapshots.empty()) {
    for (const std::string& f : split_csv_list(snapshots)) runs.push_back(read_snapshots(f));
  } else {
    TrainPlan plan = TrainPlan::from_json_file((fs::path(model_dir) / "plan.json").string());
    Vocab vocab = Vocab::load((fs::path(model_dir) / "vocab.json").string());
    TaskLabels labels = TaskLabels::collect(corpus);
    for (std::uint64_t seed : plan.seeds) {
      FullModel fm =
          load_run_model(fs::path(model_dir) / seed_dir_name(seed), plan, vocab, labels);
      std::vector<SnapshotRecord> recs(corpus.size());
      int n = static_cast<int>(corpus.size());
#pragma omp parallel for schedule(dynamic)
      for (int i = 0; i < n; ++i) recs[i] = capture_sentence(fm, vocab, corpus[i], i);
      runs.push_back(std::move(recs));
    }
  }
  ProbeReport rep = probe_all(runs, corpus, task, opts);
  rep.save_json(out);
  rep.save_csv(out + ".csv");
  for (std::size_t i = 0; i < rep.labels.size(); ++i)
    std::cout << task << "/" << rep.labels[i] << ": selected " << rep.selected[i]
              << " (support " << rep.support[i] << ", best layer " << rep.best_layer[i]
              << ")\n";
  return 0;
}

int run_analyze(const std::string& runs_arg, const std::string& overlay_arg,
                const std::string& pearson_arg, const std::string& out) {
  fs::create_directories(out);
  std::ofstream stats(fs::path(out) / "stats.csv");
  stats << "kind,a,b,value\n";
  stats.precision(17);
  if (!runs_arg.empty()) {
    std::vector<std::string> files = split_csv_list(runs_arg);
    if (files.size() != 3) throw std::runtime_error("cli: --runs needs exactly 3 csv files");
    std::vector<UtilizationGrid> g;
    for (const std::string& f : files) g.push_back(read_utilization_csv(f));
    RgbImage img = rgb_encode(g[0].expected, g[1].expected, g[2].expected);
    write_ppm(img, (fs::path(out) / "rgb.ppm").string(), 16);
    std::vector<double> v1(g[0].expected.data), v2(g[1].expected.data), v3(g[2].expected.data);
    stats << "adj_r2," << files[0] << "+" << files[1] << "," << files[2] << ","
          << adjusted_r2(v1, v2, v3) << "\n";
  }
  if (!overlay_arg.empty()) {
    std::vector<Tensor> grids;
    for (const std::string& f : split_csv_list(overlay_arg))
      grids.push_back(read_utilization_csv(f).expected);
    Tensor heat = gray_overlay(grids);
    write_ppm(gray_to_image(heat), (fs::path(out) / "overlay.ppm").string(), 16);
  }
  if (!pearson_arg.empty()) {
    std::vector<std::string> files = split_csv_list(pearson_arg);
    if (files.size() % 2 != 0)
      throw std::runtime_error("cli: --pearson needs pairs of csv files");
    for (std::size_t i = 0; i + 1 < files.size(); i += 2) {
      UtilizationGrid a = read_utilization_csv(files[i]);
      UtilizationGrid b = read_utilization_csv(files[i + 1]);
      stats << "pearson," << files[i] << "," << files[i + 1] << ","
            << pearson(a.expected.data, b.expected.data) << "\n";
    }
  }
  return 0;
}

int run_report(const std::string& in, const std::string& out) {
  std::ifstream f(fs::path(in) / "grid_results.json");
  if (!f) throw std::runtime_error("cli: no grid_results.json in " + in);
  json results = json::parse(f);
  std::vector<std::string> tasks = results.at("tasks").get<std::vector<std::string>>();

  // config -> task -> scores over seeds
  std::map<std::string, std::map<std::string, std::vector<double>>> cells;
  std::vector<std::string> order;
  std::map<std::string, std::string> modes;
  for (const json& r : results.at("runs")) {
    std::string cfg = r.at("config").get<std::string>();
    if (!cells.count(cfg)) order.push_back(cfg);
    modes[cfg] = r.at("mode").get<std::string>();
    for (const auto& [t, s] : r.at("task_dev").items())
      cells[cfg][t].push_back(s.get<double>());
  }

  auto mean_std = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= v.size();
    double s = 0.0;
    if (v.size() > 1) {
      for (double x : v) s += (x - m) * (x - m);
      s = std::sqrt(s / (v.size() - 1));
    }
    return std::pair<double, double>{m, s};
  };

  std::ofstream md(out);
  if (!md) throw std::runtime_error("cli: cannot write " + out);
  std::ofstream csv(out + ".csv");
  csv << "config,mode,task,mean,std,n\n";
  csv.precision(17);
  md << "| model |";
  for (const std::string& t : tasks) md << " " << t << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < tasks.size(); ++i) md << "---|";
  md << "\n";
  char buf[64];
  for (const std::string& cfg : order) {
    bool stl = modes[cfg] == "stl";
    md << "| " << cfg << (stl ? " (STL)" : "") << " |";
    for (const std::string& t : tasks) {
      auto it = cells[cfg].find(t);
      if (it == cells[cfg].end()) {
        md << " — |";
        continue;
      }
      auto [m, s] = mean_std(it->second);
      std::snprintf(buf, sizeof buf, " %.3f ± %.3f%s |", m, s, stl ? "*" : "");
      md << buf;
      csv << cfg << "," << modes[cfg] << "," << t << "," << m << "," << s << ","
          << it->second.size() << "\n";
    }
    md << "\n";
  }
  md << "\n\\* single-task baseline (diagonal)\n";
  std::cout << "wrote " << out << " and " << out << ".csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-head gating laboratory"};
  app.require_subcommand(1);
  std::string cmdline = join_args(argc, argv);

  auto* synth = app.add_subcommand("synth", "generate a synthetic annotated corpus");
  std::string sy_grammar, sy_out;
  int sy_count = 1000;
  std::uint64_t sy_seed = 1;
  synth->add_option("--grammar", sy_grammar, "grammar config json (default: builtin)");
  synth->add_option("--count", sy_count, "sentence count")->required();
  synth->add_option("--seed", sy_seed, "generator seed");
  synth->add_option("--out", sy_out, "output jsonl path")->required();

  auto* tr = app.add_subcommand("train", "train one plan (all its seeds)");
  std::string tr_plan, tr_data, tr_out;
  tr->add_option("--plan", tr_plan, "plan json")->required();
  tr->add_option("--data", tr_data, "corpus jsonl")->required();
  tr->add_option("--out", tr_out, "output directory")->required();

  auto* gr = app.add_subcommand("grid", "full STL + pairwise + joint matrix, 3 seeds each");
  std::vector<std::string> gr_tasks;
  std::string gr_data, gr_out, gr_pruning = "none";
  double gr_lambda = 0.01;
  int gr_epochs = 3;
  gr->add_option("--tasks", gr_tasks, "task list")->required()->expected(2, 5);
  gr->add_option("--data", gr_data, "corpus jsonl")->required();
  gr->add_option("--out", gr_out, "output directory")->required();
  gr->add_option("--pruning", gr_pruning, "none|sp|dp");
  gr->add_option("--lambda", gr_lambda, "sparsity weight");
  gr->add_option("--epochs", gr_epochs, "epochs per run");

  auto* pr = app.add_subcommand("probe", "parameter-free head probing");
  std::string pr_model, pr_snaps, pr_data, pr_task, pr_out;
  bool pr_pure_mean = false, pr_bos = false;
  pr->add_option("--model", pr_model, "train output directory");
  pr->add_option("--snapshots", pr_snaps, "snapshot file(s), comma-separated");
  pr->add_option("--data", pr_data, "corpus jsonl")->required();
  pr->add_option("--task", pr_task, "pos|ner|dep|con|srl")->required();
  pr->add_option("--out", pr_out, "report json path")->required();
  pr->add_flag("--pure-mean", pr_pure_mean, "merge key columns by mean instead of sum");
  pr->add_flag("--include-bos", pr_bos, "keep the BOS row as a root word");

  auto* an = app.add_subcommand("analyze", "utilization images and statistics");
  std::string an_runs, an_overlay, an_pearson, an_out;
  an->add_option("--runs", an_runs, "3 utilization csv files, comma-separated");
  an->add_option("--overlay", an_overlay, "utilization csv files to average");
  an->add_option("--pearson", an_pearson, "pairs of utilization csv files");
  an->add_option("--out", an_out, "output directory")->required();

  auto* rp = app.add_subcommand("report", "assemble the grid mean±std table");
  std::string rp_in, rp_out;
  rp->add_option("--in", rp_in, "grid output directory")->required();
  rp->add_option("--out", rp_out, "markdown output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(sy_grammar, sy_count, sy_seed, sy_out, cmdline);
    if (tr->parsed()) return run_train(tr_plan, tr_data, tr_out, cmdline);
    if (gr->parsed())
      return run_grid(gr_tasks, gr_data, gr_out, gr_pruning, gr_lambda, gr_epochs, cmdline);
    if (pr->parsed()) {
      if (pr_model.empty() == pr_snaps.empty()) {
        std::cerr << "cli: probe needs exactly one of --model / --snapshots\n";
        return 1;
      }
      return run_probe(pr_model, pr_snaps, pr_data, pr_task, pr_out, pr_pure_mean, pr_bos);
    }
    if (an->parsed()) return run_analyze(an_runs, an_overlay, an_pearson, an_out);
    if (rp->parsed()) return run_report(rp_in, rp_out);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 1;
}
