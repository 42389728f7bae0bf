#include "gatelab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gatelab {

using nlohmann::json;

// --- loss balancing -----------------------------------------------------------

double LossBalancer::running_avg(const std::string& task) const {
  auto it = recent_.find(task);
  if (it == recent_.end() || it->second.empty())
    throw std::runtime_error("trainer: running average not initialized for " + task);
  double s = 0.0;
  for (double v : it->second) s += v;
  return s / static_cast<double>(it->second.size());
}

double LossBalancer::balance(const std::string& task, double loss) {
  if (!std::isfinite(loss)) throw std::runtime_error("trainer: non-finite loss for " + task);
  double avg_t = initialized(task) ? running_avg(task) : loss;
  double total = 0.0;
  bool seen_t = false;
  for (const auto& [name, buf] : recent_) {
    (void)buf;
    if (name == task) {
      total += avg_t;
      seen_t = true;
    } else {
      total += running_avg(name);
    }
  }
  if (!seen_t) total += avg_t;
  double mult = total / avg_t;
  auto& buf = recent_[task];
  buf.push_back(loss);
  while (static_cast<int>(buf.size()) > window_) buf.pop_front();
  return mult;
}

// --- task sampling --------------------------------------------------------------

std::map<std::string, double> task_probabilities(const std::map<std::string, int>& sizes) {
  if (sizes.empty()) throw std::runtime_error("trainer: empty task set");
  std::map<std::string, double> p;
  double z = 0.0;
  for (const auto& [t, n] : sizes) {
    if (n < 1) throw std::runtime_error("trainer: dataset size must be >= 1 for " + t);
    double w = std::pow(static_cast<double>(n), 0.8);
    p[t] = w;
    z += w;
  }
  for (auto& [t, w] : p) w /= z;
  return p;
}

std::string sample_task(const std::map<std::string, int>& sizes, Rng& rng) {
  auto p = task_probabilities(sizes);
  double u = rng.next_double();
  double acc = 0.0;
  std::string last;
  for (const auto& [t, w] : p) {
    acc += w;
    last = t;
    if (u < acc) return t;
  }
  return last;
}

// --- plan ------------------------------------------------------------------------

void TrainPlan::validate() const {
  if (tasks.empty()) throw std::runtime_error("trainer: plan has no tasks");
  if (mode == "stl" && tasks.size() != 1)
    throw std::runtime_error("trainer: STL plan must have exactly one task");
  if (mode == "mtl-pair" && tasks.size() != 2)
    throw std::runtime_error("trainer: MTL-pair plan must have exactly two tasks");
  if (mode != "stl" && mode != "mtl-pair" && mode != "mtl-5")
    throw std::runtime_error("trainer: unknown mode '" + mode + "'");
  if (pruning != "none" && pruning != "sp" && pruning != "dp")
    throw std::runtime_error("trainer: unknown pruning '" + pruning + "'");
  if (lambda < 0.0) throw std::runtime_error("trainer: lambda must be >= 0");
  if (epochs < 1) throw std::runtime_error("trainer: epochs must be >= 1");
  if (dev_fraction <= 0.0 || dev_fraction >= 0.9)
    throw std::runtime_error("trainer: dev_fraction out of range");
  encoder.validate();
}

TrainPlan TrainPlan::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("trainer: cannot open plan " + path);
  json j = json::parse(f);
  TrainPlan p;
  p.tasks = j.at("tasks").get<std::vector<std::string>>();
  if (j.contains("mode")) p.mode = j.at("mode").get<std::string>();
  if (j.contains("pruning")) p.pruning = j.at("pruning").get<std::string>();
  if (j.contains("lambda")) p.lambda = j.at("lambda").get<double>();
  if (j.contains("epochs")) p.epochs = j.at("epochs").get<int>();
  if (j.contains("warmup")) p.warmup = j.at("warmup").get<int>();
  if (j.contains("sp_gate_epochs")) p.sp_gate_epochs = j.at("sp_gate_epochs").get<int>();
  if (j.contains("seeds")) p.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("lr_encoder")) p.lr_encoder = j.at("lr_encoder").get<double>();
  if (j.contains("lr_decoder")) p.lr_decoder = j.at("lr_decoder").get<double>();
  if (j.contains("lr_gates")) p.lr_gates = j.at("lr_gates").get<double>();
  if (j.contains("dev_fraction")) p.dev_fraction = j.at("dev_fraction").get<double>();
  if (j.contains("sp_train_encoder")) p.sp_train_encoder = j.at("sp_train_encoder").get<bool>();
  if (j.contains("batches_per_epoch")) p.batches_per_epoch = j.at("batches_per_epoch").get<int>();
  if (j.contains("init_alpha")) p.init_alpha = j.at("init_alpha").get<double>();
  if (j.contains("gate_l")) p.gate_l = j.at("gate_l").get<double>();
  if (j.contains("gate_r")) p.gate_r = j.at("gate_r").get<double>();
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    if (e.contains("layers")) p.encoder.layers = e.at("layers").get<int>();
    if (e.contains("heads")) p.encoder.heads = e.at("heads").get<int>();
    if (e.contains("d_model")) p.encoder.d_model = e.at("d_model").get<int>();
    if (e.contains("d_ff")) p.encoder.d_ff = e.at("d_ff").get<int>();
    if (e.contains("max_len")) p.encoder.max_len = e.at("max_len").get<int>();
    if (e.contains("dropout")) p.encoder.dropout = e.at("dropout").get<double>();
    if (e.contains("word_dropout")) p.encoder.word_dropout = e.at("word_dropout").get<double>();
  }
  p.validate();
  return p;
}

std::string TrainPlan::to_json() const {
  json j;
  j["tasks"] = tasks;
  j["mode"] = mode;
  j["pruning"] = pruning;
  j["lambda"] = lambda;
  j["epochs"] = epochs;
  j["warmup"] = warmup;
  j["sp_gate_epochs"] = sp_gate_epochs;
  j["seeds"] = seeds;
  j["lr_encoder"] = lr_encoder;
  j["lr_decoder"] = lr_decoder;
  j["lr_gates"] = lr_gates;
  j["dev_fraction"] = dev_fraction;
  j["sp_train_encoder"] = sp_train_encoder;
  j["batches_per_epoch"] = batches_per_epoch;
  j["init_alpha"] = init_alpha;
  j["gate_l"] = gate_l;
  j["gate_r"] = gate_r;
  j["encoder"] = {{"layers", encoder.layers},   {"heads", encoder.heads},
                  {"d_model", encoder.d_model}, {"d_ff", encoder.d_ff},
                  {"max_len", encoder.max_len}, {"dropout", encoder.dropout},
                  {"word_dropout", encoder.word_dropout}};
  return j.dump(2);
}

// --- utilization ------------------------------------------------------------------

UtilizationGrid utilization(const FullModel& m) {
  UtilizationGrid g;
  const Tensor& alpha = m.base.params[m.base.enc.gate_alpha];
  g.expected = Tensor::zeros(alpha.shape);
  for (int l = 0; l < alpha.rows(); ++l)
    for (int h = 0; h < alpha.cols(); ++h)
      g.expected.at(l, h) = gates::expected_gate(alpha.at(l, h), m.base.gate_l, m.base.gate_r);
  return g;
}

double heads_kept_percent(const FullModel& m) {
  const Tensor& alpha = m.base.params[m.base.enc.gate_alpha];
  int kept = 0;
  for (int l = 0; l < alpha.rows(); ++l)
    for (int h = 0; h < alpha.cols(); ++h)
      if (m.base.eval_gate(l, h) > 0.0) ++kept;
  return 100.0 * kept / static_cast<double>(alpha.size());
}

void write_utilization_csv(const std::string& path, const UtilizationGrid& grid,
                           const std::string& task, int run) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("trainer: cannot write " + path);
  f << "layer,head,run,task,expected_z\n";
  f.precision(17);
  for (int l = 0; l < grid.expected.rows(); ++l)
    for (int h = 0; h < grid.expected.cols(); ++h)
      f << l << "," << h << "," << run << "," << task << "," << grid.expected.at(l, h) << "\n";
}

UtilizationGrid read_utilization_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("trainer: cannot read " + path);
  std::string line;
  std::getline(f, line);  // header
  struct Row {
    int layer, head, run;
    std::string task;
    double z;
  };
  std::vector<Row> rows;
  int max_l = -1, max_h = -1;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Row r;
    std::getline(ss, cell, ',');
    r.layer = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.head = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.run = std::stoi(cell);
    std::getline(ss, r.task, ',');
    std::getline(ss, cell, ',');
    r.z = std::stod(cell);
    max_l = std::max(max_l, r.layer);
    max_h = std::max(max_h, r.head);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw std::runtime_error("trainer: empty utilization csv " + path);
  UtilizationGrid g;
  g.expected = Tensor::zeros({max_l + 1, max_h + 1});
  g.run_id = rows.front().run;
  g.task_set = rows.front().task;
  for (const Row& r : rows) g.expected.at(r.layer, r.head) = r.z;
  return g;
}

// --- evaluation ---------------------------------------------------------------------

namespace {

struct Counts {
  double tp = 0, fp = 0, fn = 0;
  double f1() const {
    double denom = 2 * tp + fp + fn;
    return denom == 0.0 ? 1.0 : 2 * tp / denom;
  }
};

GateSpec eval_gates(const FullModel& m) {
  return m.base.gates_active ? GateSpec::from_eval(m.base) : GateSpec::all_open(m.base.cfg);
}

struct EvalOut {
  double correct = 0, total = 0;  // pos / dep
  Counts span;                    // ner / con / srl
};

EvalOut eval_sentence(const FullModel& m, const Vocab& vocab, const Sentence& s,
                      const std::string& task, const GateSpec& gs) {
  EvalOut out;
  auto [ids, map] = encode_sentence(s, vocab);
  Graph g;
  ParamBinder bind(g, m.base, false);
  EncodeResult er = encode(g, m.base, bind, ids, gs, false, false, nullptr);
  WordEmbeds we = word_embed(g, er.hidden, map);
  if (task == "pos") {
    const Tensor& logits = g.value(pos_logits(g, m, bind, we.words));
    std::vector<int> pred = pos_decode(logits);
    for (int i = 0; i < s.size(); ++i) {
      out.total += 1;
      if (m.base.labels.pos.items[pred[i]] == s.pos[i]) out.correct += 1;
    }
  } else if (task == "dep") {
    DepPrediction pred = dep_decode(g, m, bind, we.words, we.root);
    for (int i = 0; i < s.size(); ++i) {
      out.total += 1;
      if (pred.head[i] == s.dep[i].head &&
          m.base.labels.dep_rel.items[pred.rel[i]] == s.dep[i].rel)
        out.correct += 1;
    }
  } else if (task == "ner" || task == "con") {
    const Tensor& logits = g.value(span_logits(g, m, bind, we.words, task));
    std::vector<Span> pred = span_decode(m, task, logits, s.size());
    const std::vector<Span>& gold = (task == "ner") ? s.ner : s.con;
    std::set<std::tuple<int, int, std::string>> gset, pset;
    for (const Span& sp : gold) gset.insert({sp.begin, sp.end, sp.label});
    for (const Span& sp : pred) pset.insert({sp.begin, sp.end, sp.label});
    for (const auto& t : pset) gset.count(t) ? out.span.tp++ : out.span.fp++;
    for (const auto& t : gset)
      if (!pset.count(t)) out.span.fn++;
  } else if (task == "srl") {
    std::vector<Frame> pred = srl_decode(g, m, bind, we.words, s.size());
    std::set<std::tuple<int, int, int, std::string>> gset, pset;
    for (const Frame& f : s.srl)
      for (const Span& a : f.args) gset.insert({f.predicate, a.begin, a.end, a.label});
    for (const Frame& f : pred)
      for (const Span& a : f.args) pset.insert({f.predicate, a.begin, a.end, a.label});
    for (const auto& t : pset) gset.count(t) ? out.span.tp++ : out.span.fp++;
    for (const auto& t : gset)
      if (!pset.count(t)) out.span.fn++;
  } else {
    throw std::runtime_error("trainer: unknown task '" + task + "'");
  }
  return out;
}

}  // namespace

double evaluate_task(const FullModel& m, const Vocab& vocab,
                     const std::vector<Sentence>& sents, const std::string& task) {
  if (sents.empty()) throw std::runtime_error("trainer: empty evaluation set");
  GateSpec gs = eval_gates(m);
  std::vector<EvalOut> per(sents.size());
  int n = static_cast<int>(sents.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) per[i] = eval_sentence(m, vocab, sents[i], task, gs);
  if (task == "pos" || task == "dep") {
    double c = 0, t = 0;
    for (const EvalOut& e : per) {
      c += e.correct;
      t += e.total;
    }
    return t == 0 ? 0.0 : c / t;
  }
  Counts total;
  for (const EvalOut& e : per) {
    total.tp += e.span.tp;
    total.fp += e.span.fp;
    total.fn += e.span.fn;
  }
  return total.f1();
}

SnapshotRecord capture_sentence(const FullModel& m, const Vocab& vocab,
                                const Sentence& s, int sentence_index) {
  auto [ids, map] = encode_sentence(s, vocab);
  Graph g;
  ParamBinder bind(g, m.base, false);
  GateSpec gs = eval_gates(m);
  EncodeResult er = encode(g, m.base, bind, ids, gs, false, true, nullptr);
  SnapshotRecord r;
  r.snap = std::move(er.snapshot);
  r.map = map;
  r.sentence_index = sentence_index;
  return r;
}

double throughput(const FullModel& m, const Vocab& vocab,
                  const std::vector<Sentence>& sents, double min_seconds) {
  if (sents.empty()) throw std::runtime_error("trainer: throughput needs a non-empty corpus");
  GateSpec gs = eval_gates(m);
  const auto& tasks = m.base.tasks;
  auto t0 = std::chrono::steady_clock::now();
  std::int64_t processed = 0;
  double elapsed = 0.0;
  int n = static_cast<int>(sents.size());
  do {
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
      for (const std::string& t : tasks) {
        volatile double sink = eval_sentence(m, vocab, sents[i], t, gs).total;
        (void)sink;
      }
    }
    processed += n;
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } while (elapsed < min_seconds);
  return static_cast<double>(processed) / elapsed;
}

// --- training loop --------------------------------------------------------------------

namespace {

std::vector<double> lrs_for_stage(const FullModel& fm, const TrainPlan& plan, int stage) {
  // stage 0 = main training, stage 1 = SP gate-only stage
  std::vector<double> lrs;
  for (const std::string& name : fm.base.params.names) {
    bool is_gate = name == "gates.alpha";
    bool is_head = name.rfind("head.", 0) == 0;
    double lr;
    if (stage == 0) {
      if (is_gate)
        lr = plan.pruning == "dp" ? plan.lr_gates : -1.0;
      else
        lr = is_head ? plan.lr_decoder : plan.lr_encoder;
    } else {
      if (is_gate)
        lr = plan.lr_gates;
      else if (is_head)
        lr = -1.0;  // decoder always frozen in SP stage 2
      else
        lr = plan.sp_train_encoder ? plan.lr_encoder : -1.0;
    }
    lrs.push_back(lr);
  }
  return lrs;
}

std::vector<char> mask_for_stage(const FullModel& fm, const std::vector<double>& lrs) {
  std::vector<char> mask;
  mask.reserve(fm.base.params.names.size());
  for (double lr : lrs) mask.push_back(lr >= 0.0 ? 1 : 0);
  return mask;
}

}  // namespace

TrainResult train(const TrainPlan& plan, const std::vector<Sentence>& corpus,
                  const Vocab& vocab, std::uint64_t seed) {
  plan.validate();
  if (corpus.size() < 10) throw std::runtime_error("trainer: corpus too small");

  // deterministic train/dev split
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = Rng::substream(seed, "split");
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[split_rng.next_int(i + 1)]);
  int n_dev = std::max(1, static_cast<int>(std::ceil(plan.dev_fraction * corpus.size())));
  std::vector<Sentence> dev, trn;
  for (std::size_t i = 0; i < order.size(); ++i)
    (static_cast<int>(i) < n_dev ? dev : trn).push_back(corpus[order[i]]);

  TaskLabels labels = TaskLabels::collect(corpus);
  TrainResult res;
  Rng init_rng = Rng::substream(seed, "init");
  init_full_model(res.model, plan.encoder, plan.heads, vocab.size(), plan.tasks, labels,
                  init_rng, plan.init_alpha, plan.gate_l, plan.gate_r);
  FullModel& fm = res.model;

  Adam adam;
  adam.init(fm.base.params);
  Rng data_rng = Rng::substream(seed, "data");
  Rng dropout_rng = Rng::substream(seed, "dropout");
  Rng gate_rng = Rng::substream(seed, "gates");
  Rng sampler_rng = Rng::substream(seed, "sampler");

  std::map<std::string, int> sizes;
  for (const std::string& t : plan.tasks) sizes[t] = static_cast<int>(trn.size());
  const bool mtl = plan.mode != "stl";
  int steps_per_epoch = plan.batches_per_epoch > 0
                            ? plan.batches_per_epoch
                            : static_cast<int>(trn.size()) * (mtl ? static_cast<int>(plan.tasks.size()) : 1);
  const int total_heads = fm.base.cfg.total_heads();
  const double l0_weight = plan.lambda / static_cast<double>(total_heads);

  // per-task sentence streams (reshuffled on exhaustion)
  std::map<std::string, std::vector<int>> stream;
  std::map<std::string, std::size_t> cursor;
  auto next_sentence = [&](const std::string& t) -> const Sentence& {
    auto& st = stream[t];
    auto& cur = cursor[t];
    if (cur >= st.size()) {
      st.resize(trn.size());
      std::iota(st.begin(), st.end(), 0);
      for (int i = static_cast<int>(st.size()) - 1; i > 0; --i)
        std::swap(st[i], st[data_rng.next_int(i + 1)]);
      cur = 0;
    }
    return trn[st[cur++]];
  };

  FullModel best = fm;
  double best_score = -1.0;
  int best_epoch = -1;
  int global_step = 0;
  LossBalancer balancer;

  auto run_stage = [&](int stage, int epochs) {
    std::vector<double> lrs = lrs_for_stage(fm, plan, stage);
    std::vector<char> mask = mask_for_stage(fm, lrs);
    bool use_sampled_gates = (stage == 0 && plan.pruning == "dp") || stage == 1;
    bool use_l0 = use_sampled_gates;
    int warmup_steps = std::max(1, plan.warmup * steps_per_epoch);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      double epoch_loss = 0.0;
      int counted = 0;
      for (int step = 0; step < steps_per_epoch; ++step, ++global_step) {
        std::string task = mtl ? sample_task(sizes, sampler_rng) : plan.tasks[0];
        const Sentence& sent = next_sentence(task);
        auto [ids0, map] = encode_sentence(sent, vocab);
        std::vector<int> ids = word_dropout(ids0, fm.base.cfg.word_dropout, dropout_rng);
        Graph g;
        ParamBinder bind(g, fm.base, mask);
        GateSpec gs = use_sampled_gates
                          ? GateSpec::sample(g, bind(fm.base.enc.gate_alpha), fm.base, gate_rng)
                          : GateSpec::all_open(fm.base.cfg);
        EncodeResult er = encode(g, fm.base, bind, ids, gs, true, false, &dropout_rng);
        WordEmbeds we = word_embed(g, er.hidden, map);
        NodeId loss = task_loss(g, fm, bind, we, task, sent);
        double raw = g.value(loss).data[0];
        if (std::isnan(raw))
          throw std::runtime_error("trainer: NaN loss at step " + std::to_string(global_step) +
                                   " task " + task);
        if (!std::isfinite(raw)) continue;  // skip the step, keep the balancer untouched
        if (mtl) loss = g.scale(loss, balancer.balance(task, raw));
        if (use_l0 && plan.lambda > 0.0) {
          NodeId l0 = gates::l0_penalty_node(g, bind(fm.base.enc.gate_alpha), fm.base.gate_l,
                                             fm.base.gate_r);
          loss = g.add(loss, g.scale(l0, l0_weight));
        }
        g.backward(loss);
        std::vector<Tensor> grads(fm.base.params.count());
        for (int i = 0; i < fm.base.params.count(); ++i)
          if (mask[i] && bind.bound(i)) grads[i] = bind.grad(i);
        double lr_scale = std::min(1.0, static_cast<double>(global_step + 1) / warmup_steps);
        adam.step(fm.base.params, grads, lrs, lr_scale);
        epoch_loss += raw;
        ++counted;
      }
      fm.base.gates_active = use_sampled_gates;
      EpochMetrics em;
      em.epoch = static_cast<int>(res.history.size());
      em.train_loss = counted ? epoch_loss / counted : 0.0;
      double sum = 0.0;
      for (const std::string& t : plan.tasks) {
        double s = evaluate_task(fm, vocab, dev, t);
        em.task_dev[t] = s;
        sum += s;
      }
      em.dev_mean = sum / static_cast<double>(plan.tasks.size());
      em.kept_percent = heads_kept_percent(fm);
      res.history.push_back(em);
      if (em.dev_mean > best_score) {
        best_score = em.dev_mean;
        best = fm;
        best_epoch = em.epoch;
      }
    }
  };

  run_stage(0, plan.epochs);
  if (plan.pruning == "sp") {
    // stage 2 starts from the best stage-1 checkpoint
    fm = best;
    fm.base.gates_active = true;
    best_score = -1.0;  // reselect within stage 2 (gated model)
    run_stage(1, plan.sp_gate_epochs > 0 ? plan.sp_gate_epochs : plan.epochs);
  }
  res.model = best;
  res.dev_score = best_score;
  res.best_epoch = best_epoch;
  res.grid = utilization(res.model);
  res.grid.task_set = [&] {
    std::string s;
    for (const std::string& t : plan.tasks) s += (s.empty() ? "" : "+") + t;
    return s;
  }();
  return res;
}

}  // namespace gatelab
