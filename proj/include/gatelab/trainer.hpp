#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "gatelab/heads.hpp"

namespace gatelab {

// Running average over the most recent 5 raw losses per task;
// L'_t = (sum_i avg_i / avg_t) * L_t.
class LossBalancer {
 public:
  explicit LossBalancer(int window = 5) : window_(window) {}

  bool initialized(const std::string& task) const { return recent_.count(task) > 0; }
  double running_avg(const std::string& task) const;

  // Returns the multiplier sum_i avg_i / avg_t (first batch of a task uses
  // the current loss as its running average), then pushes the raw loss.
  // Non-finite loss -> error.
  double balance(const std::string& task, double loss);

 private:
  int window_;
  std::map<std::string, std::deque<double>> recent_;
};

// P(t) = |D_t|^0.8 / sum_i |D_i|^0.8 over a fixed task ordering.
std::map<std::string, double> task_probabilities(const std::map<std::string, int>& sizes);
std::string sample_task(const std::map<std::string, int>& sizes, Rng& rng);

struct TrainPlan {
  std::vector<std::string> tasks;
  std::string mode = "stl";      // stl | mtl-pair | mtl-5
  std::string pruning = "none";  // none | sp | dp
  double lambda = 0.01;          // L0 weight; applied as lambda * E[L0] / total_heads
  int epochs = 3;
  int warmup = 1;                // epochs of linear lr warm-up
  int sp_gate_epochs = 0;        // SP stage-2 epochs; 0 = same as epochs
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double lr_encoder = 5e-5;
  double lr_decoder = 1e-3;
  double lr_gates = 0.05;
  double dev_fraction = 0.1;
  bool sp_train_encoder = false;  // SP stage 2: also update encoder weights
  int batches_per_epoch = 0;      // 0 = dataset-size-weighted default
  EncoderConfig encoder;
  HeadConfig heads;
  double init_alpha = 2.0;
  double gate_l = -0.1;
  double gate_r = 1.1;

  void validate() const;
  static TrainPlan from_json_file(const std::string& path);
  std::string to_json() const;
};

struct UtilizationGrid {
  Tensor expected;  // layers x heads, values in (0,1)
  int run_id = 0;
  std::string task_set;
};

void write_utilization_csv(const std::string& path, const UtilizationGrid& grid,
                           const std::string& task, int run);
UtilizationGrid read_utilization_csv(const std::string& path);

struct EpochMetrics {
  int epoch = 0;
  std::map<std::string, double> task_dev;  // per-task dev score
  double dev_mean = 0.0;
  double train_loss = 0.0;
  double kept_percent = 0.0;
};

struct TrainResult {
  FullModel model;  // best checkpoint
  UtilizationGrid grid;
  double dev_score = 0.0;
  int best_epoch = -1;
  std::vector<EpochMetrics> history;
};

// One full run (one seed). Deterministic given (plan, corpus bytes, seed).
TrainResult train(const TrainPlan& plan, const std::vector<Sentence>& corpus,
                  const Vocab& vocab, std::uint64_t seed);

UtilizationGrid utilization(const FullModel& m);
double heads_kept_percent(const FullModel& m);

// Sentences encoded + decoded per wall-clock second in eval mode, zero-gated
// heads skipped. Runs for at least min_seconds.
double throughput(const FullModel& m, const Vocab& vocab,
                  const std::vector<Sentence>& sents, double min_seconds);

// Task metrics: pos accuracy, ner/con span F1, dep LAS, srl (pred,span,role) F1.
double evaluate_task(const FullModel& m, const Vocab& vocab,
                     const std::vector<Sentence>& sents, const std::string& task);

// Eval-mode encode of one sentence with snapshot capture (probing input).
SnapshotRecord capture_sentence(const FullModel& m, const Vocab& vocab,
                                const Sentence& s, int sentence_index);

}  // namespace gatelab
