#pragma once

#include <map>
#include <string>
#include <vector>

#include "gatelab/encoder.hpp"

namespace gatelab {

struct ProbeOptions {
  bool pure_mean = false;    // merge key columns by mean instead of sum
  bool include_bos = false;  // keep the BOS row/column as an extra "root" word
};

// Word-level attention for one (layer, head): mean over a word's subtoken
// rows, sum over its subtoken columns (sentinels dropped). Stays
// row-stochastic. argmax holds the per-row argmax, ties to lowest index.
struct WordAttention {
  Tensor attn;              // words x words (one extra row/col with include_bos)
  std::vector<int> argmax;  // per row
};

WordAttention merge_attention(const Tensor& a, const SubtokenMap& map,
                              const ProbeOptions& opts = {});

// (1/n) sum over gold undirected arcs (h, d) of 1(g_h = d or g_d = h);
// root-attached arcs are excluded (the root has no attention row).
double dep_probe(const WordAttention& wa, const Sentence& s);
// per-relation (hits, total); keys are relation labels
std::map<std::string, std::pair<int, int>> dep_probe_counts(const WordAttention& wa,
                                                            const Sentence& s);

// (1/m) sum over (predicate p, argument span T) of
// 1(g_p in T or exists t in T with g_t = p).
double srl_probe(const WordAttention& wa, const Sentence& s);
std::map<std::string, std::pair<int, int>> srl_probe_counts(const WordAttention& wa,
                                                            const Sentence& s);

// H = A V at the subtoken level, then word rows by the same subtoken-row
// averaging as merge_attention. Result: words x head_dim.
Tensor attended_values(const Tensor& a, const Tensor& v, const SubtokenMap& map);

// Per-label mean attended-value vectors.
struct LabelCentroids {
  std::vector<std::string> labels;
  std::vector<Tensor> centroid;  // 1 x d each
  std::vector<int> count;
  int zero_norm_skipped = 0;

  int id(const std::string& label) const;  // -1 if absent
  void add(const std::string& label, const Tensor& vec);
  void finalize();  // divide sums by counts
};

// Accumulates centroids over per-sentence attended values hs[i] and the
// matching gold spans[i]; returns finalized (divided) centroids.
LabelCentroids pseudo_cluster(const std::vector<Tensor>& hs,
                              const std::vector<std::vector<Span>>& spans);

// One span's mean vector over word rows [begin, end] of H.
Tensor span_vector(const Tensor& h, int begin, int end);

// Label of the centroid with the highest cosine similarity; ties to the
// lowest label id. Zero-norm centroids are skipped (counted on the centroids).
int av_probe(const LabelCentroids& c, const Tensor& vec);

// --- corpus-level probing ----------------------------------------------------

struct ProbeReport {
  std::string task;
  int layers = 0, heads = 0, runs = 0;
  std::vector<std::string> labels;  // support > 0, sorted
  std::vector<int> support;
  // accuracy[label][run][layer*heads + head]
  std::vector<std::vector<std::vector<double>>> accuracy;
  std::vector<double> selected;    // per label: mean over runs of max over heads
  std::vector<int> best_layer;     // layer of the best head by run-mean accuracy
  // layer_max[label][layer] = max over that layer's heads of run-mean accuracy
  std::vector<std::vector<double>> layer_max;
  std::vector<std::string> omitted;  // zero-support labels

  int label_id(const std::string& l) const;
  std::string to_json() const;
  static ProbeReport from_json(const std::string& text);
  void save_json(const std::string& path) const;
  static ProbeReport load_json(const std::string& path);
  // task,label,support,run,head_layer,head_index,accuracy,selected_score
  void save_csv(const std::string& path) const;
};

// Probes every head of every run. POS spans are single words; NER and CON use
// their gold spans with attended-value probing; DEP and SRL use the attention
// probes. runs[r] holds one snapshot per corpus sentence, aligned by
// sentence_index.
ProbeReport probe_all(const std::vector<std::vector<SnapshotRecord>>& runs,
                      const std::vector<Sentence>& corpus, const std::string& task,
                      const ProbeOptions& opts = {});

// Signed per-label differences of selected scores against a baseline report,
// ordered by gold-label frequency (descending) in the corpus.
struct DiffEntry {
  std::string label;
  int frequency = 0;
  double diff = 0.0;
  bool comparable = true;  // false when the baseline lacks the label
};
std::vector<DiffEntry> diff_report(const ProbeReport& model, const ProbeReport& baseline,
                                   const std::vector<Sentence>& corpus);

// Gold-label occurrence counts for one task over the corpus.
std::map<std::string, int> label_frequencies(const std::vector<Sentence>& corpus,
                                             const std::string& task);

}  // namespace gatelab
