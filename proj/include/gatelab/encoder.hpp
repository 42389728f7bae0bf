#pragma once

#include <string>
#include <vector>

#include "gatelab/corpus.hpp"
#include "gatelab/gates.hpp"
#include "gatelab/graph.hpp"

namespace gatelab {

struct EncoderConfig {
  int layers = 4;
  int heads = 8;
  int d_model = 128;
  int d_ff = 256;
  int max_len = 64;
  double dropout = 0.1;
  double word_dropout = 0.2;

  int head_dim() const { return d_model / heads; }
  int total_heads() const { return layers * heads; }
  void validate() const;
};

// Pre-gating attention matrices and value matrices captured at inference.
struct AttentionSnapshot {
  int layers = 0;
  int heads = 0;
  int seq_len = 0;
  int head_dim = 0;
  std::vector<Tensor> attn;   // layers*heads entries, each seq x seq (row-stochastic)
  std::vector<Tensor> value;  // layers*heads entries, each seq x head_dim

  Tensor& a(int l, int h) { return attn[l * heads + h]; }
  const Tensor& a(int l, int h) const { return attn[l * heads + h]; }
  Tensor& v(int l, int h) { return value[l * heads + h]; }
  const Tensor& v(int l, int h) const { return value[l * heads + h]; }
};

// One captured sentence: snapshot plus the word map needed by the probes.
struct SnapshotRecord {
  AttentionSnapshot snap;
  SubtokenMap map;
  int sentence_index = 0;
};

// Binary snapshot file: u64 header length, JSON header, then little-endian
// f64 matrices in header order.
void write_snapshots(const std::string& path, const std::vector<SnapshotRecord>& records);
std::vector<SnapshotRecord> read_snapshots(const std::string& path);

// --- model ------------------------------------------------------------------

struct LabelSet {
  std::vector<std::string> items;
  int id(const std::string& s) const;  // -1 if absent
  int add(const std::string& s);
  int size() const { return static_cast<int>(items.size()); }
};

struct TaskLabels {
  LabelSet pos, ner, dep_rel, con, srl_role;
  static TaskLabels collect(const std::vector<Sentence>& corpus);
};

// Cached parameter indices for the hot path.
struct EncoderHandles {
  int tok_embed = -1, pos_embed = -1;
  int final_ln_g = -1, final_ln_b = -1;
  int gate_alpha = -1;
  struct Layer {
    int ln1_g, ln1_b, ln2_g, ln2_b;
    std::vector<int> wq, wk, wv, wo;  // per head
    int attn_bo;
    int ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  std::vector<Layer> layer;
};

struct Model {
  EncoderConfig cfg;
  double gate_l = -0.1;
  double gate_r = 1.1;
  int vocab_size = 0;
  bool gates_active = false;  // true once SP/DP has trained the gate logits
  std::vector<std::string> tasks;  // subset of {pos,ner,dep,con,srl}
  TaskLabels labels;
  ParamStore params;
  EncoderHandles enc;

  GateParams gate_params() const;  // copy of the alpha grid with (l, r)
  double eval_gate(int layer, int head) const;
};

// Builds encoder parameters (plus the gate alpha grid) into model.params and
// fills model.enc. Initialization: N(0, 0.02) matrices, zero biases, unit
// layer-norm gains, alpha = init_alpha.
void init_encoder(Model& m, const EncoderConfig& cfg, int vocab_size, Rng& rng,
                  double init_alpha = 2.0, double l = -0.1, double r = 1.1);

// Gate values for one forward pass. Either fixed doubles (eval / frozen-open
// training) or sampled graph nodes (DP / SP stage 2).
struct GateSpec {
  std::vector<double> values;   // layers*heads, used when nodes is empty
  std::vector<NodeId> nodes;    // layers*heads scalar nodes
  bool sampled() const { return !nodes.empty(); }

  static GateSpec all_open(const EncoderConfig& cfg);
  static GateSpec from_eval(const Model& m);  // deterministic eval gates
  // one u per head per batch
  static GateSpec sample(Graph& g, NodeId alpha_node, const Model& m, Rng& rng);
};

struct EncodeResult {
  NodeId hidden = -1;  // [seq, d_model] last-layer states
  AttentionSnapshot snapshot;
};

// Pre-norm transformer stack with per-head gated attention. Heads whose
// fixed gate is exactly 0 are skipped. dropout_rng must be non-null in train
// mode. `params_graph` maps model parameter index -> graph node (shared with
// the task heads so one backward pass covers everything).
class ParamBinder {
 public:
  ParamBinder(Graph& g, const Model& m, bool trainable)
      : g_(g), m_(m), mask_(m.params.count(), trainable ? 1 : 0), node_(m.params.count(), -1) {}
  ParamBinder(Graph& g, const Model& m, std::vector<char> trainable_mask)
      : g_(g), m_(m), mask_(std::move(trainable_mask)), node_(m.params.count(), -1) {}
  NodeId operator()(int param_index);
  // gradient for parameter i, empty tensor if the parameter never entered
  Tensor grad(int param_index) const;
  bool bound(int param_index) const { return node_[param_index] >= 0; }
  NodeId node(int param_index) const { return node_[param_index]; }

 private:
  Graph& g_;
  const Model& m_;
  std::vector<char> mask_;
  std::vector<NodeId> node_;
};

EncodeResult encode(Graph& g, const Model& m, ParamBinder& bind,
                    const std::vector<int>& ids, const GateSpec& gates,
                    bool train, bool capture, Rng* dropout_rng);

// Per-word mean of last-layer subtoken states; BOS row exposed separately as
// the root/sentence representation.
struct WordEmbeds {
  NodeId words = -1;  // [n_words, d_model]
  NodeId root = -1;   // [1, d_model]
};
WordEmbeds word_embed(Graph& g, NodeId hidden, const SubtokenMap& map);

// Train-mode subtoken masking; sentinels never masked.
std::vector<int> word_dropout(const std::vector<int>& ids, double rate, Rng& rng);

}  // namespace gatelab
