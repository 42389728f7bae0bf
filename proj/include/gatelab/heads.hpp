#pragma once

#include "gatelab/encoder.hpp"

namespace gatelab {

struct HeadConfig {
  int dep_dim = 64;        // biaffine projection width for DEP
  int span_dim = 32;       // biaffine projection width for NER/CON
  int span_max_width = 4;  // NER/CON candidate width cap
  int srl_max_width = 30;  // SRL span width cap (width embedding index min(w,30)-1)
  int width_dim = 20;      // span width embedding size
  double arg_ratio = 0.8;  // SRL argument candidates kept: ceil(0.8 n)
  double pred_ratio = 0.4; // SRL predicate candidates kept: ceil(0.4 n)
};

struct HeadHandles {
  int pos_w = -1, pos_b = -1;
  int dep_pl = -1, dep_pr = -1, dep_u = -1, dep_ul = -1, dep_ur = -1, dep_b = -1;
  int dep_relw = -1, dep_relb = -1;
  int ner_pl = -1, ner_pr = -1, ner_u = -1, ner_w = -1, ner_b = -1;
  int con_pl = -1, con_pr = -1, con_u = -1, con_w = -1, con_b = -1;
  int srl_predw = -1, srl_predb = -1, srl_spanw = -1, srl_spanb = -1;
  int srl_width = -1, srl_rolew = -1, srl_roleb = -1;
};

// Encoder plus decoder parameters; one init path so parameter order (and
// therefore checkpoints) is deterministic.
struct FullModel {
  Model base;
  HeadConfig head_cfg;
  HeadHandles heads;
};

void init_full_model(FullModel& fm, const EncoderConfig& cfg, const HeadConfig& hc,
                     int vocab_size, const std::vector<std::string>& tasks,
                     const TaskLabels& labels, Rng& rng,
                     double init_alpha = 2.0, double l = -0.1, double r = 1.1);

// All (begin, end) with end-begin < max_width, begin <= end < n, in a fixed
// scan order (begin ascending, then end).
std::vector<std::pair<int, int>> enumerate_spans(int n, int max_width);

// --- POS -------------------------------------------------------------------
NodeId pos_logits(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words);
NodeId pos_loss(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                const Sentence& gold);
std::vector<int> pos_decode(const Tensor& logits);

// --- DEP -------------------------------------------------------------------
// Candidate-head axis: [root] ++ words (root at column 0).
NodeId dep_arc_logits(Graph& g, const FullModel& fm, ParamBinder& bind,
                      NodeId words, NodeId root);
NodeId dep_loss(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                NodeId root, const Sentence& gold);
struct DepPrediction {
  std::vector<int> head;  // -1 = root
  std::vector<int> rel;
};
DepPrediction dep_decode(Graph& g, const FullModel& fm, ParamBinder& bind,
                         NodeId words, NodeId root);

// --- NER / CON (span scorers share one implementation) ----------------------
NodeId span_logits(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                   const std::string& task);  // [num_spans, labels+1], NONE last
NodeId span_loss(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                 const std::string& task, const Sentence& gold);
// NER: greedy non-overlapping; CON: greedy non-crossing (nesting allowed).
std::vector<Span> span_decode(const FullModel& fm, const std::string& task,
                              const Tensor& logits, int n_words);

// --- SRL ---------------------------------------------------------------------
NodeId srl_loss(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                const Sentence& gold);
std::vector<Frame> srl_decode(Graph& g, const FullModel& fm, ParamBinder& bind,
                              NodeId words, int n_words);

// Combined per-task loss entry point used by the trainer.
NodeId task_loss(Graph& g, const FullModel& fm, ParamBinder& bind,
                 const WordEmbeds& we, const std::string& task, const Sentence& gold);

}  // namespace gatelab
