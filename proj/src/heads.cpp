#include "gatelab/heads.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace gatelab {

namespace {

bool has_task(const FullModel& fm, const std::string& t) {
  return std::find(fm.base.tasks.begin(), fm.base.tasks.end(), t) != fm.base.tasks.end();
}

void require_task(const FullModel& fm, const std::string& t) {
  if (!has_task(fm, t)) throw std::runtime_error("heads: task '" + t + "' not initialized");
}

}  // namespace

void init_full_model(FullModel& fm, const EncoderConfig& cfg, const HeadConfig& hc,
                     int vocab_size, const std::vector<std::string>& tasks,
                     const TaskLabels& labels, Rng& rng,
                     double init_alpha, double l, double r) {
  fm.head_cfg = hc;
  fm.base.tasks = tasks;
  fm.base.labels = labels;
  init_encoder(fm.base, cfg, vocab_size, rng, init_alpha, l, r);
  ParamStore& P = fm.base.params;
  HeadHandles& H = fm.heads;
  const double sigma = 0.02;
  int d = cfg.d_model;
  for (const std::string& t : tasks) {
    if (t == "pos") {
      int k = labels.pos.size();
      if (k == 0) throw std::runtime_error("heads: empty POS label inventory");
      H.pos_w = P.add("head.pos.w", Tensor::randn({d, k}, sigma, rng));
      H.pos_b = P.add("head.pos.b", Tensor::zeros({1, k}));
    } else if (t == "dep") {
      int p = hc.dep_dim;
      int rl = std::max(1, labels.dep_rel.size());
      H.dep_pl = P.add("head.dep.pl", Tensor::randn({d, p}, sigma, rng));
      H.dep_pr = P.add("head.dep.pr", Tensor::randn({d, p}, sigma, rng));
      H.dep_u = P.add("head.dep.u", Tensor::randn({p, p}, sigma, rng));
      H.dep_ul = P.add("head.dep.ul", Tensor::zeros({p, 1}));
      H.dep_ur = P.add("head.dep.ur", Tensor::zeros({p, 1}));
      H.dep_b = P.add("head.dep.b", Tensor::zeros({1, 1}));
      H.dep_relw = P.add("head.dep.relw", Tensor::randn({2 * d, rl}, sigma, rng));
      H.dep_relb = P.add("head.dep.relb", Tensor::zeros({1, rl}));
    } else if (t == "ner" || t == "con") {
      int p = hc.span_dim;
      int k = (t == "ner" ? labels.ner.size() : labels.con.size()) + 1;  // + NONE
      std::string pre = "head." + t + ".";
      int pl = P.add(pre + "pl", Tensor::randn({d, p}, sigma, rng));
      int pr = P.add(pre + "pr", Tensor::randn({d, p}, sigma, rng));
      int u = P.add(pre + "u", Tensor::randn({k * p, p}, sigma, rng));
      int w = P.add(pre + "w", Tensor::randn({2 * p, k}, sigma, rng));
      int b = P.add(pre + "b", Tensor::zeros({1, k}));
      if (t == "ner") {
        H.ner_pl = pl; H.ner_pr = pr; H.ner_u = u; H.ner_w = w; H.ner_b = b;
      } else {
        H.con_pl = pl; H.con_pr = pr; H.con_u = u; H.con_w = w; H.con_b = b;
      }
    } else if (t == "srl") {
      int k = labels.srl_role.size() + 1;
      H.srl_predw = P.add("head.srl.predw", Tensor::randn({d, 1}, sigma, rng));
      H.srl_predb = P.add("head.srl.predb", Tensor::zeros({1, 1}));
      H.srl_spanw = P.add("head.srl.spanw", Tensor::randn({d + hc.width_dim, 1}, sigma, rng));
      H.srl_spanb = P.add("head.srl.spanb", Tensor::zeros({1, 1}));
      H.srl_width = P.add("head.srl.width", Tensor::randn({hc.srl_max_width, hc.width_dim}, sigma, rng));
      H.srl_rolew = P.add("head.srl.rolew", Tensor::randn({2 * d + hc.width_dim, k}, sigma, rng));
      H.srl_roleb = P.add("head.srl.roleb", Tensor::zeros({1, k}));
    } else {
      throw std::runtime_error("heads: unknown task '" + t + "'");
    }
  }
}

std::vector<std::pair<int, int>> enumerate_spans(int n, int max_width) {
  if (max_width < 1) throw std::runtime_error("heads: max span width must be >= 1");
  std::vector<std::pair<int, int>> out;
  for (int b = 0; b < n; ++b)
    for (int e = b; e < n && e - b < max_width; ++e) out.emplace_back(b, e);
  return out;
}

// --- POS ----------------------------------------------------------------------

NodeId pos_logits(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words) {
  require_task(fm, "pos");
  return g.add(g.matmul(words, bind(fm.heads.pos_w)), bind(fm.heads.pos_b));
}

NodeId pos_loss(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                const Sentence& gold) {
  if (!gold.has_pos()) throw std::runtime_error("heads: sentence lacks POS tags");
  std::vector<int> targets;
  for (const std::string& p : gold.pos) {
    int id = fm.base.labels.pos.id(p);
    if (id < 0) throw std::runtime_error("heads: unknown POS label '" + p + "'");
    targets.push_back(id);
  }
  return g.cross_entropy_mean(pos_logits(g, fm, bind, words), targets);
}

std::vector<int> pos_decode(const Tensor& logits) {
  std::vector<int> out;
  for (int i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    out.push_back(best);
  }
  return out;
}

// --- DEP ----------------------------------------------------------------------

namespace {

struct DepParts {
  NodeId cand;  // [n+1, d]: root then words
  NodeId arc;   // [n, n+1]
};

DepParts dep_parts(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words, NodeId root) {
  require_task(fm, "dep");
  const HeadHandles& H = fm.heads;
  int n = g.value(words).rows();
  // cand = [root; words] via double transpose (no concat_rows primitive)
  NodeId cand = g.transpose(g.concat_cols(g.transpose(root), g.transpose(words)));
  NodeId pl = g.matmul(words, bind(H.dep_pl));       // [n, p]
  NodeId pr = g.matmul(cand, bind(H.dep_pr));        // [n+1, p]
  NodeId bil = g.matmul(g.matmul(pl, bind(H.dep_u)), g.transpose(pr));  // [n, n+1]
  NodeId ones_row = g.input(Tensor::full({1, n + 1}, 1.0));
  NodeId ones_col = g.input(Tensor::full({n, 1}, 1.0));
  NodeId left = g.matmul(g.matmul(pl, bind(H.dep_ul)), ones_row);
  NodeId right = g.matmul(ones_col, g.transpose(g.matmul(pr, bind(H.dep_ur))));
  NodeId ones_mat = g.input(Tensor::full({n, n + 1}, 1.0));
  NodeId bias = g.scale_by(ones_mat, g.at(bind(H.dep_b), 0, 0));
  return {cand, g.add(g.add(bil, left), g.add(right, bias))};
}

NodeId dep_rel_logits(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                      NodeId cand, const std::vector<int>& head_cand_idx) {
  NodeId heads_m = g.rows(cand, head_cand_idx);  // [n, d]
  NodeId feat = g.concat_cols(words, heads_m);   // [n, 2d]
  return g.add(g.matmul(feat, bind(fm.heads.dep_relw)), bind(fm.heads.dep_relb));
}

}  // namespace

NodeId dep_arc_logits(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words, NodeId root) {
  return dep_parts(g, fm, bind, words, root).arc;
}

NodeId dep_loss(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                NodeId root, const Sentence& gold) {
  if (!gold.has_dep()) throw std::runtime_error("heads: sentence lacks a dependency tree");
  DepParts parts = dep_parts(g, fm, bind, words, root);
  std::vector<int> arc_targets, head_idx, rel_targets;
  for (const Arc& a : gold.dep) {
    arc_targets.push_back(a.head + 1);  // root -1 -> column 0
    head_idx.push_back(a.head + 1);
    int rid = fm.base.labels.dep_rel.id(a.rel);
    if (rid < 0) throw std::runtime_error("heads: unknown dependency relation '" + a.rel + "'");
    rel_targets.push_back(rid);
  }
  NodeId arc_ce = g.cross_entropy_mean(parts.arc, arc_targets);
  NodeId rel = dep_rel_logits(g, fm, bind, words, parts.cand, head_idx);
  NodeId rel_ce = g.cross_entropy_mean(rel, rel_targets);
  return g.add(arc_ce, rel_ce);
}

DepPrediction dep_decode(Graph& g, const FullModel& fm, ParamBinder& bind,
                         NodeId words, NodeId root) {
  DepParts parts = dep_parts(g, fm, bind, words, root);
  const Tensor& arc = g.value(parts.arc);
  DepPrediction pred;
  std::vector<int> head_idx;
  for (int i = 0; i < arc.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < arc.cols(); ++j)
      if (arc.at(i, j) > arc.at(i, best)) best = j;
    head_idx.push_back(best);
    pred.head.push_back(best - 1);
  }
  const Tensor& rel = g.value(dep_rel_logits(g, fm, bind, words, parts.cand, head_idx));
  for (int i = 0; i < rel.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < rel.cols(); ++j)
      if (rel.at(i, j) > rel.at(i, best)) best = j;
    pred.rel.push_back(best);
  }
  return pred;
}

// --- NER / CON ------------------------------------------------------------------

namespace {

struct SpanHandles {
  int pl, pr, u, w, b;
  const LabelSet* labels;
};

SpanHandles span_handles(const FullModel& fm, const std::string& task) {
  require_task(fm, task);
  const HeadHandles& H = fm.heads;
  if (task == "ner") return {H.ner_pl, H.ner_pr, H.ner_u, H.ner_w, H.ner_b, &fm.base.labels.ner};
  if (task == "con") return {H.con_pl, H.con_pr, H.con_u, H.con_w, H.con_b, &fm.base.labels.con};
  throw std::runtime_error("heads: '" + task + "' is not a span task");
}

bool spans_overlap(int b1, int e1, int b2, int e2) { return b1 <= e2 && b2 <= e1; }

bool spans_cross(int b1, int e1, int b2, int e2) {
  return (b1 < b2 && b2 <= e1 && e1 < e2) || (b2 < b1 && b1 <= e2 && e2 < e1);
}

}  // namespace

NodeId span_logits(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                   const std::string& task) {
  SpanHandles sh = span_handles(fm, task);
  int n = g.value(words).rows();
  int p = fm.head_cfg.span_dim;
  int k = sh.labels->size() + 1;
  auto spans = enumerate_spans(n, fm.head_cfg.span_max_width);
  std::vector<int> starts, ends;
  for (auto [b, e] : spans) {
    starts.push_back(b);
    ends.push_back(e);
  }
  NodeId pl = g.matmul(words, bind(sh.pl));
  NodeId pr = g.matmul(words, bind(sh.pr));
  NodeId ps = g.rows(pl, starts);  // [S, p]
  NodeId pe = g.rows(pr, ends);    // [S, p]
  NodeId lin = g.add(g.matmul(g.concat_cols(ps, pe), bind(sh.w)), bind(sh.b));
  NodeId ones = g.input(Tensor::full({p, 1}, 1.0));
  NodeId u = bind(sh.u);
  NodeId bil = -1;
  for (int l = 0; l < k; ++l) {
    NodeId ul = g.slice_rows(u, l * p, (l + 1) * p);
    NodeId col = g.matmul(g.mul(g.matmul(ps, ul), pe), ones);  // [S, 1]
    bil = (l == 0) ? col : g.concat_cols(bil, col);
  }
  return g.add(bil, lin);
}

NodeId span_loss(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                 const std::string& task, const Sentence& gold) {
  SpanHandles sh = span_handles(fm, task);
  int n = gold.size();
  int none_id = sh.labels->size();
  auto spans = enumerate_spans(n, fm.head_cfg.span_max_width);
  std::map<std::pair<int, int>, int> gold_map;
  const std::vector<Span>& gspans = (task == "ner") ? gold.ner : gold.con;
  for (const Span& sp : gspans) {
    int id = sh.labels->id(sp.label);
    if (id < 0) throw std::runtime_error("heads: unknown " + task + " label '" + sp.label + "'");
    gold_map[{sp.begin, sp.end}] = id;
  }
  std::vector<int> targets;
  for (auto [b, e] : spans) {
    auto it = gold_map.find({b, e});
    targets.push_back(it == gold_map.end() ? none_id : it->second);
  }
  return g.cross_entropy_mean(span_logits(g, fm, bind, words, task), targets);
}

std::vector<Span> span_decode(const FullModel& fm, const std::string& task,
                              const Tensor& logits, int n_words) {
  SpanHandles sh = span_handles(fm, task);
  int none_id = sh.labels->size();
  auto spans = enumerate_spans(n_words, fm.head_cfg.span_max_width);
  struct Cand {
    int b, e, label, order;
    double score;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(static_cast<int>(i), j) > logits.at(static_cast<int>(i), best)) best = j;
    if (best != none_id)
      cands.push_back({spans[i].first, spans[i].second, best, static_cast<int>(i),
                       logits.at(static_cast<int>(i), best)});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.order < b.order;
  });
  std::vector<Span> out;
  for (const Cand& c : cands) {
    bool ok = true;
    for (const Span& kept : out) {
      bool conflict = (task == "ner") ? spans_overlap(c.b, c.e, kept.begin, kept.end)
                                      : spans_cross(c.b, c.e, kept.begin, kept.end);
      if (conflict) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back({c.b, c.e, sh.labels->items[c.label]});
  }
  std::sort(out.begin(), out.end(), [](const Span& a, const Span& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
  });
  return out;
}

// --- SRL -------------------------------------------------------------------------

namespace {

struct SrlParts {
  NodeId pred_logits;            // [n, 1]
  NodeId span_mean;              // [S, d]
  NodeId span_scores;            // [S, 1]
  std::vector<std::pair<int, int>> spans;
  std::vector<int> width_idx;
  std::vector<int> pred_cands;   // token indices kept
  std::vector<int> span_cands;   // span list indices kept
};

SrlParts srl_parts(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words, int n) {
  require_task(fm, "srl");
  const HeadHandles& H = fm.heads;
  const HeadConfig& hc = fm.head_cfg;
  SrlParts sp;
  sp.pred_logits = g.add(g.matmul(words, bind(H.srl_predw)), bind(H.srl_predb));
  sp.spans = enumerate_spans(n, hc.srl_max_width);
  std::vector<NodeId> mean_rows_v;
  for (auto [b, e] : sp.spans) {
    mean_rows_v.push_back(g.mean_rows(words, b, e + 1));
    sp.width_idx.push_back(std::min(e - b + 1, hc.srl_max_width) - 1);
  }
  sp.span_mean = g.stack_rows(mean_rows_v);
  NodeId widths = g.rows(bind(H.srl_width), sp.width_idx);
  NodeId feat = g.concat_cols(sp.span_mean, widths);
  sp.span_scores = g.add(g.matmul(feat, bind(H.srl_spanw)), bind(H.srl_spanb));
  // prune by current scores (detached ranking, deterministic ties by index)
  auto topk = [](const Tensor& scores, int k) {
    std::vector<int> idx(scores.rows());
    for (int i = 0; i < scores.rows(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return scores.at(a, 0) > scores.at(b, 0);
    });
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(k)));
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  int keep_pred = static_cast<int>(std::ceil(hc.pred_ratio * n));
  int keep_span = static_cast<int>(std::ceil(hc.arg_ratio * n));
  sp.pred_cands = topk(g.value(sp.pred_logits), std::max(1, keep_pred));
  sp.span_cands = topk(g.value(sp.span_scores), std::max(1, keep_span));
  return sp;
}

NodeId srl_role_logits(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                       const SrlParts& sp) {
  std::vector<int> pred_rows, span_rows, width_rows;
  for (int p : sp.pred_cands)
    for (int s : sp.span_cands) {
      pred_rows.push_back(p);
      span_rows.push_back(s);
      width_rows.push_back(sp.width_idx[s]);
    }
  NodeId pf = g.rows(words, pred_rows);
  NodeId sf = g.rows(sp.span_mean, span_rows);
  NodeId wf = g.rows(bind(fm.heads.srl_width), width_rows);
  NodeId feat = g.concat_cols(g.concat_cols(pf, sf), wf);
  return g.add(g.matmul(feat, bind(fm.heads.srl_rolew)), bind(fm.heads.srl_roleb));
}

}  // namespace

NodeId srl_loss(Graph& g, const FullModel& fm, ParamBinder& bind, NodeId words,
                const Sentence& gold) {
  int n = gold.size();
  SrlParts sp = srl_parts(g, fm, bind, words, n);
  std::vector<double> pred_targets(n, 0.0);
  std::map<std::pair<int, int>, bool> gold_arg_spans;
  std::map<std::tuple<int, int, int>, int> gold_roles;
  for (const Frame& f : gold.srl) {
    pred_targets[f.predicate] = 1.0;
    for (const Span& a : f.args) {
      gold_arg_spans[{a.begin, a.end}] = true;
      int rid = fm.base.labels.srl_role.id(a.label);
      if (rid < 0) throw std::runtime_error("heads: unknown SRL role '" + a.label + "'");
      gold_roles[{f.predicate, a.begin, a.end}] = rid;
    }
  }
  NodeId pred_bce = g.bce_logits_mean(sp.pred_logits, pred_targets);
  // auxiliary signal for the span pruner (gold argument span or not); without
  // it the top-k pruning never learns to keep gold spans
  std::vector<double> span_targets;
  for (auto [b, e] : sp.spans) span_targets.push_back(gold_arg_spans.count({b, e}) ? 1.0 : 0.0);
  NodeId span_bce = g.bce_logits_mean(sp.span_scores, span_targets);
  NodeId role = srl_role_logits(g, fm, bind, words, sp);
  int none_id = fm.base.labels.srl_role.size();
  std::vector<int> role_targets;
  for (int p : sp.pred_cands)
    for (int s : sp.span_cands) {
      auto [b, e] = sp.spans[s];
      auto it = gold_roles.find({p, b, e});
      role_targets.push_back(it == gold_roles.end() ? none_id : it->second);
    }
  NodeId role_ce = g.cross_entropy_mean(role, role_targets);
  return g.add(g.add(pred_bce, role_ce), span_bce);
}

std::vector<Frame> srl_decode(Graph& g, const FullModel& fm, ParamBinder& bind,
                              NodeId words, int n_words) {
  SrlParts sp = srl_parts(g, fm, bind, words, n_words);
  const Tensor& role = g.value(srl_role_logits(g, fm, bind, words, sp));
  const Tensor& pl = g.value(sp.pred_logits);
  int none_id = fm.base.labels.srl_role.size();
  std::vector<Frame> out;
  int row = 0;
  std::map<int, std::vector<std::tuple<double, int, int, int>>> per_pred;  // score, b, e, role
  for (int p : sp.pred_cands) {
    for (int s : sp.span_cands) {
      int best = 0;
      for (int j = 1; j < role.cols(); ++j)
        if (role.at(row, j) > role.at(row, best)) best = j;
      if (best != none_id && pl.at(p, 0) > 0.0) {
        auto [b, e] = sp.spans[s];
        per_pred[p].emplace_back(role.at(row, best), b, e, best);
      }
      ++row;
    }
  }
  for (auto& [p, cands] : per_pred) {
    std::stable_sort(cands.begin(), cands.end(),
                     [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
    Frame f;
    f.predicate = p;
    for (auto& [score, b, e, r] : cands) {
      bool ok = true;
      for (const Span& kept : f.args)
        if (spans_overlap(b, e, kept.begin, kept.end)) {
          ok = false;
          break;
        }
      if (ok) f.args.push_back({b, e, fm.base.labels.srl_role.items[r]});
    }
    if (!f.args.empty()) out.push_back(std::move(f));
  }
  return out;
}

NodeId task_loss(Graph& g, const FullModel& fm, ParamBinder& bind,
                 const WordEmbeds& we, const std::string& task, const Sentence& gold) {
  if (task == "pos") return pos_loss(g, fm, bind, we.words, gold);
  if (task == "dep") return dep_loss(g, fm, bind, we.words, we.root, gold);
  if (task == "ner") return span_loss(g, fm, bind, we.words, "ner", gold);
  if (task == "con") return span_loss(g, fm, bind, we.words, "con", gold);
  if (task == "srl") return srl_loss(g, fm, bind, we.words, gold);
  throw std::runtime_error("heads: unknown task '" + task + "'");
}

}  // namespace gatelab
