#include "gatelab/encoder.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace gatelab {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1 || max_len < 2)
    throw std::runtime_error("encoder: invalid dimensions");
  if (d_model % heads != 0) throw std::runtime_error("encoder: d_model must be divisible by heads");
  if (dropout < 0 || dropout > 1 || word_dropout < 0 || word_dropout > 1)
    throw std::runtime_error("encoder: rates must lie in [0,1]");
}

int LabelSet::id(const std::string& s) const {
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i] == s) return static_cast<int>(i);
  return -1;
}

int LabelSet::add(const std::string& s) {
  int i = id(s);
  if (i >= 0) return i;
  items.push_back(s);
  return static_cast<int>(items.size()) - 1;
}

TaskLabels TaskLabels::collect(const std::vector<Sentence>& corpus) {
  TaskLabels t;
  for (const Sentence& s : corpus) {
    for (const std::string& p : s.pos) t.pos.add(p);
    for (const Span& sp : s.ner) t.ner.add(sp.label);
    for (const Arc& a : s.dep) t.dep_rel.add(a.rel);
    for (const Span& sp : s.con) t.con.add(sp.label);
    for (const Frame& f : s.srl)
      for (const Span& a : f.args) t.srl_role.add(a.label);
  }
  return t;
}

GateParams Model::gate_params() const {
  GateParams gp;
  gp.alpha = params[enc.gate_alpha];
  gp.l = gate_l;
  gp.r = gate_r;
  return gp;
}

double Model::eval_gate(int layer, int head) const {
  return gates::eval_gate(params[enc.gate_alpha].at(layer, head), gate_l, gate_r);
}

void init_encoder(Model& m, const EncoderConfig& cfg, int vocab_size, Rng& rng,
                  double init_alpha, double l, double r) {
  cfg.validate();
  m.cfg = cfg;
  m.vocab_size = vocab_size;
  m.gate_l = l;
  m.gate_r = r;
  ParamStore& P = m.params;
  const double sigma = 0.02;
  int d = cfg.d_model, dk = cfg.head_dim();
  m.enc.tok_embed = P.add("enc.tok_embed", Tensor::randn({vocab_size, d}, sigma, rng));
  m.enc.pos_embed = P.add("enc.pos_embed", Tensor::randn({cfg.max_len, d}, sigma, rng));
  m.enc.layer.resize(cfg.layers);
  for (int li = 0; li < cfg.layers; ++li) {
    EncoderHandles::Layer& L = m.enc.layer[li];
    std::string p = "enc.l" + std::to_string(li) + ".";
    L.ln1_g = P.add(p + "ln1.g", Tensor::full({1, d}, 1.0));
    L.ln1_b = P.add(p + "ln1.b", Tensor::zeros({1, d}));
    for (int h = 0; h < cfg.heads; ++h) {
      std::string hp = p + "h" + std::to_string(h) + ".";
      L.wq.push_back(P.add(hp + "wq", Tensor::randn({d, dk}, sigma, rng)));
      L.wk.push_back(P.add(hp + "wk", Tensor::randn({d, dk}, sigma, rng)));
      L.wv.push_back(P.add(hp + "wv", Tensor::randn({d, dk}, sigma, rng)));
      L.wo.push_back(P.add(hp + "wo", Tensor::randn({dk, d}, sigma, rng)));
    }
    L.attn_bo = P.add(p + "attn.bo", Tensor::zeros({1, d}));
    L.ln2_g = P.add(p + "ln2.g", Tensor::full({1, d}, 1.0));
    L.ln2_b = P.add(p + "ln2.b", Tensor::zeros({1, d}));
    L.ffn_w1 = P.add(p + "ffn.w1", Tensor::randn({d, cfg.d_ff}, sigma, rng));
    L.ffn_b1 = P.add(p + "ffn.b1", Tensor::zeros({1, cfg.d_ff}));
    L.ffn_w2 = P.add(p + "ffn.w2", Tensor::randn({cfg.d_ff, d}, sigma, rng));
    L.ffn_b2 = P.add(p + "ffn.b2", Tensor::zeros({1, d}));
  }
  m.enc.final_ln_g = P.add("enc.final_ln.g", Tensor::full({1, d}, 1.0));
  m.enc.final_ln_b = P.add("enc.final_ln.b", Tensor::zeros({1, d}));
  m.enc.gate_alpha = P.add("gates.alpha", Tensor::full({cfg.layers, cfg.heads}, init_alpha));
}

NodeId ParamBinder::operator()(int param_index) {
  if (param_index < 0 || param_index >= static_cast<int>(node_.size()))
    throw std::runtime_error("encoder: unknown parameter index");
  if (node_[param_index] < 0)
    node_[param_index] = g_.input(m_.params[param_index], mask_[param_index] != 0);
  return node_[param_index];
}

Tensor ParamBinder::grad(int param_index) const {
  if (node_[param_index] < 0) return Tensor{};
  return g_.gradient(node_[param_index]);
}

GateSpec GateSpec::all_open(const EncoderConfig& cfg) {
  GateSpec s;
  s.values.assign(cfg.total_heads(), 1.0);
  return s;
}

GateSpec GateSpec::from_eval(const Model& m) {
  GateSpec s;
  for (int l = 0; l < m.cfg.layers; ++l)
    for (int h = 0; h < m.cfg.heads; ++h) s.values.push_back(m.eval_gate(l, h));
  return s;
}

GateSpec GateSpec::sample(Graph& g, NodeId alpha_node, const Model& m, Rng& rng) {
  GateSpec s;
  Tensor u = Tensor::zeros({m.cfg.layers, m.cfg.heads});
  for (double& x : u.data) x = rng.open01();
  NodeId z = gates::sample_gate_node(g, alpha_node, u, m.gate_l, m.gate_r);
  for (int l = 0; l < m.cfg.layers; ++l)
    for (int h = 0; h < m.cfg.heads; ++h) s.nodes.push_back(g.at(z, l, h));
  return s;
}

namespace {

// Inverted-scaling dropout mask as a constant tensor.
NodeId apply_dropout(Graph& g, NodeId x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  const Tensor& X = g.value(x);
  Tensor mask = Tensor::zeros(X.shape);
  for (double& v : mask.data) v = rng.bernoulli(rate) ? 0.0 : 1.0 / (1.0 - rate);
  return g.mul(x, g.input(std::move(mask)));
}

}  // namespace

EncodeResult encode(Graph& g, const Model& m, ParamBinder& bind,
                    const std::vector<int>& ids, const GateSpec& gates_,
                    bool train, bool capture, Rng* dropout_rng) {
  const EncoderConfig& cfg = m.cfg;
  int S = static_cast<int>(ids.size());
  if (S > cfg.max_len) throw std::runtime_error("encoder: input exceeds max sequence length");
  if (train && dropout_rng == nullptr) throw std::runtime_error("encoder: train mode needs an rng");
  EncodeResult res;
  if (capture) {
    res.snapshot.layers = cfg.layers;
    res.snapshot.heads = cfg.heads;
    res.snapshot.seq_len = S;
    res.snapshot.head_dim = cfg.head_dim();
    res.snapshot.attn.resize(cfg.total_heads());
    res.snapshot.value.resize(cfg.total_heads());
  }
  std::vector<int> positions(S);
  for (int i = 0; i < S; ++i) positions[i] = i;
  NodeId x = g.add(g.embedding(bind(m.enc.tok_embed), ids),
                   g.rows(bind(m.enc.pos_embed), positions));
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  for (int li = 0; li < cfg.layers; ++li) {
    const EncoderHandles::Layer& L = m.enc.layer[li];
    NodeId h = g.layer_norm(x, bind(L.ln1_g), bind(L.ln1_b));
    NodeId attn_sum = -1;
    for (int hi = 0; hi < cfg.heads; ++hi) {
      int gid = li * cfg.heads + hi;
      if (!gates_.sampled() && gates_.values[gid] == 0.0) {
        if (capture) {
          // probing wants the pre-gating attention even for pruned heads
          NodeId q = g.matmul(h, bind(L.wq[hi]));
          NodeId k = g.matmul(h, bind(L.wk[hi]));
          NodeId v = g.matmul(h, bind(L.wv[hi]));
          NodeId a = g.softmax_rows(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_dk));
          res.snapshot.attn[gid] = g.value(a);
          res.snapshot.value[gid] = g.value(v);
        }
        continue;  // head skipped entirely
      }
      NodeId q = g.matmul(h, bind(L.wq[hi]));
      NodeId k = g.matmul(h, bind(L.wk[hi]));
      NodeId v = g.matmul(h, bind(L.wv[hi]));
      NodeId a = g.softmax_rows(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_dk));
      if (capture) {
        res.snapshot.attn[gid] = g.value(a);
        res.snapshot.value[gid] = g.value(v);
      }
      NodeId av = g.matmul(a, v);
      NodeId gated = gates_.sampled() ? g.scale_by(av, gates_.nodes[gid])
                                      : g.scale(av, gates_.values[gid]);
      NodeId out = g.matmul(gated, bind(L.wo[hi]));
      attn_sum = attn_sum < 0 ? out : g.add(attn_sum, out);
    }
    NodeId bo = bind(L.attn_bo);
    NodeId attn_out;
    if (attn_sum < 0) {
      // all heads gated off: the sublayer contributes only its output bias
      attn_out = g.add(g.scale(h, 0.0), bo);
    } else {
      attn_out = g.add(attn_sum, bo);
    }
    if (train) attn_out = apply_dropout(g, attn_out, cfg.dropout, *dropout_rng);
    x = g.add(x, attn_out);
    NodeId f = g.layer_norm(x, bind(L.ln2_g), bind(L.ln2_b));
    NodeId f1 = g.gelu(g.add(g.matmul(f, bind(L.ffn_w1)), bind(L.ffn_b1)));
    NodeId f2 = g.add(g.matmul(f1, bind(L.ffn_w2)), bind(L.ffn_b2));
    if (train) f2 = apply_dropout(g, f2, cfg.dropout, *dropout_rng);
    x = g.add(x, f2);
  }
  res.hidden = g.layer_norm(x, bind(m.enc.final_ln_g), bind(m.enc.final_ln_b));
  return res;
}

WordEmbeds word_embed(Graph& g, NodeId hidden, const SubtokenMap& map) {
  WordEmbeds w;
  std::vector<NodeId> rows;
  for (const SubtokenMap::Range& r : map.words) {
    if (r.end <= r.begin) throw std::runtime_error("encoder: empty subtoken range");
    rows.push_back(g.mean_rows(hidden, r.begin, r.end));
  }
  w.words = g.stack_rows(rows);
  w.root = g.row(hidden, map.bos);
  return w;
}

std::vector<int> word_dropout(const std::vector<int>& ids, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 1.0) throw std::runtime_error("encoder: word dropout rate out of range");
  std::vector<int> out = ids;
  for (int& id : out) {
    if (id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kMask) continue;
    if (rng.bernoulli(rate)) id = Vocab::kMask;
  }
  return out;
}

// --- snapshot IO --------------------------------------------------------------

void write_snapshots(const std::string& path, const std::vector<SnapshotRecord>& records) {
  json header;
  header["records"] = json::array();
  for (const SnapshotRecord& r : records) {
    json word_ranges = json::array();
    for (const auto& rng : r.map.words) word_ranges.push_back({rng.begin, rng.end});
    header["records"].push_back({{"layers", r.snap.layers},
                                 {"heads", r.snap.heads},
                                 {"seq_len", r.snap.seq_len},
                                 {"head_dim", r.snap.head_dim},
                                 {"sentence_index", r.sentence_index},
                                 {"bos", r.map.bos},
                                 {"eos", r.map.eos},
                                 {"words", word_ranges}});
  }
  std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("encoder: cannot write " + path);
  std::uint64_t len = hs.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const SnapshotRecord& r : records) {
    for (const Tensor& t : r.snap.attn)
      f.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    for (const Tensor& t : r.snap.value)
      f.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
}

std::vector<SnapshotRecord> read_snapshots(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("encoder: cannot read " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("encoder: truncated snapshot header");
  json header = json::parse(hs);
  std::vector<SnapshotRecord> out;
  for (const auto& jr : header.at("records")) {
    SnapshotRecord r;
    r.snap.layers = jr.at("layers").get<int>();
    r.snap.heads = jr.at("heads").get<int>();
    r.snap.seq_len = jr.at("seq_len").get<int>();
    r.snap.head_dim = jr.at("head_dim").get<int>();
    r.sentence_index = jr.at("sentence_index").get<int>();
    r.map.bos = jr.at("bos").get<int>();
    r.map.eos = jr.at("eos").get<int>();
    r.map.seq_len = r.snap.seq_len;
    for (const auto& w : jr.at("words"))
      r.map.words.push_back({w.at(0).get<int>(), w.at(1).get<int>()});
    int total = r.snap.layers * r.snap.heads;
    r.snap.attn.resize(total);
    r.snap.value.resize(total);
    for (int i = 0; i < total; ++i) {
      Tensor t = Tensor::zeros({r.snap.seq_len, r.snap.seq_len});
      f.read(reinterpret_cast<char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
      r.snap.attn[i] = std::move(t);
    }
    for (int i = 0; i < total; ++i) {
      Tensor t = Tensor::zeros({r.snap.seq_len, r.snap.head_dim});
      f.read(reinterpret_cast<char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
      r.snap.value[i] = std::move(t);
    }
    if (!f) throw std::runtime_error("encoder: truncated snapshot blob");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gatelab
