#include "gatelab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace gatelab {

using nlohmann::json;

// --- word-level attention ----------------------------------------------------

WordAttention merge_attention(const Tensor& a, const SubtokenMap& map,
                              const ProbeOptions& opts) {
  if (a.rows() != map.seq_len || a.cols() != map.seq_len)
    throw std::runtime_error("probes: attention/map size mismatch");
  // column groups = word subtoken ranges, optionally plus the BOS position
  std::vector<SubtokenMap::Range> groups(map.words);
  if (opts.include_bos) groups.push_back({map.bos, map.bos + 1});
  int n = static_cast<int>(groups.size());
  WordAttention out;
  out.attn = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) {
    int ri0 = groups[i].begin, ri1 = groups[i].end;
    double inv_rows = 1.0 / (ri1 - ri0);
    for (int j = 0; j < n; ++j) {
      int cj0 = groups[j].begin, cj1 = groups[j].end;
      double s = 0.0;
      for (int r = ri0; r < ri1; ++r)
        for (int c = cj0; c < cj1; ++c) s += a.at(r, c);
      s *= inv_rows;                          // mean over query rows
      if (opts.pure_mean) s /= (cj1 - cj0);   // optional mean over key columns
      out.attn.at(i, j) = s;
    }
  }
  // Dropped sentinel columns carry attention mass; renormalize each row so the
  // word matrix stays row-stochastic. A row with no surviving mass goes uniform.
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += out.attn.at(i, j);
    if (s > 0.0)
      for (int j = 0; j < n; ++j) out.attn.at(i, j) /= s;
    else
      for (int j = 0; j < n; ++j) out.attn.at(i, j) = 1.0 / n;
  }
  out.argmax.resize(n);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (out.attn.at(i, j) > out.attn.at(i, best)) best = j;
    out.argmax[i] = best;
  }
  return out;
}

// --- attention probes -----------------------------------------------------------

namespace {

bool dep_hit(const WordAttention& wa, int h, int d) {
  return wa.argmax[h] == d || wa.argmax[d] == h;
}

bool srl_hit(const WordAttention& wa, int p, const Span& arg) {
  if (wa.argmax[p] >= arg.begin && wa.argmax[p] <= arg.end) return true;
  for (int t = arg.begin; t <= arg.end; ++t)
    if (wa.argmax[t] == p) return true;
  return false;
}

}  // namespace

std::map<std::string, std::pair<int, int>> dep_probe_counts(const WordAttention& wa,
                                                            const Sentence& s) {
  bool has_root_row = wa.attn.rows() == s.size() + 1;
  std::map<std::string, std::pair<int, int>> counts;
  for (int d = 0; d < static_cast<int>(s.dep.size()); ++d) {
    int h = s.dep[d].head;
    if (h < 0) {
      if (!has_root_row) continue;  // root has no attention row
      h = s.size();
    }
    auto& c = counts[s.dep[d].rel];
    c.second += 1;
    if (dep_hit(wa, h, d)) c.first += 1;
  }
  return counts;
}

double dep_probe(const WordAttention& wa, const Sentence& s) {
  int hit = 0, total = 0;
  for (const auto& [rel, c] : dep_probe_counts(wa, s)) {
    hit += c.first;
    total += c.second;
  }
  return total ? static_cast<double>(hit) / total : 0.0;
}

std::map<std::string, std::pair<int, int>> srl_probe_counts(const WordAttention& wa,
                                                            const Sentence& s) {
  std::map<std::string, std::pair<int, int>> counts;
  for (const Frame& f : s.srl)
    for (const Span& arg : f.args) {
      auto& c = counts[arg.label];
      c.second += 1;
      if (srl_hit(wa, f.predicate, arg)) c.first += 1;
    }
  return counts;
}

double srl_probe(const WordAttention& wa, const Sentence& s) {
  int hit = 0, total = 0;
  for (const auto& [role, c] : srl_probe_counts(wa, s)) {
    hit += c.first;
    total += c.second;
  }
  return total ? static_cast<double>(hit) / total : 0.0;
}

// --- attended-value probes ----------------------------------------------------

Tensor attended_values(const Tensor& a, const Tensor& v, const SubtokenMap& map) {
  if (a.rows() != map.seq_len || a.cols() != v.rows())
    throw std::runtime_error("probes: attended_values shape mismatch");
  int d = v.cols();
  int n = static_cast<int>(map.words.size());
  Tensor out = Tensor::zeros({n, d});
  for (int w = 0; w < n; ++w) {
    int r0 = map.words[w].begin, r1 = map.words[w].end;
    for (int r = r0; r < r1; ++r)
      for (int k = 0; k < a.cols(); ++k) {
        double arc = a.at(r, k);
        for (int c = 0; c < d; ++c) out.at(w, c) += arc * v.at(k, c);
      }
    for (int c = 0; c < d; ++c) out.at(w, c) /= (r1 - r0);
  }
  return out;
}

int LabelCentroids::id(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<int>(i);
  return -1;
}

void LabelCentroids::add(const std::string& label, const Tensor& vec) {
  int i = id(label);
  if (i < 0) {
    labels.push_back(label);
    centroid.push_back(vec);
    count.push_back(1);
    return;
  }
  for (int c = 0; c < vec.size(); ++c) centroid[i].data[c] += vec.data[c];
  count[i] += 1;
}

void LabelCentroids::finalize() {
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (double& x : centroid[i].data) x /= count[i];
}

Tensor span_vector(const Tensor& h, int begin, int end) {
  if (begin < 0 || end >= h.rows() || begin > end)
    throw std::runtime_error("probes: span outside sentence");
  Tensor out = Tensor::zeros({1, h.cols()});
  for (int r = begin; r <= end; ++r)
    for (int c = 0; c < h.cols(); ++c) out.at(0, c) += h.at(r, c);
  for (int c = 0; c < h.cols(); ++c) out.at(0, c) /= (end - begin + 1);
  return out;
}

LabelCentroids pseudo_cluster(const std::vector<Tensor>& hs,
                              const std::vector<std::vector<Span>>& spans) {
  if (hs.size() != spans.size())
    throw std::runtime_error("probes: pseudo_cluster input length mismatch");
  LabelCentroids c;
  for (std::size_t i = 0; i < hs.size(); ++i)
    for (const Span& sp : spans[i]) c.add(sp.label, span_vector(hs[i], sp.begin, sp.end));
  c.finalize();
  return c;
}

namespace {

double norm2(const Tensor& t) {
  double s = 0.0;
  for (double x : t.data) s += x * x;
  return std::sqrt(s);
}

}  // namespace

int av_probe(const LabelCentroids& c, const Tensor& vec) {
  if (c.labels.empty()) throw std::runtime_error("probes: no centroids");
  double vn = norm2(vec);
  if (vn == 0.0) return -1;  // caller counts the skip
  int best = -1;
  double best_sim = 0.0;
  for (std::size_t i = 0; i < c.labels.size(); ++i) {
    double cn = norm2(c.centroid[i]);
    if (cn == 0.0) continue;
    double dot = 0.0;
    for (int k = 0; k < vec.size(); ++k) dot += vec.data[k] * c.centroid[i].data[k];
    double sim = dot / (vn * cn);
    if (best < 0 || sim > best_sim) {
      best = static_cast<int>(i);
      best_sim = sim;
    }
  }
  return best;
}

// --- corpus-level probing --------------------------------------------------------

namespace {

// gold spans for the attended-value tasks
std::vector<Span> gold_spans(const Sentence& s, const std::string& task) {
  if (task == "pos") {
    std::vector<Span> out;
    for (int i = 0; i < s.size(); ++i) out.push_back({i, i, s.pos[i]});
    return out;
  }
  if (task == "ner") return s.ner;
  if (task == "con") return s.con;
  throw std::runtime_error("probes: no spans for task " + task);
}

}  // namespace

std::map<std::string, int> label_frequencies(const std::vector<Sentence>& corpus,
                                             const std::string& task) {
  std::map<std::string, int> freq;
  for (const Sentence& s : corpus) {
    if (task == "dep") {
      for (const Arc& a : s.dep)
        if (a.head >= 0) freq[a.rel] += 1;
    } else if (task == "srl") {
      for (const Frame& f : s.srl)
        for (const Span& arg : f.args) freq[arg.label] += 1;
    } else {
      for (const Span& sp : gold_spans(s, task)) freq[sp.label] += 1;
    }
  }
  return freq;
}

int ProbeReport::label_id(const std::string& l) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == l) return static_cast<int>(i);
  return -1;
}

ProbeReport probe_all(const std::vector<std::vector<SnapshotRecord>>& runs,
                      const std::vector<Sentence>& corpus, const std::string& task,
                      const ProbeOptions& opts) {
  if (runs.empty() || runs[0].empty()) throw std::runtime_error("probes: no snapshots");
  ProbeReport rep;
  rep.task = task;
  rep.runs = static_cast<int>(runs.size());
  rep.layers = runs[0][0].snap.layers;
  rep.heads = runs[0][0].snap.heads;
  const int nh = rep.layers * rep.heads;
  const bool attn_task = (task == "dep" || task == "srl");

  // label inventory + support from gold annotations
  std::map<std::string, int> freq = label_frequencies(corpus, task);
  for (const auto& [l, f] : freq) {
    rep.labels.push_back(l);
    rep.support.push_back(f);
  }
  if (rep.labels.empty()) throw std::runtime_error("probes: task has no gold labels");
  int nl = static_cast<int>(rep.labels.size());
  rep.accuracy.assign(nl, std::vector<std::vector<double>>(
                              rep.runs, std::vector<double>(nh, 0.0)));

  // snapshots aligned to corpus order by sentence_index
  std::vector<std::vector<const SnapshotRecord*>> by_index(rep.runs);
  for (int r = 0; r < rep.runs; ++r) {
    by_index[r].assign(corpus.size(), nullptr);
    for (const SnapshotRecord& rec : runs[r]) {
      if (rec.sentence_index < 0 || rec.sentence_index >= static_cast<int>(corpus.size()))
        throw std::runtime_error("probes: snapshot sentence index out of range");
      by_index[r][rec.sentence_index] = &rec;
    }
    for (const auto* p : by_index[r])
      if (!p) throw std::runtime_error("probes: snapshot set does not cover the corpus");
  }

  for (int r = 0; r < rep.runs; ++r) {
#pragma omp parallel for schedule(dynamic) collapse(2)
    for (int l = 0; l < rep.layers; ++l)
      for (int h = 0; h < rep.heads; ++h) {
        std::map<std::string, std::pair<int, int>> counts;  // hits, total
        if (attn_task) {
          for (std::size_t i = 0; i < corpus.size(); ++i) {
            const SnapshotRecord& rec = *by_index[r][i];
            WordAttention wa = merge_attention(rec.snap.a(l, h), rec.map, opts);
            auto per = task == "dep" ? dep_probe_counts(wa, corpus[i])
                                     : srl_probe_counts(wa, corpus[i]);
            for (const auto& [lab, c] : per) {
              counts[lab].first += c.first;
              counts[lab].second += c.second;
            }
          }
        } else {
          std::vector<Tensor> hs;
          std::vector<std::vector<Span>> spans;
          hs.reserve(corpus.size());
          for (std::size_t i = 0; i < corpus.size(); ++i) {
            const SnapshotRecord& rec = *by_index[r][i];
            hs.push_back(attended_values(rec.snap.a(l, h), rec.snap.v(l, h), rec.map));
            spans.push_back(gold_spans(corpus[i], task));
          }
          LabelCentroids cents = pseudo_cluster(hs, spans);
          for (std::size_t i = 0; i < corpus.size(); ++i)
            for (const Span& sp : spans[i]) {
              auto& c = counts[sp.label];
              c.second += 1;
              int pred = av_probe(cents, span_vector(hs[i], sp.begin, sp.end));
              if (pred >= 0 && cents.labels[pred] == sp.label) c.first += 1;
            }
        }
        for (int li = 0; li < nl; ++li) {
          auto it = counts.find(rep.labels[li]);
          rep.accuracy[li][r][l * rep.heads + h] =
              (it != counts.end() && it->second.second > 0)
                  ? static_cast<double>(it->second.first) / it->second.second
                  : 0.0;
        }
      }
  }

  // selection: max over heads per run, then mean over runs
  rep.selected.assign(nl, 0.0);
  rep.best_layer.assign(nl, 0);
  rep.layer_max.assign(nl, std::vector<double>(rep.layers, 0.0));
  for (int li = 0; li < nl; ++li) {
    double sum = 0.0;
    for (int r = 0; r < rep.runs; ++r)
      sum += *std::max_element(rep.accuracy[li][r].begin(), rep.accuracy[li][r].end());
    rep.selected[li] = sum / rep.runs;
    std::vector<double> run_mean(nh, 0.0);
    for (int j = 0; j < nh; ++j) {
      for (int r = 0; r < rep.runs; ++r) run_mean[j] += rep.accuracy[li][r][j];
      run_mean[j] /= rep.runs;
    }
    int best = 0;
    for (int j = 1; j < nh; ++j)
      if (run_mean[j] > run_mean[best]) best = j;
    rep.best_layer[li] = best / rep.heads;
    for (int l = 0; l < rep.layers; ++l)
      for (int h = 0; h < rep.heads; ++h)
        rep.layer_max[li][l] = std::max(rep.layer_max[li][l], run_mean[l * rep.heads + h]);
  }
  return rep;
}

// --- serialization -----------------------------------------------------------------

std::string ProbeReport::to_json() const {
  json j;
  j["task"] = task;
  j["layers"] = layers;
  j["heads"] = heads;
  j["runs"] = runs;
  j["labels"] = labels;
  j["support"] = support;
  j["accuracy"] = accuracy;
  j["selected"] = selected;
  j["best_layer"] = best_layer;
  j["layer_max"] = layer_max;
  j["omitted"] = omitted;
  return j.dump(2);
}

ProbeReport ProbeReport::from_json(const std::string& text) {
  json j = json::parse(text);
  ProbeReport r;
  r.task = j.at("task").get<std::string>();
  r.layers = j.at("layers").get<int>();
  r.heads = j.at("heads").get<int>();
  r.runs = j.at("runs").get<int>();
  r.labels = j.at("labels").get<std::vector<std::string>>();
  r.support = j.at("support").get<std::vector<int>>();
  r.accuracy = j.at("accuracy").get<std::vector<std::vector<std::vector<double>>>>();
  r.selected = j.at("selected").get<std::vector<double>>();
  r.best_layer = j.at("best_layer").get<std::vector<int>>();
  r.layer_max = j.at("layer_max").get<std::vector<std::vector<double>>>();
  r.omitted = j.at("omitted").get<std::vector<std::string>>();
  return r;
}

void ProbeReport::save_json(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("probes: cannot write " + path);
  f << to_json() << "\n";
}

ProbeReport ProbeReport::load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("probes: cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void ProbeReport::save_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("probes: cannot write " + path);
  f << "task,label,support,run,head_layer,head_index,accuracy,selected_score\n";
  f.precision(17);
  for (std::size_t li = 0; li < labels.size(); ++li)
    for (int r = 0; r < runs; ++r)
      for (int l = 0; l < layers; ++l)
        for (int h = 0; h < heads; ++h)
          f << task << "," << labels[li] << "," << support[li] << "," << r << "," << l
            << "," << h << "," << accuracy[li][r][l * heads + h] << "," << selected[li]
            << "\n";
}

std::vector<DiffEntry> diff_report(const ProbeReport& model, const ProbeReport& baseline,
                                   const std::vector<Sentence>& corpus) {
  std::map<std::string, int> freq = label_frequencies(corpus, model.task);
  std::vector<DiffEntry> out;
  for (std::size_t li = 0; li < model.labels.size(); ++li) {
    DiffEntry e;
    e.label = model.labels[li];
    auto it = freq.find(e.label);
    e.frequency = it == freq.end() ? 0 : it->second;
    int bi = baseline.label_id(e.label);
    if (bi < 0) {
      e.comparable = false;
    } else {
      e.diff = model.selected[li] - baseline.selected[bi];
    }
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(), [](const DiffEntry& a, const DiffEntry& b) {
    if (a.frequency != b.frequency) return a.frequency > b.frequency;
    return a.label < b.label;
  });
  return out;
}

}  // namespace gatelab
