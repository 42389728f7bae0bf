#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gatelab/heads.hpp"

using namespace gatelab;

namespace {

EncoderConfig tiny_cfg() {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.max_len = 48;
  cfg.dropout = 0.0;
  cfg.word_dropout = 0.0;
  return cfg;
}

FullModel make_model(const std::vector<Sentence>& corpus,
                     const std::vector<std::string>& tasks, std::uint64_t seed = 5) {
  FullModel fm;
  Rng rng = Rng::substream(seed, "init");
  HeadConfig hc;
  init_full_model(fm, tiny_cfg(), hc, 64, tasks, TaskLabels::collect(corpus), rng);
  return fm;
}

void zero_heads(FullModel& fm) {
  for (int i = 0; i < fm.base.params.count(); ++i)
    if (fm.base.params.names[i].rfind("head.", 0) == 0)
      for (double& x : fm.base.params[i].data) x = 0.0;
}

// random word vectors standing in for encoder output
WordEmbeds fake_words(Graph& g, int n, int d, Rng& rng) {
  WordEmbeds we;
  we.words = g.input(Tensor::randn({n, d}, 1.0, rng), false);
  we.root = g.input(Tensor::randn({1, d}, 1.0, rng), false);
  return we;
}

}  // namespace

TEST_CASE("span enumeration order and bounds") {
  auto s = enumerate_spans(3, 2);
  REQUIRE(s.size() == 5);
  CHECK(s[0] == std::pair{0, 0});
  CHECK(s[1] == std::pair{0, 1});
  CHECK(s[2] == std::pair{1, 1});
  CHECK(s[3] == std::pair{1, 2});
  CHECK(s[4] == std::pair{2, 2});
  for (auto [b, e] : enumerate_spans(40, 30)) CHECK(e - b + 1 <= 30);
}

TEST_CASE("zero-weight losses equal their uniform-entropy hand values") {
  auto corpus = synth_generate(GrammarConfig::builtin(), 40, 2);
  FullModel fm = make_model(corpus, {"pos", "ner", "dep", "con", "srl"});
  zero_heads(fm);
  Rng rng(9);
  const Sentence& s = corpus[0];
  int n = s.size();

  Graph g;
  ParamBinder bind(g, fm.base, false);
  WordEmbeds we = fake_words(g, n, fm.base.cfg.d_model, rng);
  double pos = g.value(task_loss(g, fm, bind, we, "pos", s)).data[0];
  CHECK(pos == doctest::Approx(std::log(fm.base.labels.pos.size())).epsilon(1e-9));
  double dep = g.value(task_loss(g, fm, bind, we, "dep", s)).data[0];
  CHECK(dep == doctest::Approx(std::log(n + 1.0) +
                               std::log(fm.base.labels.dep_rel.size()))
                   .epsilon(1e-9));
  double ner = g.value(task_loss(g, fm, bind, we, "ner", s)).data[0];
  CHECK(ner == doctest::Approx(std::log(fm.base.labels.ner.size() + 1.0)).epsilon(1e-9));
  double con = g.value(task_loss(g, fm, bind, we, "con", s)).data[0];
  CHECK(con == doctest::Approx(std::log(fm.base.labels.con.size() + 1.0)).epsilon(1e-9));
  // predicate BCE ln2 + pruner BCE ln2 + role cross-entropy over roles+NONE
  double srl = g.value(task_loss(g, fm, bind, we, "srl", s)).data[0];
  CHECK(srl == doctest::Approx(2.0 * std::log(2.0) +
                               std::log(fm.base.labels.srl_role.size() + 1.0))
                   .epsilon(1e-9));
}

TEST_CASE("pos decode is per-token argmax") {
  Tensor logits({2, 3}, {0.1, 0.9, 0.3, 2.0, -1.0, 1.9});
  CHECK(pos_decode(logits) == std::vector<int>{1, 0});
}

TEST_CASE("dep arc logits use root plus words as candidate heads") {
  auto corpus = synth_generate(GrammarConfig::builtin(), 10, 3);
  FullModel fm = make_model(corpus, {"dep"});
  zero_heads(fm);
  Rng rng(4);
  Graph g;
  ParamBinder bind(g, fm.base, false);
  WordEmbeds we = fake_words(g, 5, fm.base.cfg.d_model, rng);
  const Tensor& arc = g.value(dep_arc_logits(g, fm, bind, we.words, we.root));
  CHECK(arc.rows() == 5);
  CHECK(arc.cols() == 6);  // [root] ++ words
  DepPrediction pred = dep_decode(g, fm, bind, we.words, we.root);
  REQUIRE(pred.head.size() == 5);
  // zero scores tie; lowest index wins -> every head is the root (-1)
  for (int h : pred.head) CHECK(h == -1);
}

TEST_CASE("ner decode keeps the highest-scoring non-overlapping spans") {
  auto corpus = synth_generate(GrammarConfig::builtin(), 40, 2);
  FullModel fm = make_model(corpus, {"ner"});
  int none = fm.base.labels.ner.size();
  auto spans = enumerate_spans(6, fm.head_cfg.span_max_width);
  Tensor logits = Tensor::zeros({static_cast<int>(spans.size()), none + 1});
  // push everything to NONE, then promote two overlapping + one separate span
  for (int i = 0; i < logits.rows(); ++i) logits.at(i, none) = 1.0;
  auto idx = [&](int b, int e) {
    for (std::size_t i = 0; i < spans.size(); ++i)
      if (spans[i] == std::pair{b, e}) return static_cast<int>(i);
    FAIL("span not found");
    return -1;
  };
  logits.at(idx(0, 2), 0) = 5.0;
  logits.at(idx(2, 4), 0) = 3.0;  // overlaps (0,2) at token 2 -> dropped
  logits.at(idx(5, 5), 0) = 2.0;
  auto out = span_decode(fm, "ner", logits, 6);
  REQUIRE(out.size() == 2);
  CHECK(out[0].begin == 0);
  CHECK(out[0].end == 2);
  CHECK(out[1].begin == 5);
  CHECK(out[0].label == fm.base.labels.ner.items[0]);
}

TEST_CASE("con decode forbids crossing but allows nesting") {
  auto corpus = synth_generate(GrammarConfig::builtin(), 40, 2);
  FullModel fm = make_model(corpus, {"con"});
  int none = fm.base.labels.con.size();
  auto spans = enumerate_spans(6, fm.head_cfg.span_max_width);
  auto idx = [&](int b, int e) {
    for (std::size_t i = 0; i < spans.size(); ++i)
      if (spans[i] == std::pair{b, e}) return static_cast<int>(i);
    FAIL("span not found");
    return -1;
  };
  Tensor logits = Tensor::zeros({static_cast<int>(spans.size()), none + 1});
  for (int i = 0; i < logits.rows(); ++i) logits.at(i, none) = 1.0;
  logits.at(idx(0, 3), 0) = 5.0;
  logits.at(idx(2, 5), 0) = 3.0;  // crosses (0,3) -> dropped
  logits.at(idx(1, 2), 0) = 2.0;  // nested in (0,3) -> kept
  auto out = span_decode(fm, "con", logits, 6);
  REQUIRE(out.size() == 2);
  CHECK(out[0].begin == 0);
  CHECK(out[0].end == 3);
  CHECK(out[1].begin == 1);
  CHECK(out[1].end == 2);
}

TEST_CASE("decode invariants hold on random models over the synthetic corpus") {
  auto corpus = synth_generate(GrammarConfig::builtin(), 15, 8);
  FullModel fm = make_model(corpus, {"pos", "ner", "dep", "con", "srl"}, 77);
  Rng rng(12);
  for (const Sentence& s : corpus) {
    Graph g;
    ParamBinder bind(g, fm.base, false);
    WordEmbeds we = fake_words(g, s.size(), fm.base.cfg.d_model, rng);
    // NER: non-overlapping
    auto ner = span_decode(fm, "ner", g.value(span_logits(g, fm, bind, we.words, "ner")),
                           s.size());
    for (std::size_t i = 0; i < ner.size(); ++i)
      for (std::size_t j = i + 1; j < ner.size(); ++j)
        CHECK(!(ner[i].begin <= ner[j].end && ner[j].begin <= ner[i].end));
    // DEP: exactly one head per word, in range
    DepPrediction dp = dep_decode(g, fm, bind, we.words, we.root);
    REQUIRE(dp.head.size() == static_cast<std::size_t>(s.size()));
    for (int h : dp.head) {
      CHECK(h >= -1);
      CHECK(h < s.size());
    }
    // SRL: args in bounds, non-overlapping within a frame
    auto frames = srl_decode(g, fm, bind, we.words, s.size());
    for (const Frame& f : frames) {
      CHECK(f.predicate >= 0);
      CHECK(f.predicate < s.size());
      for (std::size_t i = 0; i < f.args.size(); ++i) {
        CHECK(f.args[i].begin >= 0);
        CHECK(f.args[i].end < s.size());
        for (std::size_t j = i + 1; j < f.args.size(); ++j)
          CHECK(!(f.args[i].begin <= f.args[j].end && f.args[j].begin <= f.args[i].end));
      }
    }
  }
}

TEST_CASE("task losses through the encoder match finite differences") {
  auto corpus = synth_generate(GrammarConfig::builtin(), 10, 21);
  FullModel fm = make_model(corpus, {"pos", "ner", "dep", "con", "srl"}, 31);
  Vocab vocab = build_vocab(corpus);
  // rebuild with the real vocab size
  FullModel fm2;
  Rng rng = Rng::substream(31, "init");
  init_full_model(fm2, tiny_cfg(), HeadConfig{}, vocab.size(),
                  {"pos", "ner", "dep", "con", "srl"}, TaskLabels::collect(corpus), rng);
  const Sentence& s = corpus[0];
  auto [ids, map] = encode_sentence(s, vocab);

  Rng pick(99);
  for (const std::string& task : {"pos", "ner", "dep", "con", "srl"}) {
    Graph g;
    ParamBinder bind(g, fm2.base, true);
    EncodeResult er = encode(g, fm2.base, bind, ids, GateSpec::all_open(fm2.base.cfg), false,
                             false, nullptr);
    WordEmbeds we = word_embed(g, er.hidden, map);
    NodeId loss = task_loss(g, fm2, bind, we, task, s);
    g.backward(loss);
    for (int trial = 0; trial < 8; ++trial) {
      int pi = pick.next_int(fm2.base.params.count());
      if (!bind.bound(pi)) continue;
      int ci = pick.next_int(static_cast<int>(fm2.base.params[pi].size()));
      double analytic = bind.grad(pi).data[ci];
      double fd = central_diff(
          [&](double x) {
            FullModel m2 = fm2;
            m2.base.params[pi].data[ci] = x;
            Graph g2;
            ParamBinder bind2(g2, m2.base, false);
            EncodeResult er2 = encode(g2, m2.base, bind2, ids,
                                      GateSpec::all_open(m2.base.cfg), false, false, nullptr);
            WordEmbeds we2 = word_embed(g2, er2.hidden, map);
            return g2.value(task_loss(g2, m2, bind2, we2, task, s)).data[0];
          },
          fm2.base.params[pi].data[ci]);
      CHECK(std::fabs(analytic - fd) <= 1e-3 * std::max(1e-3, std::fabs(fd)));
    }
  }
}
