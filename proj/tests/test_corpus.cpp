#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <map>
#include <sstream>

#include "gatelab/corpus.hpp"

using namespace gatelab;

namespace {

std::string write_tmp(const std::string& name, const std::string& content) {
  std::string path = "/tmp/gl_corpus_" + name;
  std::ofstream f(path);
  f << content;
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST_CASE("jsonl reading and validation") {
  std::string ok = write_tmp("ok.jsonl", R"({"tokens":["a"],"pos":["X"],"dep":[[-1,"root"]]})"
                                         "\n");
  auto sents = read_jsonl(ok);
  REQUIRE(sents.size() == 1);
  CHECK(sents[0].tokens[0] == "a");
  CHECK(sents[0].dep[0].head == -1);

  std::string cyc = write_tmp("cyc.jsonl", R"({"tokens":["a","b"],"dep":[[1,"r"],[0,"r"]]})"
                                           "\n");
  CHECK_THROWS(read_jsonl(cyc));
  std::string oob =
      write_tmp("oob.jsonl", R"({"tokens":["a","b"],"ner":[[0,2,"P"]]})"
                             "\n");
  CHECK_THROWS(read_jsonl(oob));
  std::string bad = write_tmp("bad.jsonl", "not json\n");
  try {
    read_jsonl(bad);
    CHECK(false);
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("jsonl round trip is the identity") {
  auto corpus = synth_generate(GrammarConfig::builtin(), 50, 123);
  std::string p1 = "/tmp/gl_corpus_rt1.jsonl", p2 = "/tmp/gl_corpus_rt2.jsonl";
  write_jsonl(p1, corpus);
  auto back = read_jsonl(p1);
  write_jsonl(p2, back);
  CHECK(slurp(p1) == slurp(p2));
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back[i].tokens == corpus[i].tokens);
    CHECK(back[i].pos == corpus[i].pos);
    CHECK(back[i].dep.size() == corpus[i].dep.size());
    CHECK(back[i].srl.size() == corpus[i].srl.size());
  }
}

TEST_CASE("conllu import") {
  std::string p = write_tmp(
      "t.conllu",
      "# a comment\n"
      "1\tthe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n"
      "2\tcat\tcat\tNOUN\tNN\t_\t0\troot\t_\t_\n"
      "\n"
      "1\truns\trun\tVERB\tVB\t_\t0\troot\t_\t_\n");
  auto sents = read_conllu(p);
  REQUIRE(sents.size() == 2);
  CHECK(sents[0].tokens == std::vector<std::string>{"the", "cat"});
  CHECK(sents[0].pos[0] == "DET");
  CHECK(sents[0].dep[0].head == 1);   // 1-based HEAD=2 -> index 1
  CHECK(sents[0].dep[1].head == -1);  // HEAD=0 -> root
  CHECK(sents[1].dep[0].head == -1);
  auto xpos = read_conllu(p, false);
  CHECK(xpos[0].pos[0] == "DT");

  std::string bad = write_tmp("bad.conllu", "1\tx\ty\n");
  CHECK_THROWS(read_conllu(bad));
  std::string badhead = write_tmp(
      "badhead.conllu", "1\tx\tx\tX\tX\t_\tz\tdep\t_\t_\n");
  CHECK_THROWS(read_conllu(badhead));
}

TEST_CASE("subtokenize greedy longest match") {
  Vocab v;
  v.add("cat");
  CHECK(subtokenize("cat", v) == std::vector<int>{v.lookup("cat")});
  Vocab v2;
  int a = v2.add("un"), b = v2.add("##know"), c = v2.add("##able");
  CHECK(subtokenize("unknowable", v2) == std::vector<int>{a, b, c});
  // unmatched character collapses the whole word to UNK
  CHECK(subtokenize("zzz", v2) == std::vector<int>{Vocab::kUnk});
  // surface concatenation (stripping "##") reproduces the word
  Vocab v3 = build_vocab(synth_generate(GrammarConfig::builtin(), 100, 9));
  for (const Sentence& s : synth_generate(GrammarConfig::builtin(), 20, 10))
    for (const std::string& w : s.tokens) {
      std::string recon;
      for (int id : subtokenize(w, v3)) {
        REQUIRE(id != Vocab::kUnk);
        std::string piece = v3.id_to_piece[id];
        recon += piece.rfind("##", 0) == 0 ? piece.substr(2) : piece;
      }
      CHECK(recon == w);
    }
}

TEST_CASE("vocab reserved ids and persistence") {
  Vocab v;
  CHECK(v.id_to_piece[Vocab::kBos] == "[BOS]");
  CHECK(v.id_to_piece[Vocab::kUnk] == "[UNK]");
  int x = v.add("xyz");
  CHECK(v.add("xyz") == x);  // idempotent
  v.save("/tmp/gl_vocab.json");
  Vocab w = Vocab::load("/tmp/gl_vocab.json");
  CHECK(w.id_to_piece == v.id_to_piece);
}

TEST_CASE("encode_sentence produces a covering subtoken map") {
  auto corpus = synth_generate(GrammarConfig::builtin(), 30, 77);
  Vocab v = build_vocab(corpus);
  for (const Sentence& s : corpus) {
    auto [ids, map] = encode_sentence(s, v);
    CHECK(ids.front() == Vocab::kBos);
    CHECK(ids.back() == Vocab::kEos);
    CHECK(map.seq_len == static_cast<int>(ids.size()));
    CHECK(map.bos == 0);
    CHECK(map.eos == map.seq_len - 1);
    REQUIRE(map.words.size() == s.tokens.size());
    int pos = 1;
    for (const auto& r : map.words) {
      CHECK(r.begin == pos);  // contiguous, ordered, disjoint
      CHECK(r.end > r.begin);
      pos = r.end;
    }
    CHECK(pos == map.eos);
  }
}

TEST_CASE("synthetic generation is deterministic") {
  auto a = synth_generate(GrammarConfig::builtin(), 10, 42);
  auto b = synth_generate(GrammarConfig::builtin(), 10, 42);
  write_jsonl("/tmp/gl_det_a.jsonl", a);
  write_jsonl("/tmp/gl_det_b.jsonl", b);
  CHECK(slurp("/tmp/gl_det_a.jsonl") == slurp("/tmp/gl_det_b.jsonl"));
  auto c = synth_generate(GrammarConfig::builtin(), 10, 43);
  write_jsonl("/tmp/gl_det_c.jsonl", c);
  CHECK(slurp("/tmp/gl_det_a.jsonl") != slurp("/tmp/gl_det_c.jsonl"));
}

TEST_CASE("every synthetic sentence passes the validator (seed fuzz)") {
  GrammarConfig g = GrammarConfig::builtin();
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    auto sents = synth_generate(g, 1, seed);  // validate() runs inside
    CHECK(sents.size() == 1);
  }
}

TEST_CASE("POS distribution matches grammar production probabilities") {
  GrammarConfig g = GrammarConfig::builtin();
  auto corpus = synth_generate(g, 1000, 7);

  // expected tokens per sentence per tag, from the template:
  // 2 NPs, 1 verb, optional PP = prep + det + noun
  double mean_entity_len = 0.0;
  for (const auto& [label, forms] : g.entities) {
    double m = 0.0;
    for (const std::string& f : forms)
      m += 1 + std::count(f.begin(), f.end(), ' ');
    mean_entity_len += m / forms.size();
  }
  mean_entity_len /= g.entities.size();  // labels drawn uniformly
  std::map<std::string, double> expect;
  expect["PROPN"] = 2 * g.p_entity * mean_entity_len;
  expect["DET"] = 2 * (1 - g.p_entity) * g.p_subject_det + g.p_pp;
  expect["ADJ"] = 2 * (1 - g.p_entity) * g.p_adjective;
  expect["NOUN"] = 2 * (1 - g.p_entity) + g.p_pp;
  expect["VERB"] = 1.0;
  expect["PREP"] = g.p_pp;
  double expect_total = 0.0;
  for (const auto& [t, e] : expect) expect_total += e;

  std::map<std::string, double> got;
  double total = 0.0;
  for (const Sentence& s : corpus)
    for (const std::string& t : s.pos) {
      got[t] += 1;
      total += 1;
    }
  for (const auto& [tag, e] : expect)
    CHECK(std::fabs(got[tag] / total - e / expect_total) < 0.03);
}

TEST_CASE("grammar config json round trip") {
  GrammarConfig g = GrammarConfig::builtin();
  g.save("/tmp/gl_grammar.json");
  GrammarConfig h = GrammarConfig::from_json_file("/tmp/gl_grammar.json");
  CHECK(h.nouns == g.nouns);
  CHECK(h.entities == g.entities);
  CHECK(h.p_pp == g.p_pp);
  GrammarConfig bad;
  CHECK_THROWS(bad.validate());  // empty inventories
}
