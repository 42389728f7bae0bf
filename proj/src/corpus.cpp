#include "gatelab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gatelab {

using nlohmann::json;

namespace {

void check_span(const Span& sp, int n, const char* kind) {
  if (sp.begin < 0 || sp.end < sp.begin || sp.end >= n) {
    std::ostringstream os;
    os << "corpus: " << kind << " span (" << sp.begin << "," << sp.end
       << ") out of bounds for " << n << " tokens";
    throw std::runtime_error(os.str());
  }
}

}  // namespace

void Sentence::validate() const {
  int n = size();
  if (n == 0) throw std::runtime_error("corpus: empty sentence");
  if (!pos.empty() && static_cast<int>(pos.size()) != n)
    throw std::runtime_error("corpus: pos count does not match token count");
  for (const Span& sp : ner) check_span(sp, n, "ner");
  for (std::size_t i = 0; i < ner.size(); ++i)
    for (std::size_t j = i + 1; j < ner.size(); ++j)
      if (ner[i].begin <= ner[j].end && ner[j].begin <= ner[i].end)
        throw std::runtime_error("corpus: overlapping ner spans");
  for (const Span& sp : con) check_span(sp, n, "con");
  for (const Frame& f : srl) {
    if (f.predicate < 0 || f.predicate >= n)
      throw std::runtime_error("corpus: srl predicate out of bounds");
    for (const Span& sp : f.args) check_span(sp, n, "srl arg");
  }
  if (!dep.empty()) {
    if (static_cast<int>(dep.size()) != n)
      throw std::runtime_error("corpus: dep count does not match token count");
    int roots = 0;
    for (const Arc& a : dep) {
      if (a.head == -1) ++roots;
      else if (a.head < 0 || a.head >= n)
        throw std::runtime_error("corpus: dep head out of bounds");
    }
    if (roots != 1) throw std::runtime_error("corpus: dep tree needs exactly one root (no root / cycle)");
    // cycle check: walk to root from every node, bounded by n steps
    for (int i = 0; i < n; ++i) {
      int cur = i, steps = 0;
      while (cur != -1) {
        cur = dep[cur].head;
        if (++steps > n) throw::std::runtime_error("corpus: dep tree contains a cycle");
      }
    }
  }
}

// --- Vocab ------------------------------------------------------------------

Vocab::Vocab() {
  id_to_piece = {"[BOS]", "[EOS]", "[MASK]", "[UNK]"};
  for (int i = 0; i < 4; ++i) piece_to_id[id_to_piece[i]] = i;
}

int Vocab::add(const std::string& piece) {
  auto it = piece_to_id.find(piece);
  if (it != piece_to_id.end()) return it->second;
  int id = size();
  piece_to_id[piece] = id;
  id_to_piece.push_back(piece);
  return id;
}

int Vocab::lookup(const std::string& piece) const {
  auto it = piece_to_id.find(piece);
  return it == piece_to_id.end() ? -1 : it->second;
}

void Vocab::save(const std::string& path) const {
  json j;
  j["pieces"] = id_to_piece;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("vocab: cannot write " + path);
  f << j.dump() << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("vocab: cannot read " + path);
  json j = json::parse(f);
  Vocab v;
  auto pieces = j.at("pieces").get<std::vector<std::string>>();
  for (std::size_t i = 4; i < pieces.size(); ++i) v.add(pieces[i]);
  return v;
}

std::vector<int> subtokenize(const std::string& word, const Vocab& vocab) {
  if (word.empty()) throw std::runtime_error("corpus: cannot subtokenize empty word");
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t best_len = 0;
    int best_id = -1;
    for (std::size_t len = word.size() - pos; len >= 1; --len) {
      std::string cand = word.substr(pos, len);
      if (pos > 0) cand = "##" + cand;
      int id = vocab.lookup(cand);
      if (id >= 0) {
        best_len = len;
        best_id = id;
        break;
      }
    }
    if (best_id < 0) return {Vocab::kUnk};
    out.push_back(best_id);
    pos += best_len;
  }
  return out;
}

Vocab build_vocab(const std::vector<Sentence>& sentences, int chunk) {
  Vocab v;
  for (const Sentence& s : sentences) {
    for (const std::string& w : s.tokens) {
      if (static_cast<int>(w.size()) <= chunk) {
        v.add(w);
      } else {
        for (std::size_t p = 0; p < w.size(); p += chunk) {
          std::string piece = w.substr(p, chunk);
          v.add(p == 0 ? piece : "##" + piece);
        }
      }
    }
  }
  return v;
}

std::pair<std::vector<int>, SubtokenMap> encode_sentence(const Sentence& s, const Vocab& vocab) {
  std::vector<int> ids = {Vocab::kBos};
  SubtokenMap map;
  map.bos = 0;
  for (const std::string& w : s.tokens) {
    std::vector<int> pieces = subtokenize(w, vocab);
    SubtokenMap::Range r;
    r.begin = static_cast<int>(ids.size());
    ids.insert(ids.end(), pieces.begin(), pieces.end());
    r.end = static_cast<int>(ids.size());
    map.words.push_back(r);
  }
  map.eos = static_cast<int>(ids.size());
  ids.push_back(Vocab::kEos);
  map.seq_len = static_cast<int>(ids.size());
  return {ids, map};
}

// --- JSONL ------------------------------------------------------------------

namespace {

Sentence sentence_from_json(const json& j) {
  Sentence s;
  s.tokens = j.at("tokens").get<std::vector<std::string>>();
  if (j.contains("pos")) s.pos = j.at("pos").get<std::vector<std::string>>();
  if (j.contains("ner"))
    for (const auto& e : j.at("ner"))
      s.ner.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<std::string>()});
  if (j.contains("dep"))
    for (const auto& e : j.at("dep"))
      s.dep.push_back({e.at(0).get<int>(), e.at(1).get<std::string>()});
  if (j.contains("con"))
    for (const auto& e : j.at("con"))
      s.con.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<std::string>()});
  if (j.contains("srl"))
    for (const auto& f : j.at("srl")) {
      Frame fr;
      fr.predicate = f.at("pred").get<int>();
      for (const auto& a : f.at("args"))
        fr.args.push_back({a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<std::string>()});
      s.srl.push_back(std::move(fr));
    }
  return s;
}

json sentence_to_json(const Sentence& s) {
  json j;
  j["tokens"] = s.tokens;
  if (!s.pos.empty()) j["pos"] = s.pos;
  if (!s.ner.empty()) {
    j["ner"] = json::array();
    for (const Span& sp : s.ner) j["ner"].push_back({sp.begin, sp.end, sp.label});
  }
  if (!s.dep.empty()) {
    j["dep"] = json::array();
    for (const Arc& a : s.dep) j["dep"].push_back({a.head, a.rel});
  }
  if (!s.con.empty()) {
    j["con"] = json::array();
    for (const Span& sp : s.con) j["con"].push_back({sp.begin, sp.end, sp.label});
  }
  if (!s.srl.empty()) {
    j["srl"] = json::array();
    for (const Frame& f : s.srl) {
      json args = json::array();
      for (const Span& a : f.args) args.push_back({a.begin, a.end, a.label});
      j["srl"].push_back({{"pred", f.predicate}, {"args", args}});
    }
  }
  return j;
}

}  // namespace

std::vector<Sentence> read_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("corpus: cannot open " + path);
  std::vector<Sentence> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      Sentence s = sentence_from_json(json::parse(line));
      s.validate();
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "corpus: " << path << " line " << lineno << ": " << e.what();
      throw std::runtime_error(os.str());
    }
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<Sentence>& sentences) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("corpus: cannot write " + path);
  for (const Sentence& s : sentences) f << sentence_to_json(s).dump() << "\n";
}

// --- CoNLL-U ----------------------------------------------------------------

std::vector<Sentence> read_conllu(const std::string& path, bool upos) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("corpus: cannot open " + path);
  std::vector<Sentence> out;
  Sentence cur;
  std::string line;
  int lineno = 0;
  auto flush = [&]() {
    if (!cur.tokens.empty()) {
      cur.validate();
      out.push_back(std::move(cur));
      cur = Sentence{};
    }
  };
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 10) {
      std::ostringstream os;
      os << "corpus: " << path << " line " << lineno << ": expected 10 columns, got " << cols.size();
      throw std::runtime_error(os.str());
    }
    // skip multiword tokens (1-2) and empty nodes (1.1)
    if (cols[0].find('-') != std::string::npos || cols[0].find('.') != std::string::npos) continue;
    cur.tokens.push_back(cols[1]);
    cur.pos.push_back(upos ? cols[3] : cols[4]);
    int head;
    try {
      std::size_t used = 0;
      head = std::stoi(cols[6], &used);
      if (used != cols[6].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      std::ostringstream os;
      os << "corpus: " << path << " line " << lineno << ": non-integer head '" << cols[6] << "'";
      throw std::runtime_error(os.str());
    }
    cur.dep.push_back({head - 1, cols[7]});  // 1-based, 0 = root -> -1
  }
  flush();
  return out;
}

// --- synthetic grammar --------------------------------------------------------

std::vector<std::string> GrammarConfig::pos_labels() const {
  return {"DET", "ADJ", "NOUN", "VERB", "PREP", "PROPN"};
}

void GrammarConfig::validate() const {
  if (determiners.empty() || adjectives.empty() || nouns.empty() || verbs.empty() ||
      prepositions.empty() || entities.empty())
    throw std::runtime_error("grammar: every word list must be non-empty");
  for (const auto& [label, forms] : entities) {
    if (forms.empty()) throw std::runtime_error("grammar: entity label '" + label + "' has no forms");
    for (const std::string& f : forms) {
      int words = 1;
      for (char c : f) words += (c == ' ');
      if (words < 1 || words > 2)
        throw std::runtime_error("grammar: entity form '" + f + "' must be 1 or 2 tokens");
    }
  }
  for (double p : {p_subject_det, p_adjective, p_entity, p_pp})
    if (p < 0.0 || p > 1.0) throw std::runtime_error("grammar: probabilities must lie in [0,1]");
}

GrammarConfig GrammarConfig::builtin() {
  GrammarConfig g;
  g.determiners = {"the", "a", "every"};
  g.adjectives = {"old", "tiny", "greenish", "formidable", "quick"};
  g.nouns = {"cat", "dog", "report", "committee", "telescope", "engine", "librarian"};
  g.verbs = {"saw", "fixed", "praised", "examined", "carried"};
  g.prepositions = {"near", "under", "behind"};
  g.entities = {
      {"PER", {"alice", "bob smith", "carol", "dan jones"}},
      {"ORG", {"acme corp", "initech", "globex inc"}},
      {"LOC", {"paris", "springfield", "mount doom"}},
  };
  return g;
}

GrammarConfig GrammarConfig::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("grammar: cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("grammar: malformed JSON: ") + e.what());
  }
  GrammarConfig g;
  g.determiners = j.at("determiners").get<std::vector<std::string>>();
  g.adjectives = j.at("adjectives").get<std::vector<std::string>>();
  g.nouns = j.at("nouns").get<std::vector<std::string>>();
  g.verbs = j.at("verbs").get<std::vector<std::string>>();
  g.prepositions = j.at("prepositions").get<std::vector<std::string>>();
  for (auto& [k, v] : j.at("entities").items())
    g.entities[k] = v.get<std::vector<std::string>>();
  if (j.contains("p_det")) g.p_subject_det = j.at("p_det").get<double>();
  if (j.contains("p_adjective")) g.p_adjective = j.at("p_adjective").get<double>();
  if (j.contains("p_entity")) g.p_entity = j.at("p_entity").get<double>();
  if (j.contains("p_pp")) g.p_pp = j.at("p_pp").get<double>();
  g.validate();
  return g;
}

void GrammarConfig::save(const std::string& path) const {
  json j;
  j["determiners"] = determiners;
  j["adjectives"] = adjectives;
  j["nouns"] = nouns;
  j["verbs"] = verbs;
  j["prepositions"] = prepositions;
  j["entities"] = entities;
  j["p_det"] = p_subject_det;
  j["p_adjective"] = p_adjective;
  j["p_entity"] = p_entity;
  j["p_pp"] = p_pp;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("grammar: cannot write " + path);
  f << j.dump(2) << "\n";
}

namespace {

// Appends a noun phrase; returns the index of its head token and the span.
struct NpResult {
  int head = 0;
  Span span;  // label filled by caller
  std::optional<Span> entity;
};

NpResult gen_np(const GrammarConfig& g, Rng& rng, Sentence& s) {
  NpResult np;
  int start = s.size();
  if (rng.bernoulli(g.p_entity)) {
    const auto labels = [&] {
      std::vector<std::string> ls;
      for (const auto& [k, _] : g.entities) ls.push_back(k);
      return ls;
    }();
    const std::string& label = labels[rng.next_int(static_cast<int>(labels.size()))];
    const auto& forms = g.entities.at(label);
    const std::string& form = forms[rng.next_int(static_cast<int>(forms.size()))];
    std::stringstream ss(form);
    std::string tok;
    while (ss >> tok) {
      s.tokens.push_back(tok);
      s.pos.push_back("PROPN");
    }
    int end = s.size() - 1;
    np.head = end;
    np.entity = Span{start, end, label};
    // first token of a 2-token name attaches to the head token
    for (int i = start; i < end; ++i) s.dep.push_back({});  // placeholders, filled below
    s.dep.push_back({});
    for (int i = start; i < end; ++i) s.dep[i] = {end, "compound"};
  } else {
    if (rng.bernoulli(g.p_subject_det)) {
      s.tokens.push_back(g.determiners[rng.next_int(static_cast<int>(g.determiners.size()))]);
      s.pos.push_back("DET");
      s.dep.push_back({});
    }
    if (rng.bernoulli(g.p_adjective)) {
      s.tokens.push_back(g.adjectives[rng.next_int(static_cast<int>(g.adjectives.size()))]);
      s.pos.push_back("ADJ");
      s.dep.push_back({});
    }
    s.tokens.push_back(g.nouns[rng.next_int(static_cast<int>(g.nouns.size()))]);
    s.pos.push_back("NOUN");
    s.dep.push_back({});
    int head = s.size() - 1;
    np.head = head;
    for (int i = start; i < head; ++i)
      s.dep[i] = {head, s.pos[i] == "DET" ? "det" : "amod"};
  }
  np.span = Span{start, s.size() - 1, "NP"};
  return np;
}

}  // namespace

std::vector<Sentence> synth_generate(const GrammarConfig& g, int count, std::uint64_t seed) {
  g.validate();
  if (count < 1) throw std::runtime_error("grammar: count must be >= 1");
  Rng rng = Rng::substream(seed, "synth");
  std::vector<Sentence> out;
  out.reserve(count);
  for (int c = 0; c < count; ++c) {
    Sentence s;
    NpResult subj = gen_np(g, rng, s);
    int verb = s.size();
    s.tokens.push_back(g.verbs[rng.next_int(static_cast<int>(g.verbs.size()))]);
    s.pos.push_back("VERB");
    s.dep.push_back({-1, "root"});
    NpResult obj = gen_np(g, rng, s);
    s.dep[subj.head] = {verb, "nsubj"};
    s.dep[obj.head] = {verb, "obj"};
    Frame frame;
    frame.predicate = verb;
    frame.args.push_back({subj.span.begin, subj.span.end, "ARG0"});
    frame.args.push_back({obj.span.begin, obj.span.end, "ARG1"});
    s.con.push_back(subj.span);
    s.con.push_back(obj.span);
    if (subj.entity) s.ner.push_back(*subj.entity);
    if (obj.entity) s.ner.push_back(*obj.entity);
    if (rng.bernoulli(g.p_pp)) {
      int pp_start = s.size();
      s.tokens.push_back(g.prepositions[rng.next_int(static_cast<int>(g.prepositions.size()))]);
      s.pos.push_back("PREP");
      s.tokens.push_back(g.determiners[rng.next_int(static_cast<int>(g.determiners.size()))]);
      s.pos.push_back("DET");
      s.tokens.push_back(g.nouns[rng.next_int(static_cast<int>(g.nouns.size()))]);
      s.pos.push_back("NOUN");
      int pp_noun = s.size() - 1;
      s.dep.push_back({pp_noun, "case"});
      s.dep.push_back({pp_noun, "det"});
      s.dep.push_back({verb, "obl"});
      s.con.push_back({pp_start, pp_noun, "PP"});
      frame.args.push_back({pp_start, pp_noun, "ARGM-LOC"});
    }
    s.srl.push_back(std::move(frame));
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gatelab
