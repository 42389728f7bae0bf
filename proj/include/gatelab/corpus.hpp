#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gatelab/rng.hpp"

namespace gatelab {

// All indices 0-based. Spans inclusive. Dependency head -1 = root.
struct Span {
  int begin = 0;
  int end = 0;
  std::string label;
};

struct Arc {
  int head = -1;
  std::string rel;
};

struct Frame {
  int predicate = 0;
  std::vector<Span> args;  // label = role
};

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<std::string> pos;  // empty = untagged
  std::vector<Span> ner;
  std::vector<Arc> dep;          // one per token when present
  std::vector<Span> con;         // height-3 spans
  std::vector<Frame> srl;

  bool has_pos() const { return !pos.empty(); }
  bool has_dep() const { return !dep.empty(); }
  int size() const { return static_cast<int>(tokens.size()); }

  // Throws with a description on any invariant violation: bounds, span order,
  // overlapping NER spans, dep tree not single-rooted / cyclic.
  void validate() const;
};

// Per-word contiguous subtoken ranges over the encoder input sequence
// (position 0 = BOS, last = EOS).
struct SubtokenMap {
  struct Range {
    int begin = 0;  // inclusive subtoken index
    int end = 0;    // exclusive
  };
  std::vector<Range> words;
  int bos = 0;
  int eos = 0;
  int seq_len = 0;
};

struct Vocab {
  // reserved ids
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kMask = 2;
  static constexpr int kUnk = 3;

  std::map<std::string, int> piece_to_id;
  std::vector<std::string> id_to_piece;  // includes sentinels

  Vocab();
  int add(const std::string& piece);     // idempotent
  int lookup(const std::string& piece) const;  // -1 if absent
  int size() const { return static_cast<int>(id_to_piece.size()); }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
};

// Greedy longest-match WordPiece-style subtokenization. Continuation pieces
// carry the "##" prefix. Any unmatched character collapses the whole word to
// a single UNK.
std::vector<int> subtokenize(const std::string& word, const Vocab& vocab);

// Builds a subword vocabulary from the corpus: words of <= chunk characters
// enter whole; longer words are chunked (first piece bare, rest "##"-prefixed).
Vocab build_vocab(const std::vector<Sentence>& sentences, int chunk = 4);

// Encode one sentence: BOS + subtokens + EOS, with the word->range map.
std::pair<std::vector<int>, SubtokenMap> encode_sentence(const Sentence& s, const Vocab& vocab);

// JSONL corpus IO. Errors name the offending line.
std::vector<Sentence> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<Sentence>& sentences);

// CoNLL-U import: POS + DEP only. upos=false selects the XPOS column.
std::vector<Sentence> read_conllu(const std::string& path, bool upos = true);

// --- synthetic corpus -----------------------------------------------------

// Template grammar: [Det] Adj* Noun Verb [Det] Adj* Noun [Prep Det Noun],
// with subject/object slots optionally realized as named entities. Emits
// mutually consistent POS / NER / DEP / CON / SRL annotations.
struct GrammarConfig {
  std::vector<std::string> determiners;
  std::vector<std::string> adjectives;
  std::vector<std::string> nouns;
  std::vector<std::string> verbs;
  std::vector<std::string> prepositions;
  // entity surface forms per label, each entry 1..2 tokens joined by space
  std::map<std::string, std::vector<std::string>> entities;

  double p_subject_det = 0.8;   // determiner on a common-noun NP
  double p_adjective = 0.4;     // each NP draws 0 or 1 adjective
  double p_entity = 0.3;        // NP realized as a named entity
  double p_pp = 0.4;            // trailing prepositional phrase

  std::vector<std::string> pos_labels() const;  // label inventory
  void validate() const;

  static GrammarConfig builtin();
  static GrammarConfig from_json_file(const std::string& path);
  void save(const std::string& path) const;
};

std::vector<Sentence> synth_generate(const GrammarConfig& g, int count, std::uint64_t seed);

}  // namespace gatelab
