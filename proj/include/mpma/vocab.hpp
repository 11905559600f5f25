#pragma once

// Token vocabulary with four reserved control ids and a greedy
// longest-match subword tokenizer (continuation pieces carry a "##"
// prefix). The vocabulary ships with the corpus as a plain text file,
// one token per line, line number = id.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace mpma {

struct Vocabulary {
  static constexpr std::size_t pad_id = 0;
  static constexpr std::size_t cls_id = 1;
  static constexpr std::size_t mask_id = 2;
  static constexpr std::size_t unk_id = 3;

  std::vector<std::string> tokens;          // id -> string
  std::map<std::string, std::size_t> ids;   // string -> id

  static Vocabulary with_reserved();
  void add(const std::string& token);
  std::size_t size() const { return tokens.size(); }
  bool contains(const std::string& token) const { return ids.count(token) != 0; }
  std::size_t id_of(const std::string& token) const;  // throws if absent

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
};

// Whitespace pre-split, then greedy longest-match per word: the longest
// vocabulary prefix starts the word, longest "##" pieces continue it; a
// word that cannot be fully covered becomes a single [UNK]. Output is
// [CLS] + pieces, padded/truncated to exactly m tokens.
std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab,
                                  std::size_t m);

// Inverse for display: drops control tokens, joins continuation pieces
// without a space. Round-trips in-vocab text up to whitespace.
std::string detokenize(const std::vector<std::size_t>& ids, const Vocabulary& vocab);

}  // namespace mpma
