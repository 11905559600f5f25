#include "mpma/vocab.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mpma {

Vocabulary Vocabulary::with_reserved() {
  Vocabulary v;
  for (const char* t : {"[PAD]", "[CLS]", "[MASK]", "[UNK]"}) v.add(t);
  return v;
}

void Vocabulary::add(const std::string& token) {
  if (token.empty()) throw std::invalid_argument("empty vocabulary token");
  if (ids.count(token)) return;
  ids.emplace(token, tokens.size());
  tokens.push_back(token);
}

std::size_t Vocabulary::id_of(const std::string& token) const {
  auto it = ids.find(token);
  if (it == ids.end()) throw std::invalid_argument("token not in vocabulary: " + token);
  return it->second;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write vocabulary: " + path);
  for (const auto& t : tokens) f << t << '\n';
  if (!f) throw std::runtime_error("vocabulary write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open vocabulary: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add(line);
  }
  if (v.size() < 4 || v.tokens[pad_id] != "[PAD]" || v.tokens[cls_id] != "[CLS]" ||
      v.tokens[mask_id] != "[MASK]" || v.tokens[unk_id] != "[UNK]")
    throw std::runtime_error("vocabulary missing reserved tokens: " + path);
  return v;
}

namespace {

// Longest vocabulary match for text[start..), optionally as a "##"
// continuation piece. Returns matched length in characters (0 = none).
std::size_t longest_match(const std::string& word, std::size_t start, const Vocabulary& vocab,
                          bool continuation, std::size_t* id_out) {
  for (std::size_t len = word.size() - start; len >= 1; --len) {
    std::string cand = word.substr(start, len);
    if (continuation) cand = "##" + cand;
    auto it = vocab.ids.find(cand);
    if (it != vocab.ids.end()) {
      *id_out = it->second;
      return len;
    }
  }
  return 0;
}

}  // namespace

std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab,
                                  std::size_t m) {
  if (m < 2) throw std::invalid_argument("tokenize: target length must be >= 2");
  std::vector<std::size_t> out;
  out.push_back(Vocabulary::cls_id);
  std::istringstream words(text);
  std::string word;
  while (words >> word) {
    std::vector<std::size_t> pieces;
    std::size_t pos = 0;
    bool ok = true;
    while (pos < word.size()) {
      std::size_t id = 0;
      const std::size_t len = longest_match(word, pos, vocab, pos > 0, &id);
      if (len == 0) {
        ok = false;
        break;
      }
      pieces.push_back(id);
      pos += len;
    }
    if (ok)
      out.insert(out.end(), pieces.begin(), pieces.end());
    else
      out.push_back(Vocabulary::unk_id);
  }
  out.resize(m, Vocabulary::pad_id);  // pads or truncates to exactly m
  return out;
}

std::string detokenize(const std::vector<std::size_t>& ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t id : ids) {
    if (id >= vocab.size()) throw std::invalid_argument("detokenize: id out of range");
    if (id == Vocabulary::pad_id || id == Vocabulary::cls_id) continue;
    const std::string& tok = vocab.tokens[id];
    if (tok.size() > 2 && tok[0] == '#' && tok[1] == '#') {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

}  // namespace mpma
