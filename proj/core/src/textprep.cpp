#include "heteroqa/textprep.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "heteroqa/error.hpp"

namespace heteroqa {
namespace {

void append_utf8(std::string& out, UChar32 cp) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  UBool error = false;
  U8_APPEND(buf, len, U8_MAX_LENGTH, cp, error);
  if (!error) out.append(buf, static_cast<std::size_t>(len));
}

bool is_space(UChar32 cp) { return u_isUWhiteSpace(cp) || u_isspace(cp); }

bool is_punct(UChar32 cp) { return (U_GET_GC_MASK(cp) & U_GC_P_MASK) != 0; }

template <typename Fn>
void for_each_code_point(std::string_view text, Fn&& fn) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 cp = 0;
    U8_NEXT(s, i, length, cp);
    if (cp < 0) cp = 0xFFFD;
    fn(cp);
  }
}

}  // namespace

TokenMode parse_token_mode(std::string_view name) {
  if (name == "word") return TokenMode::Word;
  if (name == "char") return TokenMode::Char;
  throw UsageError("unknown tokenizer mode '" + std::string(name) + "' (expected word|char)");
}

std::string_view to_string(TokenMode mode) { return mode == TokenMode::Word ? "word" : "char"; }

TokenSequence tokenize(std::string_view text, TokenMode mode) {
  TokenSequence seq;
  seq.mode = mode;
  if (mode == TokenMode::Char) {
    for_each_code_point(text, [&](UChar32 cp) {
      if (is_space(cp)) return;
      std::string tok;
      append_utf8(tok, cp);
      seq.tokens.push_back(std::move(tok));
    });
    return seq;
  }

  std::string current;
  auto flush = [&] {
    if (!current.empty()) seq.tokens.push_back(std::move(current));
    current.clear();
  };
  for_each_code_point(text, [&](UChar32 cp) {
    if (is_space(cp)) {
      flush();
    } else if (is_punct(cp)) {
      flush();
      std::string tok;
      append_utf8(tok, cp);
      seq.tokens.push_back(std::move(tok));
    } else {
      append_utf8(current, u_tolower(cp));
    }
  });
  flush();
  return seq;
}

Vocabulary::Vocabulary() : id_to_token_{"<pad>", "<s>", "</s>", "<unk>"} {}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary vocab;
  vocab.id_to_token_.reserve(tokens.size() + kNumSpecials);
  for (auto& tok : tokens) {
    if (tok.empty()) throw ValidationError("vocabulary contains an empty token");
    const auto id = static_cast<TokenId>(vocab.id_to_token_.size());
    if (!vocab.token_to_id_.emplace(tok, id).second) {
      throw ValidationError("vocabulary contains duplicate token '" + tok + "'");
    }
    vocab.id_to_token_.push_back(std::move(tok));
  }
  return vocab;
}

TokenId Vocabulary::lookup(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.contains(std::string(token));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary to " + path.string());
  for (const auto& tok : regular_tokens()) out << tok << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

Vocabulary build_vocab(std::span<const TokenSequence> corpus, VocabOptions options) {
  if (options.min_freq < 1) throw UsageError("min_freq must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& seq : corpus)
    for (const auto& tok : seq.tokens) ++freq[tok];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : freq)
    if (n >= options.min_freq) ranked.emplace_back(tok, n);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  const std::size_t budget =
      options.max_size > static_cast<std::size_t>(kNumSpecials) ? options.max_size - kNumSpecials : 0;
  if (ranked.size() > budget) ranked.resize(budget);

  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, n] : ranked) tokens.push_back(std::move(tok));
  return Vocabulary::from_tokens(std::move(tokens));
}

std::vector<TokenId> encode_ids(const TokenSequence& seq, const Vocabulary& vocab, bool add_bos_eos) {
  std::vector<TokenId> ids;
  ids.reserve(seq.size() + 2);
  if (add_bos_eos) ids.push_back(kBosId);
  for (const auto& tok : seq.tokens) ids.push_back(vocab.lookup(tok));
  if (add_bos_eos) ids.push_back(kEosId);
  return ids;
}

TokenSequence decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab, TokenMode mode) {
  TokenSequence seq;
  seq.mode = mode;
  for (TokenId id : ids) {
    if (id < kNumSpecials) continue;
    seq.tokens.push_back(vocab.token(id));
  }
  return seq;
}

std::string detokenize(const TokenSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i > 0 && seq.mode == TokenMode::Word) out += ' ';
    out += seq.tokens[i];
  }
  return out;
}

}  // namespace heteroqa
