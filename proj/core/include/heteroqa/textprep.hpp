#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace heteroqa {

enum class TokenMode { Word, Char };

TokenMode parse_token_mode(std::string_view name);
std::string_view to_string(TokenMode mode);

struct TokenSequence {
  std::vector<std::string> tokens;
  TokenMode mode = TokenMode::Word;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

/// Word mode lowercases, splits on whitespace and emits every Unicode
/// punctuation code point (general category P*) as its own token.
/// Char mode emits each non-whitespace code point.
TokenSequence tokenize(std::string_view text, TokenMode mode);

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr TokenId kNumSpecials = 4;

class Vocabulary {
 public:
  Vocabulary();

  /// Builds from tokens already in id order (id = index + 4).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  TokenId lookup(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return id_to_token_.size(); }

  /// Non-special tokens in id order.
  std::span<const std::string> regular_tokens() const {
    return std::span<const std::string>(id_to_token_).subspan(kNumSpecials);
  }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

struct VocabOptions {
  std::size_t min_freq = 1;
  std::size_t max_size = 32000;
};

Vocabulary build_vocab(std::span<const TokenSequence> corpus, VocabOptions options = {});

std::vector<TokenId> encode_ids(const TokenSequence& seq, const Vocabulary& vocab, bool add_bos_eos);

/// Inverse of encode_ids; specials are dropped.
TokenSequence decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab,
                         TokenMode mode = TokenMode::Word);

/// Joins tokens with single spaces (word mode) or nothing (char mode).
std::string detokenize(const TokenSequence& seq);

}  // namespace heteroqa
