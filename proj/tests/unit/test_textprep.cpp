#include <doctest.h>

#include <filesystem>
#include <random>

#include "heteroqa/error.hpp"
#include "heteroqa/textprep.hpp"

using namespace heteroqa;
using Tokens = std::vector<std::string>;

TEST_CASE("word mode lowercases and splits punctuation") {
  CHECK(tokenize("", TokenMode::Word).tokens.empty());
  CHECK(tokenize("How to repay?", TokenMode::Word).tokens == Tokens{"how", "to", "repay", "?"});
  CHECK(tokenize("  Hello,world!! ", TokenMode::Word).tokens == Tokens{"hello", ",", "world", "!", "!"});
  // Full-width punctuation is category P as well.
  CHECK(tokenize("还款？好的。", TokenMode::Word).tokens == Tokens{"还款", "？", "好的", "。"});
  CHECK(tokenize("ÄBC déf", TokenMode::Word).tokens == Tokens{"äbc", "déf"});
}

TEST_CASE("char mode emits one token per non-whitespace code point") {
  CHECK(tokenize("还款", TokenMode::Char).tokens == Tokens{"还", "款"});
  CHECK(tokenize("a b\tc", TokenMode::Char).tokens == Tokens{"a", "b", "c"});
  const std::string text = "花呗 怎么 还款？ ok";
  std::size_t expected = 0;
  for (unsigned char c : text) expected += (c & 0xC0) != 0x80 && c != ' ' ? 1 : 0;
  CHECK(tokenize(text, TokenMode::Char).size() == expected);
}

TEST_CASE("mode names round trip") {
  CHECK(parse_token_mode("word") == TokenMode::Word);
  CHECK(parse_token_mode("char") == TokenMode::Char);
  CHECK(to_string(TokenMode::Char) == "char");
  CHECK_THROWS_AS(parse_token_mode("bpe"), UsageError);
}

TEST_CASE("vocabulary order is frequency then lexicographic") {
  CHECK(build_vocab({}).size() == 4);

  const std::vector<TokenSequence> one{{{"a", "b", "a"}, TokenMode::Word}};
  const auto v = build_vocab(one);
  CHECK(v.lookup("a") == 4);
  CHECK(v.lookup("b") == 5);

  const std::vector<TokenSequence> corpus{{{"b", "c", "a", "b"}, TokenMode::Word}, {{"a", "b", "a"}, TokenMode::Word}};
  const auto v2 = build_vocab(corpus, VocabOptions{2, 100});
  CHECK(v2.size() == 6);
  CHECK(v2.lookup("a") == 4);  // a and b both occur 3 times
  CHECK(v2.lookup("b") == 5);
  CHECK(v2.lookup("c") == kUnkId);
  CHECK(encode_ids(TokenSequence{{"c"}, TokenMode::Word}, v2, false) == std::vector<TokenId>{kUnkId});

  const auto v3 = build_vocab(corpus, VocabOptions{1, 5});
  CHECK(v3.size() == 5);
  CHECK(v3.contains("a"));
  CHECK_FALSE(v3.contains("b"));
}

TEST_CASE("encoding frames with BOS and EOS") {
  const std::vector<TokenSequence> corpus{{{"a"}, TokenMode::Word}};
  const auto v = build_vocab(corpus);
  CHECK(encode_ids(TokenSequence{{"a"}, TokenMode::Word}, v, true) == std::vector<TokenId>{1, 4, 2});
  CHECK(v.token(kPadId) == "<pad>");
  CHECK_THROWS(v.token(99));
}

TEST_CASE("decode inverts encode for in-vocabulary sequences") {
  std::mt19937_64 rng(3);
  std::vector<std::string> pool{"x", "y", "z", "w", "还", "?"};
  std::vector<TokenSequence> corpus{{pool, TokenMode::Word}};
  const auto v = build_vocab(corpus);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::uniform_int_distribution<std::size_t> len(0, 12);
  for (int trial = 0; trial < 200; ++trial) {
    TokenSequence s;
    s.tokens.resize(len(rng));
    for (auto& t : s.tokens) t = pool[pick(rng)];
    CHECK(decode_ids(encode_ids(s, v, trial % 2 == 0), v).tokens == s.tokens);
  }
}

TEST_CASE("vocabulary file round trip") {
  const std::vector<TokenSequence> corpus{{{"b", "a", "还", "a"}, TokenMode::Word}};
  const auto v = build_vocab(corpus);
  const auto path = std::filesystem::temp_directory_path() / "heteroqa_vocab_test.txt";
  v.save(path);
  CHECK(Vocabulary::load(path) == v);
  std::filesystem::remove(path);
}

TEST_CASE("detokenize joins words with spaces and characters without") {
  CHECK(detokenize(TokenSequence{{"a", "b"}, TokenMode::Word}) == "a b");
  CHECK(detokenize(TokenSequence{{"还", "款"}, TokenMode::Char}) == "还款");
}
