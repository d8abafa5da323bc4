#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "heteroqa/sample.hpp"
#include "heteroqa/textprep.hpp"

namespace heteroqa {

nlohmann::json to_json(const TrainingSample& sample);

/// Parses and validates one sample. Throws ValidationError naming the field.
TrainingSample sample_from_json(const nlohmann::json& obj, bool require_answer = true);

/// One JSON object per line; blank lines are skipped. Errors carry "line N".
std::vector<TrainingSample> load_jsonl(const std::filesystem::path& path, bool require_answer = true);
std::vector<TrainingSample> parse_jsonl(std::istream& in, bool require_answer = true);

void save_jsonl(const std::filesystem::path& path, std::span<const TrainingSample> samples);
std::string dump_jsonl(std::span<const TrainingSample> samples);

/// Retrieval corpora: {"id","text","comments":[{"id","text"}]} and
/// {"id","question","answer"} lines. Scores are not part of a corpus.
std::vector<Article> load_articles_jsonl(const std::filesystem::path& path);
std::vector<RelatedQa> load_qa_jsonl(const std::filesystem::path& path);
void save_articles_jsonl(const std::filesystem::path& path, std::span<const Article> articles);
void save_qa_jsonl(const std::filesystem::path& path, std::span<const RelatedQa> pairs);

/// Vocabulary over every question, answer and MIS text of the samples.
Vocabulary build_sample_vocab(std::span<const TrainingSample> samples, TokenMode mode, VocabOptions options = {});

/// Rejects samples whose question or MIS texts exceed max_tokens tokens.
void validate_lengths(std::span<const TrainingSample> samples, TokenMode mode, std::size_t max_tokens);

struct SplitSamples {
  std::string name;  // "train", "validation" or "test"
  std::span<const TrainingSample> samples;
};

/// Exact sums; averages are formed only when reported.
struct DatasetStats {
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t validation = 0;
  std::size_t n_samples = 0;

  std::uint64_t question_words = 0;
  std::uint64_t answer_words = 0;
  std::uint64_t articles = 0;
  std::uint64_t article_sentences = 0;
  std::uint64_t article_words = 0;
  std::uint64_t comments = 0;
  std::uint64_t comment_words = 0;
  std::uint64_t related_qa = 0;

  double avg_question_words() const;
  double avg_answer_words() const;
  /// Per sample.
  double avg_articles() const;
  /// Per article.
  double avg_article_sentences() const;
  double avg_article_words() const;
  /// Per sample, summed over its articles.
  double avg_comments() const;
  /// Per comment.
  double avg_comment_words() const;
  double avg_related_qa() const;
};

/// Sentences end at any of 。！？.!? ; trailing text without a terminator counts as one.
std::size_t count_sentences(std::string_view text);

DatasetStats compute_stats(std::span<const SplitSamples> splits, TokenMode mode);
DatasetStats compute_stats(std::span<const TrainingSample> samples, TokenMode mode);

/// Two-column table with the row names used for published dataset statistics.
std::string format_stats_table(const DatasetStats& stats);

struct FixtureOptions {
  std::uint64_t seed = 7;
  std::size_t n_samples = 32;
  std::size_t vocab_size = 64;
  MisCaps caps{2, 2};
  /// Articles that carry only filler words.
  std::size_t distractor_articles = 4;
};

struct Fixture {
  std::vector<TrainingSample> samples;
  std::vector<Article> articles;
  std::vector<RelatedQa> qa_pairs;
};

/// Deterministic synthetic corpus. Sample i shares one rare term with article
/// "art<i>" and another with QA pair "qa<i>"; its answer is three fact words
/// from the article followed by two from the related answer. Question filler
/// words ("q<n>") appear in no document.
Fixture make_fixture(const FixtureOptions& options);

}  // namespace heteroqa
