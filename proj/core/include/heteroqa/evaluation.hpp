#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "heteroqa/sample.hpp"
#include "heteroqa/textprep.hpp"

namespace heteroqa {

using Tokens = std::vector<std::string>;

struct BleuScores {
  /// Mean of sentence-level smoothed cumulative BLEU-4.
  double bleu = 0.0;
  /// Corpus-level cumulative BLEU-1..4.
  std::array<double, 4> bleu_n{};
};

/// Clipped n-gram overlap statistics for one pair.
struct NgramMatch {
  std::size_t matched = 0;
  std::size_t total = 0;
};
NgramMatch ngram_match(const Tokens& candidate, const Tokens& reference, int n);

BleuScores bleu(std::span<const Tokens> candidates, std::span<const Tokens> references);
double sentence_bleu(const Tokens& candidate, const Tokens& reference, double smoothing = 1e-9);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
double rouge_l(std::span<const Tokens> candidates, std::span<const Tokens> references);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
/// Exact-match alignment with the most matches, then the fewest chunks.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);
double meteor_sentence(const Tokens& candidate, const Tokens& reference);
/// Exact-match METEOR (alpha 0.9, gamma 0.5, beta 3) averaged over pairs.
double meteor_lite(std::span<const Tokens> candidates, std::span<const Tokens> references);

/// Text of the highest-scored MIS document; ties prefer articles, then lower id.
std::string retrieved1(const TrainingSample& sample);

struct MetricReport {
  double bleu = 0.0;
  std::array<double, 4> bleu_n{};
  double rouge_l = 0.0;
  double meteor = 0.0;
  std::size_t n_samples = 0;

  nlohmann::json to_json() const;
  /// Aligned table; BLEU family scaled by 100.
  std::string to_table() const;
};

MetricReport compute_metrics(std::span<const Tokens> candidates, std::span<const Tokens> references);

/// id -> answer text from {"id","answer"} lines (extra fields ignored).
std::map<std::string, std::string> load_answers_jsonl(const std::filesystem::path& path);

/// Joins predictions with references on id; both id sets must match.
MetricReport evaluate_run(const std::map<std::string, std::string>& predictions,
                          const std::map<std::string, std::string>& references, TokenMode mode);
MetricReport evaluate_run(const std::filesystem::path& predictions, const std::filesystem::path& references,
                          TokenMode mode);

}  // namespace heteroqa
