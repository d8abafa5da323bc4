#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heteroqa/sample.hpp"
#include "heteroqa/textprep.hpp"

namespace heteroqa {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Stored alongside each indexed document so retrieval can rebuild MIS entries.
struct DocRecord {
  std::string id;
  /// Indexed text: article body, or the question of a QA pair.
  std::string text;
  /// QA pairs only.
  std::string answer;
  /// Articles only.
  std::vector<Comment> comments;

  friend bool operator==(const DocRecord&, const DocRecord&) = default;
};

struct Posting {
  std::uint32_t doc = 0;  // dense document index
  std::uint32_t tf = 0;

  friend bool operator==(const Posting&, const Posting&) = default;
};

struct RetrievalHit {
  std::string doc_id;
  double score = 0.0;
};

/// In-memory inverted index with BM25 scoring. Immutable after build.
class Bm25Index {
 public:
  Bm25Index() = default;

  static Bm25Index build(std::vector<DocRecord> docs, TokenMode mode, Bm25Params params = {});

  std::size_t doc_count() const { return docs_.size(); }
  double avgdl() const { return avgdl_; }
  const Bm25Params& params() const { return params_; }
  TokenMode mode() const { return mode_; }

  std::size_t doc_freq(std::string_view term) const;
  std::size_t doc_length(std::string_view doc_id) const;
  const DocRecord& record(std::string_view doc_id) const;
  std::span<const DocRecord> records() const { return docs_; }
  const std::map<std::string, std::vector<Posting>, std::less<>>& postings() const { return postings_; }

  /// ln(1 + (N - df + 0.5) / (df + 0.5)); always positive.
  double idf(std::string_view term) const;

  /// Sum over query tokens (repeats included) of idf * saturated tf.
  double score(const TokenSequence& query, std::string_view doc_id) const;

  /// Top-k by (score desc, doc id asc); zero scores and excluded ids dropped.
  std::vector<RetrievalHit> retrieve(const TokenSequence& query, std::size_t k,
                                     const std::set<std::string, std::less<>>& exclude = {}) const;

  void save(const std::filesystem::path& path) const;
  static Bm25Index load(const std::filesystem::path& path);
  std::string serialize() const;
  static Bm25Index deserialize(std::string_view bytes);

  friend bool operator==(const Bm25Index& a, const Bm25Index& b);

 private:
  std::size_t index_of(std::string_view doc_id) const;
  double term_weight(double idf, std::uint32_t tf, std::uint32_t dl) const;
  void rebuild_lookup();

  std::vector<DocRecord> docs_;
  std::vector<std::uint32_t> doc_len_;
  std::map<std::string, std::vector<Posting>, std::less<>> postings_;
  std::map<std::string, std::uint32_t, std::less<>> id_to_index_;
  double avgdl_ = 0.0;
  Bm25Params params_;
  TokenMode mode_ = TokenMode::Word;
};

/// Index over articles (text + attached comments).
Bm25Index build_article_index(std::span<const Article> articles, TokenMode mode, Bm25Params params = {});

/// Index over QA pairs keyed by question text, answer stored as payload.
Bm25Index build_qa_index(std::span<const RelatedQa> pairs, TokenMode mode, Bm25Params params = {});

/// Retrieves the typed MIS bundle for one question; self_id never appears in it.
MisBundle assemble_mis(std::string_view question, const Bm25Index& article_index, const Bm25Index& qa_index,
                       const MisCaps& caps, std::string_view self_id);

/// Replaces each sample's related_qa with up to k neighbours retrieved from
/// qa_index, excluding the sample itself. Articles are left untouched.
std::vector<TrainingSample> build_msmplus(std::vector<TrainingSample> samples, const Bm25Index& qa_index,
                                          std::size_t k);

/// Convenience form: the QA index is built from the samples themselves.
std::vector<TrainingSample> build_msmplus(std::vector<TrainingSample> samples, std::size_t k,
                                          TokenMode mode, Bm25Params params = {});

}  // namespace heteroqa
