#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace heteroqa {

struct Comment {
  std::string id;
  std::string text;

  friend bool operator==(const Comment&, const Comment&) = default;
};

struct Article {
  std::string id;
  std::string text;
  double score = 0.0;
  std::vector<Comment> comments;

  friend bool operator==(const Article&, const Article&) = default;
};

struct RelatedQa {
  std::string id;
  std::string question;
  std::string answer;
  double score = 0.0;

  friend bool operator==(const RelatedQa&, const RelatedQa&) = default;
};

/// Per-type maximum counts applied when assembling or truncating a bundle.
struct MisCaps {
  std::size_t articles = 3;
  std::size_t related_qa = 3;
  /// Comments kept per article; unlimited by default.
  std::size_t comments_per_article = static_cast<std::size_t>(-1);
};

/// The multiple-information-source bundle attached to one question.
struct MisBundle {
  std::vector<Article> articles;
  std::vector<RelatedQa> related_qa;

  bool empty() const { return articles.empty() && related_qa.empty(); }
  std::size_t comment_count() const {
    std::size_t n = 0;
    for (const auto& a : articles) n += a.comments.size();
    return n;
  }

  friend bool operator==(const MisBundle&, const MisBundle&) = default;
};

struct TrainingSample {
  std::string id;
  std::string question;
  std::string answer;
  MisBundle mis;

  friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

/// Keeps at most caps.* entries of each type (prefix order is preserved).
MisBundle apply_caps(MisBundle bundle, const MisCaps& caps);

}  // namespace heteroqa
