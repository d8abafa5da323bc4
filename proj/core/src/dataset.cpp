#include "heteroqa/dataset.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "heteroqa/error.hpp"
#include "heteroqa/retrieval.hpp"

namespace heteroqa {
namespace {

using nlohmann::json;

std::string id_field(const json& obj, const char* field, const std::string& where) {
  if (!obj.contains(field)) throw ValidationError(where + ": missing field \"" + field + "\"");
  const auto& v = obj.at(field);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ValidationError(where + ": field \"" + field + "\" must be a string or integer");
}

std::string text_field(const json& obj, const char* field, const std::string& where) {
  if (!obj.contains(field)) throw ValidationError(where + ": missing field \"" + field + "\"");
  const auto& v = obj.at(field);
  if (!v.is_string()) throw ValidationError(where + ": field \"" + field + "\" must be a string");
  return v.get<std::string>();
}

double score_field(const json& obj, const std::string& where) {
  if (!obj.contains("score")) throw ValidationError(where + ": missing field \"score\"");
  const auto& v = obj.at("score");
  if (!v.is_number()) throw ValidationError(where + ": field \"score\" must be a number");
  const double s = v.get<double>();
  if (!std::isfinite(s) || s < 0.0) throw ValidationError(where + ": field \"score\" must be finite and >= 0");
  return s;
}

const json& array_field(const json& obj, const char* field, const std::string& where) {
  static const json kEmpty = json::array();
  if (!obj.contains(field)) return kEmpty;
  const auto& v = obj.at(field);
  if (!v.is_array()) throw ValidationError(where + ": field \"" + field + "\" must be an array");
  return v;
}

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

json to_json(const TrainingSample& sample) {
  json articles = json::array();
  for (const auto& a : sample.mis.articles) {
    json comments = json::array();
    for (const auto& c : a.comments) comments.push_back({{"id", c.id}, {"text", c.text}});
    articles.push_back({{"id", a.id}, {"text", a.text}, {"score", a.score}, {"comments", std::move(comments)}});
  }
  json related = json::array();
  for (const auto& qa : sample.mis.related_qa) {
    related.push_back({{"id", qa.id}, {"question", qa.question}, {"answer", qa.answer}, {"score", qa.score}});
  }
  return {{"id", sample.id},
          {"question", sample.question},
          {"answer", sample.answer},
          {"mis", {{"articles", std::move(articles)}, {"related_qa", std::move(related)}}}};
}

TrainingSample sample_from_json(const json& obj, bool require_answer) {
  if (!obj.is_object()) throw ValidationError("sample must be a JSON object");
  TrainingSample s;
  s.id = id_field(obj, "id", "sample");
  s.question = text_field(obj, "question", "sample");
  if (is_blank(s.question)) throw ValidationError("sample: field \"question\" must be nonempty");
  if (obj.contains("answer")) {
    s.answer = text_field(obj, "answer", "sample");
  } else if (require_answer) {
    throw ValidationError("sample: missing field \"answer\"");
  }
  if (require_answer && is_blank(s.answer)) throw ValidationError("sample: field \"answer\" must be nonempty");

  if (obj.contains("mis")) {
    const auto& mis = obj.at("mis");
    if (!mis.is_object()) throw ValidationError("sample: field \"mis\" must be an object");
    for (const auto& a : array_field(mis, "articles", "mis")) {
      Article art;
      art.id = id_field(a, "id", "mis.articles");
      art.text = text_field(a, "text", "mis.articles");
      art.score = score_field(a, "mis.articles");
      for (const auto& c : array_field(a, "comments", "mis.articles")) {
        art.comments.push_back(Comment{id_field(c, "id", "mis.articles.comments"),
                                       text_field(c, "text", "mis.articles.comments")});
      }
      s.mis.articles.push_back(std::move(art));
    }
    for (const auto& q : array_field(mis, "related_qa", "mis")) {
      RelatedQa qa;
      qa.id = id_field(q, "id", "mis.related_qa");
      qa.question = text_field(q, "question", "mis.related_qa");
      qa.answer = text_field(q, "answer", "mis.related_qa");
      qa.score = score_field(q, "mis.related_qa");
      s.mis.related_qa.push_back(std::move(qa));
    }
  }
  return s;
}

std::vector<TrainingSample> parse_jsonl(std::istream& in, bool require_answer) {
  std::vector<TrainingSample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      samples.push_back(sample_from_json(json::parse(line), require_answer));
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

std::vector<TrainingSample> load_jsonl(const std::filesystem::path& path, bool require_answer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  return parse_jsonl(in, require_answer);
}

std::string dump_jsonl(std::span<const TrainingSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto where = path.filename().string() + " line " + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(where + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw ValidationError(where + ": expected a JSON object");
    fn(obj, where);
  }
}

void write_lines(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<Article> load_articles_jsonl(const std::filesystem::path& path) {
  std::vector<Article> out;
  for_each_line(path, [&](const json& obj, const std::string& where) {
    Article a;
    a.id = id_field(obj, "id", where);
    a.text = text_field(obj, "text", where);
    for (const auto& c : array_field(obj, "comments", where)) {
      a.comments.push_back(Comment{id_field(c, "id", where + " comments"), text_field(c, "text", where + " comments")});
    }
    out.push_back(std::move(a));
  });
  return out;
}

std::vector<RelatedQa> load_qa_jsonl(const std::filesystem::path& path) {
  std::vector<RelatedQa> out;
  for_each_line(path, [&](const json& obj, const std::string& where) {
    RelatedQa qa;
    qa.id = id_field(obj, "id", where);
    qa.question = text_field(obj, "question", where);
    qa.answer = text_field(obj, "answer", where);
    out.push_back(std::move(qa));
  });
  return out;
}

void save_articles_jsonl(const std::filesystem::path& path, std::span<const Article> articles) {
  std::string text;
  for (const auto& a : articles) {
    json comments = json::array();
    for (const auto& c : a.comments) comments.push_back({{"id", c.id}, {"text", c.text}});
    text += json{{"id", a.id}, {"text", a.text}, {"comments", std::move(comments)}}.dump() + "\n";
  }
  write_lines(path, text);
}

void save_qa_jsonl(const std::filesystem::path& path, std::span<const RelatedQa> pairs) {
  std::string text;
  for (const auto& qa : pairs) text += json{{"id", qa.id}, {"question", qa.question}, {"answer", qa.answer}}.dump() + "\n";
  write_lines(path, text);
}

void save_jsonl(const std::filesystem::path& path, std::span<const TrainingSample> samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << dump_jsonl(samples);
}

Vocabulary build_sample_vocab(std::span<const TrainingSample> samples, TokenMode mode, VocabOptions options) {
  std::vector<TokenSequence> corpus;
  for (const auto& s : samples) {
    corpus.push_back(tokenize(s.question, mode));
    corpus.push_back(tokenize(s.answer, mode));
    for (const auto& a : s.mis.articles) {
      corpus.push_back(tokenize(a.text, mode));
      for (const auto& c : a.comments) corpus.push_back(tokenize(c.text, mode));
    }
    for (const auto& qa : s.mis.related_qa) {
      corpus.push_back(tokenize(qa.question, mode));
      corpus.push_back(tokenize(qa.answer, mode));
    }
  }
  return build_vocab(corpus, options);
}

void validate_lengths(std::span<const TrainingSample> samples, TokenMode mode, std::size_t max_tokens) {
  auto check = [&](const std::string& sample_id, const std::string& what, const std::string& text) {
    const auto n = tokenize(text, mode).size();
    if (n > max_tokens) {
      throw ValidationError("sample " + sample_id + ": " + what + " has " + std::to_string(n) +
                            " tokens, exceeding the limit of " + std::to_string(max_tokens));
    }
  };
  for (const auto& s : samples) {
    check(s.id, "question", s.question);
    for (const auto& a : s.mis.articles) {
      check(s.id, "article " + a.id, a.text);
      for (const auto& c : a.comments) check(s.id, "comment " + c.id, c.text);
    }
    for (const auto& qa : s.mis.related_qa) {
      check(s.id, "related question " + qa.id, qa.question);
      check(s.id, "related answer " + qa.id, qa.answer);
    }
  }
}

std::size_t count_sentences(std::string_view text) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  std::size_t sentences = 0;
  bool has_content = false;
  int32_t i = 0;
  while (i < length) {
    UChar32 cp = 0;
    U8_NEXT(s, i, length, cp);
    const bool terminator = cp == U'。' || cp == U'！' || cp == U'？' || cp == '.' || cp == '!' || cp == '?';
    if (terminator) {
      if (has_content) ++sentences;
      has_content = false;
    } else if (cp >= 0 && !u_isUWhiteSpace(cp)) {
      has_content = true;
    }
  }
  if (has_content) ++sentences;
  return sentences;
}

double DatasetStats::avg_question_words() const { return ratio(question_words, n_samples); }
double DatasetStats::avg_answer_words() const { return ratio(answer_words, n_samples); }
double DatasetStats::avg_articles() const { return ratio(articles, n_samples); }
double DatasetStats::avg_article_sentences() const { return ratio(article_sentences, articles); }
double DatasetStats::avg_article_words() const { return ratio(article_words, articles); }
double DatasetStats::avg_comments() const { return ratio(comments, n_samples); }
double DatasetStats::avg_comment_words() const { return ratio(comment_words, comments); }
double DatasetStats::avg_related_qa() const { return ratio(related_qa, n_samples); }

DatasetStats compute_stats(std::span<const SplitSamples> splits, TokenMode mode) {
  DatasetStats st;
  for (const auto& split : splits) {
    if (split.name == "train") {
      st.train += split.samples.size();
    } else if (split.name == "test") {
      st.test += split.samples.size();
    } else if (split.name == "validation") {
      st.validation += split.samples.size();
    } else {
      throw UsageError("unknown split '" + split.name + "'");
    }
    for (const auto& s : split.samples) {
      ++st.n_samples;
      st.question_words += tokenize(s.question, mode).size();
      st.answer_words += tokenize(s.answer, mode).size();
      st.articles += s.mis.articles.size();
      for (const auto& a : s.mis.articles) {
        st.article_words += tokenize(a.text, mode).size();
        st.article_sentences += count_sentences(a.text);
        st.comments += a.comments.size();
        for (const auto& c : a.comments) st.comment_words += tokenize(c.text, mode).size();
      }
      st.related_qa += s.mis.related_qa.size();
    }
  }
  if (st.n_samples == 0) throw ValidationError("cannot compute statistics of an empty dataset");
  return st;
}

DatasetStats compute_stats(std::span<const TrainingSample> samples, TokenMode mode) {
  const SplitSamples split{"train", samples};
  return compute_stats(std::span<const SplitSamples>(&split, 1), mode);
}

std::string format_stats_table(const DatasetStats& st) {
  const std::vector<std::pair<std::string, std::string>> rows = [&] {
    auto fixed2 = [](double v) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(2) << v;
      return os.str();
    };
    return std::vector<std::pair<std::string, std::string>>{
        {"# of training samples", std::to_string(st.train)},
        {"# of test samples", std::to_string(st.test)},
        {"# of validation samples", std::to_string(st.validation)},
        {"Avg. words of question", fixed2(st.avg_question_words())},
        {"Avg. words of answer", fixed2(st.avg_answer_words())},
        {"Avg. number of articles", fixed2(st.avg_articles())},
        {"Avg. sentences of articles", fixed2(st.avg_article_sentences())},
        {"Avg. words of articles", fixed2(st.avg_article_words())},
        {"Avg. number of comments", fixed2(st.avg_comments())},
        {"Avg. words of comments", fixed2(st.avg_comment_words())},
        {"Avg. number of related QA", fixed2(st.avg_related_qa())},
    };
  }();
  std::size_t width = 0;
  for (const auto& [name, value] : rows) width = std::max(width, name.size());
  std::ostringstream os;
  for (const auto& [name, value] : rows) os << std::left << std::setw(static_cast<int>(width) + 2) << name << value << '\n';
  return os.str();
}

Fixture make_fixture(const FixtureOptions& options) {
  if (options.n_samples < 1) throw UsageError("fixture needs at least one sample");
  if (options.vocab_size < 8) throw UsageError("fixture vocab_size must be >= 8");

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, options.vocab_size - 1);
  auto filler = [&](std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      if (!out.empty()) out += ' ';
      out += "w" + std::to_string(pick(rng));
    }
    return out;
  };

  Fixture fx;
  for (std::size_t i = 0; i < options.n_samples; ++i) {
    const auto tag = std::to_string(i);
    const std::string fact = filler(3);
    const std::string hint = filler(2);

    Article art;
    art.id = "art" + tag;
    art.text = "ka" + tag + " " + filler(2) + " . " + fact + " " + filler(1) + " .";
    art.comments.push_back(Comment{"com" + tag, filler(3)});
    fx.articles.push_back(std::move(art));

    RelatedQa qa;
    qa.id = "qa" + tag;
    qa.question = "kb" + tag + " " + filler(3) + " ?";
    qa.answer = hint + " " + filler(2);
    fx.qa_pairs.push_back(std::move(qa));

    TrainingSample s;
    s.id = "s" + tag;
    // Question fillers never occur in documents, so only the planted keys match.
    s.question = "q" + std::to_string(pick(rng)) + " ka" + tag + " q" + std::to_string(pick(rng)) + " kb" + tag + " ?";
    s.answer = fact + " " + hint;
    fx.samples.push_back(std::move(s));
  }
  for (std::size_t j = 0; j < options.distractor_articles; ++j) {
    fx.articles.push_back(Article{"dis" + std::to_string(j), filler(6) + " .", 0.0, {}});
  }

  const auto article_index = build_article_index(fx.articles, TokenMode::Word);
  const auto qa_index = build_qa_index(fx.qa_pairs, TokenMode::Word);
  for (auto& s : fx.samples) s.mis = assemble_mis(s.question, article_index, qa_index, options.caps, s.id);
  return fx;
}

}  // namespace heteroqa
