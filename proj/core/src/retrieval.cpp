#include "heteroqa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "binary_io.hpp"
#include "heteroqa/error.hpp"

namespace heteroqa {
namespace {

constexpr std::string_view kIndexMagic = "HQABM25\x01";

}  // namespace

MisBundle apply_caps(MisBundle bundle, const MisCaps& caps) {
  if (bundle.articles.size() > caps.articles) bundle.articles.resize(caps.articles);
  if (bundle.related_qa.size() > caps.related_qa) bundle.related_qa.resize(caps.related_qa);
  for (auto& art : bundle.articles)
    if (art.comments.size() > caps.comments_per_article) art.comments.resize(caps.comments_per_article);
  return bundle;
}

Bm25Index Bm25Index::build(std::vector<DocRecord> docs, TokenMode mode, Bm25Params params) {
  Bm25Index index;
  index.mode_ = mode;
  index.params_ = params;
  index.docs_ = std::move(docs);
  index.rebuild_lookup();

  std::uint64_t total_len = 0;
  index.doc_len_.reserve(index.docs_.size());
  for (std::uint32_t d = 0; d < index.docs_.size(); ++d) {
    const auto seq = tokenize(index.docs_[d].text, mode);
    index.doc_len_.push_back(static_cast<std::uint32_t>(seq.size()));
    total_len += seq.size();
    std::map<std::string_view, std::uint32_t> tf;
    for (const auto& tok : seq.tokens) ++tf[tok];
    for (const auto& [term, n] : tf) {
      auto it = index.postings_.find(term);
      if (it == index.postings_.end()) it = index.postings_.emplace(std::string(term), std::vector<Posting>{}).first;
      it->second.push_back(Posting{d, n});
    }
  }
  index.avgdl_ = index.docs_.empty() ? 0.0 : static_cast<double>(total_len) / static_cast<double>(index.docs_.size());
  return index;
}

void Bm25Index::rebuild_lookup() {
  id_to_index_.clear();
  for (std::uint32_t d = 0; d < docs_.size(); ++d) {
    if (!id_to_index_.emplace(docs_[d].id, d).second) {
      throw ValidationError("duplicate document id '" + docs_[d].id + "'");
    }
  }
}

std::size_t Bm25Index::index_of(std::string_view doc_id) const {
  auto it = id_to_index_.find(doc_id);
  if (it == id_to_index_.end()) throw std::out_of_range("unknown document id '" + std::string(doc_id) + "'");
  return it->second;
}

std::size_t Bm25Index::doc_freq(std::string_view term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : it->second.size();
}

std::size_t Bm25Index::doc_length(std::string_view doc_id) const { return doc_len_[index_of(doc_id)]; }

const DocRecord& Bm25Index::record(std::string_view doc_id) const { return docs_[index_of(doc_id)]; }

double Bm25Index::idf(std::string_view term) const {
  const auto n = static_cast<double>(docs_.size());
  const auto df = static_cast<double>(doc_freq(term));
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::term_weight(double idf, std::uint32_t tf, std::uint32_t dl) const {
  const double f = tf;
  const double norm = 1.0 - params_.b + params_.b * static_cast<double>(dl) / avgdl_;
  return idf * f * (params_.k1 + 1.0) / (f + params_.k1 * norm);
}

double Bm25Index::score(const TokenSequence& query, std::string_view doc_id) const {
  const auto d = static_cast<std::uint32_t>(index_of(doc_id));
  double total = 0.0;
  for (const auto& term : query.tokens) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const auto& plist = it->second;
    auto p = std::lower_bound(plist.begin(), plist.end(), d,
                              [](const Posting& post, std::uint32_t doc) { return post.doc < doc; });
    if (p == plist.end() || p->doc != d) continue;
    total += term_weight(idf(term), p->tf, doc_len_[d]);
  }
  return total;
}

std::vector<RetrievalHit> Bm25Index::retrieve(const TokenSequence& query, std::size_t k,
                                              const std::set<std::string, std::less<>>& exclude) const {
  if (k == 0 || docs_.empty()) return {};
  std::vector<double> acc(docs_.size(), 0.0);
  for (const auto& term : query.tokens) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w_idf = idf(term);
    for (const auto& post : it->second) acc[post.doc] += term_weight(w_idf, post.tf, doc_len_[post.doc]);
  }

  std::vector<std::uint32_t> candidates;
  for (std::uint32_t d = 0; d < acc.size(); ++d) {
    if (acc[d] > 0.0 && !exclude.contains(docs_[d].id)) candidates.push_back(d);
  }
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (acc[a] != acc[b]) return acc[a] > acc[b];
    return docs_[a].id < docs_[b].id;
  };
  const auto take = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                    better);
  std::vector<RetrievalHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) hits.push_back({docs_[candidates[i]].id, acc[candidates[i]]});
  return hits;
}

std::string Bm25Index::serialize() const {
  detail::ByteWriter w;
  w.put_raw(kIndexMagic);
  w.put<std::uint64_t>(docs_.size());
  w.put<double>(avgdl_);
  w.put<double>(params_.k1);
  w.put<double>(params_.b);
  w.put<std::uint8_t>(mode_ == TokenMode::Word ? 0 : 1);

  w.put<std::uint64_t>(postings_.size());
  for (const auto& [term, plist] : postings_) {
    w.put_string(term);
    w.put<std::uint64_t>(plist.size());
    for (const auto& p : plist) {
      w.put<std::uint32_t>(p.doc);
      w.put<std::uint32_t>(p.tf);
    }
  }

  for (std::size_t d = 0; d < docs_.size(); ++d) {
    const auto& doc = docs_[d];
    w.put_string(doc.id);
    w.put<std::uint32_t>(doc_len_[d]);
    w.put_string(doc.text);
    w.put_string(doc.answer);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(doc.comments.size()));
    for (const auto& c : doc.comments) {
      w.put_string(c.id);
      w.put_string(c.text);
    }
  }
  return w.take();
}

Bm25Index Bm25Index::deserialize(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.get_raw(kIndexMagic.size()) != kIndexMagic) throw ValidationError("not a BM25 index file");
  Bm25Index index;
  const auto n_docs = r.get<std::uint64_t>();
  index.avgdl_ = r.get<double>();
  index.params_.k1 = r.get<double>();
  index.params_.b = r.get<double>();
  index.mode_ = r.get<std::uint8_t>() == 0 ? TokenMode::Word : TokenMode::Char;

  const auto n_terms = r.get<std::uint64_t>();
  for (std::uint64_t t = 0; t < n_terms; ++t) {
    auto term = r.get_string();
    const auto n = r.get<std::uint64_t>();
    std::vector<Posting> plist;
    plist.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      Posting p;
      p.doc = r.get<std::uint32_t>();
      p.tf = r.get<std::uint32_t>();
      if (p.doc >= n_docs || p.tf == 0) throw ValidationError("corrupt posting for term '" + term + "'");
      plist.push_back(p);
    }
    index.postings_.emplace(std::move(term), std::move(plist));
  }

  index.docs_.reserve(n_docs);
  for (std::uint64_t d = 0; d < n_docs; ++d) {
    DocRecord doc;
    doc.id = r.get_string();
    index.doc_len_.push_back(r.get<std::uint32_t>());
    doc.text = r.get_string();
    doc.answer = r.get_string();
    const auto n_comments = r.get<std::uint32_t>();
    for (std::uint32_t c = 0; c < n_comments; ++c) {
      Comment com;
      com.id = r.get_string();
      com.text = r.get_string();
      doc.comments.push_back(std::move(com));
    }
    index.docs_.push_back(std::move(doc));
  }
  if (!r.done()) throw ValidationError("trailing bytes after BM25 index");
  index.rebuild_lookup();
  return index;
}

void Bm25Index::save(const std::filesystem::path& path) const { detail::write_file(path.string(), serialize()); }

Bm25Index Bm25Index::load(const std::filesystem::path& path) { return deserialize(detail::read_file(path.string())); }

bool operator==(const Bm25Index& a, const Bm25Index& b) {
  return a.docs_ == b.docs_ && a.doc_len_ == b.doc_len_ && a.postings_ == b.postings_ &&
         std::bit_cast<std::uint64_t>(a.avgdl_) == std::bit_cast<std::uint64_t>(b.avgdl_) &&
         a.params_.k1 == b.params_.k1 && a.params_.b == b.params_.b && a.mode_ == b.mode_;
}

Bm25Index build_article_index(std::span<const Article> articles, TokenMode mode, Bm25Params params) {
  std::vector<DocRecord> docs;
  docs.reserve(articles.size());
  for (const auto& a : articles) docs.push_back(DocRecord{a.id, a.text, {}, a.comments});
  return Bm25Index::build(std::move(docs), mode, params);
}

Bm25Index build_qa_index(std::span<const RelatedQa> pairs, TokenMode mode, Bm25Params params) {
  std::vector<DocRecord> docs;
  docs.reserve(pairs.size());
  for (const auto& qa : pairs) docs.push_back(DocRecord{qa.id, qa.question, qa.answer, {}});
  return Bm25Index::build(std::move(docs), mode, params);
}

MisBundle assemble_mis(std::string_view question, const Bm25Index& article_index, const Bm25Index& qa_index,
                       const MisCaps& caps, std::string_view self_id) {
  const std::set<std::string, std::less<>> exclude{std::string(self_id)};
  MisBundle bundle;

  const auto art_query = tokenize(question, article_index.mode());
  for (const auto& hit : article_index.retrieve(art_query, caps.articles, exclude)) {
    const auto& rec = article_index.record(hit.doc_id);
    Article art{rec.id, rec.text, hit.score, rec.comments};
    if (art.comments.size() > caps.comments_per_article) art.comments.resize(caps.comments_per_article);
    bundle.articles.push_back(std::move(art));
  }

  const auto qa_query = tokenize(question, qa_index.mode());
  for (const auto& hit : qa_index.retrieve(qa_query, caps.related_qa, exclude)) {
    const auto& rec = qa_index.record(hit.doc_id);
    bundle.related_qa.push_back(RelatedQa{rec.id, rec.text, rec.answer, hit.score});
  }
  return bundle;
}

std::vector<TrainingSample> build_msmplus(std::vector<TrainingSample> samples, const Bm25Index& qa_index,
                                          std::size_t k) {
  for (auto& sample : samples) {
    sample.mis.related_qa.clear();
    if (k == 0) continue;
    const std::set<std::string, std::less<>> exclude{sample.id};
    const auto query = tokenize(sample.question, qa_index.mode());
    for (const auto& hit : qa_index.retrieve(query, k, exclude)) {
      const auto& rec = qa_index.record(hit.doc_id);
      sample.mis.related_qa.push_back(RelatedQa{rec.id, rec.text, rec.answer, hit.score});
    }
  }
  return samples;
}

std::vector<TrainingSample> build_msmplus(std::vector<TrainingSample> samples, std::size_t k, TokenMode mode,
                                          Bm25Params params) {
  std::vector<RelatedQa> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) pairs.push_back(RelatedQa{s.id, s.question, s.answer, 0.0});
  const auto index = build_qa_index(pairs, mode, params);
  return build_msmplus(std::move(samples), index, k);
}

}  // namespace heteroqa
