#include "heteroqa/graph.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "heteroqa/error.hpp"

namespace heteroqa {

std::string_view to_string(NodeType type) {
  switch (type) {
    case NodeType::Question: return "Question";
    case NodeType::Article: return "Article";
    case NodeType::Comment: return "Comment";
    case NodeType::RelatedQuestion: return "RelatedQuestion";
    case NodeType::RelatedAnswer: return "RelatedAnswer";
  }
  return "?";
}

std::string_view to_string(EdgeType type) {
  switch (type) {
    case EdgeType::ArticleToQuestion: return "ArticleToQuestion";
    case EdgeType::RelQToQuestion: return "RelQToQuestion";
    case EdgeType::RelAToRelQ: return "RelAToRelQ";
    case EdgeType::CommentToArticle: return "CommentToArticle";
    case EdgeType::QuestionToArticle: return "QuestionToArticle";
    case EdgeType::QuestionToRelQ: return "QuestionToRelQ";
    case EdgeType::RelQToRelA: return "RelQToRelA";
    case EdgeType::ArticleToComment: return "ArticleToComment";
  }
  return "?";
}

std::pair<NodeType, NodeType> signature(EdgeType type) {
  switch (type) {
    case EdgeType::ArticleToQuestion: return {NodeType::Article, NodeType::Question};
    case EdgeType::RelQToQuestion: return {NodeType::RelatedQuestion, NodeType::Question};
    case EdgeType::RelAToRelQ: return {NodeType::RelatedAnswer, NodeType::RelatedQuestion};
    case EdgeType::CommentToArticle: return {NodeType::Comment, NodeType::Article};
    case EdgeType::QuestionToArticle: return {NodeType::Question, NodeType::Article};
    case EdgeType::QuestionToRelQ: return {NodeType::Question, NodeType::RelatedQuestion};
    case EdgeType::RelQToRelA: return {NodeType::RelatedQuestion, NodeType::RelatedAnswer};
    case EdgeType::ArticleToComment: return {NodeType::Article, NodeType::Comment};
  }
  throw std::logic_error("bad edge type");
}

bool is_forward(EdgeType type) { return static_cast<std::size_t>(type) < kNumForwardEdgeTypes; }

EdgeType reverse_of(EdgeType type) {
  const auto i = static_cast<std::size_t>(type);
  return static_cast<EdgeType>(i < kNumForwardEdgeTypes ? i + kNumForwardEdgeTypes : i - kNumForwardEdgeTypes);
}

MisAblation parse_mis_ablation(std::string_view name) {
  if (name == "none") return MisAblation::None;
  if (name == "no_related_qa") return MisAblation::NoRelatedQa;
  if (name == "no_comments") return MisAblation::NoComments;
  if (name == "no_articles") return MisAblation::NoArticles;
  throw UsageError("unknown MIS ablation '" + std::string(name) +
                   "' (expected none|no_related_qa|no_comments|no_articles)");
}

std::string_view to_string(MisAblation ablation) {
  switch (ablation) {
    case MisAblation::None: return "none";
    case MisAblation::NoRelatedQa: return "no_related_qa";
    case MisAblation::NoComments: return "no_comments";
    case MisAblation::NoArticles: return "no_articles";
  }
  return "?";
}

NodeId HeteroGraph::add_node(GraphNode node) {
  if (node.type == NodeType::Question && question_) throw ValidationError("graph already has a Question node");
  if (carries_retrieval_score(node.type) != node.score.has_value()) {
    throw ValidationError("node " + node.key + ": retrieval score must be present exactly for Article and "
                          "RelatedQuestion nodes");
  }
  const NodeId id = nodes_.size();
  if (node.type == NodeType::Question) question_ = id;
  nodes_.push_back(std::move(node));
  incoming_.emplace_back();
  return id;
}

void HeteroGraph::add_edge(NodeId source, EdgeType type, NodeId target) {
  if (source >= nodes_.size() || target >= nodes_.size()) throw std::out_of_range("edge endpoint outside graph");
  const auto [src_type, dst_type] = signature(type);
  if (nodes_[source].type != src_type || nodes_[target].type != dst_type) {
    throw ValidationError("edge " + std::string(to_string(type)) + " cannot connect " +
                          std::string(to_string(nodes_[source].type)) + " to " +
                          std::string(to_string(nodes_[target].type)));
  }
  const GraphEdge edge{source, type, target};
  for (auto e : incoming_[target]) {
    if (edges_[e] == edge) throw ValidationError("duplicate edge into node " + nodes_[target].key);
  }
  // A comment hangs off exactly one article.
  if (type == EdgeType::CommentToArticle) {
    for (const auto& e : edges_) {
      if (e.type == EdgeType::CommentToArticle && e.source == source) {
        throw ValidationError("comment " + nodes_[source].key + " already has a parent article");
      }
    }
  }
  if (!is_forward(type)) reversed_ = true;
  incoming_[target].push_back(edges_.size());
  edges_.push_back(edge);
}

void HeteroGraph::add_reverse_edges() {
  if (reversed_) throw ValidationError("graph already has reverse edges");
  const auto forward = edges_;
  for (const auto& e : forward) add_edge(e.target, reverse_of(e.type), e.source);
  reversed_ = true;
}

const GraphNode& HeteroGraph::node(NodeId id) const {
  if (id >= nodes_.size()) throw std::out_of_range("unknown node id " + std::to_string(id));
  return nodes_[id];
}

NodeId HeteroGraph::question() const {
  if (!question_) throw ValidationError("graph has no Question node");
  return *question_;
}

std::vector<Neighbor> HeteroGraph::neighbors(NodeId target) const {
  if (target >= nodes_.size()) throw std::out_of_range("unknown node id " + std::to_string(target));
  std::vector<Neighbor> out;
  out.reserve(incoming_[target].size());
  for (auto e : incoming_[target]) out.push_back({edges_[e].source, edges_[e].type});
  return out;
}

std::span<const std::size_t> HeteroGraph::incoming_edges(NodeId target) const {
  if (target >= nodes_.size()) throw std::out_of_range("unknown node id " + std::to_string(target));
  return incoming_[target];
}

std::vector<NodeId> HeteroGraph::mis_nodes() const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].type != NodeType::Question) out.push_back(i);
  return out;
}

std::size_t HeteroGraph::count(NodeType type) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [&](const GraphNode& n) { return n.type == type; }));
}

std::string HeteroGraph::dump() const {
  std::ostringstream os;
  os.precision(17);
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    os << "node\t" << i << '\t' << to_string(nodes_[i].type) << '\t';
    if (nodes_[i].score) {
      os << *nodes_[i].score;
    } else {
      os << '-';
    }
    os << '\t' << nodes_[i].key << '\n';
  }
  for (const auto& e : edges_) os << "edge\t" << e.source << '\t' << to_string(e.type) << '\t' << e.target << '\n';
  return os.str();
}

HeteroGraph build_graph(const TrainingSample& sample, const GraphOptions& options) {
  MisBundle mis = options.caps ? apply_caps(sample.mis, *options.caps) : sample.mis;
  switch (options.ablation) {
    case MisAblation::None: break;
    case MisAblation::NoRelatedQa: mis.related_qa.clear(); break;
    case MisAblation::NoComments:
      for (auto& a : mis.articles) a.comments.clear();
      break;
    case MisAblation::NoArticles: mis.articles.clear(); break;
  }

  HeteroGraph g;
  const NodeId q = g.add_node({"question", NodeType::Question, sample.question, std::nullopt});
  for (const auto& art : mis.articles) {
    const NodeId a = g.add_node({"article:" + art.id, NodeType::Article, art.text, art.score});
    g.add_edge(a, EdgeType::ArticleToQuestion, q);
    for (const auto& com : art.comments) {
      const NodeId c = g.add_node({"comment:" + com.id, NodeType::Comment, com.text, std::nullopt});
      g.add_edge(c, EdgeType::CommentToArticle, a);
    }
  }
  for (const auto& qa : mis.related_qa) {
    const NodeId rq = g.add_node({"rel_question:" + qa.id, NodeType::RelatedQuestion, qa.question, qa.score});
    g.add_edge(rq, EdgeType::RelQToQuestion, q);
    const NodeId ra = g.add_node({"rel_answer:" + qa.id, NodeType::RelatedAnswer, qa.answer, std::nullopt});
    g.add_edge(ra, EdgeType::RelAToRelQ, rq);
  }
  if (options.reverse_edges) g.add_reverse_edges();
  return g;
}

}  // namespace heteroqa
