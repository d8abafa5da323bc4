#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "heteroqa/sample.hpp"

namespace heteroqa {

enum class NodeType : std::uint8_t { Question, Article, Comment, RelatedQuestion, RelatedAnswer };
inline constexpr std::size_t kNumNodeTypes = 5;
inline constexpr std::array<NodeType, kNumNodeTypes> kAllNodeTypes{
    NodeType::Question, NodeType::Article, NodeType::Comment, NodeType::RelatedQuestion, NodeType::RelatedAnswer};

/// The four forward rules followed by their typed reverses.
enum class EdgeType : std::uint8_t {
  ArticleToQuestion,
  RelQToQuestion,
  RelAToRelQ,
  CommentToArticle,
  QuestionToArticle,
  QuestionToRelQ,
  RelQToRelA,
  ArticleToComment,
};
inline constexpr std::size_t kNumEdgeTypes = 8;
inline constexpr std::size_t kNumForwardEdgeTypes = 4;
inline constexpr std::array<EdgeType, kNumEdgeTypes> kAllEdgeTypes{
    EdgeType::ArticleToQuestion, EdgeType::RelQToQuestion, EdgeType::RelAToRelQ, EdgeType::CommentToArticle,
    EdgeType::QuestionToArticle, EdgeType::QuestionToRelQ, EdgeType::RelQToRelA, EdgeType::ArticleToComment};

std::string_view to_string(NodeType type);
std::string_view to_string(EdgeType type);

/// (source type, target type) fixed by the edge type.
std::pair<NodeType, NodeType> signature(EdgeType type);
bool is_forward(EdgeType type);
EdgeType reverse_of(EdgeType type);

inline bool carries_retrieval_score(NodeType type) {
  return type == NodeType::Article || type == NodeType::RelatedQuestion;
}

using NodeId = std::size_t;

struct GraphNode {
  std::string key;
  NodeType type = NodeType::Question;
  std::string text;
  std::optional<double> score;
};

struct GraphEdge {
  NodeId source = 0;
  EdgeType type = EdgeType::ArticleToQuestion;
  NodeId target = 0;

  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

struct Neighbor {
  NodeId source = 0;
  EdgeType type = EdgeType::ArticleToQuestion;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Typed directed graph with exactly one Question node. Every mutation is
/// validated against the node/edge type signatures.
class HeteroGraph {
 public:
  NodeId add_node(GraphNode node);
  void add_edge(NodeId source, EdgeType type, NodeId target);

  /// For each forward edge, appends its reverse. Throws if reverses exist.
  void add_reverse_edges();

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const GraphNode& node(NodeId id) const;
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  bool has_reverse_edges() const { return reversed_; }

  NodeId question() const;
  bool has_question() const { return question_.has_value(); }

  /// In-edges of target in insertion order.
  std::vector<Neighbor> neighbors(NodeId target) const;
  std::span<const std::size_t> incoming_edges(NodeId target) const;

  /// Node rows other than the Question, in node order.
  std::vector<NodeId> mis_nodes() const;

  std::size_t count(NodeType type) const;

  /// One line per node (index, type, score), then one per edge (src, type, dst).
  std::string dump() const;

 private:
  std::vector<GraphNode> nodes_;
  std::vector<GraphEdge> edges_;
  std::vector<std::vector<std::size_t>> incoming_;
  std::optional<NodeId> question_;
  bool reversed_ = false;
};

/// Which MIS families take part in the graph.
enum class MisAblation {
  None,
  /// Related questions and their answers removed.
  NoRelatedQa,
  /// Comments removed.
  NoComments,
  /// Articles and therefore their comments removed.
  NoArticles,
};

MisAblation parse_mis_ablation(std::string_view name);
std::string_view to_string(MisAblation ablation);

struct GraphOptions {
  bool reverse_edges = true;
  MisAblation ablation = MisAblation::None;
  /// Applied before construction (MIS-count sweeps).
  std::optional<MisCaps> caps;
};

HeteroGraph build_graph(const TrainingSample& sample, const GraphOptions& options = {});

}  // namespace heteroqa
