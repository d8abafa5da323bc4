#include <doctest.h>

#include <random>

#include "heteroqa/error.hpp"
#include "heteroqa/graph.hpp"
#include "test_support.hpp"

using namespace heteroqa;

namespace {

TrainingSample seven_node_sample() {
  TrainingSample s{"s", "question text", "answer", {}};
  s.mis.articles = {Article{"a1", "first", 2.0, {Comment{"c1", "x"}, Comment{"c2", "y"}}}, Article{"a2", "second", 1.0, {}}};
  s.mis.related_qa = {RelatedQa{"r1", "rq", "ra", 0.5}};
  return s;
}

struct Census {
  std::size_t nodes = 0;
  std::size_t forward_edges = 0;
  std::array<std::size_t, kNumNodeTypes> per_type{};
};

// Direct enumeration of the construction rules, independent of build_graph.
Census enumerate(const TrainingSample& s, MisAblation ablation) {
  Census c;
  c.nodes = 1;
  c.per_type[0] = 1;
  if (ablation != MisAblation::NoArticles) {
    for (const auto& a : s.mis.articles) {
      c.nodes += 1;
      c.forward_edges += 1;
      c.per_type[1] += 1;
      if (ablation == MisAblation::NoComments) continue;
      c.nodes += a.comments.size();
      c.forward_edges += a.comments.size();
      c.per_type[2] += a.comments.size();
    }
  }
  if (ablation != MisAblation::NoRelatedQa) {
    c.nodes += 2 * s.mis.related_qa.size();
    c.forward_edges += 2 * s.mis.related_qa.size();
    c.per_type[3] += s.mis.related_qa.size();
    c.per_type[4] += s.mis.related_qa.size();
  }
  return c;
}

}  // namespace

TEST_CASE("type tables") {
  for (auto e : kAllEdgeTypes) {
    CHECK(reverse_of(reverse_of(e)) == e);
    CHECK(is_forward(e) != is_forward(reverse_of(e)));
    const auto [s, t] = signature(e);
    const auto [rs, rt] = signature(reverse_of(e));
    CHECK(s == rt);
    CHECK(t == rs);
  }
  CHECK(parse_mis_ablation("no_comments") == MisAblation::NoComments);
  CHECK_THROWS_AS(parse_mis_ablation("no_questions"), UsageError);
}

TEST_CASE("empty MIS yields a lone question") {
  const auto g = build_graph(TrainingSample{"s", "q", "a", {}}, heteroqa::testing::graph_opts(false));
  CHECK(g.node_count() == 1);
  CHECK(g.edge_count() == 0);
  CHECK(g.node(g.question()).text == "q");
  CHECK(g.neighbors(g.question()).empty());
  CHECK(build_graph(TrainingSample{"s", "q", "a", {}}).edge_count() == 0);
}

TEST_CASE("seven node example") {
  const auto g = build_graph(seven_node_sample(), heteroqa::testing::graph_opts(false));
  CHECK(g.node_count() == 7);
  CHECK(g.edge_count() == 6);
  const auto q_in = g.neighbors(g.question());
  REQUIRE(q_in.size() == 3);
  CHECK(g.node(q_in[0].source).type == NodeType::Article);
  CHECK(g.node(q_in[1].source).type == NodeType::Article);
  CHECK(q_in[2].type == EdgeType::RelQToQuestion);
  for (NodeId n = 0; n < g.node_count(); ++n) {
    if (g.node(n).type == NodeType::Comment) CHECK(g.neighbors(n).empty());
  }
  CHECK_THROWS(g.neighbors(99));

  auto r = g;
  r.add_reverse_edges();
  CHECK(r.edge_count() == 12);
  for (NodeId n = 0; n < r.node_count(); ++n) {
    if (r.node(n).type != NodeType::Comment) continue;
    const auto in = r.neighbors(n);
    REQUIRE(in.size() == 1);
    CHECK(in[0].type == EdgeType::ArticleToComment);
    CHECK(r.node(in[0].source).key == "article:a1");
  }
  CHECK_THROWS_AS(r.add_reverse_edges(), ValidationError);
  CHECK(build_graph(seven_node_sample()).edge_count() == 12);

  HeteroGraph single;
  const auto q = single.add_node({"q", NodeType::Question, "q", std::nullopt});
  const auto a = single.add_node({"a", NodeType::Article, "a", 1.0});
  single.add_edge(a, EdgeType::ArticleToQuestion, q);
  single.add_reverse_edges();
  CHECK(single.edges()[1] == GraphEdge{q, EdgeType::QuestionToArticle, a});
}

TEST_CASE("invariants are enforced") {
  HeteroGraph g;
  const auto q = g.add_node({"q", NodeType::Question, "q", std::nullopt});
  const auto a = g.add_node({"a", NodeType::Article, "a", 1.0});
  const auto c = g.add_node({"c", NodeType::Comment, "c", std::nullopt});
  CHECK_THROWS_AS(g.add_node({"q2", NodeType::Question, "q", std::nullopt}), ValidationError);
  CHECK_THROWS_AS(g.add_node({"x", NodeType::Comment, "c", 1.0}), ValidationError);
  CHECK_THROWS_AS(g.add_node({"x", NodeType::RelatedQuestion, "c", std::nullopt}), ValidationError);
  CHECK_THROWS_AS(g.add_edge(c, EdgeType::ArticleToQuestion, q), ValidationError);
  g.add_edge(a, EdgeType::ArticleToQuestion, q);
  CHECK_THROWS_AS(g.add_edge(a, EdgeType::ArticleToQuestion, q), ValidationError);
  g.add_edge(c, EdgeType::CommentToArticle, a);
  const auto a2 = g.add_node({"a2", NodeType::Article, "a", 1.0});
  CHECK_THROWS_AS(g.add_edge(c, EdgeType::CommentToArticle, a2), ValidationError);
}

TEST_CASE("randomized counting, typing and locality") {
  std::mt19937_64 rng(17);
  const std::array<MisAblation, 4> ablations{MisAblation::None, MisAblation::NoRelatedQa, MisAblation::NoComments,
                                             MisAblation::NoArticles};
  for (int trial = 0; trial < 200; ++trial) {
    const auto sample = heteroqa::testing::random_sample(rng, {4, 4, 4}, trial);
    for (auto ablation : ablations) {
      const auto expected = enumerate(sample, ablation);
      const auto fwd = build_graph(sample, heteroqa::testing::graph_opts(false, ablation));
      const auto both = build_graph(sample, heteroqa::testing::graph_opts(true, ablation));
      CHECK(fwd.node_count() == expected.nodes);
      CHECK(fwd.edge_count() == expected.forward_edges);
      CHECK(both.edge_count() == 2 * expected.forward_edges);
      for (auto t : kAllNodeTypes) CHECK(both.count(t) == expected.per_type[static_cast<std::size_t>(t)]);
      for (const auto& e : both.edges()) {
        const auto [s, t] = signature(e.type);
        CHECK(both.node(e.source).type == s);
        CHECK(both.node(e.target).type == t);
        if (both.node(e.source).type == NodeType::Comment) CHECK(both.node(e.target).type == NodeType::Article);
        if (both.node(e.target).type == NodeType::Comment) CHECK(both.node(e.source).type == NodeType::Article);
      }
      for (const auto& n : both.nodes()) CHECK(n.score.has_value() == carries_retrieval_score(n.type));
    }
  }
}

TEST_CASE("caps truncate before construction") {
  auto s = seven_node_sample();
  s.mis.articles.push_back(Article{"a3", "third", 0.5, {}});
  auto options = heteroqa::testing::graph_opts(false);
  options.caps = MisCaps{1, 0, 1};
  const auto g = build_graph(s, options);
  CHECK(g.count(NodeType::Article) == 1);
  CHECK(g.count(NodeType::Comment) == 1);
  CHECK(g.count(NodeType::RelatedQuestion) == 0);
  CHECK(g.node(1).key == "article:a1");
}
