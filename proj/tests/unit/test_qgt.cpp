#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "heteroqa/error.hpp"
#include "heteroqa/qgt.hpp"
#include "qgt_support.hpp"

using namespace heteroqa;
using namespace heteroqa::testing;
using nn::Matrix;

namespace {

double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Matrix affine(const nn::Linear& l, const Matrix& x) {
  Matrix y = x * l.w.value();
  y.rowwise() += l.b.value().row(0);
  return y;
}

struct OracleResult {
  Matrix next;
  std::vector<std::vector<std::vector<double>>> alpha;  // [target][edge][head]
  std::vector<double> beta;
};

// Scalar-loop evaluation of one layer, written independently of the library.
OracleResult oracle_layer(const HeteroGraph& g, const Matrix& D, const QgtLayerParams& p, bool question_aware,
                          std::optional<double> fixed_beta = std::nullopt) {
  const auto n = static_cast<Eigen::Index>(g.node_count());
  const Eigen::Index d = D.cols();
  const int heads = p.n_heads;
  const Eigen::Index dh = d / heads;
  const Matrix& wr = p.w_r.value();
  const auto q = static_cast<Eigen::Index>(g.question());

  OracleResult r;
  r.next = D;
  r.alpha.assign(g.node_count(), {});
  for (Eigen::Index s = 0; s < n; ++s) {
    double b = 0.0;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) b += D(q, i) * wr(i, j) * D(s, j);
    if (p.beta_mode == BetaMode::Sigmoid) b = 1.0 / (1.0 + std::exp(-b));
    r.beta.push_back(fixed_beta ? *fixed_beta : b);
  }

  for (Eigen::Index t = 0; t < n; ++t) {
    std::vector<GraphEdge> in;
    for (const auto& e : g.edges())
      if (static_cast<Eigen::Index>(e.target) == t) in.push_back(e);
    if (in.empty()) continue;
    const auto tt = ti(g.node(static_cast<NodeId>(t)).type);
    const Matrix key = affine(p.k_proj[tt], D.row(t));
    Matrix agg = Matrix::Zero(1, d);
    r.alpha[static_cast<std::size_t>(t)].assign(in.size(), std::vector<double>(static_cast<std::size_t>(heads)));
    for (int h = 0; h < heads; ++h) {
      std::vector<double> score;
      for (const auto& e : in) {
        const auto st = ti(g.node(e.source).type);
        const Matrix val = affine(p.v_proj[st], D.row(static_cast<Eigen::Index>(e.source)));
        const Matrix& w = p.attn_w[ei(e.type)].value();
        double acc = 0.0;
        for (Eigen::Index i = 0; i < dh; ++i)
          for (Eigen::Index j = 0; j < dh; ++j) acc += key(0, h * dh + i) * w(h * dh + i, j) * val(0, h * dh + j);
        score.push_back(acc / std::sqrt(static_cast<double>(dh)));
      }
      const double mx = *std::max_element(score.begin(), score.end());
      double z = 0.0;
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (std::size_t k = 0; k < in.size(); ++k) {
        const double a = score[k] / z;
        r.alpha[static_cast<std::size_t>(t)][k][static_cast<std::size_t>(h)] = a;
        const double weight = question_aware ? a * r.beta[in[k].source] : a;
        const auto st = ti(g.node(in[k].source).type);
        const Matrix msg = affine(p.msg_proj[st], D.row(static_cast<Eigen::Index>(in[k].source))) * p.msg_w[ei(in[k].type)].value();
        for (Eigen::Index j = 0; j < dh; ++j) agg(0, h * dh + j) += weight * msg(0, h * dh + j);
      }
    }
    const Matrix o = affine(p.out_proj[tt], agg);
    for (Eigen::Index j = 0; j < d; ++j) r.next(t, j) = gelu_exact(o(0, j)) + D(t, j);
  }
  return r;
}


}  // namespace

TEST_CASE("hand-set chain matches the high-precision forward computation") {
  nn::ParameterStore store(0);
  const auto p = chain_layer(store);
  const Matrix D = chain_states();
  const auto g = chain_graph();

  const auto beta = question_relevance(g, D, p);
  for (std::size_t i = 0; i < 4; ++i) CHECK(beta[i] == doctest::Approx(kChainBeta[i]).epsilon(1e-13));
  const Matrix one = chain_after_one_layer();
  const Matrix two = chain_after_two_layers();

  const auto next = aggregate_update(g, ad::constant(D), p).value();
  CHECK(max_abs(next - one) < 1e-12);
  const std::vector<QgtLayerParams> layers{p, p};
  const auto final = qgt_forward(g, NodeStates{ad::constant(D), 0}, layers).matrix.value();
  CHECK(max_abs(final - two) < 1e-12);
  CHECK(qgt_forward(g, NodeStates{ad::constant(D), 0}, std::span(layers).first(1)).layer == 1);
  // Isolated nodes (a2, c) are copied bit for bit.
  CHECK(bit_equal(next.row(2), D.row(2)));
  CHECK(bit_equal(next.row(3), D.row(3)));
}

TEST_CASE("zero output maps make every layer the identity") {
  std::mt19937_64 rng(2);
  nn::ParameterStore store(1);
  std::vector<QgtLayerParams> layers;
  for (int l = 0; l < 3; ++l) layers.push_back(random_layer(store, "l" + std::to_string(l), 4, 2, true, rng));
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_graph(rng, true, static_cast<std::size_t>(trial));
    const Matrix D = random_matrix(rng, static_cast<Eigen::Index>(g.node_count()), 4);
    CHECK(bit_equal(qgt_forward(g, NodeStates{ad::constant(D), 0}, layers).matrix.value(), D));
  }
}

TEST_CASE("attention trivial cases") {
  std::mt19937_64 rng(3);
  nn::ParameterStore store(1);
  const auto p = random_layer(store, "l", 4, 2, false, rng);
  HeteroGraph g;
  const auto q = g.add_node({"q", NodeType::Question, "q", std::nullopt});
  const auto a = g.add_node({"a", NodeType::Article, "a", 1.0});
  const auto b = g.add_node({"b", NodeType::Article, "b", 1.0});
  g.add_edge(a, EdgeType::ArticleToQuestion, q);
  g.add_edge(b, EdgeType::ArticleToQuestion, q);
  Matrix D = random_matrix(rng, 3, 4);
  D.row(2) = D.row(1);
  const auto map = attention_scores(g, D, p);
  REQUIRE(map.entries[q].size() == 2);
  for (const auto& e : map.entries[q])
    for (double x : e.alpha) CHECK(x == 0.5);
  CHECK(map.entries[a].empty());

  HeteroGraph single;
  const auto sq = single.add_node({"q", NodeType::Question, "q", std::nullopt});
  const auto sa = single.add_node({"a", NodeType::Article, "a", 1.0});
  single.add_edge(sa, EdgeType::ArticleToQuestion, sq);
  const auto single_map = attention_scores(single, random_matrix(rng, 2, 4), p);
  for (double x : single_map.entries[sq][0].alpha) CHECK(x == 1.0);
}

TEST_CASE("attention, relevance and updates match the scalar oracle") {
  std::mt19937_64 rng(4);
  double worst_alpha = 0.0;
  double worst_next = 0.0;
  double worst_beta = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    nn::ParameterStore store(static_cast<std::uint64_t>(trial));
    const int heads = trial % 2 == 0 ? 1 : 2;
    auto p = random_layer(store, "l", 4, heads, false, rng);
    if (trial % 3 == 0) p.beta_mode = BetaMode::Sigmoid;
    const auto g = random_graph(rng, trial % 4 != 0, static_cast<std::size_t>(trial));
    const Matrix D = random_matrix(rng, static_cast<Eigen::Index>(g.node_count()), 4);
    const bool aware = trial % 5 != 0;
    QgtOptions options;
    options.question_aware = aware;
    const auto expected = oracle_layer(g, D, p, aware);

    QgtTrace trace;
    const auto next = aggregate_update(g, ad::constant(D), p, options, &trace).value();
    worst_next = std::max(worst_next, max_abs(next - expected.next));
    const auto beta = question_relevance(g, D, p);
    for (std::size_t s = 0; s < beta.size(); ++s) worst_beta = std::max(worst_beta, std::abs(beta[s] - expected.beta[s]));

    for (NodeId t = 0; t < g.node_count(); ++t) {
      const auto& entry = trace.attention.entries[t];
      REQUIRE(entry.size() == g.neighbors(t).size());
      std::vector<double> total(static_cast<std::size_t>(heads), 0.0);
      for (std::size_t k = 0; k < entry.size(); ++k) {
        CHECK(entry[k].source == g.neighbors(t)[k].source);
        CHECK(entry[k].beta == trace.beta[entry[k].source]);
        for (int h = 0; h < heads; ++h) {
          const auto hh = static_cast<std::size_t>(h);
          worst_alpha = std::max(worst_alpha, std::abs(entry[k].alpha[hh] - expected.alpha[t][k][hh]));
          total[hh] += entry[k].alpha[hh];
          CHECK(entry[k].alpha_hat[hh] == (aware ? entry[k].alpha[hh] * entry[k].beta : entry[k].alpha[hh]));
        }
      }
      if (!entry.empty())
        for (double s : total) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(worst_alpha < 1e-9);
  CHECK(worst_beta < 1e-9);
  CHECK(worst_next < 1e-9);
}

TEST_CASE("relevance trivial cases") {
  nn::ParameterStore store(1);
  auto p = QgtLayerParams::create(store, "l", QgtConfig{2, 1, 1, BetaMode::Raw, true});
  p.w_r.mutable_value() = Matrix::Identity(2, 2);
  HeteroGraph g;
  g.add_node({"q", NodeType::Question, "q", std::nullopt});
  g.add_node({"a", NodeType::Article, "a", 1.0});
  g.add_node({"b", NodeType::Article, "b", 1.0});
  Matrix D(3, 2);
  D << 1, 0, 1, 0, 0, 1;
  const auto beta = question_relevance(g, D, p);
  CHECK(beta[1] == 1.0);
  CHECK(beta[2] == 0.0);

  // beta(s) depends only on the question and s.
  std::mt19937_64 rng(5);
  nn::ParameterStore rs(2);
  const auto rp = random_layer(rs, "l", 4, 2, false, rng);
  const auto graph = build_graph(heteroqa::testing::random_sample(rng, {3, 2, 3}));
  Matrix states = random_matrix(rng, static_cast<Eigen::Index>(graph.node_count()), 4);
  const auto before = question_relevance(graph, states, rp);
  const auto q = static_cast<Eigen::Index>(graph.question());
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    if (i == q) continue;
    Matrix edited = states;
    edited.row(i) *= 3.0;
    const auto after = question_relevance(graph, edited, rp);
    for (Eigen::Index s = 0; s < states.rows(); ++s) {
      if (s != i) CHECK(after[static_cast<std::size_t>(s)] == before[static_cast<std::size_t>(s)]);
    }
  }
}

TEST_CASE("messages") {
  std::mt19937_64 rng(6);
  nn::ParameterStore store(1);
  auto p = random_layer(store, "l", 4, 2, false, rng);
  const auto g = build_graph(heteroqa::testing::random_sample(rng, {2, 2, 2}));
  const Matrix D = random_matrix(rng, static_cast<Eigen::Index>(g.node_count()), 4);

  const auto got = messages(g, D, p);
  REQUIRE(got.rows() == static_cast<Eigen::Index>(g.edge_count()));
  for (std::size_t i = 0; i < g.edge_count(); ++i) {
    const auto& e = g.edges()[i];
    const Matrix expected =
        affine(p.msg_proj[ti(g.node(e.source).type)], D.row(static_cast<Eigen::Index>(e.source))) * p.msg_w[ei(e.type)].value();
    CHECK(max_abs(got.row(static_cast<Eigen::Index>(i)) - expected) < 1e-12);
  }

  for (auto t : kAllNodeTypes) {
    p.msg_proj[ti(t)].w.mutable_value().setZero();
    p.msg_proj[ti(t)].b.mutable_value().setZero();
  }
  CHECK(messages(g, D, p).isZero());

  for (auto t : kAllNodeTypes) p.msg_proj[ti(t)].w.mutable_value().setIdentity();
  for (auto e : kAllEdgeTypes) p.msg_w[ei(e)].mutable_value().setIdentity();
  const auto identity = messages(g, D, p);
  for (std::size_t i = 0; i < g.edge_count(); ++i)
    CHECK(identity.row(static_cast<Eigen::Index>(i)) == D.row(static_cast<Eigen::Index>(g.edges()[i].source)));
}

TEST_CASE("score head") {
  nn::ParameterStore store(1);
  auto head = ScoreHead::create(store, "score", 4);
  head.linear.w.mutable_value().setZero();
  head.linear.b.mutable_value().setConstant(0.7);
  std::mt19937_64 rng(7);
  const Matrix D = random_matrix(rng, 5, 4);
  CHECK(predict_node_scores(ad::constant(D), head).value() == Matrix::Constant(5, 1, 0.7));

  head.linear.w.mutable_value() = random_matrix(rng, 4, 1);
  const auto got = predict_node_scores(ad::constant(D), head).value();
  for (Eigen::Index i = 0; i < 5; ++i) {
    double expected = 0.7;
    for (Eigen::Index j = 0; j < 4; ++j) expected += D(i, j) * head.linear.w.value()(j, 0);
    CHECK(got(i, 0) == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("fixed unit relevance equals the type-aware baseline") {
  std::mt19937_64 rng(8);
  nn::ParameterStore store(1);
  const auto p = random_layer(store, "l", 4, 2, false, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_graph(rng, true, static_cast<std::size_t>(trial));
    const Matrix D = random_matrix(rng, static_cast<Eigen::Index>(g.node_count()), 4);
    QgtOptions unit;
    unit.fixed_beta = 1.0;
    QgtOptions plain;
    plain.question_aware = false;
    CHECK(bit_equal(aggregate_update(g, ad::constant(D), p, unit).value(),
                    aggregate_update(g, ad::constant(D), p, plain).value()));
  }
}

TEST_CASE("locality: nodes outside the k-hop in-neighbourhood have no influence") {
  std::mt19937_64 rng(9);
  nn::ParameterStore store(1);
  std::vector<QgtLayerParams> layers;
  for (int l = 0; l < 2; ++l) layers.push_back(random_layer(store, "l" + std::to_string(l), 4, 2, false, rng));
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = random_graph(rng, trial % 2 == 0, static_cast<std::size_t>(trial));
    const auto n = g.node_count();
    const Matrix D = random_matrix(rng, static_cast<Eigen::Index>(n), 4);
    // deps[t]: nodes whose layer-0 state can reach t's state after k layers.
    std::vector<std::set<NodeId>> deps(n);
    for (NodeId t = 0; t < n; ++t) deps[t] = {t};
    for (std::size_t k = 1; k <= layers.size(); ++k) {
      auto next = deps;
      for (NodeId t = 0; t < n; ++t) {
        if (g.neighbors(t).empty()) continue;
        next[t].insert(deps[g.question()].begin(), deps[g.question()].end());
        for (const auto& nb : g.neighbors(t)) next[t].insert(deps[nb.source].begin(), deps[nb.source].end());
      }
      deps = std::move(next);
      const auto base = qgt_forward(g, NodeStates{ad::constant(D), 0}, std::span(layers).first(k)).matrix.value();
      for (NodeId victim = 0; victim < n; ++victim) {
        Matrix perturbed = D;
        perturbed.row(static_cast<Eigen::Index>(victim)) += random_matrix(rng, 1, 4);
        const auto out = qgt_forward(g, NodeStates{ad::constant(perturbed), 0}, std::span(layers).first(k)).matrix.value();
        for (NodeId t = 0; t < n; ++t) {
          if (deps[t].count(victim)) continue;
          CHECK(bit_equal(out.row(static_cast<Eigen::Index>(t)), base.row(static_cast<Eigen::Index>(t))));
        }
      }
    }
  }
}

TEST_CASE("permutation equivariance") {
  std::mt19937_64 rng(10);
  nn::ParameterStore store(1);
  const auto p = random_layer(store, "l", 4, 2, false, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_graph(rng, true, static_cast<std::size_t>(trial));
    const auto n = g.node_count();
    std::vector<NodeId> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // Node i of g becomes node perm[i] of h; edges keep their relative order.
    std::vector<NodeId> inverse(n);
    for (NodeId i = 0; i < n; ++i) inverse[perm[i]] = i;
    HeteroGraph h;
    for (NodeId j = 0; j < n; ++j) h.add_node(g.node(inverse[j]));
    for (const auto& e : g.edges()) h.add_edge(perm[e.source], e.type, perm[e.target]);

    const Matrix D = random_matrix(rng, static_cast<Eigen::Index>(n), 4);
    Matrix Dp(D.rows(), D.cols());
    for (NodeId i = 0; i < n; ++i) Dp.row(static_cast<Eigen::Index>(perm[i])) = D.row(static_cast<Eigen::Index>(i));
    const auto out = aggregate_update(g, ad::constant(D), p).value();
    const auto out_p = aggregate_update(h, ad::constant(Dp), p).value();
    for (NodeId i = 0; i < n; ++i) {
      CHECK(max_abs(out.row(static_cast<Eigen::Index>(i)) - out_p.row(static_cast<Eigen::Index>(perm[i]))) < 1e-12);
    }
  }
}

TEST_CASE("gradients of every layer tensor match central differences") {
  std::mt19937_64 rng(11);
  nn::ParameterStore store(1);
  const std::vector<QgtLayerParams> layers{random_layer(store, "l0", 4, 2, false, rng, 0.5),
                                           random_layer(store, "l1", 4, 2, false, rng, 0.5)};
  TrainingSample s{"s", "q", "a", {}};
  s.mis.articles = {Article{"a", "a", 1.0, {Comment{"c", "c"}}}};
  s.mis.related_qa = {RelatedQa{"r", "rq", "ra", 0.5}};
  const auto g = build_graph(s);
  REQUIRE(g.node_count() == 5);
  const Matrix D = random_matrix(rng, 5, 4);
  const Matrix W = random_matrix(rng, 5, 4);
  auto loss = [&] {
    return ad::sum(ad::mul(qgt_forward(g, NodeStates{ad::constant(D), 0}, layers).matrix, ad::constant(W)));
  };
  store.zero_grad();
  ad::backward(loss());
  const double eps = 1e-5;
  for (const auto& name : store.names()) {
    auto& param = store.get(name);
    const Matrix analytic = param.grad();
    Matrix numeric(param.rows(), param.cols());
    for (Eigen::Index i = 0; i < param.value().size(); ++i) {
      const double saved = param.value().data()[i];
      param.mutable_value().data()[i] = saved + eps;
      const double up = loss().scalar();
      param.mutable_value().data()[i] = saved - eps;
      const double down = loss().scalar();
      param.mutable_value().data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * eps);
    }
    const double scale = std::max(analytic.norm(), numeric.norm());
    const double err = scale < 1e-10 ? (analytic - numeric).norm() : (analytic - numeric).norm() / scale;
    INFO(name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("type-blind attention matches its oracle") {
  std::mt19937_64 rng(12);
  nn::ParameterStore store(1);
  auto p = GatLayerParams::create(store, "gat", 4);
  p.w.mutable_value() = random_matrix(rng, 4, 4, 0.5);
  p.a.mutable_value() = random_matrix(rng, 1, 8, 0.5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = random_graph(rng, true, static_cast<std::size_t>(trial));
    const Matrix D = random_matrix(rng, static_cast<Eigen::Index>(g.node_count()), 4);
    const Matrix P = D * p.w.value();
    Matrix expected = D;
    for (NodeId t = 0; t < g.node_count(); ++t) {
      const auto in = g.neighbors(t);
      if (in.empty()) continue;
      std::vector<double> e;
      for (const auto& nb : in) {
        double x = 0.0;
        for (Eigen::Index j = 0; j < 4; ++j)
          x += p.a.value()(0, j) * P(static_cast<Eigen::Index>(nb.source), j) + p.a.value()(0, 4 + j) * P(static_cast<Eigen::Index>(t), j);
        e.push_back(x > 0 ? x : 0.2 * x);
      }
      const double mx = *std::max_element(e.begin(), e.end());
      double z = 0.0;
      for (auto& x : e) z += (x = std::exp(x - mx));
      for (Eigen::Index j = 0; j < 4; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < in.size(); ++k) acc += e[k] / z * P(static_cast<Eigen::Index>(in[k].source), j);
        expected(static_cast<Eigen::Index>(t), j) = gelu_exact(acc) + D(static_cast<Eigen::Index>(t), j);
      }
    }
    CHECK(max_abs(gat_update(g, ad::constant(D), p).value() - expected) < 1e-12);
  }
}

TEST_CASE("non-finite states are reported with the node") {
  std::mt19937_64 rng(13);
  nn::ParameterStore store(1);
  const auto p = random_layer(store, "l", 4, 1, false, rng);
  const auto g = chain_graph();
  Matrix D = random_matrix(rng, 4, 4);
  D(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    aggregate_update(g, ad::constant(D), p);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("q") != std::string::npos);
  }
}
