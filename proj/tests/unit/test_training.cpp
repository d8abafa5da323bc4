#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "heteroqa/dataset.hpp"
#include "heteroqa/error.hpp"
#include "heteroqa/training.hpp"
#include "test_support.hpp"

using namespace heteroqa;
using heteroqa::testing::bit_equal;
using nn::Matrix;

namespace {

ModelConfig tiny(Ablation ablation = Ablation::Full) {
  ModelConfig c;
  c.d_model = 8;
  c.encoder_layers = 1;
  c.encoder_heads = 2;
  c.encoder_ffn = 16;
  c.encoder_max_positions = 32;
  c.qgt_layers = 1;
  c.qgt_heads = 1;
  c.qgt_zero_init_output = false;
  c.decoder_layers = 1;
  c.decoder_heads = 2;
  c.decoder_ffn = 16;
  c.decoder_max_positions = 32;
  c.ablation = ablation;
  c.init_std = 0.3;
  return c;
}

Fixture small_fixture(std::size_t n = 8) {
  FixtureOptions o;
  o.n_samples = n;
  return make_fixture(o);
}

double loss_of(const Matrix& logits, const std::vector<int>& targets, int ignore = -1) {
  return ad::cross_entropy(ad::constant(logits), targets, ignore).scalar();
}

std::vector<Matrix> snapshot(const nn::ParameterStore& store) {
  std::vector<Matrix> out;
  for (const auto& n : store.names()) out.push_back(store.get(n).value());
  return out;
}

}  // namespace

TEST_CASE("cross-entropy") {
  CHECK(loss_of(Matrix::Zero(1, 4), {1}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  Matrix m1 = Matrix::Zero(1, 3);
  m1(0, 2) = 1.0;
  Matrix m10 = Matrix::Zero(1, 3);
  m10(0, 2) = 10.0;
  CHECK(loss_of(m10, {2}) < loss_of(m1, {2}));
  CHECK(loss_of(m10, {2}) < 1e-4);

  // Row 0: logits (0, ln 3) target 1 -> -ln(3/4); row 1: (0, 0) target 0 -> ln 2.
  Matrix two(2, 2);
  two << 0, std::log(3.0), 0, 0;
  CHECK(loss_of(two, {1, 0}) == doctest::Approx((std::log(4.0 / 3.0) + std::log(2.0)) / 2).epsilon(1e-14));
  CHECK(loss_of(two, {1, kPadId}, kPadId) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-14));
  CHECK_THROWS(loss_of(two, {kPadId, kPadId}, kPadId));
}

TEST_CASE("retrieval-score loss") {
  TrainingSample s{"s", "q", "a", {}};
  s.mis.articles = {Article{"a", "x", 2.0, {Comment{"c", "y"}}}};
  s.mis.related_qa = {RelatedQa{"r", "rq", "ra", 5.0}};
  const auto g = build_graph(s);
  // Rows: question, article, comment, related question, related answer.
  Matrix pred(5, 1);
  pred << 9, 2.0, 9, 5.0, 9;
  CHECK(graph_loss(ad::constant(pred), g).scalar() == 0.0);
  pred << 9, 3.0, 9, 2.0, 9;
  CHECK(graph_loss(ad::constant(pred), g).scalar() == 5.0);
  pred << 9, 0.4, 9, 1.0, 9;
  CHECK(graph_loss(ad::constant(pred), g, true).scalar() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(graph_loss(ad::constant(Matrix::Ones(1, 1)), build_graph(TrainingSample{"e", "q", "a", {}})).scalar() == 0.0);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sample = heteroqa::testing::random_sample(rng, {3, 2, 3}, static_cast<std::size_t>(trial));
    const auto graph = build_graph(sample);
    const Matrix p = heteroqa::testing::random_matrix(rng, static_cast<Eigen::Index>(graph.node_count()), 1);
    double total = 0.0;
    int count = 0;
    for (NodeId i = 0; i < graph.node_count(); ++i) {
      const auto t = graph.node(i).type;
      if (t != NodeType::Article && t != NodeType::RelatedQuestion) continue;
      const double d = p(static_cast<Eigen::Index>(i), 0) - *graph.node(i).score;
      total += d * d;
      ++count;
    }
    CHECK(graph_loss(ad::constant(p), graph).scalar() == doctest::Approx(count ? total / count : 0.0).epsilon(1e-14));
  }
}

TEST_CASE("loss composition") {
  const auto b = total_loss(2.0, 100.0, 0.01);
  CHECK(b.total == 3.0);
  CHECK(total_loss(1.25, 7.0, 0.0).total == 1.25);
  const auto ce = ad::scalar_constant(0.7);
  CHECK(total_loss(ce, ad::scalar_constant(3.0), 0.0).scalar() == 0.7);
}

TEST_CASE("no-graph-loss ablation returns the cross-entropy bit for bit") {
  const auto fx = small_fixture();
  const auto vocab = build_sample_vocab(fx.samples, TokenMode::Word);
  const HeteroQaModel full(tiny(), vocab, 5);
  const HeteroQaModel nog(tiny(Ablation::NoGraphLoss), vocab, 5);
  for (const auto& s : fx.samples) {
    const auto g = build_graph(s);
    const auto framed = nog.frame_answer(s.answer);
    const auto l = nog.loss(g, framed, 0.5);
    CHECK(l.values.psi == 0.0);
    CHECK(std::bit_cast<std::uint64_t>(l.values.total) == std::bit_cast<std::uint64_t>(l.values.ce));
    CHECK(l.values.graph > 0.0);
    const auto f0 = full.loss(g, framed, 0.0);
    CHECK(std::bit_cast<std::uint64_t>(f0.values.total) == std::bit_cast<std::uint64_t>(l.values.total));
  }
}

TEST_CASE("unit relevance makes full and type-aware-only wiring identical") {
  const auto fx = small_fixture();
  const auto vocab = build_sample_vocab(fx.samples, TokenMode::Word);
  HeteroQaModel full(tiny(), vocab, 9);
  const HeteroQaModel hgt(tiny(Ablation::NoQuestionAware), vocab, 9);
  full.set_fixed_beta(1.0);
  for (const auto& s : fx.samples) {
    const auto g = build_graph(s);
    const auto prefix = full.frame_answer(s.answer);
    const auto a = full.logits(full.encode_graph(g), prefix).value();
    const auto b = hgt.logits(hgt.encode_graph(g), prefix).value();
    CHECK(bit_equal(a, b));
  }
  full.set_fixed_beta(std::nullopt);
  const auto g = build_graph(fx.samples[0]);
  const auto prefix = full.frame_answer(fx.samples[0].answer);
  CHECK_FALSE(bit_equal(full.logits(full.encode_graph(g), prefix).value(), hgt.logits(hgt.encode_graph(g), prefix).value()));
}

TEST_CASE("optimizer and clipping") {
  nn::ParameterStore store(1);
  store.create("x", 1, 2, nn::Init::Zeros);
  auto& x = store.get("x");
  x.mutable_grad() = Matrix::Zero(1, 2);
  x.mutable_grad()(0, 0) = 0.5;
  x.mutable_grad()(0, 1) = -2.0;
  Adam adam(store);
  adam.step(0.1);
  CHECK(x.value()(0, 0) == doctest::Approx(-0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(x.value()(0, 1) == doctest::Approx(0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));

  x.mutable_grad()(0, 0) = 3.0;
  x.mutable_grad()(0, 1) = 4.0;
  CHECK(clip_grad_norm(store, 1.0) == 5.0);
  CHECK(x.grad()(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(clip_grad_norm(store, 10.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(x.grad()(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("training is deterministic and zero steps change nothing") {
  const auto fx = small_fixture();
  const auto vocab = build_sample_vocab(fx.samples, TokenMode::Word);
  TrainConfig config;
  config.steps = 0;
  HeteroQaModel m0(tiny(), vocab, 1);
  const auto before = snapshot(m0.params());
  CHECK(train(m0, fx.samples, config).empty());
  const auto after = snapshot(m0.params());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bit_equal(before[i], after[i]));

  config.steps = 6;
  config.batch_size = 3;
  config.learning_rate = 0.01;
  HeteroQaModel a(tiny(), vocab, 1);
  HeteroQaModel b(tiny(), vocab, 1);
  const auto la = train(a, fx.samples, config);
  const auto lb = train(b, fx.samples, config);
  REQUIRE(la.size() == 6);
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(la[i].step == static_cast<int>(i) + 1);
    CHECK(std::bit_cast<std::uint64_t>(la[i].loss.total) == std::bit_cast<std::uint64_t>(lb[i].loss.total));
    CHECK(la[i].loss.total == doctest::Approx(la[i].loss.ce + config.psi * la[i].loss.graph).epsilon(1e-14));
  }
  const auto pa = snapshot(a.params());
  const auto pb = snapshot(b.params());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i], pb[i]));

  std::ostringstream csv;
  write_metrics_csv(csv, la);
  CHECK(csv.str().rfind("step,L,L_e,L_q\n1,", 0) == 0);

  config.seed = 99;
  HeteroQaModel c(tiny(), vocab, 1);
  const auto lc = train(c, fx.samples, config);
  bool differs = false;
  for (std::size_t i = 0; i < lc.size(); ++i) differs = differs || lc[i].loss.total != la[i].loss.total;
  CHECK(differs);
}

TEST_CASE("overfitting one sample lowers the loss") {
  const auto fx = small_fixture(1);
  const auto vocab = build_sample_vocab(fx.samples, TokenMode::Word);
  HeteroQaModel model(tiny(), vocab, 2);
  TrainConfig config;
  config.steps = 50;
  config.batch_size = 1;
  config.learning_rate = 0.01;
  const auto log = train(model, fx.samples, config);
  CHECK(log.back().loss.ce < log.front().loss.ce);
  CHECK(log.back().loss.ce < 0.5 * log.front().loss.ce);
}

TEST_CASE("non-finite losses abort with the step") {
  const auto fx = small_fixture(2);
  const auto vocab = build_sample_vocab(fx.samples, TokenMode::Word);
  HeteroQaModel model(tiny(), vocab, 2);
  model.params().get("encoder.tok_emb").mutable_value().setConstant(std::numeric_limits<double>::quiet_NaN());
  TrainConfig config;
  config.steps = 3;
  try {
    train(model, fx.samples, config);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
  CHECK_THROWS_AS(train(model, std::vector<TrainingSample>{}, config), ValidationError);
}

TEST_CASE("gradcheck") {
  nn::ParameterStore toy(4);
  toy.create("w", 3, 2, nn::Init::Normal, 1.0);
  toy.create("b", 1, 2, nn::Init::Normal, 1.0);
  std::mt19937_64 rng(1);
  const Matrix x = heteroqa::testing::random_matrix(rng, 4, 3);
  auto linear = [&] { return ad::sum(ad::add_row(ad::matmul(ad::constant(x), toy.get("w")), toy.get("b"))); };
  const auto exact = gradcheck(linear, toy, 1e-5, 1e-4);
  CHECK(exact.passed());
  CHECK(exact.max_rel_error < 1e-9);

  auto smooth = [&] { return ad::sum(ad::sigmoid(ad::add_row(ad::matmul(ad::constant(x), toy.get("w")), toy.get("b")))); };
  const auto coarse = gradcheck(smooth, toy, 1e-2, 1e-4);
  const auto fine = gradcheck(smooth, toy, 5e-3, 1e-4);
  CHECK(fine.max_rel_error <= coarse.max_rel_error);

  const auto fx = small_fixture(4);
  const auto vocab = build_sample_vocab(fx.samples, TokenMode::Word);
  HeteroQaModel model(tiny(), vocab, 3);
  const auto report = gradcheck(model, fx.samples[0], GraphOptions{}, 1.0, 1e-5, 1e-4);
  INFO(format_gradcheck_report(report));
  CHECK(report.passed());
  CHECK(report.tensors.size() == model.params().size());
  CHECK(format_gradcheck_report(report).find("PASS") != std::string::npos);

  nn::ParameterStore other(5);
  other.create("w", 1, 1, nn::Init::Ones);
  const auto failing = gradcheck(
      [&] {
        // Gradient flows to a parameter the loss value does not depend on.
        return ad::sub(other.get("w"), ad::constant(other.get("w").value()));
      },
      other, 1e-5, 1e-4);
  CHECK_FALSE(failing.passed());
  CHECK(failing.failures == std::vector<std::string>{"w"});
}
