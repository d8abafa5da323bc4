#include <benchmark/benchmark.h>

#include <random>

#include "heteroqa/dataset.hpp"
#include "heteroqa/model.hpp"
#include "heteroqa/retrieval.hpp"

using namespace heteroqa;

namespace {

std::string random_text(std::mt19937_64& rng, int words, int pool) {
  std::uniform_int_distribution<int> pick(0, pool - 1);
  std::string out;
  for (int i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += "w" + std::to_string(pick(rng));
  }
  return out;
}

void BM_Bm25Retrieve(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::vector<DocRecord> docs;
  for (int i = 0; i < state.range(0); ++i) docs.push_back(DocRecord{"d" + std::to_string(i), random_text(rng, 40, 5000), {}, {}});
  const auto index = Bm25Index::build(std::move(docs), TokenMode::Word);
  const auto query = tokenize(random_text(rng, 8, 5000), TokenMode::Word);
  for (auto _ : state) benchmark::DoNotOptimize(index.retrieve(query, 10));
}
BENCHMARK(BM_Bm25Retrieve)->Arg(1000)->Arg(10000);

struct ModelFixture {
  Fixture fx = make_fixture(FixtureOptions{});
  ModelConfig config = [] {
    ModelConfig c;
    c.d_model = 64;
    c.encoder_layers = 2;
    c.qgt_layers = 2;
    c.decoder_layers = 2;
    return c;
  }();
  HeteroQaModel model{config, build_sample_vocab(fx.samples, TokenMode::Word), 3};
  HeteroGraph graph = build_graph(fx.samples[0]);
};

void BM_EncodeGraph(benchmark::State& state) {
  ModelFixture f;
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(f.model.encode_graph(f.graph).final.matrix.value());
}
BENCHMARK(BM_EncodeGraph);

void BM_TrainingLoss(benchmark::State& state) {
  ModelFixture f;
  const auto framed = f.model.frame_answer(f.fx.samples[0].answer);
  for (auto _ : state) {
    auto loss = f.model.loss(f.graph, framed, 1.0);
    ad::backward(loss.total);
    f.model.params().zero_grad();
  }
}
BENCHMARK(BM_TrainingLoss);

void BM_GreedyGenerate(benchmark::State& state) {
  ModelFixture f;
  GenerationConfig gen;
  gen.max_len = 16;
  for (auto _ : state) benchmark::DoNotOptimize(f.model.generate(f.graph, gen));
}
BENCHMARK(BM_GreedyGenerate);

}  // namespace

BENCHMARK_MAIN();
