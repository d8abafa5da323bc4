#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heteroqa/decoder.hpp"
#include "heteroqa/encoder.hpp"
#include "heteroqa/graph.hpp"
#include "heteroqa/nn.hpp"
#include "heteroqa/qgt.hpp"
#include "heteroqa/textprep.hpp"

namespace heteroqa {

/// Graph-layer wiring variants.
enum class Ablation {
  Full,
  /// Heterogeneous graph transformer: attention is not rescaled by relevance.
  NoQuestionAware,
  /// Retrieval-score loss weight forced to zero.
  NoGraphLoss,
  /// Type-blind GAT layers replace the QGT.
  HomogeneousGat,
};

Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation ablation);

struct ModelConfig {
  int d_model = 64;
  int encoder_layers = 2;
  int encoder_heads = 4;
  int encoder_ffn = 128;
  int encoder_max_positions = 128;
  int qgt_layers = 2;
  int qgt_heads = 2;
  BetaMode beta_mode = BetaMode::Raw;
  bool qgt_zero_init_output = true;
  int decoder_layers = 2;
  int decoder_heads = 4;
  int decoder_ffn = 128;
  int decoder_max_positions = 128;
  GraphAttnLayers graph_attn_layers = GraphAttnLayers::All;
  Ablation ablation = Ablation::Full;
  TokenMode token_mode = TokenMode::Word;
  /// Head-truncate over-long node texts instead of rejecting them.
  bool truncate_texts = false;
  double init_std = 0.02;
};

struct LossBreakdown {
  double total = 0.0;  // L = L_e + psi * L_q
  double ce = 0.0;     // L_e
  double graph = 0.0;  // L_q
  double psi = 0.0;
};

/// Mean token cross-entropy over non-PAD targets.
ad::Var ce_loss(const ad::Var& logits, std::span<const TokenId> targets, TokenId pad_id = kPadId);

/// Mean squared error between predicted and retrieval scores over the scored
/// (Article, RelatedQuestion) nodes; zero when there are none.
ad::Var graph_loss(const ad::Var& predicted, const HeteroGraph& graph, bool normalize_targets = false);

/// L = L_e + psi * L_q.
ad::Var total_loss(const ad::Var& ce, const ad::Var& graph, double psi);
LossBreakdown total_loss(double ce, double graph, double psi);

/// Encoder + graph layers + fusion decoder + score head over one parameter store.
class HeteroQaModel {
 public:
  HeteroQaModel(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }
  std::span<const QgtLayerParams> qgt_layers() const { return qgt_layers_; }
  std::span<const GatLayerParams> gat_layers() const { return gat_layers_; }
  const ScoreHead& score_head() const { return score_head_; }

  /// Graph-layer options derived from the ablation; fixed_beta is a test hook.
  QgtOptions qgt_options() const;
  void set_fixed_beta(std::optional<double> beta) { fixed_beta_ = beta; }

  struct GraphEncoding {
    QuestionEncoding question;
    NodeStates initial;
    NodeStates final;
    /// Final states of MIS nodes only (Question row removed).
    ad::Var mis_nodes;
    /// n x 1 predicted retrieval scores for all nodes.
    ad::Var scores;
  };

  GraphEncoding encode_graph(const HeteroGraph& graph, std::vector<QgtTrace>* traces = nullptr) const;

  /// [BOS] + answer ids + [EOS], validated against decoder max_positions.
  std::vector<TokenId> frame_answer(std::string_view answer) const;

  ad::Var logits(const GraphEncoding& encoding, std::span<const TokenId> prefix,
                 std::vector<DecoderLayerTrace>* trace = nullptr) const;

  struct SampleLoss {
    ad::Var total;
    ad::Var ce;
    ad::Var graph;
    LossBreakdown values;
  };

  /// Teacher-forced loss on one (graph, framed answer) pair.
  SampleLoss loss(const HeteroGraph& graph, std::span<const TokenId> framed_answer, double psi,
                  bool normalize_scores = false) const;

  std::vector<TokenId> generate(const HeteroGraph& graph, const GenerationConfig& config) const;
  std::string generate_text(const HeteroGraph& graph, const GenerationConfig& config) const;

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  nn::ParameterStore params_;
  Encoder encoder_;
  std::vector<QgtLayerParams> qgt_layers_;
  std::vector<GatLayerParams> gat_layers_;
  ScoreHead score_head_;
  Decoder decoder_;
  std::optional<double> fixed_beta_;
};

}  // namespace heteroqa
