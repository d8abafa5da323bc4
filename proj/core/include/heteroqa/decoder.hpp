#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "heteroqa/encoder.hpp"
#include "heteroqa/nn.hpp"
#include "heteroqa/textprep.hpp"

namespace heteroqa {

enum class GraphAttnLayers { All, Last };

GraphAttnLayers parse_graph_attn_layers(std::string_view name);
std::string_view to_string(GraphAttnLayers which);

struct DecoderConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 128;
  int max_positions = 128;
  GraphAttnLayers graph_attn_layers = GraphAttnLayers::All;
};

/// Per-layer intermediate states (positions x d_model).
struct DecoderLayerTrace {
  nn::Matrix self_out;   // p^s
  nn::Matrix question;   // p^q
  nn::Matrix graph;      // p^g
  nn::Matrix fused;      // p^f = p^q + p^g
};

enum class DecodeMode { Greedy, Beam };

DecodeMode parse_decode_mode(std::string_view name);
std::string_view to_string(DecodeMode mode);

struct GenerationConfig {
  DecodeMode mode = DecodeMode::Greedy;
  int beam_width = 4;
  int max_len = 64;
  double length_penalty = 1.0;
};

/// Transformer decoder whose layers run question cross-attention and graph
/// attention in parallel off the self-attention output and sum them.
class Decoder {
 public:
  Decoder() = default;
  Decoder(nn::ParameterStore& store, const DecoderConfig& config);

  const DecoderConfig& config() const { return config_; }
  bool layer_has_graph_attention(int layer) const;

  /// prefix must start with BOS. graph_nodes holds MIS node rows only and may
  /// have zero rows, in which case p^g is zero.
  ad::Var forward(std::span<const TokenId> prefix, const QuestionEncoding& question, const ad::Var& graph_nodes,
                  std::vector<DecoderLayerTrace>* trace = nullptr) const;

  /// Token ids after BOS, without the final EOS.
  std::vector<TokenId> generate(const QuestionEncoding& question, const ad::Var& graph_nodes,
                                const GenerationConfig& config) const;

 private:
  struct Layer {
    nn::MultiHeadAttention self_attn;
    nn::LayerNorm ln_self;
    nn::MultiHeadAttention question_attn;
    std::optional<nn::MultiHeadAttention> graph_attn;
    nn::LayerNorm ln_cross;
    nn::FeedForward ffn;
    nn::LayerNorm ln_ffn;
  };

  std::vector<TokenId> greedy(const QuestionEncoding& question, const ad::Var& graph_nodes, int max_len) const;
  std::vector<TokenId> beam(const QuestionEncoding& question, const ad::Var& graph_nodes,
                            const GenerationConfig& config) const;
  nn::Matrix last_log_probs(std::span<const TokenId> prefix, const QuestionEncoding& question,
                            const ad::Var& graph_nodes) const;

  DecoderConfig config_;
  ad::Var tok_emb_;
  ad::Var pos_emb_;
  nn::LayerNorm ln_emb_;
  std::vector<Layer> layers_;
  nn::Linear out_proj_;
};

}  // namespace heteroqa
