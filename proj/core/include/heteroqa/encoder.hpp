#pragma once

#include <span>
#include <vector>

#include "heteroqa/graph.hpp"
#include "heteroqa/nn.hpp"
#include "heteroqa/textprep.hpp"

namespace heteroqa {

struct EncoderConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 128;
  int max_positions = 128;
};

/// Per-token hidden states with a validity mask (false at PAD positions).
struct SequenceEncoding {
  ad::Var hidden;
  std::vector<bool> mask;
};

using QuestionEncoding = SequenceEncoding;

/// Node representations at one layer: one row per graph node.
struct NodeStates {
  ad::Var matrix;
  int layer = 0;
};

/// Post-norm transformer encoder with learned absolute positions. A single
/// instance encodes the question and every MIS text.
class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::ParameterStore& store, const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }

  /// Throws std::length_error when ids exceed max_positions.
  SequenceEncoding encode(std::span<const TokenId> ids) const;

 private:
  struct Layer {
    nn::MultiHeadAttention self_attn;
    nn::LayerNorm ln_attn;
    nn::FeedForward ffn;
    nn::LayerNorm ln_ffn;
  };

  EncoderConfig config_;
  ad::Var tok_emb_;
  ad::Var pos_emb_;
  nn::LayerNorm ln_emb_;
  std::vector<Layer> layers_;
};

/// Mean over rows whose mask entry is true. Throws when every row is masked.
ad::Var mean_pool(const ad::Var& hidden, const std::vector<bool>& mask);

struct NodeTextOptions {
  TokenMode mode = TokenMode::Word;
  /// Keep the first max_positions tokens instead of failing.
  bool truncate = false;
};

/// Row j = mean-pooled encoding of node j's text. The Question row is pooled
/// from the same encoding returned as the question encoding.
std::pair<NodeStates, QuestionEncoding> init_graph_states(const HeteroGraph& graph, const Encoder& encoder,
                                                          const Vocabulary& vocab, const NodeTextOptions& options);

}  // namespace heteroqa
