#include "heteroqa/encoder.hpp"

#include <map>
#include <stdexcept>

#include "heteroqa/error.hpp"

namespace heteroqa {

Encoder::Encoder(nn::ParameterStore& store, const EncoderConfig& config) : config_(config) {
  if (config.d_model % config.n_heads != 0) throw UsageError("encoder: d_model must be divisible by n_heads");
  tok_emb_ = store.create("encoder.tok_emb", config.vocab_size, config.d_model, nn::Init::Normal);
  pos_emb_ = store.create("encoder.pos_emb", config.max_positions, config.d_model, nn::Init::Normal);
  ln_emb_ = nn::LayerNorm::create(store, "encoder.ln_emb", config.d_model);
  for (int l = 0; l < config.n_layers; ++l) {
    const auto p = "encoder.layer" + std::to_string(l);
    layers_.push_back(Layer{nn::MultiHeadAttention::create(store, p + ".self_attn", config.d_model, config.n_heads),
                            nn::LayerNorm::create(store, p + ".ln_attn", config.d_model),
                            nn::FeedForward::create(store, p + ".ffn", config.d_model, config.ffn_dim),
                            nn::LayerNorm::create(store, p + ".ln_ffn", config.d_model)});
  }
}

SequenceEncoding Encoder::encode(std::span<const TokenId> ids) const {
  if (ids.empty()) throw std::invalid_argument("encoder: empty input sequence");
  if (ids.size() > static_cast<std::size_t>(config_.max_positions)) {
    throw std::length_error("encoder: sequence of " + std::to_string(ids.size()) + " tokens exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  std::vector<Eigen::Index> tok(ids.begin(), ids.end());
  std::vector<Eigen::Index> pos(ids.size());
  std::vector<bool> mask(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= config_.vocab_size) throw std::out_of_range("encoder: token id outside vocabulary");
    pos[i] = static_cast<Eigen::Index>(i);
    mask[i] = ids[i] != kPadId;
  }
  const auto n = static_cast<Eigen::Index>(ids.size());
  ad::Var x = ln_emb_(ad::add(ad::gather_rows(tok_emb_, tok), ad::gather_rows(pos_emb_, pos)));
  const nn::Matrix attn_mask = nn::key_padding_mask(n, mask);
  for (const auto& layer : layers_) {
    x = layer.ln_attn(ad::add(x, layer.self_attn(x, x, &attn_mask)));
    x = layer.ln_ffn(ad::add(x, layer.ffn(x)));
  }
  return {x, std::move(mask)};
}

ad::Var mean_pool(const ad::Var& hidden, const std::vector<bool>& mask) {
  return ad::masked_mean_rows(hidden, mask);
}

std::pair<NodeStates, QuestionEncoding> init_graph_states(const HeteroGraph& graph, const Encoder& encoder,
                                                          const Vocabulary& vocab, const NodeTextOptions& options) {
  const auto limit = static_cast<std::size_t>(encoder.config().max_positions);
  std::vector<ad::Var> rows;
  rows.reserve(graph.node_count());
  QuestionEncoding question;
  for (NodeId id = 0; id < graph.node_count(); ++id) {
    const auto& node = graph.node(id);
    auto ids = encode_ids(tokenize(node.text, options.mode), vocab, false);
    if (ids.empty()) throw ValidationError("node " + node.key + ": text has no tokens");
    if (ids.size() > limit) {
      if (!options.truncate) {
        throw ValidationError("node " + node.key + ": " + std::to_string(ids.size()) +
                              " tokens exceed max_positions " + std::to_string(limit));
      }
      ids.resize(limit);
    }
    auto enc = encoder.encode(ids);
    rows.push_back(mean_pool(enc.hidden, enc.mask));
    if (node.type == NodeType::Question) question = std::move(enc);
  }
  if (!question.hidden.defined()) throw ValidationError("graph has no Question node");
  return {NodeStates{ad::concat_rows(rows), 0}, std::move(question)};
}

}  // namespace heteroqa
