#include "heteroqa/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "heteroqa/error.hpp"

namespace heteroqa {

GraphAttnLayers parse_graph_attn_layers(std::string_view name) {
  if (name == "all") return GraphAttnLayers::All;
  if (name == "last") return GraphAttnLayers::Last;
  throw UsageError("unknown graph_attn_layers '" + std::string(name) + "' (expected all|last)");
}

std::string_view to_string(GraphAttnLayers which) { return which == GraphAttnLayers::All ? "all" : "last"; }

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "greedy") return DecodeMode::Greedy;
  if (name == "beam") return DecodeMode::Beam;
  throw UsageError("unknown decode mode '" + std::string(name) + "' (expected greedy|beam)");
}

std::string_view to_string(DecodeMode mode) { return mode == DecodeMode::Greedy ? "greedy" : "beam"; }

Decoder::Decoder(nn::ParameterStore& store, const DecoderConfig& config) : config_(config) {
  if (config.d_model % config.n_heads != 0) throw UsageError("decoder: d_model must be divisible by n_heads");
  tok_emb_ = store.create("decoder.tok_emb", config.vocab_size, config.d_model, nn::Init::Normal);
  pos_emb_ = store.create("decoder.pos_emb", config.max_positions, config.d_model, nn::Init::Normal);
  ln_emb_ = nn::LayerNorm::create(store, "decoder.ln_emb", config.d_model);
  for (int l = 0; l < config.n_layers; ++l) {
    const auto p = "decoder.layer" + std::to_string(l);
    Layer layer{nn::MultiHeadAttention::create(store, p + ".self_attn", config.d_model, config.n_heads),
                nn::LayerNorm::create(store, p + ".ln_self", config.d_model),
                nn::MultiHeadAttention::create(store, p + ".question_attn", config.d_model, config.n_heads),
                std::nullopt,
                nn::LayerNorm::create(store, p + ".ln_cross", config.d_model),
                nn::FeedForward::create(store, p + ".ffn", config.d_model, config.ffn_dim),
                nn::LayerNorm::create(store, p + ".ln_ffn", config.d_model)};
    if (layer_has_graph_attention(l)) {
      layer.graph_attn = nn::MultiHeadAttention::create(store, p + ".graph_attn", config.d_model, config.n_heads);
    }
    layers_.push_back(std::move(layer));
  }
  out_proj_ = nn::Linear::create(store, "decoder.out_proj", config.d_model, config.vocab_size);
}

bool Decoder::layer_has_graph_attention(int layer) const {
  return config_.graph_attn_layers == GraphAttnLayers::All || layer == config_.n_layers - 1;
}

ad::Var Decoder::forward(std::span<const TokenId> prefix, const QuestionEncoding& question,
                         const ad::Var& graph_nodes, std::vector<DecoderLayerTrace>* trace) const {
  if (prefix.empty() || prefix.front() != kBosId) throw std::invalid_argument("decoder: prefix must start with BOS");
  if (prefix.size() > static_cast<std::size_t>(config_.max_positions)) {
    throw std::length_error("decoder: prefix of " + std::to_string(prefix.size()) + " tokens exceeds max_positions " +
                            std::to_string(config_.max_positions));
  }
  const auto n = static_cast<Eigen::Index>(prefix.size());
  std::vector<Eigen::Index> tok(prefix.begin(), prefix.end());
  std::vector<Eigen::Index> pos(prefix.size());
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (prefix[i] < 0 || prefix[i] >= config_.vocab_size) throw std::out_of_range("decoder: token id outside vocabulary");
    pos[i] = static_cast<Eigen::Index>(i);
  }
  const nn::Matrix self_mask = nn::causal_mask(n);
  const nn::Matrix question_mask = nn::key_padding_mask(n, question.mask);
  const bool have_graph = graph_nodes.defined() && graph_nodes.rows() > 0;
  if (trace) trace->clear();

  ad::Var x = ln_emb_(ad::add(ad::gather_rows(tok_emb_, tok), ad::gather_rows(pos_emb_, pos)));
  for (const auto& layer : layers_) {
    const ad::Var ps = layer.ln_self(ad::add(x, layer.self_attn(x, x, &self_mask)));
    const ad::Var pq = layer.question_attn(ps, question.hidden, &question_mask);
    ad::Var pg;
    ad::Var pf = pq;
    if (have_graph && layer.graph_attn) {
      pg = (*layer.graph_attn)(ps, graph_nodes);
      pf = ad::add(pq, pg);
    }
    if (trace) {
      trace->push_back(DecoderLayerTrace{ps.value(), pq.value(),
                                         pg.defined() ? pg.value() : nn::Matrix::Zero(n, config_.d_model), pf.value()});
    }
    const ad::Var h = layer.ln_cross(ad::add(ps, pf));
    x = layer.ln_ffn(ad::add(h, layer.ffn(h)));
  }
  return out_proj_(x);
}

nn::Matrix Decoder::last_log_probs(std::span<const TokenId> prefix, const QuestionEncoding& question,
                                   const ad::Var& graph_nodes) const {
  const ad::Var logits = forward(prefix, question, graph_nodes);
  Eigen::RowVectorXd row = logits.value().row(logits.rows() - 1);
  // PAD and BOS are never emitted.
  row(kPadId) = -std::numeric_limits<double>::infinity();
  row(kBosId) = -std::numeric_limits<double>::infinity();
  const double m = row.maxCoeff();
  const double lse = m + std::log((row.array() - m).exp().sum());
  return (row.array() - lse).matrix();
}

std::vector<TokenId> Decoder::generate(const QuestionEncoding& question, const ad::Var& graph_nodes,
                                       const GenerationConfig& config) const {
  if (config.beam_width < 1) throw UsageError("beam width must be >= 1");
  if (config.max_len < 1) throw UsageError("max_len must be >= 1");
  ad::NoGradGuard no_grad;
  if (config.mode == DecodeMode::Greedy) return greedy(question, graph_nodes, config.max_len);
  return beam(question, graph_nodes, config);
}

std::vector<TokenId> Decoder::greedy(const QuestionEncoding& question, const ad::Var& graph_nodes, int max_len) const {
  std::vector<TokenId> prefix{kBosId};
  const int limit = std::min(max_len, config_.max_positions - 1);
  for (int step = 0; step < limit; ++step) {
    const nn::Matrix lp = last_log_probs(prefix, question, graph_nodes);
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < lp.cols(); ++v)
      if (lp(0, v) > lp(0, best)) best = v;
    if (best == kEosId) break;
    prefix.push_back(static_cast<TokenId>(best));
  }
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<TokenId> Decoder::beam(const QuestionEncoding& question, const ad::Var& graph_nodes,
                                   const GenerationConfig& config) const {
  struct Hyp {
    std::vector<TokenId> tokens;  // generated tokens, EOS included when finished
    double log_prob = 0.0;
    bool finished = false;
  };
  auto normalized = [&](const Hyp& h) {
    const double len = std::max<std::size_t>(h.tokens.size(), 1);
    return h.log_prob / std::pow(len, config.length_penalty);
  };
  auto better = [&](const Hyp& a, const Hyp& b) {
    const double sa = normalized(a);
    const double sb = normalized(b);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  };

  const auto width = static_cast<std::size_t>(config.beam_width);
  const int limit = std::min(config.max_len, config_.max_positions - 1);
  std::vector<Hyp> beams{Hyp{}};
  for (int step = 0; step < limit; ++step) {
    std::vector<Hyp> candidates;
    for (const auto& hyp : beams) {
      if (hyp.finished) {
        candidates.push_back(hyp);
        continue;
      }
      std::vector<TokenId> prefix{kBosId};
      prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());
      const nn::Matrix lp = last_log_probs(prefix, question, graph_nodes);
      std::vector<Eigen::Index> order(static_cast<std::size_t>(lp.cols()));
      for (std::size_t v = 0; v < order.size(); ++v) order[v] = static_cast<Eigen::Index>(v);
      const auto keep = std::min(width, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](Eigen::Index a, Eigen::Index b) {
                          if (lp(0, a) != lp(0, b)) return lp(0, a) > lp(0, b);
                          return a < b;
                        });
      for (std::size_t i = 0; i < keep; ++i) {
        const auto v = order[i];
        if (!std::isfinite(lp(0, v))) continue;
        Hyp next = hyp;
        next.tokens.push_back(static_cast<TokenId>(v));
        next.log_prob += lp(0, v);
        next.finished = v == kEosId;
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);
    if (candidates.size() > width) candidates.resize(width);
    beams = std::move(candidates);
    if (std::all_of(beams.begin(), beams.end(), [](const Hyp& h) { return h.finished; })) break;
  }
  auto best = *std::min_element(beams.begin(), beams.end(), better);
  if (best.finished) best.tokens.pop_back();
  return best.tokens;
}

}  // namespace heteroqa
