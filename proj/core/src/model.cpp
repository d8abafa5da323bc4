#include "heteroqa/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "heteroqa/error.hpp"

namespace heteroqa {

Ablation parse_ablation(std::string_view name) {
  if (name == "full") return Ablation::Full;
  if (name == "hgt") return Ablation::NoQuestionAware;
  if (name == "no_graph_loss") return Ablation::NoGraphLoss;
  if (name == "gat") return Ablation::HomogeneousGat;
  throw UsageError("unknown ablation '" + std::string(name) + "' (expected full|hgt|no_graph_loss|gat)");
}

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::Full: return "full";
    case Ablation::NoQuestionAware: return "hgt";
    case Ablation::NoGraphLoss: return "no_graph_loss";
    case Ablation::HomogeneousGat: return "gat";
  }
  return "?";
}

ad::Var ce_loss(const ad::Var& logits, std::span<const TokenId> targets, TokenId pad_id) {
  std::vector<int> t(targets.begin(), targets.end());
  return ad::cross_entropy(logits, t, pad_id);
}

ad::Var graph_loss(const ad::Var& predicted, const HeteroGraph& graph, bool normalize_targets) {
  std::vector<Eigen::Index> rows;
  std::vector<double> targets;
  for (NodeId i = 0; i < graph.node_count(); ++i) {
    const auto& node = graph.node(i);
    if (!carries_retrieval_score(node.type) || !node.score) continue;
    rows.push_back(static_cast<Eigen::Index>(i));
    targets.push_back(*node.score);
  }
  if (normalize_targets && !targets.empty()) {
    const double peak = *std::max_element(targets.begin(), targets.end());
    if (peak > 0.0)
      for (auto& t : targets) t /= peak;
  }
  return ad::mse_rows(predicted, rows, targets);
}

ad::Var total_loss(const ad::Var& ce, const ad::Var& graph, double psi) {
  return ad::add(ce, ad::scale(graph, psi));
}

LossBreakdown total_loss(double ce, double graph, double psi) { return {ce + psi * graph, ce, graph, psi}; }

HeteroQaModel::HeteroQaModel(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), params_(seed, config.init_std) {
  const int v = static_cast<int>(vocab_.size());
  encoder_ = Encoder(params_, EncoderConfig{v, config.d_model, config.encoder_layers, config.encoder_heads,
                                            config.encoder_ffn, config.encoder_max_positions});
  if (config.qgt_layers < 1) throw UsageError("qgt.layers must be >= 1");
  for (int l = 0; l < config.qgt_layers; ++l) {
    const auto prefix = "qgt.layer" + std::to_string(l);
    if (config.ablation == Ablation::HomogeneousGat) {
      gat_layers_.push_back(GatLayerParams::create(params_, prefix + ".gat", config.d_model));
    } else {
      qgt_layers_.push_back(QgtLayerParams::create(
          params_, prefix, QgtConfig{config.d_model, config.qgt_layers, config.qgt_heads, config.beta_mode,
                                     config.qgt_zero_init_output}));
    }
  }
  score_head_ = ScoreHead::create(params_, "heads.score", config.d_model);
  decoder_ = Decoder(params_, DecoderConfig{v, config.d_model, config.decoder_layers, config.decoder_heads,
                                            config.decoder_ffn, config.decoder_max_positions,
                                            config.graph_attn_layers});
}

QgtOptions HeteroQaModel::qgt_options() const {
  QgtOptions o;
  o.question_aware = config_.ablation != Ablation::NoQuestionAware;
  o.fixed_beta = fixed_beta_;
  return o;
}

HeteroQaModel::GraphEncoding HeteroQaModel::encode_graph(const HeteroGraph& graph,
                                                        std::vector<QgtTrace>* traces) const {
  auto [initial, question] =
      init_graph_states(graph, encoder_, vocab_, NodeTextOptions{config_.token_mode, config_.truncate_texts});
  NodeStates final_states;
  if (config_.ablation == Ablation::HomogeneousGat) {
    final_states = initial;
    for (const auto& layer : gat_layers_)
      final_states = NodeStates{gat_update(graph, final_states.matrix, layer), final_states.layer + 1};
  } else {
    final_states = qgt_forward(graph, initial, qgt_layers_, qgt_options(), traces);
  }
  std::vector<Eigen::Index> mis;
  for (auto id : graph.mis_nodes()) mis.push_back(static_cast<Eigen::Index>(id));
  ad::Var mis_nodes = mis.empty() ? ad::constant(nn::Matrix(0, config_.d_model))
                                  : ad::gather_rows(final_states.matrix, mis);
  ad::Var scores = predict_node_scores(final_states.matrix, score_head_);
  return {std::move(question), std::move(initial), std::move(final_states), std::move(mis_nodes), std::move(scores)};
}

std::vector<TokenId> HeteroQaModel::frame_answer(std::string_view answer) const {
  auto ids = encode_ids(tokenize(answer, config_.token_mode), vocab_, true);
  const auto limit = static_cast<std::size_t>(config_.decoder_max_positions) + 1;
  if (ids.size() > limit) {
    if (!config_.truncate_texts) {
      throw ValidationError("answer of " + std::to_string(ids.size() - 2) + " tokens exceeds decoder max_positions");
    }
    ids.resize(limit);
    ids.back() = kEosId;
  }
  return ids;
}

ad::Var HeteroQaModel::logits(const GraphEncoding& encoding, std::span<const TokenId> prefix,
                              std::vector<DecoderLayerTrace>* trace) const {
  return decoder_.forward(prefix, encoding.question, encoding.mis_nodes, trace);
}

HeteroQaModel::SampleLoss HeteroQaModel::loss(const HeteroGraph& graph, std::span<const TokenId> framed_answer,
                                              double psi, bool normalize_scores) const {
  if (framed_answer.size() < 2) throw ValidationError("framed answer needs at least BOS and EOS");
  const auto enc = encode_graph(graph);
  const auto inputs = framed_answer.first(framed_answer.size() - 1);
  const auto targets = framed_answer.subspan(1);
  const ad::Var ce = ce_loss(logits(enc, inputs), targets);
  const ad::Var gl = graph_loss(enc.scores, graph, normalize_scores);
  const double effective_psi = config_.ablation == Ablation::NoGraphLoss ? 0.0 : psi;
  const ad::Var total = total_loss(ce, gl, effective_psi);
  return {total, ce, gl, LossBreakdown{total.scalar(), ce.scalar(), gl.scalar(), effective_psi}};
}

std::vector<TokenId> HeteroQaModel::generate(const HeteroGraph& graph, const GenerationConfig& config) const {
  ad::NoGradGuard no_grad;
  const auto enc = encode_graph(graph);
  return decoder_.generate(enc.question, enc.mis_nodes, config);
}

std::string HeteroQaModel::generate_text(const HeteroGraph& graph, const GenerationConfig& config) const {
  const auto ids = generate(graph, config);
  return detokenize(decode_ids(ids, vocab_, config_.token_mode));
}

}  // namespace heteroqa
