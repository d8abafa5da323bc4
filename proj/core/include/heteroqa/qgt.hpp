#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heteroqa/encoder.hpp"
#include "heteroqa/graph.hpp"
#include "heteroqa/nn.hpp"

namespace heteroqa {

enum class BetaMode { Raw, Sigmoid };

BetaMode parse_beta_mode(std::string_view name);
std::string_view to_string(BetaMode mode);

struct QgtConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  BetaMode beta_mode = BetaMode::Raw;
  /// Output maps start at zero so every layer begins as the identity.
  bool zero_init_output = true;
};

struct QgtOptions {
  /// false gives the plain heterogeneous graph transformer (rescaled = raw attention).
  bool question_aware = true;
  /// Replaces every relevance score with this constant when set.
  std::optional<double> fixed_beta;
};

/// Type-specific parameters of one layer. Attention matrices are stored as
/// n_heads stacked (d/h x d/h) blocks.
struct QgtLayerParams {
  int n_heads = 1;
  std::array<nn::Linear, kNumNodeTypes> k_proj;
  std::array<nn::Linear, kNumNodeTypes> v_proj;
  std::array<nn::Linear, kNumNodeTypes> msg_proj;
  std::array<nn::Linear, kNumNodeTypes> out_proj;
  std::array<ad::Var, kNumEdgeTypes> attn_w;
  std::array<ad::Var, kNumEdgeTypes> msg_w;
  ad::Var w_r;
  BetaMode beta_mode = BetaMode::Raw;

  static QgtLayerParams create(nn::ParameterStore& store, const std::string& prefix, const QgtConfig& config);
  int d_model() const { return static_cast<int>(w_r.rows()); }
  int head_dim() const { return d_model() / n_heads; }
};

/// Attention for one incoming edge of a target.
struct EdgeAttention {
  NodeId source = 0;
  EdgeType type = EdgeType::ArticleToQuestion;
  std::vector<double> alpha;      // per head, softmax-normalized over N(t)
  std::vector<double> alpha_hat;  // per head, alpha * beta(source)
  double beta = 0.0;
};

/// Entries[t] lists t's incoming edges (empty for isolated targets).
struct AttentionMap {
  std::vector<std::vector<EdgeAttention>> entries;
};

struct QgtTrace {
  AttentionMap attention;
  std::vector<double> beta;
};

/// Raw attention of every incoming edge (alpha_hat left equal to alpha * beta).
AttentionMap attention_scores(const HeteroGraph& graph, const nn::Matrix& states, const QgtLayerParams& params,
                              const QgtOptions& options = {});

/// beta(s) = D[q] W_r D[s]^T for every node s (sigmoid applied in Sigmoid mode).
std::vector<double> question_relevance(const HeteroGraph& graph, const nn::Matrix& states,
                                       const QgtLayerParams& params);

/// M(s, e, t) = msg_proj[type(s)](D[s]) * W_msg[e], one row per edge in graph edge order.
nn::Matrix messages(const HeteroGraph& graph, const nn::Matrix& states, const QgtLayerParams& params);

/// One layer: D_hat[t] = gelu(out_proj[type(t)](sum alpha_hat * M)) + D[t];
/// targets with no in-edges are copied.
ad::Var aggregate_update(const HeteroGraph& graph, const ad::Var& states, const QgtLayerParams& params,
                         const QgtOptions& options = {}, QgtTrace* trace = nullptr);

NodeStates qgt_forward(const HeteroGraph& graph, const NodeStates& initial, std::span<const QgtLayerParams> layers,
                       const QgtOptions& options = {}, std::vector<QgtTrace>* traces = nullptr);

/// Scalar regression head over node representations.
struct ScoreHead {
  nn::Linear linear;

  static ScoreHead create(nn::ParameterStore& store, const std::string& prefix, int d_model);
  /// n x 1 predicted retrieval score per node.
  ad::Var operator()(const ad::Var& states) const { return linear(states); }
};

ad::Var predict_node_scores(const ad::Var& states, const ScoreHead& head);

/// Single-head attention layer that ignores node and edge types.
struct GatLayerParams {
  ad::Var w;  // d x d
  ad::Var a;  // 1 x 2d, [source half | target half]
  double negative_slope = 0.2;

  static GatLayerParams create(nn::ParameterStore& store, const std::string& prefix, int d_model);
};

/// e(s,t) = LeakyReLU(a . [D[s] W || D[t] W]), softmax over N(t),
/// D_hat[t] = gelu(sum alpha * D[s] W) + D[t].
ad::Var gat_update(const HeteroGraph& graph, const ad::Var& states, const GatLayerParams& params);

}  // namespace heteroqa
