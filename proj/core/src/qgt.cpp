#include "heteroqa/qgt.hpp"

#include <cmath>
#include <stdexcept>

#include "heteroqa/error.hpp"

namespace heteroqa {
namespace {

std::size_t idx(NodeType t) { return static_cast<std::size_t>(t); }
std::size_t idx(EdgeType e) { return static_cast<std::size_t>(e); }

ad::Var row_of(const ad::Var& m, NodeId i) { return ad::slice_rows(m, static_cast<Eigen::Index>(i), 1); }

ad::Var relevance_column(const HeteroGraph& graph, const ad::Var& states, const QgtLayerParams& params) {
  const ad::Var dq = row_of(states, graph.question());
  ad::Var beta = ad::matmul_nt(states, ad::matmul(dq, params.w_r));
  if (params.beta_mode == BetaMode::Sigmoid) beta = ad::sigmoid(beta);
  return beta;
}

void check_finite(const ad::Var& v, const GraphNode& node) {
  if (!v.value().allFinite()) throw NumericalError("non-finite QGT state at node " + node.key);
}

}  // namespace

BetaMode parse_beta_mode(std::string_view name) {
  if (name == "raw") return BetaMode::Raw;
  if (name == "sigmoid") return BetaMode::Sigmoid;
  throw UsageError("unknown beta mode '" + std::string(name) + "' (expected raw|sigmoid)");
}

std::string_view to_string(BetaMode mode) { return mode == BetaMode::Raw ? "raw" : "sigmoid"; }

QgtLayerParams QgtLayerParams::create(nn::ParameterStore& store, const std::string& prefix, const QgtConfig& config) {
  if (config.n_heads < 1 || config.d_model % config.n_heads != 0) {
    throw UsageError("qgt: d_model must be divisible by n_heads");
  }
  const int d = config.d_model;
  const int dh = d / config.n_heads;
  QgtLayerParams p;
  p.n_heads = config.n_heads;
  p.beta_mode = config.beta_mode;
  const auto out_init = config.zero_init_output ? nn::Init::Zeros : nn::Init::Normal;
  for (auto t : kAllNodeTypes) {
    const auto name = std::string(to_string(t));
    p.k_proj[idx(t)] = nn::Linear::create(store, prefix + ".k_proj." + name, d, d);
    p.v_proj[idx(t)] = nn::Linear::create(store, prefix + ".v_proj." + name, d, d);
    p.msg_proj[idx(t)] = nn::Linear::create(store, prefix + ".msg_proj." + name, d, d);
    p.out_proj[idx(t)] = nn::Linear::create(store, prefix + ".out_proj." + name, d, d, out_init);
  }
  for (auto e : kAllEdgeTypes) {
    const auto name = std::string(to_string(e));
    p.attn_w[idx(e)] = store.create(prefix + ".attn_w." + name, d, dh, nn::Init::Normal);
    p.msg_w[idx(e)] = store.create(prefix + ".msg_w." + name, d, d, nn::Init::Normal);
  }
  p.w_r = store.create(prefix + ".w_r", d, d, nn::Init::Normal);
  return p;
}

ad::Var aggregate_update(const HeteroGraph& graph, const ad::Var& states, const QgtLayerParams& params,
                         const QgtOptions& options, QgtTrace* trace) {
  const auto n = graph.node_count();
  if (static_cast<std::size_t>(states.rows()) != n) throw std::invalid_argument("qgt: one state row per node");
  const int heads = params.n_heads;
  const Eigen::Index dh = params.head_dim();
  const double temperature = 1.0 / std::sqrt(static_cast<double>(dh));

  ad::Var beta;
  if (options.fixed_beta) {
    beta = ad::constant(nn::Matrix::Constant(static_cast<Eigen::Index>(n), 1, *options.fixed_beta));
  } else {
    beta = relevance_column(graph, states, params);
  }
  if (trace) {
    trace->attention.entries.assign(n, {});
    trace->beta.assign(beta.value().data(), beta.value().data() + n);
  }

  // Source-side projections are shared by every out-edge of a node.
  std::vector<ad::Var> value_cache(n);
  std::vector<ad::Var> msg_cache(n);
  auto value_of = [&](NodeId s) -> const ad::Var& {
    if (!value_cache[s].defined()) value_cache[s] = params.v_proj[idx(graph.node(s).type)](row_of(states, s));
    return value_cache[s];
  };
  auto msg_of = [&](NodeId s) -> const ad::Var& {
    if (!msg_cache[s].defined()) msg_cache[s] = params.msg_proj[idx(graph.node(s).type)](row_of(states, s));
    return msg_cache[s];
  };

  std::vector<ad::Var> rows;
  rows.reserve(n);
  for (NodeId t = 0; t < n; ++t) {
    const ad::Var current = row_of(states, t);
    const auto incoming = graph.neighbors(t);
    if (incoming.empty()) {
      rows.push_back(current);
      continue;
    }
    const auto& target = graph.node(t);
    const ad::Var key = params.k_proj[idx(target.type)](current);

    std::vector<ad::Var> msgs;
    std::vector<Eigen::Index> sources;
    msgs.reserve(incoming.size());
    for (const auto& nb : incoming) {
      msgs.push_back(ad::matmul(msg_of(nb.source), params.msg_w[idx(nb.type)]));
      sources.push_back(static_cast<Eigen::Index>(nb.source));
    }
    const ad::Var msg_stack = ad::concat_rows(msgs);

    ad::Var beta_row;
    if (options.question_aware) beta_row = ad::transpose(ad::gather_rows(beta, sources));

    std::vector<ad::Var> head_out;
    std::vector<ad::Var> alphas;
    std::vector<ad::Var> alpha_hats;
    for (int h = 0; h < heads; ++h) {
      const ad::Var key_h = ad::slice_cols(key, h * dh, dh);
      std::vector<ad::Var> scores;
      scores.reserve(incoming.size());
      for (const auto& nb : incoming) {
        const ad::Var w_h = ad::slice_rows(params.attn_w[idx(nb.type)], h * dh, dh);
        const ad::Var val_h = ad::slice_cols(value_of(nb.source), h * dh, dh);
        scores.push_back(ad::matmul_nt(ad::matmul(key_h, w_h), val_h));
      }
      const ad::Var alpha = ad::softmax_rows(ad::scale(ad::concat_cols(scores), temperature));
      const ad::Var alpha_hat = options.question_aware ? ad::mul(alpha, beta_row) : alpha;
      head_out.push_back(ad::matmul(alpha_hat, ad::slice_cols(msg_stack, h * dh, dh)));
      alphas.push_back(alpha);
      alpha_hats.push_back(alpha_hat);
    }
    const ad::Var aggregated = heads == 1 ? head_out.front() : ad::concat_cols(head_out);
    const ad::Var updated = ad::add(ad::gelu(params.out_proj[idx(target.type)](aggregated)), current);
    check_finite(updated, target);
    rows.push_back(updated);

    if (trace) {
      auto& entry = trace->attention.entries[t];
      for (std::size_t i = 0; i < incoming.size(); ++i) {
        EdgeAttention ea;
        ea.source = incoming[i].source;
        ea.type = incoming[i].type;
        ea.beta = beta.value()(sources[i], 0);
        for (int h = 0; h < heads; ++h) {
          ea.alpha.push_back(alphas[static_cast<std::size_t>(h)].value()(0, static_cast<Eigen::Index>(i)));
          ea.alpha_hat.push_back(alpha_hats[static_cast<std::size_t>(h)].value()(0, static_cast<Eigen::Index>(i)));
        }
        entry.push_back(std::move(ea));
      }
    }
  }
  return ad::concat_rows(rows);
}

AttentionMap attention_scores(const HeteroGraph& graph, const nn::Matrix& states, const QgtLayerParams& params,
                              const QgtOptions& options) {
  ad::NoGradGuard no_grad;
  QgtTrace trace;
  aggregate_update(graph, ad::constant(states), params, options, &trace);
  return std::move(trace.attention);
}

std::vector<double> question_relevance(const HeteroGraph& graph, const nn::Matrix& states,
                                       const QgtLayerParams& params) {
  ad::NoGradGuard no_grad;
  const auto beta = relevance_column(graph, ad::constant(states), params);
  return {beta.value().data(), beta.value().data() + beta.rows()};
}

nn::Matrix messages(const HeteroGraph& graph, const nn::Matrix& states, const QgtLayerParams& params) {
  ad::NoGradGuard no_grad;
  const auto d = states.cols();
  nn::Matrix out(static_cast<Eigen::Index>(graph.edge_count()), d);
  const auto st = ad::constant(states);
  for (std::size_t i = 0; i < graph.edge_count(); ++i) {
    const auto& e = graph.edges()[i];
    const auto base = params.msg_proj[idx(graph.node(e.source).type)](row_of(st, e.source));
    out.row(static_cast<Eigen::Index>(i)) = ad::matmul(base, params.msg_w[idx(e.type)]).value().row(0);
  }
  return out;
}

NodeStates qgt_forward(const HeteroGraph& graph, const NodeStates& initial, std::span<const QgtLayerParams> layers,
                       const QgtOptions& options, std::vector<QgtTrace>* traces) {
  if (layers.empty()) throw UsageError("qgt: at least one layer required");
  NodeStates current = initial;
  if (traces) traces->clear();
  for (const auto& layer : layers) {
    QgtTrace* trace = nullptr;
    if (traces) trace = &traces->emplace_back();
    current = NodeStates{aggregate_update(graph, current.matrix, layer, options, trace), current.layer + 1};
  }
  return current;
}

ScoreHead ScoreHead::create(nn::ParameterStore& store, const std::string& prefix, int d_model) {
  return ScoreHead{nn::Linear::create(store, prefix, d_model, 1)};
}

ad::Var predict_node_scores(const ad::Var& states, const ScoreHead& head) { return head(states); }

GatLayerParams GatLayerParams::create(nn::ParameterStore& store, const std::string& prefix, int d_model) {
  return GatLayerParams{store.create(prefix + ".w", d_model, d_model, nn::Init::Normal),
                        store.create(prefix + ".a", 1, 2 * static_cast<Eigen::Index>(d_model), nn::Init::Normal)};
}

ad::Var gat_update(const HeteroGraph& graph, const ad::Var& states, const GatLayerParams& params) {
  const auto n = graph.node_count();
  if (static_cast<std::size_t>(states.rows()) != n) throw std::invalid_argument("gat: one state row per node");
  const auto d = params.w.cols();
  const ad::Var projected = ad::matmul(states, params.w);
  const ad::Var a_src = ad::slice_cols(params.a, 0, d);
  const ad::Var a_dst = ad::slice_cols(params.a, d, d);

  std::vector<ad::Var> rows;
  rows.reserve(n);
  for (NodeId t = 0; t < n; ++t) {
    const ad::Var current = row_of(states, t);
    const auto incoming = graph.neighbors(t);
    if (incoming.empty()) {
      rows.push_back(current);
      continue;
    }
    const ad::Var dst_term = ad::matmul_nt(row_of(projected, t), a_dst);
    std::vector<ad::Var> scores;
    std::vector<Eigen::Index> sources;
    for (const auto& nb : incoming) {
      scores.push_back(ad::add(ad::matmul_nt(row_of(projected, nb.source), a_src), dst_term));
      sources.push_back(static_cast<Eigen::Index>(nb.source));
    }
    const ad::Var alpha = ad::softmax_rows(ad::leaky_relu(ad::concat_cols(scores), params.negative_slope));
    const ad::Var updated = ad::add(ad::gelu(ad::matmul(alpha, ad::gather_rows(projected, sources))), current);
    check_finite(updated, graph.node(t));
    rows.push_back(updated);
  }
  return ad::concat_rows(rows);
}

}  // namespace heteroqa
