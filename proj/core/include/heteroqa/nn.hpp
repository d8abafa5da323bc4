#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "heteroqa/autodiff.hpp"

namespace heteroqa::nn {

using ad::Matrix;
using ad::Var;

enum class Init { Normal, Zeros, Ones, Identity };

/// Named trainable tensors in creation order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, double default_std = 0.02) : rng_(seed), default_std_(default_std) {}

  Var create(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init, double stddev = -1.0);
  const Var& get(std::string_view name) const;
  Var& get(std::string_view name);
  bool contains(std::string_view name) const;

  std::size_t size() const { return order_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::string>& names() const { return order_; }

  void zero_grad();

 private:
  std::mt19937_64 rng_;
  double default_std_;
  std::vector<std::string> order_;
  std::map<std::string, Var, std::less<>> params_;
};

/// Affine map x * w + b applied to each row.
struct Linear {
  Var w;
  Var b;

  static Linear create(ParameterStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                       Init weight_init = Init::Normal);
  Var operator()(const Var& x) const;
};

struct LayerNorm {
  Var gamma;
  Var beta;

  static LayerNorm create(ParameterStore& store, const std::string& prefix, Eigen::Index dim);
  Var operator()(const Var& x) const;
};

struct FeedForward {
  Linear in;
  Linear out;

  static FeedForward create(ParameterStore& store, const std::string& prefix, Eigen::Index dim, Eigen::Index hidden);
  Var operator()(const Var& x) const { return out(ad::gelu(in(x))); }
};

/// Scaled dot-product multi-head attention with input/output projections.
struct MultiHeadAttention {
  Linear q;
  Linear k;
  Linear v;
  Linear o;
  int heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& prefix, Eigen::Index dim, int heads);

  /// queries n x d attend over keys m x d (m >= 1); mask is n x m additive (0 or -inf).
  Var operator()(const Var& queries, const Var& keys, const Matrix* mask = nullptr) const;
};

/// Additive mask hiding keys whose flag is false.
Matrix key_padding_mask(Eigen::Index n_queries, const std::vector<bool>& key_valid);
/// Lower-triangular causal mask.
Matrix causal_mask(Eigen::Index n);

}  // namespace heteroqa::nn
