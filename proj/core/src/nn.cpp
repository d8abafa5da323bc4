#include "heteroqa/nn.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace heteroqa::nn {

Var ParameterStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init,
                           double stddev) {
  if (params_.contains(name)) throw std::logic_error("parameter '" + name + "' created twice");
  Matrix m;
  switch (init) {
    case Init::Normal: {
      std::normal_distribution<double> dist(0.0, stddev < 0.0 ? default_std_ : stddev);
      m.resize(rows, cols);
      // Row-major fill order keeps initialization independent of storage order.
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng_);
      break;
    }
    case Init::Zeros: m = Matrix::Zero(rows, cols); break;
    case Init::Ones: m = Matrix::Ones(rows, cols); break;
    case Init::Identity: m = Matrix::Identity(rows, cols); break;
  }
  auto v = ad::parameter(std::move(m));
  order_.push_back(name);
  params_.emplace(name, v);
  return v;
}

const Var& ParameterStore::get(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return it->second;
}

Var& ParameterStore::get(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return it->second;
}

bool ParameterStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

Linear Linear::create(ParameterStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                      Init weight_init) {
  return Linear{store.create(prefix + ".w", in, out, weight_init), store.create(prefix + ".b", 1, out, Init::Zeros)};
}

Var Linear::operator()(const Var& x) const { return ad::add_row(ad::matmul(x, w), b); }

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& prefix, Eigen::Index dim) {
  return LayerNorm{store.create(prefix + ".gamma", 1, dim, Init::Ones), store.create(prefix + ".beta", 1, dim, Init::Zeros)};
}

Var LayerNorm::operator()(const Var& x) const { return ad::layer_norm(x, gamma, beta); }

FeedForward FeedForward::create(ParameterStore& store, const std::string& prefix, Eigen::Index dim,
                                Eigen::Index hidden) {
  return FeedForward{Linear::create(store, prefix + ".in", dim, hidden), Linear::create(store, prefix + ".out", hidden, dim)};
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& prefix, Eigen::Index dim,
                                              int heads) {
  if (heads < 1 || dim % heads != 0) throw std::invalid_argument(prefix + ": d_model must be divisible by heads");
  return MultiHeadAttention{Linear::create(store, prefix + ".q", dim, dim), Linear::create(store, prefix + ".k", dim, dim),
                            Linear::create(store, prefix + ".v", dim, dim), Linear::create(store, prefix + ".o", dim, dim),
                            heads};
}

Var MultiHeadAttention::operator()(const Var& queries, const Var& keys, const Matrix* mask) const {
  if (keys.rows() == 0) throw std::invalid_argument("attention over an empty key set");
  const auto dim = queries.cols();
  const auto dh = dim / heads;
  const Var qp = q(queries);
  const Var kp = k(keys);
  const Var vp = v(keys);
  const double temperature = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Var qh = ad::slice_cols(qp, h * dh, dh);
    const Var kh = ad::slice_cols(kp, h * dh, dh);
    const Var vh = ad::slice_cols(vp, h * dh, dh);
    const Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), temperature), mask);
    outs.push_back(ad::matmul(attn, vh));
  }
  return o(heads == 1 ? outs.front() : ad::concat_cols(outs));
}

Matrix key_padding_mask(Eigen::Index n_queries, const std::vector<bool>& key_valid) {
  Matrix m = Matrix::Zero(n_queries, static_cast<Eigen::Index>(key_valid.size()));
  for (std::size_t j = 0; j < key_valid.size(); ++j)
    if (!key_valid[j]) m.col(static_cast<Eigen::Index>(j)).setConstant(-std::numeric_limits<double>::infinity());
  return m;
}

Matrix causal_mask(Eigen::Index n) {
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<double>::infinity();
  return m;
}

}  // namespace heteroqa::nn
