#include "heteroqa/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace heteroqa::ad {
namespace {

thread_local bool g_grad_enabled = true;

Var make(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(fn);
    }
  }
  return Var(std::move(node));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

void push(Node& self, std::size_t i, const Matrix& g) {
  auto& p = *self.parents[i];
  if (p.requires_grad) p.accumulate(g);
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

void Var::zero_grad() {
  if (node_) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward: root must be 1x1");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !parent->parents.empty() && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() != 0) n.backward(n);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad.resize(0, 0);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  return make(a.value() * b.value(), {a.node(), b.node()}, [](Node& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (wants(self, 0)) push(self, 0, self.grad * B.transpose());
    if (wants(self, 1)) push(self, 1, A.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  return make(a.value() * b.value().transpose(), {a.node(), b.node()}, [](Node& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (wants(self, 0)) push(self, 0, self.grad * B);
    if (wants(self, 1)) push(self, 1, self.grad.transpose() * A);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    push(self, 0, self.grad);
    if (wants(self, 1)) push(self, 1, -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& self) {
    if (wants(self, 0)) push(self, 0, self.grad.cwiseProduct(self.parents[1]->value));
    if (wants(self, 1)) push(self, 1, self.grad.cwiseProduct(self.parents[0]->value));
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a.node()}, [s](Node& self) { push(self, 0, self.grad * s); });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("scale_by: scale must be 1x1");
  return make(a.value() * s.scalar(), {a.node(), s.node()}, [](Node& self) {
    const double sv = self.parents[1]->value(0, 0);
    if (wants(self, 0)) push(self, 0, self.grad * sv);
    if (wants(self, 1)) push(self, 1, Matrix::Constant(1, 1, self.grad.cwiseProduct(self.parents[0]->value).sum()));
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: expected 1 x cols row");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {a.node(), row.node()}, [](Node& self) {
    push(self, 0, self.grad);
    if (wants(self, 1)) push(self, 1, self.grad.colwise().sum());
  });
}

Var scale_rows(const Var& a, const Var& w) {
  if (w.cols() != 1 || w.rows() != a.rows()) throw std::invalid_argument("scale_rows: expected rows x 1 weights");
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) *= w.value()(i, 0);
  return make(std::move(out), {a.node(), w.node()}, [](Node& self) {
    const auto& A = self.parents[0]->value;
    const auto& W = self.parents[1]->value;
    if (wants(self, 0)) {
      Matrix g = self.grad;
      for (Eigen::Index i = 0; i < g.rows(); ++i) g.row(i) *= W(i, 0);
      push(self, 0, g);
    }
    if (wants(self, 1)) {
      Matrix g(W.rows(), 1);
      for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, 0) = self.grad.row(i).dot(A.row(i));
      push(self, 1, g);
    }
  });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a.node()}, [](Node& self) { push(self, 0, self.grad.transpose()); });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Var gelu(const Var& a) {
  return make(a.value().unaryExpr(&gelu_value), {a.node()}, [](Node& self) {
    const auto& X = self.parents[0]->value;
    const Matrix d = X.unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
      return cdf + x * pdf;
    });
    push(self, 0, self.grad.cwiseProduct(d));
  });
}

Var leaky_relu(const Var& a, double slope) {
  return make(a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; }), {a.node()},
              [slope](Node& self) {
                const auto& X = self.parents[0]->value;
                push(self, 0, self.grad.cwiseProduct(X.unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; })));
              });
}

Var sigmoid(const Var& a) {
  return make(a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }), {a.node()}, [](Node& self) {
    const auto& Y = self.value;
    push(self, 0, self.grad.cwiseProduct(Y.cwiseProduct((1.0 - Y.array()).matrix())));
  });
}

Var softmax_rows(const Var& a, const Matrix* additive_mask) {
  const auto& X = a.value();
  if (additive_mask && (additive_mask->rows() != X.rows() || additive_mask->cols() != X.cols())) {
    throw std::invalid_argument("softmax_rows: mask shape mismatch");
  }
  Matrix Y = Matrix::Zero(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double v = additive_mask ? X(r, c) + (*additive_mask)(r, c) : X(r, c);
      if (v > m) m = v;
    }
    if (m == -std::numeric_limits<double>::infinity()) continue;
    double total = 0.0;
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double v = additive_mask ? X(r, c) + (*additive_mask)(r, c) : X(r, c);
      const double e = v == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(v - m);
      Y(r, c) = e;
      total += e;
    }
    Y.row(r) /= total;
  }
  return make(std::move(Y), {a.node()}, [](Node& self) {
    const auto& Yv = self.value;
    Matrix g(Yv.rows(), Yv.cols());
    for (Eigen::Index r = 0; r < Yv.rows(); ++r) {
      const double dot = self.grad.row(r).dot(Yv.row(r));
      g.row(r) = Yv.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
    }
    push(self, 0, g);
  });
}

Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps) {
  const auto& X = a.value();
  const auto n = X.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw std::invalid_argument("layer_norm: gamma/beta must be 1 x cols");
  }
  Matrix xhat(X.rows(), n);
  Eigen::VectorXd inv_std(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
  }
  Matrix Y = xhat;
  for (Eigen::Index r = 0; r < Y.rows(); ++r) {
    Y.row(r) = Y.row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return make(std::move(Y), {a.node(), gamma.node(), beta.node()},
              [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                const auto& G = self.parents[1]->value;
                const double nn = static_cast<double>(xhat.cols());
                if (wants(self, 0)) {
                  Matrix dx(xhat.rows(), xhat.cols());
                  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    const Eigen::RowVectorXd dxhat = self.grad.row(r).cwiseProduct(G.row(0));
                    const double s1 = dxhat.sum();
                    const double s2 = dxhat.dot(xhat.row(r));
                    dx.row(r) = (inv_std(r) / nn) * (nn * dxhat.array() - s1 - xhat.row(r).array() * s2).matrix();
                  }
                  push(self, 0, dx);
                }
                if (wants(self, 1)) push(self, 1, self.grad.cwiseProduct(xhat).colwise().sum());
                if (wants(self, 2)) push(self, 2, self.grad.colwise().sum());
              });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw std::out_of_range("slice_cols out of range");
  return make(a.value().middleCols(start, n), {a.node()}, [start, n](Node& self) {
    const auto& A = self.parents[0]->value;
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    g.middleCols(start, n) = self.grad;
    push(self, 0, g);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw std::out_of_range("slice_rows out of range");
  return make(a.value().middleRows(start, n), {a.node()}, [start, n](Node& self) {
    const auto& A = self.parents[0]->value;
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    g.middleRows(start, n) = self.grad;
    push(self, 0, g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  std::vector<NodePtr> parents;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    parents.push_back(p.node());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const auto c = self.parents[i]->value.cols();
      if (wants(self, i)) push(self, i, self.grad.middleCols(off, c));
      off += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  std::vector<NodePtr> parents;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    parents.push_back(p.node());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const auto r = self.parents[i]->value.rows();
      if (wants(self, i)) push(self, i, self.grad.middleRows(off, r));
      off += r;
    }
  });
}

Var gather_rows(const Var& a, std::span<const Eigen::Index> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  return make(std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
    const auto& A = self.parents[0]->value;
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    push(self, 0, g);
  });
}

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a.value().sum()), {a.node()}, [](Node& self) {
    const auto& A = self.parents[0]->value;
    push(self, 0, Matrix::Constant(A.rows(), A.cols(), self.grad(0, 0)));
  });
}

Var masked_mean_rows(const Var& a, const std::vector<bool>& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != a.rows()) throw std::invalid_argument("masked_mean_rows: mask size");
  Eigen::Index count = 0;
  Matrix acc = Matrix::Zero(1, a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    acc.row(0) += a.value().row(r);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("masked_mean_rows: every row is masked");
  acc /= static_cast<double>(count);
  return make(std::move(acc), {a.node()}, [mask, count](Node& self) {
    const auto& A = self.parents[0]->value;
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r)
      if (mask[static_cast<std::size_t>(r)]) g.row(r) = self.grad.row(0) / static_cast<double>(count);
    push(self, 0, g);
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore_id) {
  const auto& X = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != X.rows()) throw std::invalid_argument("cross_entropy: shape");
  Matrix probs = Matrix::Zero(X.rows(), X.cols());
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_id) continue;
    if (t < 0 || t >= X.cols()) throw std::out_of_range("cross_entropy: target outside vocabulary");
    const double m = X.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (X.row(r).array() - m).exp().matrix();
    const double z = e.sum();
    probs.row(r) = e / z;
    total += -(X(r, t) - m - std::log(z));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every target is padding");
  std::vector<int> tg(targets.begin(), targets.end());
  return make(Matrix::Constant(1, 1, total / static_cast<double>(count)), {logits.node()},
              [probs = std::move(probs), tg = std::move(tg), ignore_id, count](Node& self) {
                Matrix g = probs;
                for (Eigen::Index r = 0; r < g.rows(); ++r) {
                  const int t = tg[static_cast<std::size_t>(r)];
                  if (t != ignore_id) g(r, t) -= 1.0;
                }
                g *= self.grad(0, 0) / static_cast<double>(count);
                push(self, 0, g);
              });
}

Var mse_rows(const Var& pred, std::span<const Eigen::Index> rows, std::span<const double> targets) {
  if (pred.cols() != 1) throw std::invalid_argument("mse_rows: pred must be n x 1");
  if (rows.size() != targets.size()) throw std::invalid_argument("mse_rows: rows/targets size mismatch");
  if (rows.empty()) return scalar_constant(0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double d = pred.value()(rows[i], 0) - targets[i];
    total += d * d;
  }
  const double m = static_cast<double>(rows.size());
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  std::vector<double> tg(targets.begin(), targets.end());
  return make(Matrix::Constant(1, 1, total / m), {pred.node()},
              [idx = std::move(idx), tg = std::move(tg), m](Node& self) {
                const auto& P = self.parents[0]->value;
                Matrix g = Matrix::Zero(P.rows(), 1);
                for (std::size_t i = 0; i < idx.size(); ++i) g(idx[i], 0) += 2.0 * (P(idx[i], 0) - tg[i]) / m;
                g *= self.grad(0, 0);
                push(self, 0, g);
              });
}

}  // namespace heteroqa::ad
