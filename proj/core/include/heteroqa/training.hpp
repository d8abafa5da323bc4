#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "heteroqa/graph.hpp"
#include "heteroqa/model.hpp"
#include "heteroqa/sample.hpp"

namespace heteroqa {

struct TrainConfig {
  double psi = 0.01;
  double learning_rate = 1e-3;
  int steps = 200;
  int batch_size = 8;
  std::uint64_t seed = 13;
  double clip_norm = 1.0;
  /// Divide each sample's retrieval targets by their maximum.
  bool normalize_scores = false;
  /// Linear warmup length; 0 keeps the rate constant.
  int warmup_steps = 0;
  GraphOptions graph;
};

struct StepLog {
  int step = 0;
  LossBreakdown loss;  // batch means
};

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  explicit Adam(nn::ParameterStore& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update from the gradients currently stored on the parameters.
  void step(double learning_rate);

 private:
  nn::ParameterStore& params_;
  double beta1_;
  double beta2_;
  double eps_;
  long long t_ = 0;
  std::vector<nn::Matrix> m_;
  std::vector<nn::Matrix> v_;
};

/// Rescales all gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(nn::ParameterStore& params, double max_norm);

/// Deterministic minibatch training; every step's batch means are logged.
/// Samples in a batch are reduced in ascending id order. Throws NumericalError
/// naming the step when the loss is not finite.
std::vector<StepLog> train(HeteroQaModel& model, std::span<const TrainingSample> samples, const TrainConfig& config,
                           const std::function<void(const StepLog&)>& on_step = {});

/// CSV with header step,L,L_e,L_q.
void write_metrics_csv(std::ostream& out, std::span<const StepLog> log);

/// Below this gradient norm the check compares absolute differences; finite
/// differences of an exactly zero gradient are pure rounding noise.
inline constexpr double kGradcheckNormFloor = 1e-7;

struct TensorCheck {
  std::string name;
  std::size_t size = 0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||); absolute when both norms are below kGradcheckNormFloor.
  double rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::vector<std::string> failures;

  bool passed() const { return failures.empty(); }
};

/// Central finite differences against reverse-mode gradients for every tensor
/// in params. loss_fn must rebuild the loss from the current parameter values.
GradcheckReport gradcheck(const std::function<ad::Var()>& loss_fn, nn::ParameterStore& params, double eps,
                          double tol);

/// Full model on one sample.
GradcheckReport gradcheck(HeteroQaModel& model, const TrainingSample& sample, const GraphOptions& graph_options,
                          double psi, double eps, double tol);

std::string format_gradcheck_report(const GradcheckReport& report);

}  // namespace heteroqa
