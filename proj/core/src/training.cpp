#include "heteroqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "heteroqa/error.hpp"

namespace heteroqa {

Adam::Adam(nn::ParameterStore& params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& name : params_.names()) {
    const auto& p = params_.get(name);
    m_.push_back(nn::Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(nn::Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(double learning_rate) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto& names = params_.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto& p = params_.get(names[i]);
    if (p.grad().size() == 0) continue;
    const auto& g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double clip_grad_norm(nn::ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& name : params.names()) {
    const auto& g = params.get(name).grad();
    if (g.size() != 0) sq += g.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& name : params.names()) {
      auto& p = params.get(name);
      if (p.grad().size() != 0) p.mutable_grad() *= s;
    }
  }
  return norm;
}

std::vector<StepLog> train(HeteroQaModel& model, std::span<const TrainingSample> samples, const TrainConfig& config,
                           const std::function<void(const StepLog&)>& on_step) {
  if (config.psi < 0.0) throw UsageError("psi must be >= 0");
  if (config.batch_size < 1) throw UsageError("batch size must be >= 1");
  if (config.steps < 0) throw UsageError("steps must be >= 0");
  if (config.steps > 0 && samples.empty()) throw ValidationError("cannot train on an empty dataset");

  std::vector<HeteroGraph> graphs;
  std::vector<std::vector<TokenId>> answers;
  graphs.reserve(samples.size());
  for (const auto& s : samples) {
    graphs.push_back(build_graph(s, config.graph));
    answers.push_back(model.frame_answer(s.answer));
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  Adam optimizer(model.params());
  std::vector<StepLog> log;
  log.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<std::size_t> batch;
    const auto want = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), samples.size());
    while (batch.size() < want) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::sort(batch.begin(), batch.end(), [&](std::size_t a, std::size_t b) {
      return samples[a].id != samples[b].id ? samples[a].id < samples[b].id : a < b;
    });

    model.params().zero_grad();
    LossBreakdown mean{};
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto i : batch) {
      HeteroQaModel::SampleLoss sl;
      try {
        sl = model.loss(graphs[i], answers[i], config.psi, config.normalize_scores);
      } catch (const NumericalError& e) {
        throw NumericalError("step " + std::to_string(step) + " (sample " + samples[i].id + "): " + e.what());
      }
      if (!std::isfinite(sl.values.total)) {
        throw NumericalError("non-finite loss at step " + std::to_string(step) + " (sample " + samples[i].id + ")");
      }
      ad::backward(ad::scale(sl.total, inv));
      mean.total += sl.values.total * inv;
      mean.ce += sl.values.ce * inv;
      mean.graph += sl.values.graph * inv;
      mean.psi = sl.values.psi;
    }
    clip_grad_norm(model.params(), config.clip_norm);
    double lr = config.learning_rate;
    if (config.warmup_steps > 0 && step < config.warmup_steps) {
      lr *= static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    }
    optimizer.step(lr);

    log.push_back(StepLog{step, mean});
    if (on_step) on_step(log.back());
  }
  return log;
}

void write_metrics_csv(std::ostream& out, std::span<const StepLog> log) {
  out << "step,L,L_e,L_q\n";
  out << std::setprecision(17);
  for (const auto& s : log) out << s.step << ',' << s.loss.total << ',' << s.loss.ce << ',' << s.loss.graph << '\n';
}

GradcheckReport gradcheck(const std::function<ad::Var()>& loss_fn, nn::ParameterStore& params, double eps,
                          double tol) {
  params.zero_grad();
  ad::backward(loss_fn());

  GradcheckReport report;
  report.tolerance = tol;
  for (const auto& name : params.names()) {
    auto& p = params.get(name);
    const nn::Matrix analytic = p.grad().size() ? p.grad() : nn::Matrix::Zero(p.rows(), p.cols());
    nn::Matrix numeric(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.value().size(); ++i) {
      double& x = p.mutable_value().data()[i];
      const double saved = x;
      double plus = 0.0;
      double minus = 0.0;
      {
        ad::NoGradGuard no_grad;
        x = saved + eps;
        plus = loss_fn().scalar();
        x = saved - eps;
        minus = loss_fn().scalar();
      }
      x = saved;
      numeric.data()[i] = (plus - minus) / (2.0 * eps);
    }
    TensorCheck tc;
    tc.name = name;
    tc.size = static_cast<std::size_t>(p.value().size());
    const double diff = (analytic - numeric).norm();
    const double scale = std::max(analytic.norm(), numeric.norm());
    tc.rel_error = scale > kGradcheckNormFloor ? diff / scale : diff;
    tc.max_abs_error = (analytic - numeric).cwiseAbs().maxCoeff();
    if (!(tc.rel_error < tol)) report.failures.push_back(name);
    report.max_rel_error = std::max(report.max_rel_error, tc.rel_error);
    report.tensors.push_back(std::move(tc));
  }
  params.zero_grad();
  return report;
}

GradcheckReport gradcheck(HeteroQaModel& model, const TrainingSample& sample, const GraphOptions& graph_options,
                          double psi, double eps, double tol) {
  const auto graph = build_graph(sample, graph_options);
  const auto answer = model.frame_answer(sample.answer);
  return gradcheck([&] { return model.loss(graph, answer, psi).total; }, model.params(), eps, tol);
}

std::string format_gradcheck_report(const GradcheckReport& report) {
  std::ostringstream os;
  std::size_t width = 6;
  for (const auto& t : report.tensors) width = std::max(width, t.name.size());
  os << std::left << std::setw(static_cast<int>(width) + 2) << "tensor" << std::setw(8) << "size" << std::setw(14)
     << "rel_error" << "max_abs_error\n";
  os << std::scientific << std::setprecision(3);
  for (const auto& t : report.tensors) {
    os << std::left << std::setw(static_cast<int>(width) + 2) << t.name << std::setw(8) << t.size << std::setw(14)
       << t.rel_error << t.max_abs_error << '\n';
  }
  os << "max relative error " << report.max_rel_error << " (tolerance " << report.tolerance << "): "
     << (report.passed() ? "PASS" : "FAIL") << '\n';
  for (const auto& f : report.failures) os << "  failed: " << f << '\n';
  return os.str();
}

}  // namespace heteroqa
