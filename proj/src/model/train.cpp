#include "sta/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sta {

Adam::Adam(nn::ParamRefs params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t->numel(), 0.0);
    v_.emplace_back(t->numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    ad::Tensor& t = *params_[p].second;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_values();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    t.zero_grad();
  }
}

Model clone_model(const Model& model) {
  Model copy = model;
  for (auto& [name, t] : copy.parameters()) {
    *t = t->detach();
    t->set_requires_grad(true);
  }
  return copy;
}

namespace {

std::vector<OutcomeLabel> labels_of(std::span<const PatientSeries* const> patients) {
  std::vector<OutcomeLabel> out;
  for (const auto* p : patients) out.push_back(p->label);
  return out;
}

std::vector<const PatientSeries*> pointers(std::span<const PatientSeries> patients) {
  std::vector<const PatientSeries*> out;
  for (const auto& p : patients) out.push_back(&p);
  return out;
}

double validation_auc(const Model& model, std::span<const PatientSeries* const> validation,
                      std::span<const OutcomeLabel> labels, std::size_t batch, int horizon) {
  const auto risks = predict(model, validation, batch);
  std::vector<double> rk;
  for (const auto& r : risks) rk.push_back(r[static_cast<std::size_t>(horizon - 1)]);
  return horizon_auc(rk, labels, horizon);
}

// 1 unless the split has no case (or no control) scored at one year; then the
// earliest horizon with both.
int selection_horizon(std::span<const OutcomeLabel> labels) {
  for (int k = 1; k <= static_cast<int>(kHorizons); ++k) {
    bool pos = false, neg = false;
    for (const auto& l : labels) {
      const auto h = horizon_label(l, k);
      pos = pos || h == HorizonLabel::positive;
      neg = neg || h == HorizonLabel::negative;
    }
    if (pos && neg) return k;
  }
  throw std::invalid_argument("train: validation split has no horizon with both cases and controls");
}

}  // namespace

TrainResult train_model(const ModelConfig& config, std::span<const PatientSeries> train,
                        std::span<const PatientSeries> validation, const TrainOptions& options,
                        const EpochCallback& on_epoch) {
  return train_model(config, pointers(train), pointers(validation), options, on_epoch);
}

TrainResult train_model(const ModelConfig& config, std::span<const PatientSeries* const> train,
                        std::span<const PatientSeries* const> validation,
                        const TrainOptions& options, const EpochCallback& on_epoch) {
  if (options.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  const auto train_labels = labels_of(train);
  const auto val_labels = labels_of(validation);
  const ClassWeights weights = ClassWeights::from_labels(train_labels);
  // fail before training when the validation split cannot be scored
  const int horizon = selection_horizon(val_labels);

  TrainResult result;
  result.selection_horizon = horizon;
  Model model = Model::initialize(config, options.seed);
  Adam adam(model.parameters(), options.learning_rate);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0, n_case = 0, n_ctrl = 0, p_case = 0, p_ctrl = 0;
    bool finite = true;
    for (std::size_t start = 0; start < order.size() && finite; start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<const PatientSeries*> batch;
      std::vector<OutcomeLabel> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train[order[i]]);
        labels.push_back(train[order[i]]->label);
      }
      ad::Tape tape;
      const ForwardPass pass = forward(model, batch);
      const LossTerms loss = compute_loss(model, pass, labels, weights);
      if (!std::isfinite(loss.total.item())) {
        finite = false;
        break;
      }
      loss.total.backward();
      adam.step();
      ++batches;
      log.primary += loss.primary.item();
      log.asymmetry += loss.asymmetry.item();
      for (std::size_t b = 0; b < labels.size(); ++b) {
        const auto& d = loss.distances[b];
        const bool c = labels[b].y == 1;
        (c ? log.d_bar_cases : log.d_bar_controls) += d.d_bar;
        ++(c ? n_case : n_ctrl);
        if (d.has_pairs) {
          (c ? log.delta_bar_cases : log.delta_bar_controls) += d.delta_bar;
          ++(c ? p_case : p_ctrl);
        }
      }
    }
    if (!finite) {
      result.diverged = true;
      break;
    }
    log.primary /= static_cast<double>(batches);
    log.asymmetry /= static_cast<double>(batches);
    const auto div = [](double& v, std::size_t n) { v = n ? v / static_cast<double>(n) : 0.0; };
    div(log.d_bar_cases, n_case);
    div(log.d_bar_controls, n_ctrl);
    div(log.delta_bar_cases, p_case);
    div(log.delta_bar_controls, p_ctrl);
    log.validation_auc1 = validation_auc(model, validation, val_labels, options.batch_size, horizon);
    if (log.validation_auc1 > result.best_auc1) {
      result.best_auc1 = log.validation_auc1;
      result.best_epoch = epoch;
      result.best = clone_model(model);
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (result.best_epoch == 0) result.best = clone_model(model);
  return result;
}

}  // namespace sta
