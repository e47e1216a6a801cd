#include "sta/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sta/autodiff/ops.hpp"
#include "sta/error.hpp"

namespace sta {

using ad::Tensor;

void AsymmetryMargins::validate() const {
  for (double v : {m1, m2, m1_prime, m2_prime, lambda}) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("asymmetry margins and lambda must be finite and non-negative");
  }
}

void OutcomeLabel::validate() const {
  if (y == 1) {
    if (event_year < 1 || event_year > 5)
      throw std::invalid_argument("label: event_year " + std::to_string(event_year) +
                                  " outside 1..5");
  } else if (y == 0) {
    if (followup_years < 1)
      throw std::invalid_argument("label: followup_years must be >= 1 for a normal outcome");
  } else {
    throw std::invalid_argument("label: y must be 0 or 1, got " + std::to_string(y));
  }
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("asymmetry_distances: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

AsymmetryDistances asymmetry_distances(std::span<const std::vector<double>> lefts,
                                       std::span<const std::vector<double>> rights) {
  if (lefts.size() != rights.size()) {
    throw std::invalid_argument("asymmetry_distances: " + std::to_string(lefts.size()) +
                                " left vs " + std::to_string(rights.size()) + " right embeddings");
  }
  if (lefts.empty()) throw std::invalid_argument("asymmetry_distances: no exams");
  const std::size_t T = lefts.size();
  AsymmetryDistances out;
  for (std::size_t t = 0; t < T; ++t) out.d_bar += distance(lefts[t], rights[t]);
  out.d_bar /= static_cast<double>(T);
  if (T > 1) {
    for (std::size_t t = 0; t + 1 < T; ++t)
      out.delta_bar += distance(lefts[t], lefts[t + 1]) + distance(rights[t], rights[t + 1]);
    out.delta_bar /= static_cast<double>(2 * (T - 1));
    out.has_pairs = true;
  }
  return out;
}

double asymmetry_loss(double d_bar, double delta_bar, int y, const AsymmetryMargins& m,
                      bool temporal_terms) {
  double loss;
  if (y == 1) {
    loss = std::max(0.0, m.m1 - d_bar);
    if (temporal_terms) loss += std::max(0.0, m.m1_prime - delta_bar);
  } else {
    loss = std::max(0.0, d_bar - m.m2);
    if (temporal_terms) loss += std::max(0.0, delta_bar - m.m2_prime);
  }
  return loss;
}

double asymmetry_loss(const AsymmetryDistances& d, int y, const AsymmetryMargins& margins) {
  return asymmetry_loss(d.d_bar, d.delta_bar, y, margins, d.has_pairs);
}

ClassWeights ClassWeights::from_labels(std::span<const OutcomeLabel> labels) {
  std::size_t pos = 0;
  for (const auto& l : labels) pos += l.y == 1;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0) throw std::invalid_argument("class weights: no cancer (y=1) patients");
  if (neg == 0) throw std::invalid_argument("class weights: no normal (y=0) patients");
  const double n = static_cast<double>(labels.size());
  return {static_cast<double>(neg) / n, static_cast<double>(pos) / n};
}

HorizonTargets horizon_targets(const OutcomeLabel& label) {
  HorizonTargets h;
  for (std::size_t i = 0; i < kHorizons; ++i) {
    const int k = static_cast<int>(i) + 1;
    if (label.y == 1) {
      h.target[i] = label.event_year <= k ? 1.0 : 0.0;
      h.observed[i] = label.event_year <= 5;
    } else {
      h.observed[i] = label.followup_years >= k;
    }
  }
  return h;
}

double reweighted_cross_entropy(std::span<const double, kHorizons> risks, const OutcomeLabel& label,
                                const ClassWeights& weights) {
  const HorizonTargets h = horizon_targets(label);
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < kHorizons; ++i) {
    const double r = risks[i];
    if (!(r > 0.0 && r < 1.0))
      throw std::domain_error("reweighted_cross_entropy: risk " + std::to_string(r) +
                              " at horizon " + std::to_string(i + 1) + " outside (0, 1)");
    if (!h.observed[i]) continue;
    total += h.target[i] > 0 ? -weights.positive * std::log(r)
                             : -weights.negative * std::log1p(-r);
    ++count;
  }
  return count ? total / count : 0.0;
}

double total_loss(double primary, double asym, double lambda) { return primary + lambda * asym; }

Tensor reweighted_cross_entropy(const Tensor& logits, std::span<const OutcomeLabel> labels,
                                const ClassWeights& weights) {
  const std::size_t B = labels.size();
  if (logits.shape() != ad::Shape{B, kHorizons}) {
    throw ShapeError("reweighted_cross_entropy: logits " + ad::to_string(logits.shape()) +
                     " for " + std::to_string(B) + " labels");
  }
  // BCE(sigmoid(l), t) = softplus(l) - t * l
  std::vector<double> c(B * kHorizons, 0.0), ct(B * kHorizons, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const HorizonTargets h = horizon_targets(labels[b]);
    const auto n = std::count(h.observed.begin(), h.observed.end(), true);
    for (std::size_t i = 0; i < kHorizons; ++i) {
      if (!h.observed[i]) continue;
      const double w = (h.target[i] > 0 ? weights.positive : weights.negative) /
                       static_cast<double>(n * static_cast<long>(B));
      c[b * kHorizons + i] = w;
      ct[b * kHorizons + i] = w * h.target[i];
    }
  }
  const Tensor C({B, kHorizons}, std::move(c));
  const Tensor CT({B, kHorizons}, std::move(ct));
  return ad::sum(C * ad::softplus(logits)) - ad::sum(CT * logits);
}

namespace {

// Differentiable sum of relu(sign * value + offset) over a [N, 1] column.
Tensor hinge_sum(const Tensor& values, std::vector<double> sign, std::vector<double> offset) {
  const std::size_t n = sign.size();
  return ad::sum(ad::relu(values * Tensor({n, 1}, std::move(sign)) + Tensor({n, 1}, std::move(offset))));
}

}  // namespace

AsymmetryGraph asymmetry_loss(const Tensor& features, std::span<const PatientRows> patients,
                              std::span<const OutcomeLabel> labels, const AsymmetryMargins& m) {
  if (patients.size() != labels.size())
    throw std::invalid_argument("asymmetry_loss: one label per patient required");
  const std::size_t B = patients.size();
  std::vector<std::int64_t> left, right, from, to;
  std::vector<std::vector<std::size_t>> cross_seg(B), pair_seg;
  std::vector<double> d_sign, d_off, p_sign, p_off;
  std::vector<std::size_t> paired;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& rows = patients[b].exam_rows;
    if (rows.empty()) throw std::invalid_argument("asymmetry_loss: patient without exams");
    for (const auto& r : rows) {
      cross_seg[b].push_back(left.size());
      left.push_back(r[0]);
      right.push_back(r[1]);
    }
    const bool cancer = labels[b].y == 1;
    d_sign.push_back(cancer ? -1.0 : 1.0);
    d_off.push_back(cancer ? m.m1 : -m.m2);
    if (rows.size() > 1) {
      std::vector<std::size_t> seg;
      for (std::size_t t = 0; t + 1 < rows.size(); ++t)
        for (int s = 0; s < 2; ++s) {
          seg.push_back(from.size());
          from.push_back(rows[t][static_cast<std::size_t>(s)]);
          to.push_back(rows[t + 1][static_cast<std::size_t>(s)]);
        }
      pair_seg.push_back(std::move(seg));
      paired.push_back(b);
      p_sign.push_back(cancer ? -1.0 : 1.0);
      p_off.push_back(cancer ? m.m1_prime : -m.m2_prime);
    }
  }
  const auto column = [](const Tensor& t) { return ad::reshape(t, {t.numel(), 1}); };
  const Tensor cross = column(
      ad::l2_norm(ad::gather_rows(features, left) - ad::gather_rows(features, right)));
  const Tensor d_bar = ad::segment_mean(cross, cross_seg);  // [B, 1]
  Tensor total = hinge_sum(d_bar, d_sign, d_off);

  AsymmetryGraph out;
  out.distances.resize(B);
  for (std::size_t b = 0; b < B; ++b) out.distances[b].d_bar = d_bar[b];
  if (!paired.empty()) {
    const Tensor change =
        column(ad::l2_norm(ad::gather_rows(features, to) - ad::gather_rows(features, from)));
    const Tensor delta_bar = ad::segment_mean(change, pair_seg);
    total = total + hinge_sum(delta_bar, p_sign, p_off);
    for (std::size_t i = 0; i < paired.size(); ++i) {
      out.distances[paired[i]].delta_bar = delta_bar[i];
      out.distances[paired[i]].has_pairs = true;
    }
  }
  out.loss = ad::scale(total, 1.0 / static_cast<double>(B));
  return out;
}

}  // namespace sta
