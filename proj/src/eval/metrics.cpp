#include "sta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace sta {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // midranks (1-based) over runs of equal scores
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) {
        rank_sum += mid;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0) throw std::invalid_argument("auc: no positive (label 1) samples");
  if (neg == 0) throw std::invalid_argument("auc: no negative (label 0) samples");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(neg));
}

HorizonLabel horizon_label(const OutcomeLabel& label, int k) {
  if (label.y == 1) return label.event_year <= k ? HorizonLabel::positive : HorizonLabel::excluded;
  return label.followup_years >= k ? HorizonLabel::negative : HorizonLabel::excluded;
}

double horizon_auc(std::span<const double> scores, std::span<const OutcomeLabel> labels, int k) {
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const HorizonLabel h = horizon_label(labels[i], k);
    if (h == HorizonLabel::excluded) continue;
    s.push_back(scores[i]);
    y.push_back(h == HorizonLabel::positive ? 1 : 0);
  }
  return auc(s, y);
}

double c_index(std::span<const double> scores, std::span<const OutcomeLabel> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("c_index: scores and labels differ in length");
  // For each event year e, the sorted scores of everyone an e-year case is compared with:
  // cases with a later event and controls followed for at least e years.
  double concordant = 0.0, pairs = 0.0;
  for (int e = 1; e <= static_cast<int>(kHorizons); ++e) {
    std::vector<double> others;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      const auto& l = labels[j];
      if ((l.y == 1 && l.event_year > e) || (l.y == 0 && l.followup_years >= e))
        others.push_back(scores[j]);
    }
    std::sort(others.begin(), others.end());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].y != 1 || labels[i].event_year != e) continue;
      const auto lo = std::lower_bound(others.begin(), others.end(), scores[i]);
      const auto hi = std::upper_bound(lo, others.end(), scores[i]);
      concordant += static_cast<double>(lo - others.begin()) + 0.5 * static_cast<double>(hi - lo);
      pairs += static_cast<double>(others.size());
    }
  }
  if (pairs == 0) throw std::invalid_argument("c_index: no comparable pairs");
  return concordant / pairs;
}

std::vector<Fold> kfold_split(std::span<const OutcomeLabel> labels, std::size_t k,
                              std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be at least 2");
  if (k > labels.size()) {
    throw std::invalid_argument("kfold_split: " + std::to_string(k) + " folds for " +
                                std::to_string(labels.size()) + " patients");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i].y == 1 ? pos : neg).push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<Fold> folds(k);
  // deal cases round-robin, then continue with controls where the cases stopped
  std::size_t next = 0;
  for (auto i : pos) folds[next++ % k].test.push_back(i);
  for (auto i : neg) folds[next++ % k].test.push_back(i);
  for (auto& f : folds) {
    std::sort(f.test.begin(), f.test.end());
    std::vector<bool> in_test(labels.size(), false);
    for (auto i : f.test) in_test[i] = true;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!in_test[i]) f.train.push_back(i);
  }
  return folds;
}

FoldMetrics evaluate_risks(std::span<const std::array<double, kHorizons>> risks,
                           std::span<const OutcomeLabel> labels) {
  FoldMetrics m;
  std::vector<double> col(risks.size());
  for (std::size_t k = 0; k < kHorizons; ++k) {
    for (std::size_t i = 0; i < risks.size(); ++i) col[i] = risks[i][k];
    try {
      m.auc[k] = horizon_auc(col, labels, static_cast<int>(k) + 1);
    } catch (const std::invalid_argument&) {
      m.auc[k] = std::nan("");
    }
  }
  // col holds the 5-year risk now
  try {
    m.c_index = c_index(col, labels);
  } catch (const std::invalid_argument&) {
    m.c_index = std::nan("");
  }
  return m;
}

MetricsReport MetricsReport::aggregate(std::vector<FoldMetrics> folds) {
  MetricsReport r;
  r.folds = std::move(folds);
  const auto stat = [&](auto get, double& mean, double& sd) {
    const double n = static_cast<double>(r.folds.size());
    mean = 0.0;
    for (const auto& f : r.folds) mean += get(f);
    mean /= n;
    double ss = 0.0;
    for (const auto& f : r.folds) ss += (get(f) - mean) * (get(f) - mean);
    sd = r.folds.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  };
  if (r.folds.empty()) return r;
  stat([](const FoldMetrics& f) { return f.c_index; }, r.mean.c_index, r.stddev.c_index);
  for (std::size_t k = 0; k < kHorizons; ++k)
    stat([k](const FoldMetrics& f) { return f.auc[k]; }, r.mean.auc[k], r.stddev.auc[k]);
  return r;
}

namespace {

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

nlohmann::json fold_json(const FoldMetrics& f) {
  nlohmann::json aucs = nlohmann::json::array();
  for (double a : f.auc) aucs.push_back(number(a));
  return {{"c_index", number(f.c_index)}, {"auc_by_horizon", aucs}};
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) folds_json.push_back(fold_json(f));
  const nlohmann::json j = {{"folds", folds_json}, {"mean", fold_json(mean)}, {"std", fold_json(stddev)}};
  return j.dump(2);
}

std::string MetricsReport::to_table(const std::string& title) const {
  std::ostringstream os;
  char cell[64];
  const auto fmt = [&](double m, double s) {
    std::snprintf(cell, sizeof cell, "%.3f +- %.3f", m, s);
    return std::string(cell);
  };
  const auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  const std::size_t w = 16;
  std::string label_col = title.empty() ? "" : title;
  const std::size_t lw = std::max<std::size_t>(label_col.size(), 8) + 2;
  os << pad("", lw) << pad("C-index", w);
  for (std::size_t k = 1; k <= kHorizons; ++k) os << pad(std::to_string(k) + "-year AUC", w);
  os << '\n' << pad(label_col, lw) << pad(fmt(mean.c_index, stddev.c_index), w);
  for (std::size_t k = 0; k < kHorizons; ++k) os << pad(fmt(mean.auc[k], stddev.auc[k]), w);
  os << '\n';
  return os.str();
}

}  // namespace sta
