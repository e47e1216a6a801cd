#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "sta/metrics.hpp"

using namespace sta;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      den += 1;
    }
  return num / den;
}

double brute_c_index(const std::vector<double>& s, const std::vector<OutcomeLabel>& l) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i].y != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool later = l[j].y == 1 ? l[j].event_year > l[i].event_year
                                     : l[j].followup_years >= l[i].event_year;
      if (i == j || !later) continue;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      den += 1;
    }
  }
  return num / den;
}

std::vector<OutcomeLabel> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> year(1, 5);
  std::vector<OutcomeLabel> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(i % 3 == 0 ? OutcomeLabel::cancer(year(rng)) : OutcomeLabel::normal(year(rng)));
  return out;
}

// coarse scores so ties occur
std::vector<double> random_scores(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> u(0, 9);
  std::vector<double> out(n);
  for (auto& s : out) s = u(rng) / 10.0;
  return out;
}

}  // namespace

TEST(Auc, Examples) {
  const std::vector<int> y = {1, 1, 0, 0};
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 0.0);
  EXPECT_EQ(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.3, 0.5, 0.1}, y), 0.75);
}

TEST(Auc, MissingClassIsNamed) {
  try {
    auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("positive"), std::string::npos) << e.what();
  }
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
}

TEST(Auc, MatchesBruteForce) {
  std::mt19937_64 rng(1);
  for (int n = 0; n < 100; ++n) {
    std::vector<int> y(50);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = (i % 4 == 0) ? 1 : 0;
    const auto s = random_scores(rng, 50);
    EXPECT_NEAR(auc(s, y), brute_auc(s, y), 1e-12);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<double> s(40), t(40);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = g(rng);
    t[i] = std::exp(3 * s[i]) + 1;
    y[i] = i % 3 == 0;
  }
  EXPECT_EQ(auc(s, y), auc(t, y));
}

TEST(HorizonLabels, PositiveNegativeExcluded) {
  EXPECT_EQ(horizon_label(OutcomeLabel::cancer(2), 1), HorizonLabel::excluded);
  EXPECT_EQ(horizon_label(OutcomeLabel::cancer(2), 2), HorizonLabel::positive);
  EXPECT_EQ(horizon_label(OutcomeLabel::normal(3), 3), HorizonLabel::negative);
  EXPECT_EQ(horizon_label(OutcomeLabel::normal(3), 4), HorizonLabel::excluded);
}

TEST(HorizonAuc, ExcludesCensoredControls) {
  const std::vector<OutcomeLabel> l = {OutcomeLabel::cancer(1), OutcomeLabel::normal(1),
                                       OutcomeLabel::normal(5)};
  // the short follow-up control would be ranked above the case but is excluded at 2 years
  const std::vector<double> s = {0.5, 0.9, 0.1};
  EXPECT_EQ(horizon_auc(s, l, 1), 0.5);
  EXPECT_EQ(horizon_auc(s, l, 2), 1.0);
}

TEST(CIndex, Examples) {
  const std::vector<OutcomeLabel> l = {OutcomeLabel::cancer(1), OutcomeLabel::cancer(3),
                                       OutcomeLabel::normal(5)};
  EXPECT_EQ(c_index(std::vector<double>{0.9, 0.5, 0.1}, l), 1.0);
  EXPECT_EQ(c_index(std::vector<double>{0.1, 0.5, 0.9}, l), 0.0);
  // pairs: (1y, 3y) concordant, (1y, ctrl) concordant, (3y, ctrl) discordant
  EXPECT_NEAR(c_index(std::vector<double>{0.9, 0.1, 0.5}, l), 2.0 / 3.0, 1e-15);
}

TEST(CIndex, NoComparablePairs) {
  const std::vector<OutcomeLabel> l = {OutcomeLabel::cancer(3), OutcomeLabel::normal(2)};
  EXPECT_THROW(c_index(std::vector<double>{0.3, 0.2}, l), std::invalid_argument);
}

TEST(CIndex, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 100; ++n) {
    const auto l = random_labels(rng, 30);
    const auto s = random_scores(rng, 30);
    EXPECT_NEAR(c_index(s, l), brute_c_index(s, l), 1e-12);
  }
}

TEST(KFold, TenPatientsFiveFolds) {
  std::vector<OutcomeLabel> l;
  for (int i = 0; i < 10; ++i) l.push_back(i < 3 ? OutcomeLabel::cancer(1) : OutcomeLabel::normal(5));
  const auto folds = kfold_split(l, 5, 11);
  ASSERT_EQ(folds.size(), 5u);
  std::multiset<std::size_t> all;
  for (const auto& f : folds) {
    EXPECT_EQ(f.test.size(), 2u);
    EXPECT_EQ(f.train.size(), 8u);
    all.insert(f.test.begin(), f.test.end());
    std::set<std::size_t> tr(f.train.begin(), f.train.end());
    for (auto i : f.test) EXPECT_EQ(tr.count(i), 0u);
  }
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 10u);
}

TEST(KFold, StratifiedCaseCounts) {
  std::vector<OutcomeLabel> l;
  for (int i = 0; i < 100; ++i) l.push_back(i % 5 == 0 ? OutcomeLabel::cancer(2) : OutcomeLabel::normal(5));
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& f : kfold_split(l, 5, seed)) {
      std::size_t cases = 0;
      for (auto i : f.test) cases += static_cast<std::size_t>(l[i].y);
      EXPECT_EQ(cases, 4u);
      EXPECT_EQ(f.test.size(), 20u);
    }
  }
}

TEST(KFold, SeededAndShuffled) {
  std::vector<OutcomeLabel> l(30, OutcomeLabel::normal(5));
  for (int i = 0; i < 6; ++i) l[i] = OutcomeLabel::cancer(1);
  const auto a = kfold_split(l, 3, 5), b = kfold_split(l, 3, 5), c = kfold_split(l, 3, 6);
  for (std::size_t f = 0; f < 3; ++f) EXPECT_EQ(a[f].test, b[f].test);
  bool differs = false;
  for (std::size_t f = 0; f < 3; ++f) differs = differs || a[f].test != c[f].test;
  EXPECT_TRUE(differs);
}

TEST(KFold, BadFoldCounts) {
  std::vector<OutcomeLabel> l(4, OutcomeLabel::normal(5));
  EXPECT_THROW(kfold_split(l, 5, 1), std::invalid_argument);
  EXPECT_THROW(kfold_split(l, 1, 1), std::invalid_argument);
}

TEST(Report, MeanAndSampleStd) {
  FoldMetrics a, b;
  a.c_index = 0.6;
  b.c_index = 0.8;
  a.auc.fill(0.5);
  b.auc.fill(0.7);
  const auto r = MetricsReport::aggregate({a, b});
  EXPECT_NEAR(r.mean.c_index, 0.7, 1e-15);
  EXPECT_NEAR(r.stddev.c_index, std::sqrt(0.02), 1e-15);
  EXPECT_NEAR(r.mean.auc[4], 0.6, 1e-15);
  EXPECT_NE(r.to_json().find("c_index"), std::string::npos);
  EXPECT_NE(r.to_table("x").find("+-"), std::string::npos);
}

TEST(Report, MissingClassAtAHorizonIsNaN) {
  // no case before 3 years, so the 1-year horizon has negatives only
  const std::vector<OutcomeLabel> l = {OutcomeLabel::cancer(3), OutcomeLabel::normal(5)};
  const std::vector<std::array<double, 5>> risks = {{0.1, 0.2, 0.3, 0.4, 0.5}, {0.1, 0.1, 0.1, 0.1, 0.1}};
  const auto m = evaluate_risks(risks, l);
  EXPECT_TRUE(std::isnan(m.auc[0]));
  EXPECT_EQ(m.auc[2], 1.0);
  EXPECT_EQ(m.c_index, 1.0);
}
