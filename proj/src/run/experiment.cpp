#include "sta/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "sta/error.hpp"

namespace sta {

namespace {

std::vector<OutcomeLabel> labels_of(const Dataset& data) {
  std::vector<OutcomeLabel> out;
  for (const auto& p : data.patients) out.push_back(p.label);
  return out;
}

std::vector<const PatientSeries*> select(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<const PatientSeries*> out;
  for (auto i : idx) out.push_back(&data.patients[i]);
  return out;
}

FoldMetrics score(const Model& model, std::span<const PatientSeries* const> patients,
                  std::size_t batch) {
  const auto risks = predict(model, patients, batch);
  std::vector<OutcomeLabel> labels;
  for (const auto* p : patients) labels.push_back(p->label);
  return evaluate_risks(risks, labels);
}

struct Job {
  std::size_t config, fold, lr;
};

}  // namespace

std::uint64_t run_seed(std::uint64_t seed, std::size_t fold, std::size_t lr_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fold), static_cast<std::uint32_t>(lr_index),
                    0x51a7u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::vector<CrossValidation> cross_validate(std::span<const RunConfig> configs,
                                            const Dataset& data, const ProgressFn& progress) {
  if (configs.empty()) return {};
  const auto t0 = std::chrono::steady_clock::now();
  const auto labels = labels_of(data);

  std::vector<CrossValidation> out(configs.size());
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    configs[c].validate();
    out[c].config = configs[c];
    out[c].folds = kfold_split(labels, configs[c].k_folds, configs[c].seed);
    const std::size_t lrs = configs[c].learning_rates.size();
    out[c].runs.resize(out[c].folds.size() * lrs);
    for (std::size_t f = 0; f < out[c].folds.size(); ++f) {
      for (std::size_t l = 0; l < lrs; ++l) jobs.push_back({c, f, l});
      // a single-class split fails here, before any training starts
      for (const auto* split : {&out[c].folds[f].train, &out[c].folds[f].test}) {
        std::vector<OutcomeLabel> part;
        for (auto i : *split) part.push_back(labels[i]);
        ClassWeights::from_labels(part);
      }
    }
  }

  std::vector<TrainResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      const Job job = jobs[j];
      const RunConfig& cfg = configs[job.config];
      const Fold& fold = out[job.config].folds[job.fold];
      TrainOptions opt;
      opt.epochs = cfg.epochs;
      opt.batch_size = cfg.batch_size;
      opt.learning_rate = cfg.learning_rates[job.lr];
      opt.seed = run_seed(cfg.seed, job.fold, job.lr);
      try {
        const auto train = select(data, fold.train);
        const auto test = select(data, fold.test);
        results[j] = train_model(cfg.model, train, test, opt, [&](const EpochLog& e) {
          if (!progress) return;
          std::lock_guard lock(mu);
          progress({job.config, job.fold, opt.learning_rate, e});
        });
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::size_t threads = configs[0].threads;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t + 1 < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Job job = jobs[j];
    CrossValidation& cv = out[job.config];
    const std::size_t lrs = cv.config.learning_rates.size();
    TrainResult& r = results[j];
    GridRun& g = cv.runs[job.fold * lrs + job.lr];
    g = {job.fold, cv.config.learning_rates[job.lr], r.log, r.best_epoch, r.best_auc1, r.diverged};
    cv.diverged = cv.diverged || r.diverged;
  }
  for (std::size_t c = 0; c < out.size(); ++c) {
    CrossValidation& cv = out[c];
    const std::size_t lrs = cv.config.learning_rates.size();
    std::vector<FoldMetrics> metrics;
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
      // first learning rate wins ties
      std::size_t best = 0;
      for (std::size_t l = 1; l < lrs; ++l)
        if (cv.runs[f * lrs + l].best_auc1 > cv.runs[f * lrs + best].best_auc1) best = l;
      std::size_t j = 0;
      while (!(jobs[j].config == c && jobs[j].fold == f && jobs[j].lr == best)) ++j;
      Checkpoint ck;
      ck.config = cv.config;
      ck.model = std::move(results[j].best);
      ck.epoch = results[j].best_epoch;
      ck.fold = f;
      ck.folds = cv.folds.size();
      ck.learning_rate = cv.config.learning_rates[best];
      ck.validation_auc1 = results[j].best_auc1;
      ck.dataset_seed = data.seed;
      for (auto i : cv.folds[f].train) ck.train_ids.push_back(data.patients[i].patient_id);
      metrics.push_back(score(ck.model, select(data, cv.folds[f].test), cv.config.batch_size));
      cv.best.push_back(std::move(ck));
    }
    cv.report = MetricsReport::aggregate(std::move(metrics));
    cv.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return out;
}

CrossValidation cross_validate(const RunConfig& config, const Dataset& data,
                               const ProgressFn& progress) {
  const RunConfig one[] = {config};
  return std::move(cross_validate(one, data, progress).front());
}

std::vector<RunConfig> ablation_configs(const RunConfig& base) {
  // side, temporal, asymmetry
  constexpr bool rows[6][3] = {{false, false, false}, {true, false, false}, {false, false, true},
                               {true, false, true},   {true, true, false},  {true, true, true}};
  std::vector<RunConfig> out;
  for (const auto& r : rows) {
    RunConfig c = base;
    c.model.side_encoding = r[0];
    c.model.temporal_encoding = r[1];
    c.model.asymmetry_loss = r[2];
    out.push_back(c);
  }
  return out;
}

std::string ablation_table(std::span<const CrossValidation> rows) {
  auto cell = [](double m, double s) {
    char buf[32];
    if (std::isnan(m)) return std::string("n/a");
    std::snprintf(buf, sizeof buf, "%.3f +- %.3f", m, s);
    return std::string(buf);
  };
  std::string out = "Side  Tmp  Asy  | C-index          ";
  for (std::size_t k = 1; k <= kHorizons; ++k) out += "| " + std::to_string(k) + "-year AUC       ";
  out += "\n";
  for (const auto& cv : rows) {
    const auto mark = [](bool on) { return on ? std::string("yes  ") : std::string("no   "); };
    std::string line = mark(cv.config.model.side_encoding) + mark(cv.config.model.temporal_encoding) +
                       mark(cv.config.model.asymmetry_loss) + "| ";
    auto pad = [](std::string s) {
      s.resize(17, ' ');
      return s;
    };
    line += pad(cell(cv.report.mean.c_index, cv.report.stddev.c_index));
    for (std::size_t k = 0; k < kHorizons; ++k)
      line += "| " + pad(cell(cv.report.mean.auc[k], cv.report.stddev.auc[k]));
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

FoldMetrics evaluate_checkpoint(const Checkpoint& ck, const Dataset& data, EvalSplit split,
                                bool allow_train_eval) {
  if (split == EvalSplit::train && !allow_train_eval) {
    throw LeakageError("refusing to evaluate on the checkpoint's training patients (fold " +
                       std::to_string(ck.fold + 1) + "); pass --allow-train-eval to override");
  }
  if (ck.folds < 2 || ck.fold >= ck.folds)
    throw DataError("checkpoint names fold " + std::to_string(ck.fold) + " of " + std::to_string(ck.folds));
  const auto folds = kfold_split(labels_of(data), ck.folds, ck.config.seed);
  const Fold& fold = folds[ck.fold];
  std::set<std::string> rebuilt, stored(ck.train_ids.begin(), ck.train_ids.end());
  for (auto i : fold.train) rebuilt.insert(data.patients[i].patient_id);
  if (rebuilt != stored) {
    throw DataError("fold/test mismatch: the dataset does not reproduce the training split of fold " +
                    std::to_string(ck.fold + 1));
  }
  const auto& idx = split == EvalSplit::test ? fold.test : fold.train;
  return score(ck.model, select(data, idx), ck.config.batch_size);
}

}  // namespace sta
