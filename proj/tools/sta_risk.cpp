// sta-risk: synth | train | eval | ablate | gradcheck
#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sta/autodiff/ops.hpp"
#include "sta/checkpoint.hpp"
#include "sta/config.hpp"
#include "sta/error.hpp"
#include "sta/experiment.hpp"
#include "sta/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace sta;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kVerify = 3 };

struct Options {
  std::string config_path;
  std::string dataset, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> folds, epochs, threads, cases, controls;
  bool no_side = false, no_temporal = false, no_asym = false;
  std::vector<std::string> sets;  // key=value

  // eval
  std::vector<std::string> checkpoints;
  std::string scores_file;
  std::string split = "test";
  bool allow_train_eval = false;

  // gradcheck
  std::string fault;
};

[[gnu::format(printf, 1, 2)]] void log(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  std::vfprintf(stderr, fmt, args);
  va_end(args);
  std::fputc('\n', stderr);
}

RunConfig resolve(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : RunConfig::parse_file(o.config_path);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.dataset.empty()) c.dataset = o.dataset;
  if (!o.out.empty()) c.out = o.out;
  if (o.seed) c.set("seed", std::to_string(*o.seed));
  if (o.folds) c.k_folds = *o.folds;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.threads) c.threads = *o.threads;
  if (o.cases) c.cohort.n_cases = *o.cases;
  if (o.controls) c.cohort.n_controls = *o.controls;
  if (o.no_side) c.model.side_encoding = false;
  if (o.no_temporal) c.model.temporal_encoding = false;
  if (o.no_asym) c.model.asymmetry_loss = false;
  c.validate();
  return c;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write '" + path.string() + "'");
}

Dataset load(const RunConfig& c) {
  Dataset d = read_dataset(c.dataset);
  log("read %zu patients from %s", d.patients.size(), c.dataset.c_str());
  return d;
}

ProgressFn progress_logger(std::span<const RunConfig> configs) {
  return [configs](const ProgressEvent& e) {
    const auto& l = e.epoch;
    log("[%s] fold %zu lr %g epoch %2zu  L_primary %.4f  L_asym %.4f  "
        "D(case/ctrl) %.3f/%.3f  Delta(case/ctrl) %.3f/%.3f  val AUC1 %.4f",
        configs[e.config].toggle_tag().c_str(), e.fold + 1, e.learning_rate, l.epoch, l.primary,
        l.asymmetry, l.d_bar_cases, l.d_bar_controls, l.delta_bar_cases, l.delta_bar_controls,
        l.validation_auc1);
  };
}

std::string train_log_jsonl(const CrossValidation& cv) {
  std::string out;
  for (const auto& run : cv.runs)
    for (const auto& l : run.log) {
      nlohmann::json j = {{"config", cv.config.toggle_tag()},
                          {"fold", run.fold + 1},
                          {"learning_rate", run.learning_rate},
                          {"epoch", l.epoch},
                          {"primary", l.primary},
                          {"asymmetry", l.asymmetry},
                          {"d_bar_cases", l.d_bar_cases},
                          {"d_bar_controls", l.d_bar_controls},
                          {"delta_bar_cases", l.delta_bar_cases},
                          {"delta_bar_controls", l.delta_bar_controls},
                          {"validation_auc1", l.validation_auc1}};
      out += j.dump() + "\n";
    }
  return out;
}

std::string folds_json(const CrossValidation& cv, const Dataset& data) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& f : cv.folds) {
    std::vector<std::string> test;
    for (auto i : f.test) test.push_back(data.patients[i].patient_id);
    j.push_back({{"test", test}});
  }
  return j.dump(1) + "\n";
}

// ---------------------------------------------------------------------------------------

int cmd_synth(const Options& o) {
  const RunConfig c = resolve(o);
  CohortSpec spec = c.cohort;
  spec.seed = c.seed;
  if (spec.n_controls == 0 || spec.n_cases == 0)
    log("warning: single-class cohort (%zu cases, %zu controls); training on it will fail",
        spec.n_cases, spec.n_controls);
  Dataset d{spec.seed, generate_cohort(spec)};
  const fs::path path = c.dataset;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_dataset(path, d);
  std::size_t exams = 0;
  for (const auto& p : d.patients) exams += p.exams.size();
  log("wrote %s: %zu patients (%zu cases, %zu controls), %zu exams, seed %llu", c.dataset.c_str(),
      d.patients.size(), spec.n_cases, spec.n_controls, exams,
      static_cast<unsigned long long>(spec.seed));
  return kOk;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve(o);
  const Dataset data = load(c);
  const RunConfig one[] = {c};
  const auto t0 = std::chrono::steady_clock::now();
  CrossValidation cv = std::move(cross_validate(one, data, progress_logger(one)).front());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path out = c.out;
  fs::create_directories(out);
  write_file(out / "config.txt", c.serialize());
  for (const auto& ck : cv.best)
    save_checkpoint(out / ("fold-" + std::to_string(ck.fold + 1) + ".ckpt"), ck);
  write_file(out / "train_log.jsonl", train_log_jsonl(cv));
  write_file(out / "folds.json", folds_json(cv, data));
  write_file(out / "metrics.json", cv.report.to_json() + "\n");
  const std::string table = cv.report.to_table(c.toggle_tag());
  write_file(out / "metrics.txt", table);
  std::fputs(table.c_str(), stdout);
  for (const auto& ck : cv.best)
    log("fold %zu: best lr %g epoch %zu val AUC1 %.4f", ck.fold + 1, ck.learning_rate, ck.epoch,
        ck.validation_auc1);
  log("trained %zu runs in %.1f s; outputs in %s", cv.runs.size(), secs, out.c_str());
  if (cv.diverged) {
    log("error: training diverged (non-finite loss); the last good checkpoints were kept");
    return kVerify;
  }
  return kOk;
}

std::vector<fs::path> checkpoint_paths(const Options& o, const RunConfig& c) {
  std::vector<fs::path> paths(o.checkpoints.begin(), o.checkpoints.end());
  if (!paths.empty()) return paths;
  if (fs::is_directory(c.out))
    for (const auto& e : fs::directory_iterator(c.out))
      if (e.path().extension() == ".ckpt") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw DataError("no checkpoints given and none found in '" + c.out + "'");
  return paths;
}

MetricsReport eval_scores_file(const std::string& path, const Dataset& data) {
  std::map<std::string, const PatientSeries*> by_id;
  for (const auto& p : data.patients) by_id[p.patient_id] = &p;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scores file '" + path + "'");
  std::vector<std::array<double, kHorizons>> risks;
  std::vector<OutcomeLabel> labels;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#' || line.rfind("patient_id", 0) == 0) continue;
    std::stringstream ss(line);
    std::string id, cell;
    std::getline(ss, id, ',');
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("unknown patient '" + id + "'", n);
    std::array<double, kHorizons> r{};
    for (auto& v : r) {
      if (!std::getline(ss, cell, ',')) throw DataError("expected " + std::to_string(kHorizons) + " risks", n);
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw DataError("bad risk value '" + cell + "'", n);
      }
    }
    risks.push_back(r);
    labels.push_back(it->second->label);
  }
  if (risks.empty()) throw DataError("scores file '" + path + "' holds no rows");
  return MetricsReport::aggregate({evaluate_risks(risks, labels)});
}

int cmd_eval(const Options& o) {
  const RunConfig c = resolve(o);
  const Dataset data = load(c);
  MetricsReport report;
  if (!o.scores_file.empty()) {
    report = eval_scores_file(o.scores_file, data);
  } else {
    const EvalSplit split = o.split == "train" ? EvalSplit::train : EvalSplit::test;
    std::vector<FoldMetrics> folds;
    for (const auto& path : checkpoint_paths(o, c)) {
      const Checkpoint ck = load_checkpoint(path);
      if (ck.dataset_seed != data.seed)
        log("warning: %s was trained on a dataset with seed %llu, evaluating on seed %llu",
            path.c_str(), static_cast<unsigned long long>(ck.dataset_seed),
            static_cast<unsigned long long>(data.seed));
      folds.push_back(evaluate_checkpoint(ck, data, split, o.allow_train_eval));
      log("%s: fold %zu C-index %.4f AUC1 %.4f", path.c_str(), ck.fold + 1, folds.back().c_index,
          folds.back().auc[0]);
    }
    report = MetricsReport::aggregate(std::move(folds));
  }
  const fs::path out = c.out;
  write_file(out / "eval_metrics.json", report.to_json() + "\n");
  const std::string table = report.to_table("eval");
  write_file(out / "eval_metrics.txt", table);
  std::fputs(table.c_str(), stdout);
  return kOk;
}

int cmd_ablate(const Options& o) {
  const RunConfig c = resolve(o);
  const Dataset data = load(c);
  const auto configs = ablation_configs(c);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = cross_validate(configs, data, progress_logger(configs));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string table = ablation_table(rows);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"side_encoding", r.config.model.side_encoding},
                 {"temporal_encoding", r.config.model.temporal_encoding},
                 {"asymmetry_loss", r.config.model.asymmetry_loss},
                 {"metrics", nlohmann::json::parse(r.report.to_json())}});
  }
  const fs::path out = c.out;
  write_file(out / "ablation.json", j.dump(2) + "\n");
  write_file(out / "ablation.txt", table);
  std::fputs(table.c_str(), stdout);
  log("ablation finished in %.1f s", secs);
  for (const auto& r : rows)
    if (r.diverged) {
      log("error: a run diverged in row %s", r.config.toggle_tag().c_str());
      return kVerify;
    }
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  if (!o.fault.empty()) {
    const auto names = ad::primitive_names();
    if (std::find(names.begin(), names.end(), o.fault) == names.end())
      throw ConfigError("--inject-fault: unknown op '" + o.fault + "'");
    log("injecting a backward fault into '%s'", o.fault.c_str());
  }
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport report = run_gradcheck_suite(o.fault);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fputs(report.to_text().c_str(), stdout);
  if (!o.out.empty()) write_file(fs::path(o.out) / "gradcheck.json", report.to_json() + "\n");
  log("gradcheck took %.1f s", secs);
  return report.passed() ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  // the training loop allocates and frees large buffers every step
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Spatial-temporal asymmetry breast cancer risk model"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--dataset", o.dataset, "dataset path (JSON lines)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "seed for cohort, folds and initialization");
    sub->add_option("--folds", o.folds, "number of cross-validation folds");
    sub->add_option("--epochs", o.epochs, "training epochs per run");
    sub->add_option("--threads", o.threads, "worker threads (0: all cores)");
    sub->add_flag("--no-side", o.no_side, "disable side encoding");
    sub->add_flag("--no-temporal", o.no_temporal, "disable temporal encoding");
    sub->add_flag("--no-asym", o.no_asym, "disable the asymmetry loss");
    sub->add_option("--set", o.sets, "override any config key (key=value)");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  common(synth);
  synth->add_option("--cases", o.cases, "number of cancer cases");
  synth->add_option("--controls", o.controls, "number of controls");
  auto* train = app.add_subcommand("train", "k-fold training with learning-rate grid");
  common(train);
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints or a scores file");
  common(eval);
  eval->add_option("--checkpoint", o.checkpoints, "checkpoint files (default: --out/*.ckpt)");
  eval->add_option("--scores-file", o.scores_file, "CSV: patient_id,r1,r2,r3,r4,r5");
  eval->add_option("--split", o.split, "test or train")->check(CLI::IsMember({"test", "train"}));
  eval->add_flag("--allow-train-eval", o.allow_train_eval,
                 "allow evaluating on a checkpoint's training patients");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the six toggle rows");
  common(ablate);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--out", o.out, "directory for gradcheck.json");
  gradcheck->add_option("--inject-fault", o.fault, "corrupt the backward rule of one op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
    if (*gradcheck) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    log("usage error: %s", e.what());
    return kUsage;
  } catch (const LeakageError& e) {
    log("error: %s", e.what());
    return kData;
  } catch (const DataError& e) {
    log("data error: %s", e.what());
    return kData;
  } catch (const fs::filesystem_error& e) {
    log("error: %s", e.what());
    return kData;
  } catch (const std::invalid_argument& e) {
    log("data error: %s", e.what());
    return kData;
  } catch (const std::exception& e) {
    log("error: %s", e.what());
    return kData;
  }
  return kUsage;
}
