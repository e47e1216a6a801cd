#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "sta/autodiff/ops.hpp"
#include "sta/checkpoint.hpp"
#include "sta/config.hpp"
#include "sta/error.hpp"
#include "sta/experiment.hpp"

using namespace sta;
namespace fs = std::filesystem;

namespace {

// tiny model so CLI runs finish in seconds
const std::string kTiny =
    " --set d_model=8 --set heads=2 --set blocks=1 --set ffn_hidden=16 --set temporal_blocks=1"
    " --set image_size=16 --set learning_rates=0.001 --set batch_size=8";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sta_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(STA_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

RunConfig tiny_config() {
  RunConfig c;
  c.set("d_model", "8");
  c.set("heads", "2");
  c.set("blocks", "1");
  c.set("ffn_hidden", "16");
  c.set("temporal_blocks", "1");
  c.set("image_size", "16");
  return c;
}

std::vector<double> flat(Model& m) {
  std::vector<double> out;
  for (auto& [n, t] : m.parameters()) out.insert(out.end(), t->values().begin(), t->values().end());
  return out;
}

// synth + train a 2-fold, 1-epoch run in dir
void tiny_run(const fs::path& dir, std::size_t cases = 10, std::size_t controls = 30) {
  const std::string common = " --dataset " + (dir / "cohort.jsonl").string() + " --out " + dir.string() +
                             " --folds 2 --epochs 1 --threads 1 --seed 5" + kTiny;
  ASSERT_EQ(run("synth --cases " + std::to_string(cases) + " --controls " + std::to_string(controls) + common,
                dir / "synth.log"),
            0);
  ASSERT_EQ(run("train" + common, dir / "train.log"), 0);
}

}  // namespace

TEST(Config, SerializeParseRoundTrip) {
  RunConfig c;
  c.set("lambda", "0.25");
  c.set("learning_rates", "0.001,2e-05");
  c.set("side_encoding", "false");
  c.set("noise_std", "0.07");
  c.set("out", "some/dir");
  std::istringstream in(c.serialize());
  const RunConfig back = RunConfig::parse(in);
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.model.margins.lambda, 0.25);
  EXPECT_EQ(back.learning_rates, (std::vector<double>{0.001, 2e-05}));
  EXPECT_FALSE(back.model.side_encoding);
  EXPECT_EQ(back.get("out"), "some/dir");
}

TEST(Config, CommentsAndLaterLinesWin) {
  std::istringstream in("# comment\nepochs = 3\n\nepochs = 4  # trailing\nheads=2\n");
  const RunConfig c = RunConfig::parse(in);
  EXPECT_EQ(c.epochs, 4u);
  EXPECT_EQ(c.model.spatial.heads, 2u);
}

TEST(Config, BadKeysAndValuesAreNamed) {
  RunConfig c;
  try {
    c.set("no_such_key", "1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("no_such_key"), std::string::npos);
  }
  try {
    c.set("epochs", "many");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos);
  }
  EXPECT_THROW(c.set("side_encoding", "maybe"), ConfigError);
  std::istringstream in("epochs 3\n");
  EXPECT_THROW(RunConfig::parse(in), ConfigError);
  RunConfig bad;
  bad.k_folds = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, SharedKeysStayInSync) {
  RunConfig c;
  c.set("image_size", "16");
  c.set("seed", "77");
  EXPECT_EQ(c.model.spatial.image_size, 16u);
  EXPECT_EQ(c.cohort.image_size, 16u);
  EXPECT_EQ(c.cohort.seed, 77u);
  c.set("side_encoding", "0");
  c.set("asymmetry_loss", "0");
  EXPECT_EQ(c.toggle_tag(), "-side +tmp -asy");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch("ckpt");
  Checkpoint ck;
  ck.config = tiny_config();
  ck.model = Model::initialize(ck.config.model, 99);
  ck.epoch = 7;
  ck.fold = 2;
  ck.folds = 5;
  ck.learning_rate = 5e-5;
  ck.validation_auc1 = 0.8125;
  ck.dataset_seed = 123;
  ck.train_ids = {"case-00001", "ctrl-00002"};
  save_checkpoint(dir / "a.ckpt", ck);
  Checkpoint back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(flat(back.model), flat(ck.model));
  EXPECT_TRUE(back.config == ck.config);
  EXPECT_EQ(back.epoch, 7u);
  EXPECT_EQ(back.fold, 2u);
  EXPECT_EQ(back.folds, 5u);
  EXPECT_EQ(back.learning_rate, 5e-5);
  EXPECT_EQ(back.validation_auc1, 0.8125);
  EXPECT_EQ(back.dataset_seed, 123u);
  EXPECT_EQ(back.train_ids, ck.train_ids);
  for (auto& [n, t] : back.model.parameters()) EXPECT_TRUE(t->requires_grad()) << n;
}

TEST(Checkpoint, DamagedFilesAreRejected) {
  const fs::path dir = scratch("ckpt_bad");
  Checkpoint ck;
  ck.config = tiny_config();
  ck.model = Model::initialize(ck.config.model, 1);
  ck.folds = 2;
  save_checkpoint(dir / "a.ckpt", ck);
  const auto size = fs::file_size(dir / "a.ckpt");
  fs::copy_file(dir / "a.ckpt", dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", size - 8);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), DataError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint\n";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
}

// An untrained model has no business ranking patients.
TEST(Eval, RandomModelIsNearChance) {
  RunConfig c;
  c.cohort.n_cases = 100;
  c.cohort.n_controls = 400;
  c.cohort.seed = 404;
  const auto patients = generate_cohort(c.cohort);
  Model m = Model::initialize(c.model, 17);
  const auto risks = predict(m, patients);
  std::vector<double> r1;
  std::vector<int> y;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    r1.push_back(risks[i][4]);
    y.push_back(patients[i].label.y);
  }
  EXPECT_NEAR(auc(r1, y), 0.5, 0.07);
}

TEST(Eval, OracleScoresFileIsPerfect) {
  const fs::path dir = scratch("scores");
  CohortSpec spec;
  spec.n_cases = 20;
  spec.n_controls = 40;
  spec.image_size = 16;
  spec.seed = 3;
  const Dataset d{3, generate_cohort(spec)};
  write_dataset(dir / "cohort.jsonl", d);
  std::ofstream csv(dir / "scores.csv");
  csv << "patient_id,r1,r2,r3,r4,r5\n# oracle\n";
  for (const auto& p : d.patients) {
    csv << p.patient_id;
    for (int k = 1; k <= 5; ++k) {
      const double r = p.label.y == 0 ? 0.1 : p.label.event_year <= k ? 0.9 - 0.1 * p.label.event_year : 0.2;
      csv << ',' << r;
    }
    csv << '\n';
  }
  csv.close();
  ASSERT_EQ(run("eval --dataset " + (dir / "cohort.jsonl").string() + " --scores-file " +
                    (dir / "scores.csv").string() + " --out " + dir.string(),
                dir / "eval.log"),
            0);
  const auto j = read_json(dir / "eval_metrics.json");
  EXPECT_EQ(j["mean"]["c_index"].get<double>(), 1.0);
  ASSERT_EQ(j["mean"]["auc_by_horizon"].size(), 5u);
  for (const auto& a : j["mean"]["auc_by_horizon"]) EXPECT_EQ(a.get<double>(), 1.0);
}

TEST(Eval, TrainSplitNeedsExplicitPermission) {
  const fs::path dir = scratch("leak");
  tiny_run(dir);
  const std::string base = "eval --dataset " + (dir / "cohort.jsonl").string() + " --out " + dir.string();
  EXPECT_EQ(run(base + " --split train", dir / "e1.log"), 2);
  EXPECT_EQ(run(base + " --split train --allow-train-eval", dir / "e2.log"), 0);
  EXPECT_EQ(run(base, dir / "e3.log"), 0);
  // test-split evaluation reproduces the training report
  EXPECT_EQ(read_json(dir / "eval_metrics.json")["mean"], read_json(dir / "metrics.json")["mean"]);
}

TEST(Eval, OtherDatasetIsAFoldMismatch) {
  const fs::path dir = scratch("mismatch");
  tiny_run(dir);
  ASSERT_EQ(run("synth --cases 12 --controls 30 --seed 6 --dataset " + (dir / "other.jsonl").string() + kTiny,
                dir / "s.log"),
            0);
  EXPECT_EQ(run("eval --dataset " + (dir / "other.jsonl").string() + " --out " + dir.string(), dir / "e.log"), 2);
}

TEST(Train, WritesFoldsWithoutOverlap) {
  const fs::path dir = scratch("folds");
  tiny_run(dir);
  for (const char* f : {"config.txt", "fold-1.ckpt", "fold-2.ckpt", "train_log.jsonl", "metrics.txt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto folds = read_json(dir / "folds.json");
  ASSERT_EQ(folds.size(), 2u);
  for (std::size_t f = 0; f < 2; ++f) {
    const Checkpoint ck = load_checkpoint(dir / ("fold-" + std::to_string(f + 1) + ".ckpt"));
    const std::set<std::string> train(ck.train_ids.begin(), ck.train_ids.end());
    for (const auto& id : folds[f]["test"]) EXPECT_EQ(train.count(id.get<std::string>()), 0u);
    EXPECT_EQ(train.size() + folds[f]["test"].size(), 40u);
  }
}

TEST(Ablate, ProducesSixRows) {
  const fs::path dir = scratch("ablate");
  const std::string common = " --dataset " + (dir / "cohort.jsonl").string() + " --out " + dir.string() +
                             " --folds 2 --epochs 1 --threads 1" + kTiny;
  ASSERT_EQ(run("synth --cases 8 --controls 16" + common, dir / "s.log"), 0);
  ASSERT_EQ(run("ablate" + common, dir / "a.log"), 0);
  const auto rows = read_json(dir / "ablation.json");
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_FALSE(rows[0]["side_encoding"].get<bool>());
  EXPECT_TRUE(rows[5]["side_encoding"].get<bool>() && rows[5]["temporal_encoding"].get<bool>() &&
              rows[5]["asymmetry_loss"].get<bool>());
}

TEST(Gradcheck, InjectedFaultFailsExactlyThePathsUsingThatOp) {
  const fs::path dir = scratch("gradcheck");
  EXPECT_EQ(run("gradcheck --inject-fault matmul --out " + dir.string(), dir / "g.log"), 3);
  const auto j = read_json(dir / "gradcheck.json");
  EXPECT_FALSE(j["passed"].get<bool>());
  std::size_t primitives = 0;
  std::set<std::string> names;
  for (const auto& e : j["entries"]) {
    bool uses = false;
    for (const auto& op : e["ops"]) uses = uses || op == "matmul";
    EXPECT_EQ(e["passed"].get<bool>(), !uses) << e["name"];
    if (e["kind"] == "primitive") {
      ++primitives;
      names.insert(e["name"].get<std::string>());
    }
  }
  EXPECT_EQ(primitives, ad::primitive_names().size());
  EXPECT_EQ(names.size(), primitives);
}

TEST(ExitCodes, UsageDataAndVerification) {
  const fs::path dir = scratch("exit");
  EXPECT_EQ(run("--no-such-flag", dir / "a.log"), 1);
  EXPECT_EQ(run("train --set no_such_key=1", dir / "b.log"), 1);
  EXPECT_EQ(run("gradcheck --inject-fault no_such_op", dir / "c.log"), 1);
  EXPECT_EQ(run("train --dataset " + (dir / "missing.jsonl").string(), dir / "d.log"), 2);
  std::ofstream(dir / "broken.jsonl") << "{\"format\":\"sta-cohort\",\"version\":1,\"seed\":1}\n{oops\n";
  EXPECT_EQ(run("eval --dataset " + (dir / "broken.jsonl").string() + " --out " + dir.string(), dir / "e.log"), 2);
  // single-class cohort cannot be split for training
  ASSERT_EQ(run("synth --cases 0 --controls 10 --dataset " + (dir / "one.jsonl").string() + kTiny, dir / "f.log"), 0);
  EXPECT_EQ(run("train --folds 2 --epochs 1 --dataset " + (dir / "one.jsonl").string() + " --out " +
                    dir.string() + kTiny,
                dir / "g.log"),
            2);
}
