#include "sta/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sta/error.hpp"

namespace sta {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

void put_f64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Model model = ck.model;
  const auto params = model.parameters();
  json manifest = {{"format", "sta-checkpoint"},
                   {"version", kCheckpointVersion},
                   {"epoch", ck.epoch},
                   {"fold", ck.fold},
                   {"folds", ck.folds},
                   {"learning_rate", ck.learning_rate},
                   {"validation_auc1", ck.validation_auc1},
                   {"dataset_seed", ck.dataset_seed},
                   {"train_ids", ck.train_ids},
                   {"config", ck.config.to_map()}};
  json& list = manifest["parameters"] = json::array();
  for (const auto& [name, t] : params) list.push_back({{"name", name}, {"shape", t->shape()}});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out << manifest.dump() << '\n';
  for (const auto& [name, t] : params)
    for (double v : t->values()) put_f64(out, v);
  if (!out) throw DataError("write failed for checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("checkpoint: empty file", 1);
  json m;
  try {
    m = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest: ") + e.what(), 1);
  }
  Checkpoint ck;
  try {
    if (m.at("format") != "sta-checkpoint") throw DataError("not a checkpoint file", 1);
    if (m.at("version") != kCheckpointVersion)
      throw DataError("checkpoint version " + m.at("version").dump() + " is not supported", 1);
    RunConfig config;
    for (const auto& [k, v] : m.at("config").items()) config.set(k, v.get<std::string>());
    ck.config = config;
    ck.epoch = m.at("epoch").get<std::size_t>();
    ck.fold = m.at("fold").get<std::size_t>();
    ck.folds = m.at("folds").get<std::size_t>();
    ck.learning_rate = m.at("learning_rate").get<double>();
    ck.validation_auc1 = m.at("validation_auc1").get<double>();
    ck.dataset_seed = m.at("dataset_seed").get<std::uint64_t>();
    ck.train_ids = m.at("train_ids").get<std::vector<std::string>>();

    ck.model = Model::initialize(config.model, 0);
    auto params = ck.model.parameters();
    const auto& list = m.at("parameters");
    if (list.size() != params.size()) {
      throw DataError("checkpoint holds " + std::to_string(list.size()) +
                      " tensors but the config builds " + std::to_string(params.size()));
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, t] = params[i];
      if (list[i].at("name") != name || list[i].at("shape").get<ad::Shape>() != t->shape())
        throw DataError("checkpoint tensor " + std::to_string(i) + " does not match '" + name + "'");
      total += t->numel();
    }
    std::vector<unsigned char> payload(total * 8);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(in.gcount()) != payload.size())
      throw DataError("checkpoint payload is truncated");
    const unsigned char* p = payload.data();
    for (auto& [name, t] : params)
      for (double& v : t->mutable_values()) {
        v = get_f64(p);
        p += 8;
      }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest: ") + e.what(), 1);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what(), 1);
  }
  return ck;
}

}  // namespace sta
