#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sta/cohort.hpp"
#include "sta/model.hpp"

namespace sta {

/// Everything a run needs. Every field has a flat key (see keys()).
struct RunConfig {
  ModelConfig model;
  CohortSpec cohort;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::vector<double> learning_rates = {5e-5, 1e-5};
  std::size_t k_folds = 5;
  std::uint64_t seed = 20240901;  // cohort, folds and initialization
  std::size_t threads = 0;        // 0: one per hardware thread
  std::string dataset = "cohort.jsonl";
  std::string out = "runs";

  /// Throws ConfigError naming the key for an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// `key = value` lines in keys() order.
  std::string serialize() const;
  std::map<std::string, std::string> to_map() const;

  /// Reads `key = value` lines; `#` starts a comment. Later lines win.
  static RunConfig parse(std::istream& in);
  static RunConfig parse_file(const std::string& path);

  /// Throws ConfigError for values no run can use.
  void validate() const;

  /// Short "side/tmp/asy" toggle tag, e.g. "+side +tmp -asy".
  std::string toggle_tag() const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace sta
