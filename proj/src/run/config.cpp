#include "sta/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "sta/error.hpp"

namespace sta {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError(key + ": '" + s + "' is not a finite number");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": '" + s + "' is not a non-negative integer");
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": '" + s + "' is not a boolean");
}

struct Entry {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// field projections keep each key to one line
template <typename F>
Entry size_field(F field) {
  return {[field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [field](RunConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(to_u64("", v));
          }};
}

template <typename F>
Entry double_field(F field) {
  return {[field](const RunConfig& c) { return fmt_double(field(const_cast<RunConfig&>(c))); },
          [field](RunConfig& c, const std::string& v) { field(c) = to_double("", v); }};
}

template <typename F>
Entry bool_field(F field) {
  return {[field](const RunConfig& c) {
            return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false");
          },
          [field](RunConfig& c, const std::string& v) { field(c) = to_bool("", v); }};
}

template <typename F>
Entry string_field(F field) {
  return {[field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = v; }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<std::pair<std::string, Entry>>& table() {
  static const std::vector<std::pair<std::string, Entry>> t = {
      {"d_model", size_field(FIELD(c.model.spatial.d_model))},
      {"heads", size_field(FIELD(c.model.spatial.heads))},
      {"blocks", size_field(FIELD(c.model.spatial.blocks))},
      {"temporal_blocks", size_field(FIELD(c.model.temporal_blocks))},
      {"ffn_hidden", size_field(FIELD(c.model.spatial.ffn_hidden))},
      {"patch_size", size_field(FIELD(c.model.spatial.patch))},
      {"image_size", size_field(FIELD(c.model.spatial.image_size))},
      {"max_exams", size_field(FIELD(c.model.max_exams))},
      {"side_encoding", bool_field(FIELD(c.model.side_encoding))},
      {"temporal_encoding", bool_field(FIELD(c.model.temporal_encoding))},
      {"asymmetry_loss", bool_field(FIELD(c.model.asymmetry_loss))},
      {"side_embedding_shared", bool_field(FIELD(c.model.side_embedding_shared))},
      {"asym_on",
       {[](const RunConfig& c) {
          return std::string(c.model.asym_on == AsymmetrySource::spatial ? "spatial" : "temporal");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "spatial") c.model.asym_on = AsymmetrySource::spatial;
          else if (v == "temporal") c.model.asym_on = AsymmetrySource::temporal;
          else throw ConfigError(": '" + v + "' is not spatial or temporal");
        }}},
      {"lambda", double_field(FIELD(c.model.margins.lambda))},
      {"m1", double_field(FIELD(c.model.margins.m1))},
      {"m2", double_field(FIELD(c.model.margins.m2))},
      {"m1_prime", double_field(FIELD(c.model.margins.m1_prime))},
      {"m2_prime", double_field(FIELD(c.model.margins.m2_prime))},
      {"epochs", size_field(FIELD(c.epochs))},
      {"batch_size", size_field(FIELD(c.batch_size))},
      {"learning_rates",
       {[](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.learning_rates.size(); ++i)
            s += (i ? ", " : "") + fmt_double(c.learning_rates[i]);
          return s;
        },
        [](RunConfig& c, const std::string& v) {
          std::vector<double> lrs;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) lrs.push_back(to_double("", trim(item)));
          if (lrs.empty()) throw ConfigError(": empty list");
          c.learning_rates = lrs;
        }}},
      {"k_folds", size_field(FIELD(c.k_folds))},
      {"seed", size_field(FIELD(c.seed))},
      {"threads", size_field(FIELD(c.threads))},
      {"n_cases", size_field(FIELD(c.cohort.n_cases))},
      {"n_controls", size_field(FIELD(c.cohort.n_controls))},
      {"background", double_field(FIELD(c.cohort.background))},
      {"bump_amplitude", double_field(FIELD(c.cohort.bump_amplitude))},
      {"blob_base", double_field(FIELD(c.cohort.blob_base))},
      {"blob_growth", double_field(FIELD(c.cohort.blob_growth))},
      {"blob_sigma", double_field(FIELD(c.cohort.blob_sigma))},
      {"noise_std", double_field(FIELD(c.cohort.noise_std))},
      {"allow_single_exam", bool_field(FIELD(c.cohort.allow_single_exam))},
      {"dataset", string_field(FIELD(c.dataset))},
      {"out", string_field(FIELD(c.out))},
  };
  return t;
}

#undef FIELD

const Entry& find(const std::string& key) {
  for (const auto& [k, e] : table())
    if (k == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, e] : table()) out.push_back(name);
    return out;
  }();
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Entry& e = find(key);
  try {
    e.set(*this, trim(value));
  } catch (const ConfigError& err) {
    throw ConfigError(key + err.what());  // setters leave the key out
  }
  // the image size drives both generator and model
  if (key == "image_size") cohort.image_size = model.spatial.image_size;
  if (key == "seed") cohort.seed = seed;
}

std::string RunConfig::get(const std::string& key) const { return find(key).get(*this); }

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  for (const auto& [k, e] : table()) m[k] = e.get(*this);
  return m;
}

std::string RunConfig::serialize() const {
  std::string s;
  for (const auto& [k, e] : table()) s += k + " = " + e.get(*this) + "\n";
  return s;
}

RunConfig RunConfig::parse(std::istream& in) {
  RunConfig c;
  c.cohort.seed = c.seed;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(n) + ": expected 'key = value'");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in);
}

void RunConfig::validate() const {
  const auto& s = model.spatial;
  if (s.d_model == 0 || s.d_model % 2 != 0) throw ConfigError("d_model must be even and positive");
  if (s.heads == 0 || s.d_model % s.heads != 0) throw ConfigError("heads must divide d_model");
  if (s.patch == 0 || s.image_size % s.patch != 0)
    throw ConfigError("patch_size must divide image_size");
  if (model.max_exams == 0) throw ConfigError("max_exams must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (k_folds < 2) throw ConfigError("k_folds must be at least 2");
  for (double lr : learning_rates)
    if (!(lr > 0)) throw ConfigError("learning_rates must be positive");
  try {
    model.margins.validate();
    cohort.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cohort.image_size != s.image_size) throw ConfigError("image_size mismatch");
}

std::string RunConfig::toggle_tag() const {
  auto mark = [](bool on) { return on ? "+" : "-"; };
  return std::string(mark(model.side_encoding)) + "side " + mark(model.temporal_encoding) + "tmp " +
         mark(model.asymmetry_loss) + "asy";
}

bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_map() == b.to_map(); }

}  // namespace sta
