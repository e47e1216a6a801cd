#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include <openssl/evp.h>

#include "sta/cohort.hpp"
#include "sta/error.hpp"

namespace sta {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "pixel payloads assume little-endian");

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("base64: invalid character");
  // EVP_DecodeBlock keeps the zero bytes that stand in for '=' padding
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') pad = text[text.size() - 2] == '=' ? 2 : 1;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

namespace {

json view_json(const ViewImage& img) {
  std::vector<std::uint8_t> bytes(img.pixels.size() * sizeof(float));
  std::memcpy(bytes.data(), img.pixels.data(), bytes.size());
  return {{"h", img.height}, {"w", img.width}, {"pixels_b64", base64_encode(bytes)}};
}

json patient_json(const PatientSeries& p) {
  json label = {{"y", p.label.y}};
  if (p.label.y == 1)
    label["event_year"] = p.label.event_year;
  else
    label["followup_years"] = p.label.followup_years;
  json exams = json::array();
  for (const auto& e : p.exams) {
    json views = json::object();
    for (const auto& v : e.views) views[std::string(to_string(v.view))] = view_json(v);
    exams.push_back({{"year", e.year}, {"views", views}});
  }
  return {{"patient_id", p.patient_id}, {"label", label}, {"exams", exams}};
}

template <typename T>
T field(const json& obj, const char* key, std::size_t line) {
  if (!obj.is_object() || !obj.contains(key)) throw DataError(std::string("missing field '") + key + "'", line);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("field '") + key + "' has the wrong type", line);
  }
}

ViewImage parse_view_image(const json& j, View view, std::size_t line) {
  ViewImage img;
  img.view = view;
  img.height = field<std::size_t>(j, "h", line);
  img.width = field<std::size_t>(j, "w", line);
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64_decode(field<std::string>(j, "pixels_b64", line));
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string(to_string(view)) + " pixels: " + e.what(), line);
  }
  if (img.height == 0 || img.width == 0 || bytes.size() != img.height * img.width * sizeof(float)) {
    throw DataError(std::string(to_string(view)) + " pixels: " + std::to_string(bytes.size()) +
                        " bytes for a " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " image",
                    line);
  }
  img.pixels.resize(img.height * img.width);
  std::memcpy(img.pixels.data(), bytes.data(), bytes.size());
  return img;
}

PatientSeries parse_patient(const json& j, std::size_t line) {
  PatientSeries p;
  p.patient_id = field<std::string>(j, "patient_id", line);
  const json label = field<json>(j, "label", line);
  p.label.y = field<int>(label, "y", line);
  if (p.label.y == 1) p.label.event_year = field<int>(label, "event_year", line);
  else p.label.followup_years = field<int>(label, "followup_years", line);
  try {
    p.label.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what(), line);
  }
  const json exams = field<json>(j, "exams", line);
  if (!exams.is_array() || exams.empty()) throw DataError("'exams' must be a non-empty array", line);
  for (const auto& e : exams) {
    Exam exam;
    exam.year = field<double>(e, "year", line);
    const json views = field<json>(e, "views", line);
    for (View v : kAllViews) {
      const std::string name(to_string(v));
      if (!views.is_object() || !views.contains(name)) throw DataError("exam misses view " + name, line);
      exam.views[static_cast<std::size_t>(v)] = parse_view_image(views.at(name), v, line);
    }
    if (!p.exams.empty() && !(exam.year > p.exams.back().year))
      throw DataError("exam years must be strictly increasing", line);
    p.exams.push_back(std::move(exam));
  }
  return p;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data) {
  out << json{{"format", "sta-cohort"}, {"version", kDatasetVersion}, {"seed", data.seed}}.dump()
      << '\n';
  for (const auto& p : data.patients) out << patient_json(p).dump() << '\n';
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_dataset(out, data);
  out.flush();
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string text;
  std::size_t line = 0;
  bool header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError(std::string("malformed JSON: ") + e.what(), line);
    }
    if (!header) {
      if (field<std::string>(j, "format", line) != "sta-cohort")
        throw DataError("not an sta-cohort file", line);
      const int version = field<int>(j, "version", line);
      if (version != kDatasetVersion) {
        throw DataError("unsupported format version " + std::to_string(version) + " (expected " +
                            std::to_string(kDatasetVersion) + ")",
                        line);
      }
      data.seed = field<std::uint64_t>(j, "seed", line);
      header = true;
      continue;
    }
    data.patients.push_back(parse_patient(j, line));
  }
  if (!header) throw DataError("missing header line", line);
  return data;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'", 0);
  return read_dataset(in);
}

}  // namespace sta
