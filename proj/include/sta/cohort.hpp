#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sta/losses.hpp"
#include "sta/spatial_encoder.hpp"

namespace sta {

/// One screening visit: LCC, LMLO, RCC, RMLO in that order.
struct Exam {
  double year = 0.0;
  std::array<ViewImage, 4> views;
};

/// A patient's exams in chronological order; the last one is the reference exam.
struct PatientSeries {
  std::string patient_id;
  std::vector<Exam> exams;
  OutcomeLabel label;

  /// Months from each exam to the latest one (all <= 0, last == 0).
  std::vector<double> taus() const;
};

struct CohortSpec {
  std::size_t n_cases = 400;
  std::size_t n_controls = 1600;
  std::size_t image_size = 32;
  double background = 0.15;    // mean tissue intensity
  double bump_amplitude = 0.2; // upper bound of benign bilateral bright spots
  double blob_base = 0.2;      // lesion amplitude 14 years before diagnosis
  double blob_growth = 0.03;   // lesion amplitude gain per year
  double blob_sigma = 2.5;     // lesion radius (pixels)
  double noise_std = 0.05;
  bool allow_single_exam = false;  // T drawn from 1..4 instead of 2..4
  std::uint64_t seed = 20240901;

  /// Throws std::invalid_argument for a spec no generator run can satisfy.
  void validate() const;
};

/// Seeds the stream of one patient; independent of how many other patients are drawn.
std::mt19937_64 patient_stream(std::uint64_t seed, bool is_case, std::size_t index);

PatientSeries generate_patient(const CohortSpec& spec, std::mt19937_64& rng, bool is_case);
/// Cases first, then controls. Patient ids are "case-NNNNN" and "ctrl-NNNNN".
std::vector<PatientSeries> generate_cohort(const CohortSpec& spec);

/// Lesion amplitude for a case exam `years_to_event` years before diagnosis.
double lesion_amplitude(const CohortSpec& spec, double years_to_event);

struct Dataset {
  std::uint64_t seed = 0;
  std::vector<PatientSeries> patients;
};

inline constexpr int kDatasetVersion = 1;

/// JSON lines: a header {"format":"sta-cohort","version":1,"seed":N}, then one patient per
/// line with pixels as base64 of little-endian float32.
void write_dataset(const std::filesystem::path& path, const Dataset& data);
void write_dataset(std::ostream& out, const Dataset& data);
/// Throws DataError (with the 1-based line number) on malformed input or a version mismatch.
Dataset read_dataset(const std::filesystem::path& path);
Dataset read_dataset(std::istream& in);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws std::invalid_argument on characters outside the alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace sta
