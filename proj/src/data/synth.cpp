#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "sta/cohort.hpp"
#include "sta/encodings.hpp"

namespace sta {

std::vector<double> PatientSeries::taus() const {
  std::vector<double> out;
  if (exams.empty()) return out;
  const double ref = exams.back().year;
  for (const auto& e : exams) out.push_back(relative_tau(e.year, ref));
  return out;
}

void CohortSpec::validate() const {
  if (image_size < 8) throw std::invalid_argument("cohort: image_size must be at least 8");
  if (noise_std < 0 || blob_sigma <= 0 || blob_growth < 0 || blob_base < 0 || bump_amplitude < 0)
    throw std::invalid_argument("cohort: noise, lesion and bump parameters must be non-negative");
}

std::mt19937_64 patient_stream(std::uint64_t seed, bool is_case, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(is_case ? 1 : 2),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

double lesion_amplitude(const CohortSpec& spec, double years_to_event) {
  // 14 years covers the longest look-back (5-year event plus three 3-year gaps)
  return spec.blob_base + spec.blob_growth * std::max(0.0, 14.0 - years_to_event);
}

namespace {

struct Bump {
  double row, col, sigma, amplitude;
};

void add_bump(std::vector<double>& img, std::size_t n, const Bump& b) {
  const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double dr = static_cast<double>(r) - b.row, dc = static_cast<double>(c) - b.col;
      img[r * n + c] += b.amplitude * std::exp(-(dr * dr + dc * dc) * inv);
    }
}

// Smooth per-patient tissue pattern, shared by both breasts (mirrored frame).
std::vector<double> texture(const CohortSpec& spec, std::mt19937_64& rng) {
  const std::size_t n = spec.image_size;
  const double size = static_cast<double>(n);
  std::uniform_real_distribution<double> pos(2.0, size - 3.0), sig(1.5, 4.0),
      amp(0.05, spec.bump_amplitude), level(0.6, 1.4);
  std::uniform_int_distribution<int> count(3, 6);
  std::vector<double> img(n * n);
  const double base = spec.background * level(rng);
  // density falls off away from the chest wall (column 0)
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) img[r * n + c] = base * (1.2 - 0.6 * static_cast<double>(c) / size);
  const int k = count(rng);
  for (int i = 0; i < k; ++i) add_bump(img, n, {pos(rng), pos(rng), sig(rng), amp(rng)});
  return img;
}

ViewImage render(const std::vector<double>& clean, std::size_t n, View view, double noise_std,
                 std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, noise_std);
  ViewImage img{n, n, std::vector<float>(n * n), view};
  for (std::size_t i = 0; i < n * n; ++i) {
    const double v = clean[i] + (noise_std > 0 ? noise(rng) : 0.0);
    img.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return img;
}

}  // namespace

PatientSeries generate_patient(const CohortSpec& spec, std::mt19937_64& rng, bool is_case) {
  spec.validate();
  const std::size_t n = spec.image_size;
  const double size = static_cast<double>(n);
  PatientSeries p;

  std::uniform_int_distribution<int> exams_dist(spec.allow_single_exam ? 1 : 2, 4);
  std::uniform_int_distribution<int> gap_steps(0, 4);  // 12, 18, ..., 36 months
  std::uniform_int_distribution<int> ref_year(2008, 2016);
  std::uniform_int_distribution<int> horizon(1, 5);
  const int T = exams_dist(rng);
  std::vector<double> years(static_cast<std::size_t>(T));
  years.back() = ref_year(rng);
  for (int t = T - 2; t >= 0; --t)
    years[static_cast<std::size_t>(t)] =
        years[static_cast<std::size_t>(t) + 1] - (12.0 + 6.0 * gap_steps(rng)) / 12.0;
  p.label = is_case ? OutcomeLabel::cancer(horizon(rng)) : OutcomeLabel::normal(horizon(rng));

  const std::vector<double> cc_texture = texture(spec, rng);
  const std::vector<double> mlo_texture = texture(spec, rng);

  // lesion: one side, fixed CC location; the MLO row is the reflected CC row at the same
  // distance from the chest wall
  std::uniform_real_distribution<double> pos(3.0, size - 4.0);
  const bool lesion_left = std::bernoulli_distribution(0.5)(rng);
  const double row = pos(rng), col = pos(rng);
  const double mlo_row = size - 1.0 - row;

  for (int t = 0; t < T; ++t) {
    Exam exam;
    exam.year = years[static_cast<std::size_t>(t)];
    std::vector<double> cc_l = cc_texture, cc_r = cc_texture, mlo_l = mlo_texture,
                        mlo_r = mlo_texture;
    if (is_case) {
      const double years_to_event = (years.back() - exam.year) + p.label.event_year;
      const double a = lesion_amplitude(spec, years_to_event);
      add_bump(lesion_left ? cc_l : cc_r, n, {row, col, spec.blob_sigma, a});
      add_bump(lesion_left ? mlo_l : mlo_r, n, {mlo_row, col, spec.blob_sigma, a});
    }
    exam.views[0] = render(cc_l, n, View::LCC, spec.noise_std, rng);
    exam.views[1] = render(mlo_l, n, View::LMLO, spec.noise_std, rng);
    exam.views[2] = render(cc_r, n, View::RCC, spec.noise_std, rng);
    exam.views[3] = render(mlo_r, n, View::RMLO, spec.noise_std, rng);
    p.exams.push_back(std::move(exam));
  }
  return p;
}

std::vector<PatientSeries> generate_cohort(const CohortSpec& spec) {
  spec.validate();
  std::vector<PatientSeries> out;
  out.reserve(spec.n_cases + spec.n_controls);
  char id[32];
  for (std::size_t i = 0; i < spec.n_cases; ++i) {
    auto rng = patient_stream(spec.seed, true, i);
    out.push_back(generate_patient(spec, rng, true));
    std::snprintf(id, sizeof id, "case-%05zu", i);
    out.back().patient_id = id;
  }
  for (std::size_t i = 0; i < spec.n_controls; ++i) {
    auto rng = patient_stream(spec.seed, false, i);
    out.push_back(generate_patient(spec, rng, false));
    std::snprintf(id, sizeof id, "ctrl-%05zu", i);
    out.back().patient_id = id;
  }
  return out;
}

}  // namespace sta
