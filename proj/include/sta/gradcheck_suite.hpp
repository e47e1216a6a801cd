#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace sta {

struct GradCheckEntry {
  std::string name;
  bool composite = false;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;          // kink-adjacent coordinates
  std::vector<std::string> ops;     // distinct primitives the path records
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;  // every primitive once, then the composite paths
  double tolerance = 1e-4;

  bool passed() const;
  std::string to_text() const;
  std::string to_json() const;
};

/// Central-difference checks (eps 1e-5) of every primitive and of the view encoder,
/// cross-attention, exam encoder, temporal encoder, hazard head, both losses and the whole
/// model loss, each w.r.t. its inputs and every parameter. A non-empty `fault_op` corrupts
/// that op's backward rule for the duration of the run.
GradCheckReport run_gradcheck_suite(const std::string& fault_op = "", double tolerance = 1e-4);

}  // namespace sta
