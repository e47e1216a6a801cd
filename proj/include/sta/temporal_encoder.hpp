#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sta/autodiff/tensor.hpp"
#include "sta/encodings.hpp"
#include "sta/nn.hpp"

namespace sta {

struct TemporalParams {
  std::vector<nn::EncoderBlock> blocks;

  static TemporalParams initialize(std::size_t d_model, std::size_t heads, std::size_t blocks,
                                   std::size_t ffn_hidden, std::mt19937_64& rng);
  void collect(const std::string& prefix, nn::ParamRefs& out);
};

struct TemporalOptions {
  bool side_encoding = true;
  bool temporal_encoding = true;
  std::size_t max_exams = 4;
};

/// One patient's exam sequence: per exam, the rows of the left and right side feature in a
/// shared feature matrix, and the exam's month offset from the reference exam.
struct PatientRows {
  std::vector<std::array<std::int64_t, 2>> exam_rows;  // {left row, right row}
  std::vector<double> taus;
};

/// Padded token batch. Slots hold (left_t, right_t) pairs in chronological order followed
/// by masked padding slots.
struct TokenSequence {
  ad::Tensor tokens;                // [B, S, d], S = 2 * max_exams
  std::vector<std::uint8_t> valid;  // B*S
  std::vector<double> taus;         // B*S, 0 for padding
  std::vector<Side> sides;          // B*S
  std::size_t batch = 0;
  std::size_t slots = 0;
};

struct ExamSides {
  ad::Tensor left;   // [d]
  ad::Tensor right;  // [d]
  double tau_months = 0.0;
};

struct HistoryEmbedding {
  ad::Tensor h;        // [B, d], masked mean over real token outputs
  ad::Tensor outputs;  // [B, S, d], post-attention token vectors (diagnostics)
};

/// token = z + side vector (when enabled) + temporal embedding (when enabled).
/// Throws std::invalid_argument for zero or too many exams, positive taus, a latest exam
/// whose tau is not 0, or taus that are not strictly increasing (duplicates included).
TokenSequence build_token_batch(const ad::Tensor& features, std::span<const PatientRows> patients,
                                const SideEmbeddingTable* table, const TemporalOptions& options);

/// Single-patient form of build_token_batch.
TokenSequence build_token_sequence(std::span<const ExamSides> exams,
                                   const SideEmbeddingTable* table, const TemporalOptions& options);

/// Masked self-attention blocks over the token slots. Throws std::invalid_argument when a
/// patient has no real token.
HistoryEmbedding encode_history(const TokenSequence& tokens, const TemporalParams& params);

}  // namespace sta
