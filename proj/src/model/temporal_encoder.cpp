#include "sta/temporal_encoder.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "sta/autodiff/ops.hpp"

namespace sta {

using ad::Tensor;

TemporalParams TemporalParams::initialize(std::size_t d_model, std::size_t heads,
                                          std::size_t blocks, std::size_t ffn_hidden,
                                          std::mt19937_64& rng) {
  TemporalParams p;
  for (std::size_t b = 0; b < blocks; ++b)
    p.blocks.push_back(nn::EncoderBlock::initialize(d_model, heads, ffn_hidden, rng));
  return p;
}

void TemporalParams::collect(const std::string& prefix, nn::ParamRefs& out) {
  for (std::size_t b = 0; b < blocks.size(); ++b)
    blocks[b].collect(prefix + ".block" + std::to_string(b), out);
}

namespace {

void validate(const PatientRows& p, std::size_t max_exams) {
  const std::size_t T = p.exam_rows.size();
  if (T == 0) throw std::invalid_argument("build_token_sequence: patient has no exams");
  if (T > max_exams) {
    throw std::invalid_argument("build_token_sequence: " + std::to_string(T) +
                                " exams exceed the window of " + std::to_string(max_exams));
  }
  if (p.taus.size() != T) throw std::invalid_argument("build_token_sequence: one tau per exam");
  for (std::size_t t = 0; t < T; ++t) {
    if (p.taus[t] > 0) throw std::invalid_argument("build_token_sequence: positive tau");
    if (t > 0 && !(p.taus[t] > p.taus[t - 1])) {
      throw std::invalid_argument(
          "build_token_sequence: taus must be strictly increasing (duplicate or unordered exams)");
    }
  }
  if (p.taus.back() != 0.0) {
    throw std::invalid_argument("build_token_sequence: the latest exam must have tau 0");
  }
}

}  // namespace

TokenSequence build_token_batch(const Tensor& features, std::span<const PatientRows> patients,
                                const SideEmbeddingTable* table, const TemporalOptions& options) {
  const auto& fs = features.shape();
  if (fs.size() != 2) throw std::invalid_argument("build_token_batch: features must be [rows, d]");
  if (patients.empty()) throw std::invalid_argument("build_token_batch: empty batch");
  const std::size_t d = fs[1];
  const std::size_t S = 2 * options.max_exams;
  const std::size_t B = patients.size();

  TokenSequence seq;
  seq.batch = B;
  seq.slots = S;
  seq.valid.assign(B * S, 0);
  seq.taus.assign(B * S, 0.0);
  seq.sides.assign(B * S, Side::left);

  std::vector<std::int64_t> real_rows;   // rows of `features`, in slot order
  std::vector<std::int64_t> side_index;  // 0 left, 1 right
  std::vector<double> temb;
  std::vector<std::int64_t> slot_source(B * S, -1);
  for (std::size_t b = 0; b < B; ++b) {
    const PatientRows& p = patients[b];
    validate(p, options.max_exams);
    for (std::size_t t = 0; t < p.exam_rows.size(); ++t) {
      const auto emb = temporal_embedding(p.taus[t], d);
      for (int s = 0; s < 2; ++s) {
        const std::size_t slot = b * S + 2 * t + static_cast<std::size_t>(s);
        slot_source[slot] = static_cast<std::int64_t>(real_rows.size());
        real_rows.push_back(p.exam_rows[t][static_cast<std::size_t>(s)]);
        side_index.push_back(s);
        temb.insert(temb.end(), emb.begin(), emb.end());
        seq.valid[slot] = 1;
        seq.taus[slot] = p.taus[t];
        seq.sides[slot] = s == 0 ? Side::left : Side::right;
      }
    }
  }

  Tensor real = ad::gather_rows(features, real_rows);
  if (options.side_encoding && table) real = real + ad::gather_rows(table->stacked(), side_index);
  if (options.temporal_encoding) real = real + Tensor({real_rows.size(), d}, std::move(temb));
  seq.tokens = ad::reshape(ad::gather_rows(real, slot_source), {B, S, d});
  return seq;
}

TokenSequence build_token_sequence(std::span<const ExamSides> exams,
                                   const SideEmbeddingTable* table, const TemporalOptions& options) {
  if (exams.empty()) throw std::invalid_argument("build_token_sequence: patient has no exams");
  std::vector<Tensor> rows;
  PatientRows p;
  for (std::size_t t = 0; t < exams.size(); ++t) {
    const std::size_t d = exams[t].left.numel();
    rows.push_back(ad::reshape(exams[t].left, {1, d}));
    rows.push_back(ad::reshape(exams[t].right, {1, d}));
    p.exam_rows.push_back({static_cast<std::int64_t>(2 * t), static_cast<std::int64_t>(2 * t + 1)});
    p.taus.push_back(exams[t].tau_months);
  }
  const PatientRows one[] = {p};
  return build_token_batch(ad::concat(rows, 0), one, table, options);
}

HistoryEmbedding encode_history(const TokenSequence& seq, const TemporalParams& params) {
  const auto& s = seq.tokens.shape();
  const std::size_t B = s[0], S = s[1], d = s[2];
  std::vector<std::vector<std::size_t>> segments(B);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < S; ++j)
      if (seq.valid[b * S + j]) segments[b].push_back(b * S + j);
    if (segments[b].empty()) {
      throw std::invalid_argument("encode_history: patient " + std::to_string(b) +
                                  " has only padding tokens");
    }
  }
  Tensor x = seq.tokens;
  for (const auto& block : params.blocks) x = nn::apply(block, x, seq.valid);
  return {ad::segment_mean(ad::reshape(x, {B * S, d}), segments), x};
}

}  // namespace sta
