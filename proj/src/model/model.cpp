#include "sta/model.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "sta/autodiff/ops.hpp"

namespace sta {

using ad::Tensor;

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
  if (config.max_exams == 0) throw std::invalid_argument("model: max_exams must be positive");
  config.margins.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.config = config;
  const std::size_t d = config.spatial.d_model;
  m.side = SideEmbeddingTable::initialize(d, rng);
  m.side_temporal = SideEmbeddingTable::initialize(d, rng);
  m.backbone = BackboneParams::initialize(config.spatial, rng);
  m.cross = CrossAttentionParams::initialize(config.spatial, rng);
  m.temporal = TemporalParams::initialize(d, config.spatial.heads, config.temporal_blocks,
                                          config.spatial.ffn_hidden, rng);
  m.head = RiskHeadParams::initialize(d, rng);
  return m;
}

nn::ParamRefs Model::parameters() {
  nn::ParamRefs out;
  out.emplace_back("side.left", &side.left);
  out.emplace_back("side.right", &side.right);
  out.emplace_back("side_temporal.left", &side_temporal.left);
  out.emplace_back("side_temporal.right", &side_temporal.right);
  backbone.collect("backbone", out);
  cross.collect("cross", out);
  temporal.collect("temporal", out);
  head.collect("head", out);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t->numel();
  return n;
}

ForwardPass forward(const Model& model, std::span<const PatientSeries* const> batch) {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  const ModelConfig& cfg = model.config;
  ForwardPass pass;
  std::vector<const ViewImage*> images;
  std::size_t exams = 0;
  for (const PatientSeries* p : batch) {
    if (p->exams.empty())
      throw std::invalid_argument("forward: patient '" + p->patient_id + "' has no exams");
    const std::size_t first = p->exams.size() > cfg.max_exams ? p->exams.size() - cfg.max_exams : 0;
    const double ref = p->exams.back().year;
    PatientRows rows;
    for (std::size_t t = first; t < p->exams.size(); ++t, ++exams) {
      for (const auto& v : p->exams[t].views) images.push_back(&v);
      rows.exam_rows.push_back({static_cast<std::int64_t>(2 * exams),
                                static_cast<std::int64_t>(2 * exams + 1)});
      rows.taus.push_back(relative_tau(p->exams[t].year, ref));
    }
    pass.rows.push_back(std::move(rows));
  }
  for (std::size_t e = 0; e < exams; ++e)
    for (View v : kAllViews) {
      if (images[4 * e + static_cast<std::size_t>(v)]->view != v)
        throw std::invalid_argument("forward: exam views must be ordered LCC, LMLO, RCC, RMLO");
    }

  ViewFeature f = backbone_forward(model.backbone, patchify(images, cfg.spatial.patch), images.size());
  if (cfg.side_encoding) {
    std::vector<Side> sides(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) sides[i] = images[i]->side();
    f = add_side_embedding(f, model.side, sides);
  }
  // CC rows: LCC_0, RCC_0, LCC_1, ...; MLO rows likewise, so z row 2e is left, 2e+1 right
  std::vector<std::int64_t> cc(2 * exams), mlo(2 * exams);
  for (std::size_t e = 0; e < exams; ++e) {
    cc[2 * e] = static_cast<std::int64_t>(4 * e);
    cc[2 * e + 1] = static_cast<std::int64_t>(4 * e + 2);
    mlo[2 * e] = static_cast<std::int64_t>(4 * e + 1);
    mlo[2 * e + 1] = static_cast<std::int64_t>(4 * e + 3);
  }
  pass.z = cross_attend_batch(model.cross, ad::gather_rows(f.tokens, cc), ad::gather_rows(f.tokens, mlo));

  TemporalOptions opts{cfg.side_encoding, cfg.temporal_encoding, cfg.max_exams};
  const SideEmbeddingTable* table = cfg.side_embedding_shared ? &model.side : &model.side_temporal;
  pass.tokens = build_token_batch(pass.z, pass.rows, table, opts);
  pass.history = encode_history(pass.tokens, model.temporal);
  pass.hazard = hazard_forward(model.head, pass.history.h);
  return pass;
}

LossTerms compute_loss(const Model& model, const ForwardPass& pass,
                       std::span<const OutcomeLabel> labels, const ClassWeights& weights) {
  const ModelConfig& cfg = model.config;
  LossTerms out;
  out.primary = reweighted_cross_entropy(pass.hazard.logits, labels, weights);

  AsymmetryGraph asym;
  if (cfg.asym_on == AsymmetrySource::spatial) {
    asym = asymmetry_loss(pass.z, pass.rows, labels, cfg.margins);
  } else {
    // same exams, read from the temporal encoder's token outputs
    const std::size_t S = pass.tokens.slots, d = pass.z.shape()[1];
    std::vector<PatientRows> slots(pass.rows.size());
    for (std::size_t b = 0; b < pass.rows.size(); ++b)
      for (std::size_t t = 0; t < pass.rows[b].exam_rows.size(); ++t)
        slots[b].exam_rows.push_back({static_cast<std::int64_t>(b * S + 2 * t),
                                      static_cast<std::int64_t>(b * S + 2 * t + 1)});
    asym = asymmetry_loss(ad::reshape(pass.history.outputs, {pass.rows.size() * S, d}), slots,
                          labels, cfg.margins);
  }
  out.distances = std::move(asym.distances);
  if (cfg.asymmetry_loss && cfg.margins.lambda > 0) {
    out.asymmetry = asym.loss;
    out.total = out.primary + ad::scale(asym.loss, cfg.margins.lambda);
  } else {
    out.asymmetry = Tensor::scalar(asym.loss.item());
    out.total = out.primary;
  }
  return out;
}

std::vector<std::array<double, kHorizons>> predict(const Model& model,
                                                   std::span<const PatientSeries> patients,
                                                   std::size_t batch_size) {
  std::vector<const PatientSeries*> ptrs;
  for (const auto& p : patients) ptrs.push_back(&p);
  return predict(model, ptrs, batch_size);
}

std::vector<std::array<double, kHorizons>> predict(const Model& model,
                                                   std::span<const PatientSeries* const> patients,
                                                   std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be positive");
  ad::NoGradGuard no_grad;
  std::vector<std::array<double, kHorizons>> out;
  out.reserve(patients.size());
  for (std::size_t start = 0; start < patients.size(); start += batch_size) {
    const std::size_t end = std::min(patients.size(), start + batch_size);
    std::vector<const PatientSeries*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(patients[i]);
    const ForwardPass pass = forward(model, batch);
    const auto& r = pass.hazard.risks.values();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::array<double, kHorizons> row;
      for (std::size_t k = 0; k < kHorizons; ++k) row[k] = open_unit(r[b * kHorizons + k]);
      out.push_back(row);
    }
  }
  return out;
}

}  // namespace sta
