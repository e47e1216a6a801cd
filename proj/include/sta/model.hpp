#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sta/cohort.hpp"
#include "sta/losses.hpp"
#include "sta/risk_head.hpp"
#include "sta/spatial_encoder.hpp"
#include "sta/temporal_encoder.hpp"

namespace sta {

enum class AsymmetrySource { spatial, temporal };

struct ModelConfig {
  SpatialShape spatial;
  std::size_t temporal_blocks = 2;
  std::size_t max_exams = 4;
  bool side_encoding = true;
  bool temporal_encoding = true;
  bool asymmetry_loss = true;
  bool side_embedding_shared = true;  // one table for both injection points
  AsymmetrySource asym_on = AsymmetrySource::spatial;
  AsymmetryMargins margins;
};

struct Model {
  ModelConfig config;
  SideEmbeddingTable side;           // spatial stage, and temporal stage when shared
  SideEmbeddingTable side_temporal;  // temporal stage when not shared
  BackboneParams backbone;
  CrossAttentionParams cross;
  TemporalParams temporal;
  RiskHeadParams head;

  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  /// Every learnable tensor with a stable dotted name. The set does not depend on the
  /// ablation toggles.
  nn::ParamRefs parameters();
  std::size_t parameter_count();
};

struct ForwardPass {
  ad::Tensor z;                   // [2E, d]: left/right side features of every exam
  std::vector<PatientRows> rows;  // per patient, rows of z
  TokenSequence tokens;
  HistoryEmbedding history;
  HazardGraph hazard;
};

/// Runs the whole batch through one graph. Patients with more than max_exams exams keep the
/// latest ones.
ForwardPass forward(const Model& model, std::span<const PatientSeries* const> batch);

struct LossTerms {
  ad::Tensor total;
  ad::Tensor primary;
  ad::Tensor asymmetry;  // detached value when the loss is switched off, kept for logging
  std::vector<AsymmetryDistances> distances;
};

LossTerms compute_loss(const Model& model, const ForwardPass& pass,
                       std::span<const OutcomeLabel> labels, const ClassWeights& weights);

/// Cumulative 1..5-year risks for each patient, without recording a graph.
std::vector<std::array<double, kHorizons>> predict(const Model& model,
                                                   std::span<const PatientSeries> patients,
                                                   std::size_t batch_size = 32);
std::vector<std::array<double, kHorizons>> predict(const Model& model,
                                                   std::span<const PatientSeries* const> patients,
                                                   std::size_t batch_size = 32);

}  // namespace sta
