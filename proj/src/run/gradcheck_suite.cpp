#include "sta/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <set>

#include "json.hpp"
#include "sta/autodiff/grad_check.hpp"
#include "sta/autodiff/ops.hpp"
#include "sta/cohort.hpp"
#include "sta/model.hpp"

namespace sta {

using ad::Tensor;

namespace {

constexpr double kEps = 1e-5;

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

struct Accumulator {
  GradCheckEntry entry;
  std::set<std::string> ops;

  void add(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    {
      ad::Tape tape;
      Tensor leaf(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
      f(leaf);
      for (auto& name : tape.op_names()) ops.insert(name);
    }
    const auto r = ad::grad_check(f, x, kEps);
    entry.max_relative_error = std::max(entry.max_relative_error, r.max_relative_error);
    entry.checked += r.checked;
    entry.skipped += r.skipped;
  }

  GradCheckEntry finish(double tolerance) {
    entry.ops.assign(ops.begin(), ops.end());
    entry.passed = entry.checked > 0 && entry.max_relative_error < tolerance;
    return entry;
  }
};

/// Checks eval(bundle) against every tensor refs() exposes, one at a time.
template <typename B>
void check_bundle(Accumulator& acc, const B& bundle,
                  const std::function<nn::ParamRefs(B&)>& refs,
                  const std::function<Tensor(const B&)>& eval) {
  B probe = bundle;
  const std::size_t n = refs(probe).size();
  for (std::size_t i = 0; i < n; ++i) {
    B base = bundle;
    const Tensor x = *refs(base)[i].second;
    acc.add(
        [&](const Tensor& v) {
          B copy = bundle;
          *refs(copy)[i].second = v;
          return eval(copy);
        },
        x);
  }
}

// ---------------------------------------------------------------------------------------
// primitives

struct PrimitiveCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> op;
};

std::vector<PrimitiveCase> primitive_cases(std::mt19937_64& rng) {
  auto r = [&](ad::Shape s) { return random_tensor(std::move(s), rng); };
  auto pos = [&](ad::Shape s) { return random_tensor(std::move(s), rng, 0.5, 2.0); };
  // relu inputs stay clear of the kink
  auto away = [&](ad::Shape s) {
    Tensor t = random_tensor(std::move(s), rng, 0.2, 1.0);
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
    return t;
  };
  using V = const std::vector<Tensor>&;
  return {
      {"add", {r({3, 4}), r({4})}, [](V x) { return ad::add(x[0], x[1]); }},
      {"sub", {r({3, 4}), r({3, 4})}, [](V x) { return ad::sub(x[0], x[1]); }},
      {"mul", {r({2, 3, 4}), r({3, 4})}, [](V x) { return ad::mul(x[0], x[1]); }},
      {"scale", {r({3, 4})}, [](V x) { return ad::scale(x[0], -1.7); }},
      {"shift", {r({3, 4})}, [](V x) { return ad::shift(x[0], 0.3); }},
      {"matmul", {r({2, 3, 4}), r({4, 5})}, [](V x) { return ad::matmul(x[0], x[1]); }},
      {"bmm", {r({2, 3, 4}), r({2, 4, 5}), r({2, 5, 4})},
       [](V x) {
         return ad::concat({ad::bmm(x[0], x[1]), ad::bmm(x[0], x[2], false, true)}, 2);
       }},
      {"reshape", {r({3, 4})}, [](V x) { return ad::reshape(x[0], {2, 6}); }},
      {"permute", {r({2, 3, 4})}, [](V x) { return ad::permute(x[0], {2, 0, 1}); }},
      {"concat", {r({2, 3}), r({2, 2})}, [](V x) { return ad::concat({x[0], x[1]}, 1); }},
      {"slice", {r({3, 5})}, [](V x) { return ad::slice(x[0], 1, 1, 4); }},
      {"gather_rows", {r({5, 3})},
       [](V x) {
         const std::int64_t rows[] = {0, 2, -1, 2, 4};
         return ad::gather_rows(x[0], rows);
       }},
      {"segment_mean", {r({5, 3})},
       [](V x) { return ad::segment_mean(x[0], {{0, 1}, {4, 2, 3}}); }},
      {"sum", {r({3, 4})}, [](V x) { return ad::sum(x[0]); }},
      {"sum_axis", {r({2, 3, 4})}, [](V x) { return ad::sum(x[0], 1); }},
      {"mean", {r({3, 4})}, [](V x) { return ad::mean(x[0]); }},
      {"mean_axis", {r({2, 3, 4})}, [](V x) { return ad::mean(x[0], 2); }},
      {"relu", {away({3, 4})}, [](V x) { return ad::relu(x[0]); }},
      {"gelu", {r({3, 4})}, [](V x) { return ad::gelu(x[0]); }},
      {"exp", {r({3, 4})}, [](V x) { return ad::exp(x[0]); }},
      {"log", {pos({3, 4})}, [](V x) { return ad::log(x[0]); }},
      {"sqrt", {pos({3, 4})}, [](V x) { return ad::sqrt(x[0]); }},
      {"sigmoid", {r({3, 4})}, [](V x) { return ad::sigmoid(x[0]); }},
      {"softplus", {r({3, 4})}, [](V x) { return ad::softplus(x[0]); }},
      {"softmax", {r({2, 3, 4})}, [](V x) { return ad::softmax(x[0], 2); }},
      {"masked_softmax", {r({2, 3, 4})},
       [](V x) {
         const std::uint8_t valid[] = {1, 1, 0, 1, 1, 0, 0, 1};
         return ad::masked_softmax(x[0], valid);
       }},
      {"layer_norm", {r({3, 6})}, [](V x) { return ad::layer_norm(x[0], 1); }},
      {"l2_norm", {r({3, 4})}, [](V x) { return ad::l2_norm(x[0]); }},
  };
}

GradCheckEntry check_primitive(const PrimitiveCase& c, std::mt19937_64& rng, double tolerance) {
  Accumulator acc;
  acc.entry.name = c.name;
  // output shape decides the projection, drawn once
  Tensor weights;
  {
    ad::NoGradGuard g;
    const Tensor out = c.op(c.inputs);
    weights = random_tensor(out.shape(), rng, 0.5, 1.5);
  }
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    acc.add(
        [&](const Tensor& x) {
          auto in = c.inputs;
          in[i] = x;
          return ad::sum(ad::mul(c.op(in), weights));
        },
        c.inputs[i]);
  }
  return acc.finish(tolerance);
}

// ---------------------------------------------------------------------------------------
// composites

ModelConfig tiny_config() {
  ModelConfig c;
  c.spatial.d_model = 8;
  c.spatial.heads = 2;
  c.spatial.blocks = 1;
  c.spatial.patch = 8;
  c.spatial.image_size = 16;
  c.spatial.ffn_hidden = 16;
  c.temporal_blocks = 1;
  c.max_exams = 3;
  // margins that keep every hinge term active, away from its kink
  c.margins = {3.0, 0.01, 3.0, 0.01, 0.5};
  return c;
}

ViewImage random_view(View v, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  ViewImage img{size, size, std::vector<float>(size * size), v};
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

struct SpatialBundle {
  SideEmbeddingTable side;
  BackboneParams backbone;
  CrossAttentionParams cross;
  Tensor cc_tokens, mlo_tokens;  // inputs of the cross-attention path
};

nn::ParamRefs view_refs(SpatialBundle& b) {
  nn::ParamRefs out = {{"side.left", &b.side.left}, {"side.right", &b.side.right}};
  b.backbone.collect("backbone", out);
  return out;
}

nn::ParamRefs exam_refs(SpatialBundle& b) {
  nn::ParamRefs out = view_refs(b);
  b.cross.collect("cross", out);
  return out;
}

nn::ParamRefs cross_refs(SpatialBundle& b) {
  nn::ParamRefs out = {{"cc", &b.cc_tokens}, {"mlo", &b.mlo_tokens}};
  b.cross.collect("cross", out);
  return out;
}

struct TemporalBundle {
  SideEmbeddingTable side;
  TemporalParams params;
  Tensor features;  // [rows, d]
};

struct HeadBundle {
  RiskHeadParams head;
  Tensor h;
};

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::string GradCheckReport::to_text() const {
  std::string out;
  char buf[256];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-4s %-10s %-26s max_rel_err %.3e  checked %6zu  skipped %3zu\n",
                  e.passed ? "ok" : "FAIL", e.composite ? "composite" : "primitive", e.name.c_str(),
                  e.max_relative_error, e.checked, e.skipped);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%s (tolerance %.0e)\n", passed() ? "all paths pass" : "FAILED",
                tolerance);
  out += buf;
  return out;
}

std::string GradCheckReport::to_json() const {
  nlohmann::json j = {{"tolerance", tolerance}, {"passed", passed()}};
  auto& list = j["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    list.push_back({{"name", e.name},
                    {"kind", e.composite ? "composite" : "primitive"},
                    {"max_relative_error", e.max_relative_error},
                    {"checked", e.checked},
                    {"skipped", e.skipped},
                    {"ops", e.ops},
                    {"passed", e.passed}});
  }
  return j.dump(2);
}

GradCheckReport run_gradcheck_suite(const std::string& fault_op, double tolerance) {
  std::optional<ad::testing::ScopedBackwardFault> fault;
  if (!fault_op.empty()) fault.emplace(fault_op);

  GradCheckReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(7);

  for (const auto& c : primitive_cases(rng)) report.entries.push_back(check_primitive(c, rng, tolerance));

  const ModelConfig cfg = tiny_config();
  const std::size_t d = cfg.spatial.d_model, P = cfg.spatial.tokens();
  auto composite = [&](const std::string& name, const std::function<void(Accumulator&)>& body) {
    Accumulator acc;
    acc.entry.name = name;
    acc.entry.composite = true;
    body(acc);
    report.entries.push_back(acc.finish(tolerance));
  };

  SpatialBundle spatial{SideEmbeddingTable::initialize(d, rng),
                        BackboneParams::initialize(cfg.spatial, rng),
                        CrossAttentionParams::initialize(cfg.spatial, rng),
                        random_tensor({1, P, d}, rng), random_tensor({1, P, d}, rng)};
  // larger side vectors so their gradients are not negligible
  for (auto* t : {&spatial.side.left, &spatial.side.right})
    for (auto& v : t->mutable_values()) v *= 20.0;

  composite("encode_view", [&](Accumulator& acc) {
    const ViewImage img = random_view(View::RMLO, cfg.spatial.image_size, rng);
    const Tensor w_tokens = random_tensor({P, d}, rng), w_pool = random_tensor({d}, rng);
    check_bundle<SpatialBundle>(
        acc, spatial, view_refs,
        [&](const SpatialBundle& b) {
          const ViewFeature f = encode_view(img, &b.side, b.backbone);
          return ad::sum(ad::mul(f.tokens, w_tokens)) + ad::sum(ad::mul(f.pooled, w_pool));
        });
  });

  composite("cross_attend_views", [&](Accumulator& acc) {
    const Tensor w = random_tensor({d}, rng);
    check_bundle<SpatialBundle>(
        acc, spatial, cross_refs,
        [&](const SpatialBundle& b) {
          const ad::Shape s = {P, d};
          const SideFeature z =
              cross_attend_views({ad::reshape(b.cc_tokens, s), {}}, View::LCC,
                                 {ad::reshape(b.mlo_tokens, s), {}}, View::LMLO, b.cross);
          return ad::sum(ad::mul(z.z, w));
        });
  });

  composite("encode_exam", [&](Accumulator& acc) {
    std::vector<ViewImage> views;
    for (View v : kAllViews) views.push_back(random_view(v, cfg.spatial.image_size, rng));
    const Tensor wl = random_tensor({d}, rng), wr = random_tensor({d}, rng);
    check_bundle<SpatialBundle>(
        acc, spatial, exam_refs,
        [&](const SpatialBundle& b) {
          const auto [l, r] = encode_exam(views, &b.side, b.backbone, b.cross);
          return ad::sum(ad::mul(l.z, wl)) + ad::sum(ad::mul(r.z, wr));
        });
  });

  composite("encode_history", [&](Accumulator& acc) {
    TemporalBundle tb{SideEmbeddingTable::initialize(d, rng),
                      TemporalParams::initialize(d, cfg.spatial.heads, 1, cfg.spatial.ffn_hidden, rng),
                      random_tensor({6, d}, rng)};
    // two patients: three exams, one exam (padding in both)
    const PatientRows rows[] = {{{{0, 1}, {2, 3}, {4, 5}}, {-24.0, -12.0, 0.0}}, {{{4, 5}}, {0.0}}};
    const Tensor w = random_tensor({2, d}, rng);
    TemporalOptions opt;
    opt.max_exams = cfg.max_exams;
    check_bundle<TemporalBundle>(
        acc, tb,
        [](TemporalBundle& b) {
          nn::ParamRefs out = {{"side.left", &b.side.left}, {"side.right", &b.side.right},
                               {"features", &b.features}};
          b.params.collect("temporal", out);
          return out;
        },
        [&](const TemporalBundle& b) {
          const auto seq = build_token_batch(b.features, rows, &b.side, opt);
          return ad::sum(ad::mul(encode_history(seq, b.params).h, w));
        });
  });

  HeadBundle hb{RiskHeadParams{nn::Linear::initialize(d, 6, rng)}, random_tensor({4, d}, rng)};
  const auto head_refs = [](HeadBundle& b) {
    nn::ParamRefs out = {{"h", &b.h}};
    b.head.linear.collect("head", out);
    return out;
  };
  composite("hazard_head", [&](Accumulator& acc) {
    const Tensor w = random_tensor({4, kHorizons}, rng);
    check_bundle<HeadBundle>(acc, hb, head_refs, [&](const HeadBundle& b) {
      return ad::sum(ad::mul(hazard_forward(b.head, b.h).risks, w));
    });
  });

  composite("primary_loss", [&](Accumulator& acc) {
    const OutcomeLabel labels[] = {OutcomeLabel::cancer(1), OutcomeLabel::cancer(4),
                                   OutcomeLabel::normal(2), OutcomeLabel::normal(5)};
    const ClassWeights weights = ClassWeights::from_labels(labels);
    check_bundle<HeadBundle>(acc, hb, head_refs, [&](const HeadBundle& b) {
      return reweighted_cross_entropy(hazard_forward(b.head, b.h).logits, labels, weights);
    });
  });

  composite("asymmetry_loss", [&](Accumulator& acc) {
    const Tensor features = random_tensor({10, d}, rng);
    const PatientRows rows[] = {{{{0, 1}, {2, 3}, {4, 5}}, {-24.0, -12.0, 0.0}},
                                {{{6, 7}, {8, 9}}, {-12.0, 0.0}},
                                {{{2, 3}}, {0.0}}};
    const OutcomeLabel labels[] = {OutcomeLabel::cancer(2), OutcomeLabel::normal(3),
                                   OutcomeLabel::cancer(1)};
    acc.add([&](const Tensor& x) { return asymmetry_loss(x, rows, labels, cfg.margins).loss; },
            features);
  });

  composite("model_total_loss", [&](Accumulator& acc) {
    CohortSpec spec;
    spec.image_size = cfg.spatial.image_size;
    spec.allow_single_exam = true;
    std::vector<PatientSeries> patients;
    for (std::size_t i = 0; i < 3; ++i) {
      auto prng = patient_stream(11, i != 1, i);
      patients.push_back(generate_patient(spec, prng, i != 1));
    }
    std::vector<const PatientSeries*> batch;
    std::vector<OutcomeLabel> labels;
    for (const auto& p : patients) {
      batch.push_back(&p);
      labels.push_back(p.label);
    }
    const ClassWeights weights = ClassWeights::from_labels(labels);
    Model model = Model::initialize(cfg, 5);
    for (auto* t : {&model.side.left, &model.side.right})
      for (auto& v : t->mutable_values()) v *= 20.0;
    check_bundle<Model>(
        acc, model, [](Model& m) { return m.parameters(); },
        [&](const Model& m) { return compute_loss(m, forward(m, batch), labels, weights).total; });
  });

  return report;
}

}  // namespace sta
