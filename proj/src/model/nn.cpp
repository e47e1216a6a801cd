#include "sta/nn.hpp"

#include <cmath>

#include "sta/autodiff/ops.hpp"
#include "sta/error.hpp"

namespace sta::nn {

using ad::Shape;
using ad::Tensor;

Linear Linear::initialize(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  std::vector<double> w(in * out);
  for (auto& v : w) v = uniform(rng);
  return {Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

void Linear::collect(const std::string& prefix, ParamRefs& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

LayerNorm LayerNorm::initialize(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

void LayerNorm::collect(const std::string& prefix, ParamRefs& out) {
  out.emplace_back(prefix + ".gamma", &gamma);
  out.emplace_back(prefix + ".beta", &beta);
}

MultiHeadAttention MultiHeadAttention::initialize(std::size_t d, std::size_t heads,
                                                  std::mt19937_64& rng) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: d_model " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.heads = heads;
  m.query = Linear::initialize(d, d, rng);
  m.key = Linear::initialize(d, d, rng);
  m.value = Linear::initialize(d, d, rng);
  m.output = Linear::initialize(d, d, rng);
  return m;
}

void MultiHeadAttention::collect(const std::string& prefix, ParamRefs& out) {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

FeedForward FeedForward::initialize(std::size_t d, std::size_t hidden, std::mt19937_64& rng) {
  return {Linear::initialize(d, hidden, rng), Linear::initialize(hidden, d, rng)};
}

void FeedForward::collect(const std::string& prefix, ParamRefs& out) {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

EncoderBlock EncoderBlock::initialize(std::size_t d, std::size_t heads, std::size_t hidden,
                                      std::mt19937_64& rng) {
  EncoderBlock b;
  b.attention = MultiHeadAttention::initialize(d, heads, rng);
  b.norm1 = LayerNorm::initialize(d);
  b.ffn = FeedForward::initialize(d, hidden, rng);
  b.norm2 = LayerNorm::initialize(d);
  return b;
}

void EncoderBlock::collect(const std::string& prefix, ParamRefs& out) {
  attention.collect(prefix + ".attention", out);
  norm1.collect(prefix + ".norm1", out);
  ffn.collect(prefix + ".ffn", out);
  norm2.collect(prefix + ".norm2", out);
}

Tensor apply(const Linear& layer, const Tensor& x) {
  return ad::matmul(x, layer.weight) + layer.bias;
}

Tensor apply(const LayerNorm& layer, const Tensor& x) {
  return ad::layer_norm(x, -1) * layer.gamma + layer.beta;
}

Tensor apply(const FeedForward& layer, const Tensor& x) {
  return apply(layer.down, ad::gelu(apply(layer.up, x)));
}

namespace {

// [G, S, d] -> [G*H, S, d/H]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const auto& s = x.shape();
  const std::size_t G = s[0], S = s[1], d = s[2], dh = d / heads;
  if (heads == 1) return x;
  return ad::reshape(ad::permute(ad::reshape(x, {G, S, heads, dh}), {0, 2, 1, 3}),
                     {G * heads, S, dh});
}

// [G*H, S, dh] -> [G, S, H*dh]
Tensor merge_heads(const Tensor& x, std::size_t heads) {
  if (heads == 1) return x;
  const auto& s = x.shape();
  const std::size_t G = s[0] / heads, S = s[1], dh = s[2];
  return ad::reshape(ad::permute(ad::reshape(x, {G, heads, S, dh}), {0, 2, 1, 3}),
                     {G, S, heads * dh});
}

}  // namespace

Tensor attend(const MultiHeadAttention& mha, const Tensor& queries, const Tensor& keys_values,
              std::span<const std::uint8_t> key_valid, Tensor* weights_out) {
  const auto& sq = queries.shape();
  const auto& sk = keys_values.shape();
  if (sq.size() != 3 || sk.size() != 3 || sq[0] != sk[0] || sq[2] != sk[2]) {
    throw ShapeError("attend: incompatible shapes " + ad::to_string(sq) + " and " +
                     ad::to_string(sk));
  }
  const std::size_t G = sq[0], Sk = sk[1], d = sq[2], H = mha.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / H));

  const Tensor q = split_heads(apply(mha.query, queries), H);
  const Tensor k = split_heads(apply(mha.key, keys_values), H);
  const Tensor v = split_heads(apply(mha.value, keys_values), H);
  const Tensor scores = ad::scale(ad::bmm(q, k, false, true), inv_sqrt_dh);

  Tensor weights;
  if (key_valid.empty()) {
    weights = ad::softmax(scores, -1);
  } else {
    if (key_valid.size() != G * Sk) {
      throw ShapeError("attend: key mask holds " + std::to_string(key_valid.size()) +
                       " flags, expected " + std::to_string(G * Sk));
    }
    std::vector<std::uint8_t> per_head(G * H * Sk);
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t j = 0; j < Sk; ++j) per_head[(g * H + h) * Sk + j] = key_valid[g * Sk + j];
    weights = ad::masked_softmax(scores, per_head);
  }
  if (weights_out) *weights_out = weights;
  return apply(mha.output, merge_heads(ad::bmm(weights, v), H));
}

Tensor apply(const EncoderBlock& block, const Tensor& x, std::span<const std::uint8_t> key_valid) {
  const Tensor h = apply(block.norm1, x + attend(block.attention, x, x, key_valid));
  return apply(block.norm2, h + apply(block.ffn, h));
}

}  // namespace sta::nn
