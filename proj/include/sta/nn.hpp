#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sta/autodiff/tensor.hpp"

// Transformer building blocks shared by the spatial and temporal encoders. Parameters are
// plain tensors so the same forward code runs on trainable leaves or on slices of a flat
// vector (gradient checks).
namespace sta::nn {

/// Named references to every trainable tensor of a module, in a fixed order.
using ParamRefs = std::vector<std::pair<std::string, ad::Tensor*>>;

struct Linear {
  ad::Tensor weight;  // [in, out]
  ad::Tensor bias;    // [out]

  static Linear initialize(std::size_t in, std::size_t out, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRefs& out);
};

struct LayerNorm {
  ad::Tensor gamma;  // [d]
  ad::Tensor beta;   // [d]

  static LayerNorm initialize(std::size_t d);
  void collect(const std::string& prefix, ParamRefs& out);
};

struct MultiHeadAttention {
  std::size_t heads = 1;
  Linear query, key, value, output;

  static MultiHeadAttention initialize(std::size_t d, std::size_t heads, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRefs& out);
};

struct FeedForward {
  Linear up, down;

  static FeedForward initialize(std::size_t d, std::size_t hidden, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRefs& out);
};

/// attention -> add & norm -> feed-forward -> add & norm.
struct EncoderBlock {
  MultiHeadAttention attention;
  LayerNorm norm1;
  FeedForward ffn;
  LayerNorm norm2;

  static EncoderBlock initialize(std::size_t d, std::size_t heads, std::size_t hidden,
                                 std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRefs& out);
};

/// x [..., in] -> [..., out]
ad::Tensor apply(const Linear& layer, const ad::Tensor& x);
ad::Tensor apply(const LayerNorm& layer, const ad::Tensor& x);
ad::Tensor apply(const FeedForward& layer, const ad::Tensor& x);

/// Scaled dot-product attention of queries [G, Sq, d] over keys/values [G, Sk, d].
/// key_valid (optional, G*Sk flags) masks keys. When weights_out is given it receives the
/// attention weights [G*heads, Sq, Sk].
ad::Tensor attend(const MultiHeadAttention& mha, const ad::Tensor& queries,
                  const ad::Tensor& keys_values, std::span<const std::uint8_t> key_valid = {},
                  ad::Tensor* weights_out = nullptr);

ad::Tensor apply(const EncoderBlock& block, const ad::Tensor& x,
                 std::span<const std::uint8_t> key_valid = {});

}  // namespace sta::nn
