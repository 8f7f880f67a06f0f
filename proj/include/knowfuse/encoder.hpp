#pragma once

#include "knowfuse/config.hpp"
#include "knowfuse/nn.hpp"

#include <functional>
#include <span>
#include <vector>

namespace knowfuse {

// Hidden matrices after the embedding block (index 0) and after each layer (1..L).
struct EncoderState {
  std::vector<Tensor> layers;

  const Tensor& final() const { return layers.back(); }
};

// Post-norm BERT-style encoder with GELU feed-forward blocks.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const ModelConfig& cfg, ParameterSet& params, std::mt19937_64& rng);

  Tensor embed(std::span<const int> ids, std::span<const int> segments, const ForwardContext& ctx) const;
  // One encoder block; key_is_pad masks attention onto padding positions.
  Tensor layer(int index, const Tensor& x, const std::vector<bool>& key_is_pad,
               const ForwardContext& ctx) const;

  // Hook runs on the output of layer `after_layer` (1-based) and may replace it.
  using LayerHook = std::function<Tensor(const Tensor&)>;
  EncoderState encode(std::span<const int> ids, std::span<const int> segments, int pad_id,
                      const ForwardContext& ctx, int hook_layer = 0, const LayerHook& hook = {}) const;

  const Tensor& token_embeddings() const { return tok_; }
  int num_layers() const { return static_cast<int>(blocks_.size()); }

 private:
  struct Block {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b;
    Tensor w1, b1, w2, b2;
    Tensor ln2_g, ln2_b;
  };
  int d1_ = 0, heads_ = 0, vocab_ = 0, max_len_ = 0;
  Tensor tok_, pos_, seg_, ln_g_, ln_b_;
  std::vector<Block> blocks_;
};

}  // namespace knowfuse
