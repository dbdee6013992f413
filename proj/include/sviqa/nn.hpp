#pragma once

// Layer building blocks shared by the encoders and the language model.
// Linear weights used with linear_nt are stored [out×in].

#include <string>
#include <vector>

#include "sviqa/rng.hpp"
#include "sviqa/tensor.hpp"

namespace sviqa::nn {

enum class ParamGroup { speech_encoder, vision_encoder, lm_base, speech_adapter, vision_projector, lora };

std::string to_string(ParamGroup g);

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

Tensor uniform(Shape shape, double bound, Rng& rng, bool requires_grad = false);
Tensor normal(Shape shape, double stddev, Rng& rng, bool requires_grad = false);
Tensor constant(Shape shape, double value, bool requires_grad = false);

// x·Wᵀ (+ b)
Tensor linear_nt(const Tensor& x, const Tensor& w);
Tensor linear_nt(const Tensor& x, const Tensor& w, const Tensor& b);

// Low-rank delta attached to a frozen [out×in] weight: W + (alpha/rank)·B·A.
struct LoraAdapter {
  Tensor a;  // rank×in
  Tensor b;  // out×rank, zero at init
  int rank = 0;
  double alpha = 0.0;
  std::string attached_to;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

// A drawn He-uniform, B zeros. rank <= 0 throws ConfigError.
LoraAdapter make_lora(std::size_t in, std::size_t out, int rank, double alpha, Rng& rng, std::string attached_to);

// x·Wᵀ + (alpha/r)·(x·Aᵀ)·Bᵀ
Tensor lora_forward(const Tensor& x, const Tensor& base, const LoraAdapter& l);

// Returns W + (alpha/r)·B·A and zeroes B, so the adapter contributes nothing
// afterwards.
Tensor merge_lora(const Tensor& base, LoraAdapter& l);

struct AttentionBlock {
  Tensor ln_gain, ln_bias;
  Tensor wq, wk, wv, wo;  // d×d
  int heads = 1;
  bool causal = false;
};

// Frozen pre-norm residual block: x + Wo·MHA(LN(x)).
AttentionBlock make_attention_block(std::size_t d, int heads, bool causal, Rng& rng, double out_scale = 1.0);
void append_params(const AttentionBlock& b, const std::string& prefix, ParamGroup g, std::vector<NamedParam>& out);

// Multi-head attention over rows of already-normalized input. The optional
// adapters modify the query and value projections.
Tensor multi_head_attention(const Tensor& xn, const AttentionBlock& b, const LoraAdapter* lora_q = nullptr,
                            const LoraAdapter* lora_v = nullptr);
Tensor attention_block_forward(const Tensor& x, const AttentionBlock& b);

// Sinusoidal position table, rows = positions.
Tensor sinusoidal_positions(std::size_t length, std::size_t d, double scale);

}  // namespace sviqa::nn
