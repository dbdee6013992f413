#include "sviqa/nn.hpp"

#include <cmath>

#include "sviqa/error.hpp"

namespace sviqa::nn {

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::speech_encoder: return "speech_encoder";
    case ParamGroup::vision_encoder: return "vision_encoder";
    case ParamGroup::lm_base: return "lm_base";
    case ParamGroup::speech_adapter: return "speech_adapter";
    case ParamGroup::vision_projector: return "vision_projector";
    case ParamGroup::lora: return "lora";
  }
  return "?";
}

Tensor uniform(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor normal(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor constant(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor linear_nt(const Tensor& x, const Tensor& w) { return matmul_nt(x, w); }
Tensor linear_nt(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul_nt(x, w), b); }

LoraAdapter make_lora(std::size_t in, std::size_t out, int rank, double alpha, Rng& rng, std::string attached_to) {
  if (rank <= 0) throw ConfigError("LoRA rank must be positive, got " + std::to_string(rank));
  LoraAdapter l;
  l.rank = rank;
  l.alpha = alpha;
  l.attached_to = std::move(attached_to);
  l.a = uniform({static_cast<std::size_t>(rank), in}, std::sqrt(6.0 / static_cast<double>(in)), rng, true);
  l.b = Tensor::zeros({out, static_cast<std::size_t>(rank)}, true);
  return l;
}

Tensor lora_forward(const Tensor& x, const Tensor& base, const LoraAdapter& l) {
  if (l.rank <= 0) throw ConfigError("LoRA rank must be positive, got " + std::to_string(l.rank));
  if (l.a.cols() != base.cols() || l.b.rows() != base.rows() || l.a.rows() != l.b.cols())
    throw DimensionError("lora_forward: adapter A" + shape_str(l.a.shape()) + " B" + shape_str(l.b.shape()) +
                         " does not fit base " + shape_str(base.shape()));
  Tensor h = matmul_nt(x, base);
  Tensor delta = matmul_nt(matmul_nt(x, l.a), l.b);
  return add(h, scale(delta, l.scaling()));
}

Tensor merge_lora(const Tensor& base, LoraAdapter& l) {
  if (l.a.cols() != base.cols() || l.b.rows() != base.rows())
    throw DimensionError("merge_lora: adapter does not fit base " + shape_str(base.shape()));
  NoGradGuard guard;
  Tensor ba = matmul(l.b, l.a);
  std::vector<double> merged(base.data().begin(), base.data().end());
  const double s = l.scaling();
  for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += s * ba.data()[i];
  for (auto& v : l.b.mutable_data()) v = 0.0;
  return Tensor(base.shape(), std::move(merged), base.requires_grad());
}

AttentionBlock make_attention_block(std::size_t d, int heads, bool causal, Rng& rng, double out_scale) {
  if (heads <= 0 || d % static_cast<std::size_t>(heads) != 0)
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  AttentionBlock b;
  b.heads = heads;
  b.causal = causal;
  b.ln_gain = constant({d}, 1.0);
  b.ln_bias = constant({d}, 0.0);
  const double bound = std::sqrt(3.0 / static_cast<double>(d));  // unit-variance outputs
  b.wq = uniform({d, d}, bound, rng);
  b.wk = uniform({d, d}, bound, rng);
  b.wv = uniform({d, d}, bound, rng);
  b.wo = uniform({d, d}, bound * out_scale, rng);
  return b;
}

void append_params(const AttentionBlock& b, const std::string& prefix, ParamGroup g, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".ln_gain", b.ln_gain, g});
  out.push_back({prefix + ".ln_bias", b.ln_bias, g});
  out.push_back({prefix + ".wq", b.wq, g});
  out.push_back({prefix + ".wk", b.wk, g});
  out.push_back({prefix + ".wv", b.wv, g});
  out.push_back({prefix + ".wo", b.wo, g});
}

Tensor multi_head_attention(const Tensor& xn, const AttentionBlock& b, const LoraAdapter* lora_q,
                            const LoraAdapter* lora_v) {
  const std::size_t d = b.wq.rows();
  const auto heads = static_cast<std::size_t>(b.heads);
  const std::size_t dh = d / heads;
  Tensor q = lora_q ? lora_forward(xn, b.wq, *lora_q) : matmul_nt(xn, b.wq);
  Tensor k = matmul_nt(xn, b.wk);
  Tensor v = lora_v ? lora_forward(xn, b.wv, *lora_v) : matmul_nt(xn, b.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    Tensor p = b.causal ? causal_softmax_rows(scores) : softmax_rows(scores);
    outs.push_back(matmul(p, vh));
  }
  Tensor o = heads == 1 ? outs[0] : concat_cols(outs);
  return matmul_nt(o, b.wo);
}

Tensor attention_block_forward(const Tensor& x, const AttentionBlock& b) {
  Tensor xn = layer_norm(x, b.ln_gain, b.ln_bias);
  return add(x, multi_head_attention(xn, b));
}

Tensor sinusoidal_positions(std::size_t length, std::size_t d, double scale) {
  std::vector<double> v(length * d);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double ang = static_cast<double>(p) * freq;
      v[p * d + i] = scale * ((i % 2 == 0) ? std::sin(ang) : std::cos(ang));
    }
  }
  return Tensor({length, d}, std::move(v));
}

}  // namespace sviqa::nn
