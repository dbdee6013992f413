#include "sviqa/speech_adapter.hpp"

#include <cmath>

#include "sviqa/error.hpp"

namespace sviqa {

std::size_t speech_token_count(std::size_t frames, std::size_t k, RaggedChunk mode) {
  if (k == 0) throw ConfigError("chunk size k must be >= 1");
  return mode == RaggedChunk::zero_pad ? (frames + k - 1) / k : frames / k;
}

std::size_t speech_chunk_width(std::size_t d_speech, std::size_t k) { return k * d_speech; }

Tensor compress_frames(const Tensor& frames, std::size_t k, RaggedChunk mode) {
  if (k == 0) throw ConfigError("chunk size k must be >= 1");
  if (frames.numel() == 0 || frames.rows() == 0) throw EmptyInputError("compress_frames: no frames");
  const std::size_t t = frames.rows(), d = frames.cols();
  const std::size_t m = speech_token_count(t, k, mode);
  if (m == 0)
    throw EmptyInputError("compress_frames: " + std::to_string(t) + " frames form no complete chunk of " +
                          std::to_string(k));
  std::vector<double> out(m * k * d, 0.0);
  const std::size_t copied = std::min(t, m * k);
  std::copy_n(frames.data().begin(), copied * d, out.begin());
  return Tensor({m, k * d}, std::move(out));
}

AdapterParams AdapterParams::init(std::size_t d_speech, std::size_t k, std::size_t hidden, std::size_t d_llm,
                                  std::uint64_t seed) {
  if (k == 0) throw ConfigError("chunk size k must be >= 1");
  Rng rng(seed);
  AdapterParams p;
  p.k = k;
  const std::size_t in = speech_chunk_width(d_speech, k);
  p.w1 = nn::uniform({in, hidden}, std::sqrt(6.0 / static_cast<double>(in)), rng, true);
  p.b1 = nn::constant({hidden}, 0.0, true);
  p.w2 = nn::uniform({hidden, d_llm}, std::sqrt(6.0 / static_cast<double>(hidden)), rng, true);
  p.b2 = nn::constant({d_llm}, 0.0, true);
  return p;
}

std::vector<nn::NamedParam> AdapterParams::parameters() const {
  const auto g = nn::ParamGroup::speech_adapter;
  return {{"speech_adapter.w1", w1, g}, {"speech_adapter.b1", b1, g}, {"speech_adapter.w2", w2, g},
          {"speech_adapter.b2", b2, g}};
}

SpeechTokens project_speech(const Tensor& chunks, const AdapterParams& p) {
  if (chunks.rank() != 2 || chunks.cols() != p.w1.rows())
    throw DimensionError("project_speech: expected chunk width " + std::to_string(p.w1.rows()) + ", got " +
                         std::to_string(chunks.cols()));
  Tensor hidden = relu(add_row(matmul(chunks, p.w1), p.b1));
  SpeechTokens s;
  s.tokens = add_row(matmul(hidden, p.w2), p.b2);
  s.span_period_ms = static_cast<int>(p.k) * audio::kFramePeriodMs;
  return s;
}

}  // namespace sviqa
