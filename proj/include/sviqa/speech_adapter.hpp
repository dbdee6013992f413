#pragma once

// Temporal-speech adapter: k→1 frame concatenation followed by
// Linear → ReLU → Linear into the language model's embedding width.

#include <cstdint>
#include <vector>

#include "sviqa/audio.hpp"
#include "sviqa/nn.hpp"

namespace sviqa {

enum class RaggedChunk { zero_pad, truncate };

// ceil(T/k) under zero_pad, floor(T/k) under truncate.
std::size_t speech_token_count(std::size_t frames, std::size_t k, RaggedChunk mode = RaggedChunk::zero_pad);
// k·D_s
std::size_t speech_chunk_width(std::size_t d_speech, std::size_t k);

// Row i holds frames k·i .. k·i+k-1 laid end to end. A ragged tail is
// zero-filled (zero_pad) or dropped (truncate).
Tensor compress_frames(const Tensor& frames, std::size_t k, RaggedChunk mode = RaggedChunk::zero_pad);
inline Tensor compress_frames(const audio::SpeechFrameFeatures& h, std::size_t k,
                              RaggedChunk mode = RaggedChunk::zero_pad) {
  return compress_frames(h.features, k, mode);
}

struct AdapterParams {
  Tensor w1;  // (k·D_s)×hidden
  Tensor b1;  // hidden
  Tensor w2;  // hidden×d_llm
  Tensor b2;  // d_llm
  std::size_t k = 5;

  // He-uniform weights, zero biases; all trainable.
  static AdapterParams init(std::size_t d_speech, std::size_t k, std::size_t hidden, std::size_t d_llm,
                            std::uint64_t seed);
  std::vector<nn::NamedParam> parameters() const;
};

struct SpeechTokens {
  Tensor tokens;  // M×d_llm
  int span_period_ms = 100;
  std::size_t count() const { return tokens.rows(); }
};

// S = ReLU(chunks·W1 + b1)·W2 + b2
SpeechTokens project_speech(const Tensor& chunks, const AdapterParams& p);

}  // namespace sviqa
