#pragma once

// Speech front end: 16 kHz PCM16 WAV I/O, a 25 ms / 20 ms log-mel
// spectrogram, and the frozen toy speech encoder emitting one feature row
// per 20 ms frame.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sviqa/nn.hpp"
#include "sviqa/tensor.hpp"

namespace sviqa::audio {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kWindowSamples = 400;  // 25 ms
inline constexpr std::size_t kHopSamples = 320;     // 20 ms
inline constexpr int kFramePeriodMs = 20;
inline constexpr double kLogFloor = 1e-10;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  double duration_s() const { return static_cast<double>(samples.size()) / kSampleRate; }
};

// RIFF/WAVE, PCM16, mono, 16 kHz. Samples are divided by 32768.
Waveform load_wav(const std::filesystem::path& path);
// Clamps to [-1, 1] and writes PCM16 mono 16 kHz.
void save_wav(const std::filesystem::path& path, const Waveform& w);
// Reads only the header; returns seconds of audio.
double wav_duration(const std::filesystem::path& path);

struct MelSpectrogram {
  Tensor frames;  // T×n_mels log energies
  int hop_ms = 20;
  int window_ms = 25;
  std::size_t num_frames() const { return frames.rows(); }
};

// 1 + floor((samples - 400) / 320); 0 when shorter than one window.
std::size_t frame_count(std::size_t num_samples);

// Triangular HTK-mel filters over 0..8000 Hz on the 201 bins of a 400-point DFT.
Tensor mel_filterbank(std::size_t n_mels);

// Hann-windowed magnitude STFT, no centering or padding, log(mel + 1e-10).
MelSpectrogram mel_spectrogram(const Waveform& w, std::size_t n_mels);

struct SpeechFrameFeatures {
  Tensor features;  // T×D_s
  int frame_period_ms = kFramePeriodMs;
  std::size_t num_frames() const { return features.rows(); }
};

struct SpeechEncoderConfig {
  std::size_t n_mels = 40;
  std::size_t width = 32;  // D_s
  int layers = 1;
  int heads = 2;
};

// Frozen: linear n_mels→D_s, causal self-attention blocks, final layer-norm.
class SpeechEncoder {
 public:
  SpeechEncoder() = default;
  SpeechEncoder(const SpeechEncoderConfig& cfg, std::uint64_t seed);

  SpeechFrameFeatures encode(const MelSpectrogram& mel) const;
  const SpeechEncoderConfig& config() const { return cfg_; }
  std::vector<nn::NamedParam> parameters() const;

 private:
  SpeechEncoderConfig cfg_;
  Tensor w_in_, b_in_;
  std::vector<nn::AttentionBlock> blocks_;
  Tensor ln_gain_, ln_bias_;
};

SpeechFrameFeatures encode_speech(const MelSpectrogram& mel, const SpeechEncoder& enc);

}  // namespace sviqa::audio
