#include "sviqa/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "sviqa/error.hpp"
#include "sviqa/kernels.hpp"
#include "sviqa/serialize.hpp"

namespace sviqa::audio {

namespace {

constexpr std::size_t kBins = kWindowSamples / 2 + 1;

struct WavHeader {
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::uint32_t data_bytes = 0;
};

std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw ParseError("wav: truncated header");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

WavHeader read_header(std::istream& is, const std::filesystem::path& path) {
  const std::string where = "wav " + path.string();
  char tag[4];
  if (!is.read(tag, 4)) throw ParseError(where + ": truncated RIFF header");
  if (std::memcmp(tag, "RIFF", 4) != 0) throw FormatError(where + ": not a RIFF file");
  try {
    (void)io::read_u32(is);
  } catch (const ParseError&) {
    throw ParseError(where + ": truncated RIFF header");
  }
  if (!is.read(tag, 4)) throw ParseError(where + ": truncated RIFF header");
  if (std::memcmp(tag, "WAVE", 4) != 0) throw FormatError(where + ": RIFF type is not WAVE");
  WavHeader h;
  bool have_fmt = false;
  while (true) {
    if (!is.read(tag, 4)) throw ParseError(where + ": missing data chunk");
    std::uint32_t size = 0;
    try {
      size = io::read_u32(is);
    } catch (const ParseError&) {
      throw ParseError(where + ": truncated chunk header");
    }
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) throw ParseError(where + ": fmt chunk too small");
      h.format = read_u16(is);
      h.channels = read_u16(is);
      try {
        h.rate = io::read_u32(is);
        (void)io::read_u32(is);
      } catch (const ParseError&) {
        throw ParseError(where + ": truncated fmt chunk");
      }
      (void)read_u16(is);
      h.bits = read_u16(is);
      if (size > 16) is.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw ParseError(where + ": data chunk before fmt chunk");
      h.data_bytes = size;
      break;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
    if (!is) throw ParseError(where + ": truncated chunk");
  }
  if (h.format != 1) throw FormatError(where + ": encoding must be PCM (format 1), got " + std::to_string(h.format));
  if (h.bits != 16) throw FormatError(where + ": bits_per_sample must be 16, got " + std::to_string(h.bits));
  if (h.channels != 1) throw FormatError(where + ": channels must be 1, got " + std::to_string(h.channels));
  if (h.rate != kSampleRate)
    throw FormatError(where + ": sample_rate must be 16000, got " + std::to_string(h.rate));
  return h;
}

// Periodic Hann window and DFT basis rows, built once.
struct StftTables {
  std::vector<double> window;
  std::vector<double> cos_basis;  // kBins×kWindowSamples
  std::vector<double> sin_basis;
};

const StftTables& stft_tables() {
  static const StftTables t = [] {
    StftTables s;
    const double n = static_cast<double>(kWindowSamples);
    s.window.resize(kWindowSamples);
    for (std::size_t i = 0; i < kWindowSamples; ++i)
      s.window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
    s.cos_basis.resize(kBins * kWindowSamples);
    s.sin_basis.resize(kBins * kWindowSamples);
    for (std::size_t k = 0; k < kBins; ++k) {
      for (std::size_t i = 0; i < kWindowSamples; ++i) {
        // reduce the phase index exactly before converting to an angle
        const auto idx = static_cast<double>((k * i) % kWindowSamples);
        const double ang = 2.0 * std::numbers::pi * idx / n;
        s.cos_basis[k * kWindowSamples + i] = std::cos(ang);
        s.sin_basis[k * kWindowSamples + i] = std::sin(ang);
      }
    }
    return s;
  }();
  return t;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const WavHeader h = read_header(is, path);
  const std::size_t n = h.data_bytes / 2;
  std::vector<unsigned char> raw(n * 2);
  if (n && !is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw ParseError("wav " + path.string() + ": truncated sample data");
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = static_cast<std::int16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void save_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate != kSampleRate) throw FormatError("save_wav: sample_rate must be 16000");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  auto u16 = [&os](std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
  };
  os.write("RIFF", 4);
  io::write_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  io::write_u32(os, 16);
  u16(1);
  u16(1);
  io::write_u32(os, kSampleRate);
  io::write_u32(os, kSampleRate * 2);
  u16(2);
  u16(16);
  os.write("data", 4);
  io::write_u32(os, data_bytes);
  for (double x : w.samples) {
    const double c = std::clamp(x, -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::clamp(std::lround(c * 32768.0), -32768L, 32767L));
    u16(static_cast<std::uint16_t>(s));
  }
}

double wav_duration(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const WavHeader h = read_header(is, path);
  return static_cast<double>(h.data_bytes / 2) / kSampleRate;
}

std::size_t frame_count(std::size_t num_samples) {
  if (num_samples < kWindowSamples) return 0;
  return 1 + (num_samples - kWindowSamples) / kHopSamples;
}

Tensor mel_filterbank(std::size_t n_mels) {
  if (n_mels < 4) throw ConfigError("n_mels must be >= 4, got " + std::to_string(n_mels));
  const double top = hz_to_mel(kSampleRate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  std::vector<double> fb(n_mels * kBins, 0.0);
  const double bin_hz = static_cast<double>(kSampleRate) / static_cast<double>(kWindowSamples);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < kBins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f >= lo && f <= mid && mid > lo) w = (f - lo) / (mid - lo);
      else if (f > mid && f <= hi && hi > mid) w = (hi - f) / (hi - mid);
      fb[m * kBins + k] = w;
    }
  }
  return Tensor({n_mels, kBins}, std::move(fb));
}

MelSpectrogram mel_spectrogram(const Waveform& w, std::size_t n_mels) {
  if (w.sample_rate != kSampleRate) throw FormatError("mel_spectrogram: sample_rate must be 16000");
  const std::size_t t = frame_count(w.samples.size());
  if (t == 0)
    throw TooShortError("waveform of " + std::to_string(w.samples.size()) + " samples is shorter than one " +
                        std::to_string(kWindowSamples) + "-sample window");
  const Tensor fb = mel_filterbank(n_mels);
  const auto& tab = stft_tables();

  std::vector<double> frames(t * kWindowSamples);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t i = 0; i < kWindowSamples; ++i)
      frames[f * kWindowSamples + i] = w.samples[f * kHopSamples + i] * tab.window[i];

  std::vector<double> re(t * kBins, 0.0), im(t * kBins, 0.0);
  kernels::gemm_nt(frames.data(), tab.cos_basis.data(), re.data(), t, kWindowSamples, kBins);
  kernels::gemm_nt(frames.data(), tab.sin_basis.data(), im.data(), t, kWindowSamples, kBins);
  std::vector<double> mag(t * kBins);
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);

  std::vector<double> mel(t * n_mels, 0.0);
  kernels::gemm_nt(mag.data(), fb.data().data(), mel.data(), t, kBins, n_mels);
  for (auto& v : mel) v = std::log(v + kLogFloor);
  MelSpectrogram out;
  out.frames = Tensor({t, n_mels}, std::move(mel));
  return out;
}

SpeechEncoder::SpeechEncoder(const SpeechEncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.n_mels < 4) throw ConfigError("speech encoder: n_mels must be >= 4");
  if (cfg.width == 0) throw ConfigError("speech encoder: width must be positive");
  if (cfg.layers < 0) throw ConfigError("speech encoder: layers must be >= 0");
  Rng rng(seed);
  // log-mel features span roughly [-23, 5]; a small input gain keeps the
  // pre-norm activations moderate.
  w_in_ = nn::uniform({cfg.width, cfg.n_mels}, 0.1 * std::sqrt(3.0 / static_cast<double>(cfg.n_mels)), rng);
  b_in_ = nn::constant({cfg.width}, 0.0);
  for (int l = 0; l < cfg.layers; ++l) blocks_.push_back(nn::make_attention_block(cfg.width, cfg.heads, true, rng));
  ln_gain_ = nn::constant({cfg.width}, 1.0);
  ln_bias_ = nn::constant({cfg.width}, 0.0);
}

SpeechFrameFeatures SpeechEncoder::encode(const MelSpectrogram& mel) const {
  if (mel.frames.cols() != cfg_.n_mels)
    throw DimensionError("speech encoder expects " + std::to_string(cfg_.n_mels) + " mel bins, got " +
                         std::to_string(mel.frames.cols()));
  NoGradGuard guard;
  Tensor h = nn::linear_nt(mel.frames, w_in_, b_in_);
  for (const auto& b : blocks_) h = nn::attention_block_forward(h, b);
  SpeechFrameFeatures out;
  out.features = layer_norm(h, ln_gain_, ln_bias_);
  return out;
}

std::vector<nn::NamedParam> SpeechEncoder::parameters() const {
  std::vector<nn::NamedParam> out;
  const auto g = nn::ParamGroup::speech_encoder;
  out.push_back({"speech_encoder.w_in", w_in_, g});
  out.push_back({"speech_encoder.b_in", b_in_, g});
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    nn::append_params(blocks_[i], "speech_encoder.block" + std::to_string(i), g, out);
  out.push_back({"speech_encoder.ln_gain", ln_gain_, g});
  out.push_back({"speech_encoder.ln_bias", ln_bias_, g});
  return out;
}

SpeechFrameFeatures encode_speech(const MelSpectrogram& mel, const SpeechEncoder& enc) { return enc.encode(mel); }

}  // namespace sviqa::audio
