#include <doctest.h>

#include <cmath>

#include "sviqa/audio.hpp"
#include "sviqa/error.hpp"
#include "sviqa/speech_adapter.hpp"
#include "test_helpers.hpp"

using namespace sviqa;
using namespace sviqa::audio;

namespace {
Waveform sine(std::size_t n, double freq, double amp = 0.5) {
  Waveform w;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(amp * std::sin(2 * M_PI * freq * i / kSampleRate));
  return w;
}
}  // namespace

TEST_CASE("load_wav") {
  testutil::TempDir dir;
  SUBCASE("one second of zeros") {
    testutil::write_file(dir / "z.wav", testutil::wav_bytes(std::vector<std::int16_t>(16000, 0)));
    const auto w = load_wav(dir / "z.wav");
    CHECK(w.samples.size() == 16000);
    CHECK(w.duration_s() == 1.0);
    for (double s : w.samples) CHECK(s == 0.0);
    CHECK(wav_duration(dir / "z.wav") == 1.0);
  }
  SUBCASE("full-scale negative sample") {
    testutil::write_file(dir / "m.wav", testutil::wav_bytes({-32768, 16384}));
    const auto w = load_wav(dir / "m.wav");
    CHECK(w.samples[0] == -1.0);
    CHECK(w.samples[1] == 0.5);
  }
  SUBCASE("format errors name the field") {
    auto expect = [&](const std::string& bytes, const std::string& field) {
      testutil::write_file(dir / "bad.wav", bytes);
      try {
        (void)load_wav(dir / "bad.wav");
        FAIL("expected FormatError for " << field);
      } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(field) != std::string::npos);
      }
    };
    expect(testutil::wav_bytes({0, 0}, 44100), "sample_rate");
    expect(testutil::wav_bytes({0, 0}, 16000, 2), "channels");
    expect(testutil::wav_bytes({0, 0}, 16000, 1, 8), "bits_per_sample");
    expect(testutil::wav_bytes({0, 0}, 16000, 1, 16, 3), "encoding");
  }
  SUBCASE("truncated file is a parse error") {
    const auto bytes = testutil::wav_bytes(std::vector<std::int16_t>(100, 7));
    for (std::size_t cut : {std::size_t{6}, std::size_t{30}, bytes.size() - 5}) {
      testutil::write_file(dir / "t.wav", bytes.substr(0, cut));
      CHECK_THROWS_AS((void)load_wav(dir / "t.wav"), ParseError);
    }
  }
  SUBCASE("save then load round trip") {
    Waveform w = sine(1234, 440.0);
    save_wav(dir / "s.wav", w);
    const auto back = load_wav(dir / "s.wav");
    REQUIRE(back.samples.size() == w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::fabs(back.samples[i] - w.samples[i]) <= 1.0 / 32768);
  }
}

TEST_CASE("frame count") {
  CHECK(frame_count(16000) == 49);
  CHECK(frame_count(399) == 0);
  CHECK(frame_count(400) == 1);
  CHECK(frame_count(719) == 1);
  CHECK(frame_count(720) == 2);
  // Average training-set question duration.
  const auto t = frame_count(static_cast<std::size_t>(std::llround(3.12 * kSampleRate)));
  CHECK(t == 155);
  CHECK(std::abs(static_cast<long>(t) - 153) <= 3);
}

TEST_CASE("mel spectrogram") {
  SUBCASE("one second gives 49 frames") {
    const auto m = mel_spectrogram(sine(16000, 500.0), 40);
    CHECK(m.num_frames() == 49);
    CHECK(m.frames.cols() == 40);
    CHECK(m.hop_ms == 20);
    CHECK(m.window_ms == 25);
  }
  SUBCASE("silence is the log floor everywhere") {
    Waveform w;
    w.samples.assign(4000, 0.0);
    const auto m = mel_spectrogram(w, 16);
    for (double v : m.frames.data()) CHECK(v == std::log(kLogFloor));
  }
  SUBCASE("too short") {
    Waveform w;
    w.samples.assign(399, 0.1);
    CHECK_THROWS_AS((void)mel_spectrogram(w, 16), TooShortError);
  }
  SUBCASE("doubling the amplitude keeps frame count and finiteness") {
    const auto a = mel_spectrogram(sine(5000, 1200.0, 0.4), 24);
    const auto b = mel_spectrogram(sine(5000, 1200.0, 0.8), 24);
    CHECK(a.num_frames() == b.num_frames());
    bool changed = false;
    for (std::size_t i = 0; i < a.frames.numel(); ++i) {
      CHECK(std::isfinite(b.frames.data()[i]));
      changed |= a.frames.data()[i] != b.frames.data()[i];
    }
    CHECK(changed);
  }
  SUBCASE("a pure tone peaks in the filter covering its frequency") {
    const auto m = mel_spectrogram(sine(4000, 2000.0), 40);
    const auto fb = mel_filterbank(40);
    const std::size_t bin = 2000 * 400 / kSampleRate;  // 50
    std::size_t best_filter = 0;
    for (std::size_t f = 1; f < 40; ++f)
      if (fb.at(f, bin) > fb.at(best_filter, bin)) best_filter = f;
    std::size_t best = 0;
    for (std::size_t f = 1; f < 40; ++f)
      if (m.frames.at(3, f) > m.frames.at(3, best)) best = f;
    CHECK(std::abs(static_cast<int>(best) - static_cast<int>(best_filter)) <= 1);
  }
}

TEST_CASE("speech encoder") {
  SpeechEncoderConfig cfg;
  const SpeechEncoder enc(cfg, 11);
  const auto mel = mel_spectrogram(sine(16000, 700.0), cfg.n_mels);
  SUBCASE("one row per frame") {
    const auto h = encode_speech(mel, enc);
    CHECK(h.num_frames() == 49);
    CHECK(h.features.cols() == 32);
    CHECK(h.frame_period_ms == 20);
  }
  SUBCASE("deterministic") {
    const auto a = enc.encode(mel), b = SpeechEncoder(cfg, 11).encode(mel);
    for (std::size_t i = 0; i < a.features.numel(); ++i) CHECK(a.features.data()[i] == b.features.data()[i]);
  }
  SUBCASE("n_mels mismatch") {
    CHECK_THROWS_AS((void)enc.encode(mel_spectrogram(sine(1000, 700.0), 20)), DimensionError);
  }
  SUBCASE("parameters are frozen") {
    for (const auto& p : enc.parameters()) {
      CHECK_FALSE(p.tensor.requires_grad());
      CHECK(p.group == nn::ParamGroup::speech_encoder);
    }
  }
  SUBCASE("full-scale width") {
    SpeechEncoderConfig big{16, 1280, 1, 8};
    const SpeechEncoder wide(big, 3);
    const auto h = wide.encode(mel_spectrogram(sine(2000, 700.0), 16));
    CHECK(h.features.rows() == frame_count(2000));
    CHECK(h.features.cols() == 1280);
  }
}

TEST_CASE("appending audio never changes earlier complete speech chunks") {
  SpeechEncoderConfig cfg;
  const SpeechEncoder enc(cfg, 5);
  const auto adapter = AdapterParams::init(cfg.width, 5, 16, 8, 9);
  Waveform shortw = sine(9000, 900.0), longw = shortw;
  for (std::size_t i = 0; i < 5000; ++i) longw.samples.push_back(0.3 * std::sin(0.01 * i));
  const auto hs = enc.encode(mel_spectrogram(shortw, cfg.n_mels));
  const auto hl = enc.encode(mel_spectrogram(longw, cfg.n_mels));
  const auto ss = project_speech(compress_frames(hs, 5), adapter);
  const auto sl = project_speech(compress_frames(hl, 5), adapter);
  const std::size_t full = hs.num_frames() / 5;
  REQUIRE(full >= 1);
  for (std::size_t r = 0; r < full; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(ss.tokens.at(r, c) == sl.tokens.at(r, c));
}
