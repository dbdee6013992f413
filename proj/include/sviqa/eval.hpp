#pragma once

// Answer scoring, per-type and per-modality reports, the ASR stub used by
// the cascade baseline, and the latency bench.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sviqa/model.hpp"

namespace sviqa::eval {

// Lowercase, trim, drop . , ! ? ' ", collapse whitespace, drop a leading
// article (a, an, the).
std::string normalize_answer(const std::string& s);
int score_answer(const std::string& pred, const std::string& gold);
// Inspection only: one normalized answer is a word-prefix of the other.
bool prefix_match(const std::string& pred, const std::string& gold);

struct Cell {
  std::size_t correct = 0, total = 0;
  std::optional<double> accuracy() const;
  void add(bool ok) { correct += ok ? 1 : 0, ++total; }
};

struct RecordResult {
  std::string id;
  data::QuestionType qtype = data::QuestionType::open_ended;
  data::Modality modality = data::Modality::text;
  std::string prediction, gold;
  bool correct = false;
  bool prefix = false;
};

struct EvalReport {
  InputMode mode = InputMode::as_is;
  Cell overall;
  std::array<Cell, 4> per_type;  // indexed like data::kQuestionTypes
  Cell speech, text;
  std::size_t prefix_matches = 0;
  std::vector<RecordResult> records;  // id order

  // One row shaped like the per-type comparison table; absent cells print "-".
  std::string table(const std::string& model_name = "SViQA-toy") const;
  std::string jsonl() const;
};

// Records must already be sorted by id.
EvalReport build_report(std::vector<RecordResult> results, InputMode mode);

struct AsrStub {
  double corruption = 0.0;  // fraction of characters replaced, in [0, 1]
  std::uint64_t seed = 0;
  int tone_ms = 50;

  // Recovers the tone-coded text one segment at a time, then replaces
  // round(corruption·n) characters with different printable ones.
  std::string transcribe(const audio::Waveform& w) const;
};

std::string cascade_transcribe(const audio::Waveform& w, const AsrStub& asr);

struct EvalOptions {
  int max_new = 16;
  // When set, speech questions are transcribed and answered as text.
  std::optional<AsrStub> cascade;
};

// Greedy-decodes every record after applying the mode (ModeError lists all
// records lacking the needed rendering) and scores against the gold answer.
EvalReport evaluate(const SviqaModel& model, const data::Manifest& manifest, InputMode mode,
                    const EvalOptions& opts = {});

struct ModalityAblation {
  EvalReport mixed, text, speech;
  std::string table() const;
};

ModalityAblation evaluate_modalities(const SviqaModel& model, const data::Manifest& manifest,
                                     const EvalOptions& opts = {});

struct LatencyStats {
  double mean = 0, std = 0;  // seconds; std uses n-1
  std::vector<double> samples;
  std::string formatted() const;  // "3.023 ± 0.225"
};

LatencyStats summarize_latency(std::vector<double> samples);

struct LatencyReport {
  LatencyStats end_to_end, cascade;
  std::size_t n_runs = 0;
  std::vector<std::string> ids;
  std::string table() const;
  std::string csv() const;
};

using Clock = std::function<double()>;
// Monotonic seconds.
double steady_seconds();

// Times n_runs queries in each mode after one untimed warm-up query. Every
// query is a speech question (alternates are used for text records); the
// two modes run back to back on the same record.
LatencyReport measure_latency(const SviqaModel& model, const data::Manifest& manifest, std::size_t n_runs,
                              const AsrStub& asr = {}, const Clock& clock = steady_seconds, int max_new = 16);

}  // namespace sviqa::eval
