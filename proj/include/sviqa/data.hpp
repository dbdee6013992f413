#pragma once

// Mixed-modality dataset protocol: every question is presented either as
// speech or as text, never both.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sviqa/audio.hpp"

namespace sviqa::data {

enum class Modality { speech, text };
enum class QuestionType { single_choice, yes_no, numeric, open_ended };
inline constexpr std::array<QuestionType, 4> kQuestionTypes = {QuestionType::single_choice, QuestionType::yes_no,
                                                               QuestionType::numeric, QuestionType::open_ended};

std::string to_string(Modality m);
std::string to_string(QuestionType q);
Modality parse_modality(const std::string& s);
QuestionType parse_question_type(const std::string& s);
std::string display_name(QuestionType q);  // "Yes/No", "Open-ended", ...

struct DatasetRecord {
  std::string id;
  std::string image;  // relative to the manifest directory
  Modality modality = Modality::text;
  std::optional<std::string> audio;
  std::optional<std::string> text;
  std::string answer;
  QuestionType qtype = QuestionType::open_ended;
};

// Throws ProtocolError naming the id when the modality fields disagree or
// the answer is empty.
void validate_record(const DatasetRecord& r);

struct ManifestStats {
  std::size_t total = 0;
  std::array<std::size_t, 4> counts{};  // indexed like kQuestionTypes
  std::array<double, 4> ratios{};
  std::size_t speech_records = 0;
  double mean_duration_s = 0.0;
  double std_duration_s = 0.0;  // n-1 denominator; 0 below two records

  std::string table(const std::string& split = "train") const;
};

class LookupTable {
 public:
  // Throws CollisionError naming the repeated question id or audio path.
  static LookupTable build(const std::vector<std::pair<std::string, std::string>>& pairs);

  const std::string& audio_for(const std::string& question_id) const;
  const std::string& question_for(const std::string& audio_path) const;
  bool has_question(const std::string& question_id) const { return forward_.count(question_id) != 0; }
  std::size_t size() const { return forward_.size(); }

 private:
  std::unordered_map<std::string, std::string> forward_, inverse_;
};

// Both renderings of a question, kept beside the manifest so evaluation can
// force one modality.
struct Alternate {
  std::string text;
  std::string audio;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<DatasetRecord> records;
  ManifestStats stats;
  LookupTable lookup;                         // speech records: id ↔ audio
  std::map<std::string, Alternate> alternates;  // empty when no sidecar

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

DatasetRecord parse_record_line(const std::string& line, std::size_t line_no);
std::string format_record_line(const DatasetRecord& r);

// Validation order: JSON shape (ParseError), modality protocol
// (ProtocolError), unique ids (UniquenessError), audio lookup bijection
// (CollisionError), referenced files (IoError).
Manifest load_and_validate_manifest(const std::filesystem::path& path);

// Reads <dir>/alternates.jsonl when present.
std::map<std::string, Alternate> load_alternates(const std::filesystem::path& path);

ManifestStats compute_stats(const std::vector<DatasetRecord>& records, const std::filesystem::path& root);

QuestionType classify_question_type(const std::string& answer, const std::vector<std::string>& options = {});

// Largest-remainder apportionment of n over the ratios (ties to lower index).
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& ratios);

// train2014 question-type distribution.
inline constexpr std::array<double, 4> kTrainTypeRatios = {0.0011, 0.3761, 0.1298, 0.4930};

// ---- tone code used for synthetic speech --------------------------------

inline constexpr double kToneBaseHz = 300.0;
inline constexpr double kToneStepHz = 40.0;
inline constexpr double kToneAmplitude = 0.5;

// Printable ASCII 0x20..0x7e each get one tone; anything else maps to '?'.
double tone_frequency(char c);
audio::Waveform synthesize_tones(const std::string& text, int tone_ms = 50);

struct GeneratorConfig {
  std::size_t n = 64;
  std::array<double, 4> ratios = kTrainTypeRatios;
  std::uint64_t seed = 7;
  double speech_probability = 0.5;
  int tone_ms = 50;
};

struct GeneratedDataset {
  std::filesystem::path manifest;
  std::filesystem::path alternates;
  std::vector<DatasetRecord> records;
};

// Writes manifest.jsonl, alternates.jsonl, images/*.ppm and audio/*.wav under
// out_dir. Every question gets a WAV; the manifest references it only for
// speech records. Output is a pure function of the config.
GeneratedDataset generate_synthetic_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir);

// Each epoch visits every index once; the order depends only on (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(std::size_t num_records, std::size_t batch_size, std::uint64_t seed, bool shuffle);
  std::vector<std::vector<std::size_t>> epoch(std::size_t epoch_index) const;
  // Batch number t of the unbounded stream of epochs.
  std::vector<std::size_t> batch_at(std::size_t step) const;
  std::size_t batches_per_epoch() const;

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
  bool shuffle_;
};

}  // namespace sviqa::data
