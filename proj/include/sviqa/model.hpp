#pragma once

// The full desk-scale model: frozen speech and vision encoders, the trainable
// speech adapter and vision projector, and the LoRA-adapted language model.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sviqa/audio.hpp"
#include "sviqa/data.hpp"
#include "sviqa/fusion_lm.hpp"
#include "sviqa/speech_adapter.hpp"
#include "sviqa/vision.hpp"

namespace sviqa {

// Flat `key = value` text; '#' starts a comment. Throws ConfigError on a
// malformed line or a repeated key.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct ModelConfig {
  audio::SpeechEncoderConfig speech;
  vision::VisionEncoderConfig vision;
  lm::LmConfig lm;
  std::size_t chunk_k = 5;
  std::size_t adapter_hidden = 64;
  RaggedChunk ragged = RaggedChunk::zero_pad;
  std::uint64_t seed = 1;

  // Sets one field by key ("lm.d_model", "adapter.k", ...). Returns false
  // for keys it does not own.
  bool set(const std::string& key, const std::string& value);
  // Sorted `key = value` lines covering every field.
  std::string canonical() const;
  std::uint64_t hash() const;
  static ModelConfig from_canonical(const std::string& text);
};

// Pre-computed frozen features for one record plus its prompt and answer ids.
struct Example {
  std::string id;
  data::Modality modality = data::Modality::text;
  data::QuestionType qtype = data::QuestionType::open_ended;
  std::string gold;
  vision::PatchGridFeatures vision;
  std::optional<audio::SpeechFrameFeatures> speech;
  lm::PromptIds prompt;
  std::vector<int> answer;
};

enum class InputMode { as_is, force_text, force_speech };
InputMode parse_input_mode(const std::string& s);
std::string to_string(InputMode m);

// Rewrites the record into the requested modality using the manifest's
// alternates. Throws ModeError when the needed rendering is unavailable.
data::DatasetRecord apply_mode(const data::DatasetRecord& rec, const data::Manifest& m, InputMode mode);

class SviqaModel {
 public:
  explicit SviqaModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const lm::Vocabulary& vocab() const { return vocab_; }

  audio::SpeechFrameFeatures speech_features(const audio::Waveform& w) const;
  vision::PatchGridFeatures vision_features(const vision::RawImage& raw) const;

  // Loads the image (and audio for speech records) relative to root.
  Example prepare(const data::DatasetRecord& rec, const std::filesystem::path& root) const;
  std::vector<Example> prepare_all(const std::vector<data::DatasetRecord>& recs,
                                   const std::filesystem::path& root) const;

  vision::VisionTokens vision_tokens(const Example& ex) const;
  std::optional<SpeechTokens> speech_tokens(const Example& ex) const;
  // [V; S; T] with the answer ids appended when with_answer is set.
  lm::TokenSequence sequence(const Example& ex, bool with_answer) const;

  std::string answer(const Example& ex, int max_new = 16) const;

  std::vector<nn::NamedParam> parameters() const;

  audio::SpeechEncoder& speech_encoder() { return speech_enc_; }
  vision::VisionEncoder& vision_encoder() { return vision_enc_; }
  AdapterParams& adapter() { return adapter_; }
  vision::ProjectorParams& projector() { return projector_; }
  lm::FusionLM& lm() { return lm_; }
  const lm::FusionLM& lm() const { return lm_; }

 private:
  ModelConfig cfg_;
  lm::Vocabulary vocab_;
  audio::SpeechEncoder speech_enc_;
  vision::VisionEncoder vision_enc_;
  AdapterParams adapter_;
  vision::ProjectorParams projector_;
  lm::FusionLM lm_;
};

}  // namespace sviqa
