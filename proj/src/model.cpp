#include "sviqa/model.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "sviqa/error.hpp"
#include "sviqa/rng.hpp"

namespace sviqa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_int(const std::string& key, const std::string& v) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::string fmt_real(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": repeated key '" + key + "'");
  }
  return out;
}

bool ModelConfig::set(const std::string& key, const std::string& v) {
  using sz = std::size_t;
  if (key == "speech.n_mels") speech.n_mels = parse_int<sz>(key, v);
  else if (key == "speech.width") speech.width = parse_int<sz>(key, v);
  else if (key == "speech.layers") speech.layers = parse_int<int>(key, v);
  else if (key == "speech.heads") speech.heads = parse_int<int>(key, v);
  else if (key == "vision.grid") vision.grid = parse_int<sz>(key, v);
  else if (key == "vision.width") vision.width = parse_int<sz>(key, v);
  else if (key == "vision.layers") vision.layers = parse_int<int>(key, v);
  else if (key == "vision.heads") vision.heads = parse_int<int>(key, v);
  else if (key == "adapter.k") chunk_k = parse_int<sz>(key, v);
  else if (key == "adapter.hidden") adapter_hidden = parse_int<sz>(key, v);
  else if (key == "adapter.ragged") {
    if (v == "zero_pad") ragged = RaggedChunk::zero_pad;
    else if (v == "truncate") ragged = RaggedChunk::truncate;
    else throw ConfigError("adapter.ragged must be zero_pad or truncate, got '" + v + "'");
  } else if (key == "lm.d_model") lm.d_model = parse_int<sz>(key, v);
  else if (key == "lm.layers") lm.layers = parse_int<int>(key, v);
  else if (key == "lm.heads") lm.heads = parse_int<int>(key, v);
  else if (key == "lm.mlp_mult") lm.mlp_mult = parse_int<sz>(key, v);
  else if (key == "lm.max_context") lm.max_context = parse_int<sz>(key, v);
  else if (key == "lm.lora_rank") lm.lora_rank = parse_int<int>(key, v);
  else if (key == "lm.lora_alpha") lm.lora_alpha = parse_real(key, v);
  else if (key == "lm.embed_std") lm.embed_std = parse_real(key, v);
  else if (key == "lm.pos_scale") lm.pos_scale = parse_real(key, v);
  else if (key == "lm.logit_std") lm.logit_std = parse_real(key, v);
  else if (key == "lm.residual_scale") lm.residual_scale = parse_real(key, v);
  else if (key == "model.seed") seed = parse_int<std::uint64_t>(key, v);
  else return false;
  return true;
}

std::string ModelConfig::canonical() const {
  std::map<std::string, std::string> kv{
      {"adapter.hidden", std::to_string(adapter_hidden)},
      {"adapter.k", std::to_string(chunk_k)},
      {"adapter.ragged", ragged == RaggedChunk::zero_pad ? "zero_pad" : "truncate"},
      {"lm.d_model", std::to_string(lm.d_model)},
      {"lm.embed_std", fmt_real(lm.embed_std)},
      {"lm.heads", std::to_string(lm.heads)},
      {"lm.layers", std::to_string(lm.layers)},
      {"lm.logit_std", fmt_real(lm.logit_std)},
      {"lm.lora_alpha", fmt_real(lm.lora_alpha)},
      {"lm.lora_rank", std::to_string(lm.lora_rank)},
      {"lm.max_context", std::to_string(lm.max_context)},
      {"lm.mlp_mult", std::to_string(lm.mlp_mult)},
      {"lm.pos_scale", fmt_real(lm.pos_scale)},
      {"lm.residual_scale", fmt_real(lm.residual_scale)},
      {"model.seed", std::to_string(seed)},
      {"speech.heads", std::to_string(speech.heads)},
      {"speech.layers", std::to_string(speech.layers)},
      {"speech.n_mels", std::to_string(speech.n_mels)},
      {"speech.width", std::to_string(speech.width)},
      {"vision.grid", std::to_string(vision.grid)},
      {"vision.heads", std::to_string(vision.heads)},
      {"vision.layers", std::to_string(vision.layers)},
      {"vision.width", std::to_string(vision.width)},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t ModelConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ModelConfig ModelConfig::from_canonical(const std::string& text) {
  ModelConfig cfg;
  for (const auto& [k, v] : parse_key_values(text))
    if (!cfg.set(k, v)) throw ConfigError("unknown model config key '" + k + "'");
  return cfg;
}

InputMode parse_input_mode(const std::string& s) {
  if (s == "as_is") return InputMode::as_is;
  if (s == "force_text") return InputMode::force_text;
  if (s == "force_speech") return InputMode::force_speech;
  throw ConfigError("unknown mode '" + s + "' (expected as_is, force_text or force_speech)");
}

std::string to_string(InputMode m) {
  switch (m) {
    case InputMode::as_is: return "as_is";
    case InputMode::force_text: return "force_text";
    case InputMode::force_speech: return "force_speech";
  }
  return "as_is";
}

data::DatasetRecord apply_mode(const data::DatasetRecord& rec, const data::Manifest& m, InputMode mode) {
  data::DatasetRecord out = rec;
  if (mode == InputMode::as_is) return out;
  const bool want_text = mode == InputMode::force_text;
  if (want_text && rec.modality == data::Modality::text) return out;
  if (!want_text && rec.modality == data::Modality::speech) return out;
  const auto it = m.alternates.find(rec.id);
  if (it == m.alternates.end() || (want_text ? it->second.text.empty() : it->second.audio.empty()))
    throw ModeError(to_string(mode) + ": no " + (want_text ? "text" : "audio") + " rendering for " + rec.id);
  if (want_text) {
    out.modality = data::Modality::text;
    out.text = it->second.text;
    out.audio.reset();
  } else {
    out.modality = data::Modality::speech;
    out.audio = it->second.audio;
    out.text.reset();
  }
  return out;
}

SviqaModel::SviqaModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.lm.vocab_size != vocab_.size())
    throw ConfigError("lm vocab_size " + std::to_string(cfg.lm.vocab_size) + " does not match the tokenizer (" +
                      std::to_string(vocab_.size()) + ")");
  if (cfg.chunk_k == 0) throw ConfigError("adapter.k must be positive");
  speech_enc_ = audio::SpeechEncoder(cfg.speech, derive_seed(cfg.seed, 1));
  vision_enc_ = vision::VisionEncoder(cfg.vision, derive_seed(cfg.seed, 2));
  adapter_ = AdapterParams::init(cfg.speech.width, cfg.chunk_k, cfg.adapter_hidden, cfg.lm.d_model,
                                 derive_seed(cfg.seed, 3));
  projector_ = vision::ProjectorParams::init(cfg.vision.width, cfg.lm.d_model, derive_seed(cfg.seed, 4));
  lm_ = lm::FusionLM(cfg.lm, derive_seed(cfg.seed, 5));
}

audio::SpeechFrameFeatures SviqaModel::speech_features(const audio::Waveform& w) const {
  NoGradGuard guard;
  return speech_enc_.encode(audio::mel_spectrogram(w, cfg_.speech.n_mels));
}

vision::PatchGridFeatures SviqaModel::vision_features(const vision::RawImage& raw) const {
  NoGradGuard guard;
  return vision_enc_.encode(vision::preprocess_image(raw));
}

Example SviqaModel::prepare(const data::DatasetRecord& rec, const std::filesystem::path& root) const {
  Example ex;
  ex.id = rec.id;
  ex.modality = rec.modality;
  ex.qtype = rec.qtype;
  ex.gold = rec.answer;
  ex.prompt = lm::apply_template(rec, vocab_);
  ex.answer = lm::answer_ids(rec.answer, vocab_);
  ex.vision = vision_features(vision::load_image(root / rec.image));
  if (rec.modality == data::Modality::speech) ex.speech = speech_features(audio::load_wav(root / *rec.audio));
  return ex;
}

std::vector<Example> SviqaModel::prepare_all(const std::vector<data::DatasetRecord>& recs,
                                             const std::filesystem::path& root) const {
  std::vector<Example> out(recs.size());
  std::vector<std::string> errors(recs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < recs.size(); ++i) {
    try {
      out[i] = prepare(recs[i], root);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (!errors[i].empty()) prepare(recs[i], root);  // rethrows with its own type
  return out;
}

vision::VisionTokens SviqaModel::vision_tokens(const Example& ex) const {
  return vision::project_vision(ex.vision, projector_);
}

std::optional<SpeechTokens> SviqaModel::speech_tokens(const Example& ex) const {
  if (!ex.speech) return std::nullopt;
  return project_speech(compress_frames(*ex.speech, cfg_.chunk_k, cfg_.ragged), adapter_);
}

lm::TokenSequence SviqaModel::sequence(const Example& ex, bool with_answer) const {
  const auto v = vision_tokens(ex);
  const auto s = speech_tokens(ex);
  return lm::assemble_sequence(v, s ? &*s : nullptr, ex.prompt, with_answer ? ex.answer : std::vector<int>{}, lm_);
}

std::string SviqaModel::answer(const Example& ex, int max_new) const {
  NoGradGuard guard;
  return lm::generate_greedy(sequence(ex, false), lm_, max_new, vocab_);
}

std::vector<nn::NamedParam> SviqaModel::parameters() const {
  std::vector<nn::NamedParam> out = speech_enc_.parameters();
  for (auto&& group : {vision_enc_.parameters(), adapter_.parameters(), projector_.parameters(), lm_.parameters()})
    out.insert(out.end(), group.begin(), group.end());
  return out;
}

}  // namespace sviqa
