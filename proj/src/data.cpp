#include "sviqa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sviqa/error.hpp"
#include "sviqa/rng.hpp"
#include "sviqa/vision.hpp"

namespace sviqa::data {

using json = nlohmann::ordered_json;

std::string to_string(Modality m) { return m == Modality::speech ? "speech" : "text"; }

std::string to_string(QuestionType q) {
  switch (q) {
    case QuestionType::single_choice: return "single_choice";
    case QuestionType::yes_no: return "yes_no";
    case QuestionType::numeric: return "numeric";
    case QuestionType::open_ended: return "open_ended";
  }
  return "open_ended";
}

std::string display_name(QuestionType q) {
  switch (q) {
    case QuestionType::single_choice: return "Single-choice";
    case QuestionType::yes_no: return "Yes/No";
    case QuestionType::numeric: return "Numeric";
    case QuestionType::open_ended: return "Open-ended";
  }
  return "?";
}

Modality parse_modality(const std::string& s) {
  if (s == "speech") return Modality::speech;
  if (s == "text") return Modality::text;
  throw ParseError("unknown modality '" + s + "'");
}

QuestionType parse_question_type(const std::string& s) {
  for (auto q : kQuestionTypes)
    if (to_string(q) == s) return q;
  throw ParseError("unknown qtype '" + s + "'");
}

void validate_record(const DatasetRecord& r) {
  const bool has_audio = r.audio.has_value();
  const bool has_text = r.text.has_value();
  if (has_audio && has_text)
    throw ProtocolError("protocol violation: record " + r.id + " carries both speech and text");
  if (!has_audio && !has_text) throw ProtocolError("protocol violation: record " + r.id + " carries no question");
  if (r.modality == Modality::speech && !has_audio)
    throw ProtocolError("protocol violation: record " + r.id + " is speech-modality without audio");
  if (r.modality == Modality::text && !has_text)
    throw ProtocolError("protocol violation: record " + r.id + " is text-modality without text");
  if (r.answer.empty()) throw ProtocolError("protocol violation: record " + r.id + " has an empty answer");
}

namespace {
std::string get_string(const json& j, const char* key, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError("manifest line " + std::to_string(line_no) + ": missing key '" + key + "'");
  if (!it->is_string())
    throw ParseError("manifest line " + std::to_string(line_no) + ": key '" + key + "' is not a string");
  return it->get<std::string>();
}

std::optional<std::string> get_optional(const json& j, const char* key, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string())
    throw ParseError("manifest line " + std::to_string(line_no) + ": key '" + key + "' is not a string");
  return it->get<std::string>();
}
}  // namespace

DatasetRecord parse_record_line(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("manifest line " + std::to_string(line_no) + ": not an object");
  DatasetRecord r;
  r.id = get_string(j, "id", line_no);
  r.image = get_string(j, "image", line_no);
  r.modality = parse_modality(get_string(j, "modality", line_no));
  r.audio = get_optional(j, "audio", line_no);
  r.text = get_optional(j, "text", line_no);
  r.answer = get_string(j, "answer", line_no);
  r.qtype = parse_question_type(get_string(j, "qtype", line_no));
  return r;
}

std::string format_record_line(const DatasetRecord& r) {
  json j;
  j["id"] = r.id;
  j["image"] = r.image;
  j["modality"] = to_string(r.modality);
  if (r.audio) j["audio"] = *r.audio;
  if (r.text) j["text"] = *r.text;
  j["answer"] = r.answer;
  j["qtype"] = to_string(r.qtype);
  return j.dump();
}

LookupTable LookupTable::build(const std::vector<std::pair<std::string, std::string>>& pairs) {
  LookupTable t;
  for (const auto& [qid, path] : pairs) {
    if (t.forward_.count(qid)) throw CollisionError("lookup collision: question id '" + qid + "' appears twice");
    if (t.inverse_.count(path)) throw CollisionError("lookup collision: audio path '" + path + "' appears twice");
    t.forward_.emplace(qid, path);
    t.inverse_.emplace(path, qid);
  }
  return t;
}

const std::string& LookupTable::audio_for(const std::string& question_id) const {
  auto it = forward_.find(question_id);
  if (it == forward_.end()) throw IndexError("lookup: no audio for question '" + question_id + "'");
  return it->second;
}

const std::string& LookupTable::question_for(const std::string& audio_path) const {
  auto it = inverse_.find(audio_path);
  if (it == inverse_.end()) throw IndexError("lookup: no question for audio '" + audio_path + "'");
  return it->second;
}

ManifestStats compute_stats(const std::vector<DatasetRecord>& records, const std::filesystem::path& root) {
  ManifestStats s;
  s.total = records.size();
  std::vector<double> durations;
  for (const auto& r : records) {
    s.counts[static_cast<std::size_t>(r.qtype)]++;
    if (r.modality == Modality::speech && r.audio) durations.push_back(audio::wav_duration(root / *r.audio));
  }
  if (s.total > 0)
    for (std::size_t i = 0; i < 4; ++i) s.ratios[i] = static_cast<double>(s.counts[i]) / static_cast<double>(s.total);
  s.speech_records = durations.size();
  if (!durations.empty()) {
    s.mean_duration_s = std::accumulate(durations.begin(), durations.end(), 0.0) / static_cast<double>(durations.size());
    if (durations.size() > 1) {
      double ss = 0.0;
      for (double d : durations) ss += (d - s.mean_duration_s) * (d - s.mean_duration_s);
      s.std_duration_s = std::sqrt(ss / static_cast<double>(durations.size() - 1));
    }
  }
  return s;
}

std::string ManifestStats::table(const std::string& split) const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s | %-9s | %-13s | %s\n", "Split", "IQ Pairs", "Avg. S-D", "Q-T (Ratio)");
  os << buf;
  for (std::size_t i = 0; i < 4; ++i) {
    char dur[32];
    std::snprintf(dur, sizeof dur, "%.2fs ± %.2fs", mean_duration_s, std_duration_s);
    char qt[64];
    std::snprintf(qt, sizeof qt, "%s (%.2f%%)", display_name(kQuestionTypes[i]).c_str(), 100.0 * ratios[i]);
    if (i == 0) {
      std::snprintf(buf, sizeof buf, "%-10s | %-9zu | %-15s | %s\n", split.c_str(), total, dur, qt);
    } else {
      std::snprintf(buf, sizeof buf, "%-10s | %-9s | %-13s | %s\n", "", "", "", qt);
    }
    os << buf;
  }
  return os.str();
}

Manifest load_and_validate_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    m.records.push_back(parse_record_line(line, line_no));
  }
  for (const auto& r : m.records) validate_record(r);

  std::set<std::string> ids;
  for (const auto& r : m.records)
    if (!ids.insert(r.id).second) throw UniquenessError("duplicate record id '" + r.id + "'");

  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& r : m.records)
    if (r.audio) pairs.emplace_back(r.id, *r.audio);
  m.lookup = LookupTable::build(pairs);

  for (const auto& r : m.records) {
    if (!std::filesystem::is_regular_file(m.resolve(r.image)))
      throw IoError("record " + r.id + ": missing image file " + m.resolve(r.image).string());
    if (r.audio && !std::filesystem::is_regular_file(m.resolve(*r.audio)))
      throw IoError("record " + r.id + ": missing audio file " + m.resolve(*r.audio).string());
  }
  m.stats = compute_stats(m.records, m.root);
  const auto alt = m.root / "alternates.jsonl";
  if (std::filesystem::is_regular_file(alt)) m.alternates = load_alternates(alt);
  return m;
}

std::map<std::string, Alternate> load_alternates(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::map<std::string, Alternate> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    Alternate a;
    const auto id = get_string(j, "id", line_no);
    a.text = get_string(j, "text", line_no);
    a.audio = get_string(j, "audio", line_no);
    if (!out.emplace(id, std::move(a)).second) throw UniquenessError("duplicate alternate id '" + id + "'");
  }
  return out;
}

namespace {
std::string simple_normalize(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '.' || c == ',' || c == '!' || c == '?' || c == '\'' || c == '"') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  const auto b = out.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = out.find_last_not_of(" \t\r\n");
  return out.substr(b, e - b + 1);
}

bool is_number(const std::string& s) {
  static const std::set<std::string> words = {"zero",    "one",     "two",      "three",    "four",   "five",
                                              "six",     "seven",   "eight",    "nine",     "ten",    "eleven",
                                              "twelve",  "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
                                              "eighteen", "nineteen", "twenty"};
  if (words.count(s)) return true;
  if (s.empty()) return false;
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  bool digit = false, dot = false;
  for (; i < s.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(s[i]))) {
      digit = true;
    } else if (s[i] == '.' && !dot) {
      dot = true;
    } else {
      return false;
    }
  }
  return digit;
}
}  // namespace

QuestionType classify_question_type(const std::string& answer, const std::vector<std::string>& options) {
  if (!options.empty()) return QuestionType::single_choice;
  const std::string a = simple_normalize(answer);
  if (a == "yes" || a == "no") return QuestionType::yes_no;
  if (is_number(a)) return QuestionType::numeric;
  return QuestionType::open_ended;
}

std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw ConfigError("negative ratio");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("ratios must sum to 1, got " + std::to_string(total));
  std::vector<std::size_t> counts(ratios.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double exact = static_cast<double>(n) * ratios[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    used += counts[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n; ++k, ++used) counts[rem[k % rem.size()].second]++;
  return counts;
}

double tone_frequency(char c) {
  const auto u = static_cast<unsigned char>(c);
  const int code = (u >= 0x20 && u <= 0x7e) ? u : '?';
  return kToneBaseHz + kToneStepHz * (code - 0x20);
}

audio::Waveform synthesize_tones(const std::string& text, int tone_ms) {
  if (tone_ms <= 0) throw ConfigError("tone_ms must be positive");
  const std::size_t per = static_cast<std::size_t>(audio::kSampleRate) * static_cast<std::size_t>(tone_ms) / 1000;
  audio::Waveform w;
  w.samples.reserve(per * text.size());
  for (char c : text) {
    const double f = tone_frequency(c);
    for (std::size_t i = 0; i < per; ++i)
      w.samples.push_back(kToneAmplitude * std::sin(2.0 * 3.141592653589793 * f * static_cast<double>(i) /
                                                    audio::kSampleRate));
  }
  return w;
}

// ---- procedural scenes --------------------------------------------------

namespace {

struct Color {
  const char* name;
  double rgb[3];
};
constexpr Color kColors[] = {{"red", {0.9, 0.1, 0.1}},
                             {"green", {0.1, 0.8, 0.2}},
                             {"blue", {0.15, 0.3, 0.95}},
                             {"yellow", {0.95, 0.9, 0.1}}};
constexpr const char* kShapes[] = {"square", "circle", "triangle"};
constexpr std::size_t kNumColors = 4, kNumShapes = 3, kCells = 16, kCellPx = 56;

struct Item {
  std::size_t cell, shape, color;
};

std::vector<Item> random_scene(Rng& rng) {
  const std::size_t n = 1 + rng.below(4);
  std::vector<std::size_t> cells(kCells);
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(cells);
  std::vector<Item> items;
  for (std::size_t i = 0; i < n; ++i) items.push_back({cells[i], rng.below(kNumShapes), rng.below(kNumColors)});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.cell < b.cell; });
  return items;
}

vision::Image render(const std::vector<Item>& items) {
  vision::Image img;
  img.height = img.width = vision::kImageSide;
  img.pixels.assign(img.height * img.width * 3, 0.05);
  for (const auto& it : items) {
    const std::size_t oy = (it.cell / 4) * kCellPx, ox = (it.cell % 4) * kCellPx;
    for (std::size_t y = 0; y < kCellPx; ++y) {
      for (std::size_t x = 0; x < kCellPx; ++x) {
        const double cy = static_cast<double>(y) - 27.5, cx = static_cast<double>(x) - 27.5;
        bool inside = false;
        switch (it.shape) {
          case 0: inside = std::abs(cy) <= 18 && std::abs(cx) <= 18; break;
          case 1: inside = cy * cy + cx * cx <= 20.0 * 20.0; break;
          default: inside = cy >= -20 && cy <= 18 && std::abs(cx) <= (cy + 20) * 0.55; break;
        }
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c)
          img.pixels[((oy + y) * img.width + ox + x) * 3 + c] = kColors[it.color].rgb[c];
      }
    }
  }
  return img;
}

std::size_t count_shape(const std::vector<Item>& items, std::size_t shape) {
  return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [shape](const Item& i) { return i.shape == shape; }));
}

// Returns a shape index present exactly once, if any.
std::optional<std::size_t> unique_shape(const std::vector<Item>& items, Rng& rng) {
  std::vector<std::size_t> cands;
  for (std::size_t s = 0; s < kNumShapes; ++s)
    if (count_shape(items, s) == 1) cands.push_back(s);
  if (cands.empty()) return std::nullopt;
  return cands[rng.below(cands.size())];
}

struct Question {
  std::vector<Item> scene;
  std::string text, answer;
  std::vector<std::string> options;
};

Question make_question(QuestionType type, Rng& rng) {
  while (true) {
    Question q;
    q.scene = random_scene(rng);
    switch (type) {
      case QuestionType::yes_no: {
        std::size_t shape, color;
        const bool want_yes = rng.bernoulli(0.5);
        if (want_yes) {
          const auto& it = q.scene[rng.below(q.scene.size())];
          shape = it.shape;
          color = it.color;
        } else {
          shape = rng.below(kNumShapes);
          color = rng.below(kNumColors);
          const bool present = std::any_of(q.scene.begin(), q.scene.end(),
                                           [&](const Item& i) { return i.shape == shape && i.color == color; });
          if (present) continue;
        }
        q.text = std::string("is there a ") + kColors[color].name + " " + kShapes[shape] + "?";
        q.answer = want_yes ? "yes" : "no";
        return q;
      }
      case QuestionType::numeric: {
        const std::size_t shape = rng.below(kNumShapes);
        q.text = std::string("how many ") + kShapes[shape] + "s are there?";
        q.answer = std::to_string(count_shape(q.scene, shape));
        return q;
      }
      case QuestionType::open_ended: {
        const auto shape = unique_shape(q.scene, rng);
        if (!shape) continue;
        const auto& it = *std::find_if(q.scene.begin(), q.scene.end(), [&](const Item& i) { return i.shape == *shape; });
        q.text = std::string("what color is the ") + kShapes[*shape] + "?";
        q.answer = kColors[it.color].name;
        return q;
      }
      case QuestionType::single_choice: {
        const auto shape = unique_shape(q.scene, rng);
        if (!shape) continue;
        const auto& it = *std::find_if(q.scene.begin(), q.scene.end(), [&](const Item& i) { return i.shape == *shape; });
        std::size_t other = rng.below(kNumColors - 1);
        if (other >= it.color) ++other;
        std::string a = kColors[it.color].name, b = kColors[other].name;
        if (rng.bernoulli(0.5)) std::swap(a, b);
        q.text = std::string("is the ") + kShapes[*shape] + " " + a + " or " + b + "?";
        q.options = {a, b};
        q.answer = kColors[it.color].name;
        return q;
      }
    }
  }
}

}  // namespace

GeneratedDataset generate_synthetic_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n == 0) throw ConfigError("dataset size n must be >= 1");
  const auto counts = apportion(cfg.n, std::vector<double>(cfg.ratios.begin(), cfg.ratios.end()));
  std::vector<QuestionType> types;
  for (std::size_t i = 0; i < 4; ++i) types.insert(types.end(), counts[i], kQuestionTypes[i]);
  Rng rng(cfg.seed);
  rng.shuffle(types);

  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "audio");
  GeneratedDataset out;
  out.manifest = out_dir / "manifest.jsonl";
  out.alternates = out_dir / "alternates.jsonl";
  std::ofstream man(out.manifest, std::ios::binary), alt(out.alternates, std::ios::binary);
  if (!man || !alt) throw IoError("cannot write manifest under " + out_dir.string());

  for (std::size_t i = 0; i < cfg.n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "q%04zu", i);
    Question q = make_question(types[i], rng);
    const bool speech = rng.bernoulli(cfg.speech_probability);
    const std::string image_rel = std::string("images/") + id + ".ppm";
    const std::string audio_rel = std::string("audio/") + id + ".wav";
    vision::save_ppm(out_dir / image_rel, render(q.scene));
    audio::save_wav(out_dir / audio_rel, synthesize_tones(q.text, cfg.tone_ms));

    DatasetRecord r;
    r.id = id;
    r.image = image_rel;
    r.modality = speech ? Modality::speech : Modality::text;
    if (speech) r.audio = audio_rel;
    else r.text = q.text;
    r.answer = q.answer;
    r.qtype = classify_question_type(q.answer, q.options);
    man << format_record_line(r) << '\n';
    json a;
    a["id"] = r.id;
    a["text"] = q.text;
    a["audio"] = audio_rel;
    alt << a.dump() << '\n';
    out.records.push_back(std::move(r));
  }
  return out;
}

BatchIterator::BatchIterator(std::size_t num_records, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : n_(num_records), batch_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

std::size_t BatchIterator::batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::size_t epoch_index) const {
  std::vector<std::size_t> order(n_);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_) {
    Rng rng(derive_seed(seed_, epoch_index));
    rng.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n_; b += batch_)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n_, b + batch_)));
  return out;
}

std::vector<std::size_t> BatchIterator::batch_at(std::size_t step) const {
  const std::size_t per = batches_per_epoch();
  if (per == 0) return {};
  return epoch(step / per)[step % per];
}

}  // namespace sviqa::data
