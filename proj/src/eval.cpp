#include "sviqa/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "sviqa/error.hpp"
#include "sviqa/rng.hpp"

namespace sviqa::eval {

namespace {
std::vector<std::string> normalized_words(const std::string& s) {
  std::string clean;
  for (char c : s) {
    if (c == '.' || c == ',' || c == '!' || c == '?' || c == '\'' || c == '"') continue;
    clean.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  std::istringstream in(clean);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  if (words.size() > 1 && (words[0] == "a" || words[0] == "an" || words[0] == "the")) words.erase(words.begin());
  return words;
}
}  // namespace

std::string normalize_answer(const std::string& s) {
  std::string out;
  for (const auto& w : normalized_words(s)) out += (out.empty() ? "" : " ") + w;
  return out;
}

int score_answer(const std::string& pred, const std::string& gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

bool prefix_match(const std::string& pred, const std::string& gold) {
  const auto a = normalized_words(pred), b = normalized_words(gold);
  if (a.empty() || b.empty()) return false;
  const auto n = std::min(a.size(), b.size());
  return std::equal(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(n), b.begin());
}

std::optional<double> Cell::accuracy() const {
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {
std::string pct(const Cell& c) {
  const auto a = c.accuracy();
  if (!a) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *a);
  return buf;
}

std::size_t type_index(data::QuestionType q) {
  return static_cast<std::size_t>(std::find(data::kQuestionTypes.begin(), data::kQuestionTypes.end(), q) -
                                  data::kQuestionTypes.begin());
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }
}  // namespace

std::string EvalReport::table(const std::string& model_name) const {
  std::ostringstream os;
  os << pad("Model", 14) << " | Overall (%) | Single-choice (%) | Yes/No (%) | Numeric (%) | Open-ended (%)\n";
  os << pad(model_name, 14) << " | " << pad(pct(overall), 11);
  for (std::size_t i = 0; i < 4; ++i) {
    static const std::size_t widths[] = {17, 10, 11, 14};
    os << " | " << pad(pct(per_type[i]), widths[i]);
  }
  os << "\n" << pad("n", 14) << " | " << pad(std::to_string(overall.total), 11);
  for (std::size_t i = 0; i < 4; ++i) {
    static const std::size_t widths[] = {17, 10, 11, 14};
    os << " | " << pad(std::to_string(per_type[i].total), widths[i]);
  }
  os << "\nprefix matches (inspection only): " << prefix_matches << "\n";
  return os.str();
}

std::string EvalReport::jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["mode"] = to_string(mode);
    j["modality"] = data::to_string(r.modality);
    j["qtype"] = data::to_string(r.qtype);
    j["prediction"] = r.prediction;
    j["gold"] = r.gold;
    j["correct"] = r.correct;
    j["prefix_match"] = r.prefix;
    out += j.dump() + "\n";
  }
  return out;
}

EvalReport build_report(std::vector<RecordResult> results, InputMode mode) {
  EvalReport rep;
  rep.mode = mode;
  for (const auto& r : results) {
    rep.overall.add(r.correct);
    rep.per_type[type_index(r.qtype)].add(r.correct);
    (r.modality == data::Modality::speech ? rep.speech : rep.text).add(r.correct);
    if (r.prefix) ++rep.prefix_matches;
  }
  rep.records = std::move(results);
  return rep;
}

namespace {

// Goertzel power of one frequency over a segment.
double tone_power(const double* x, std::size_t n, double freq) {
  const double w = 2.0 * 3.141592653589793 * freq / audio::kSampleRate;
  const double coeff = 2.0 * std::cos(w);
  double s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s0 = x[i] + coeff * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  return s1 * s1 + s2 * s2 - coeff * s1 * s2;
}

}  // namespace

std::string AsrStub::transcribe(const audio::Waveform& w) const {
  if (!(corruption >= 0.0 && corruption <= 1.0)) throw ConfigError("ASR corruption must lie in [0, 1]");
  const std::size_t per = static_cast<std::size_t>(audio::kSampleRate) * static_cast<std::size_t>(tone_ms) / 1000;
  std::string text;
  for (std::size_t off = 0; off + per <= w.samples.size(); off += per) {
    char best = '?';
    double best_p = -1;
    for (int c = 0x20; c <= 0x7e; ++c) {
      const double p = tone_power(w.samples.data() + off, per, data::tone_frequency(static_cast<char>(c)));
      if (p > best_p) best_p = p, best = static_cast<char>(c);
    }
    text.push_back(best);
  }
  const auto k = static_cast<std::size_t>(std::llround(corruption * static_cast<double>(text.size())));
  if (k == 0) return text;
  Rng rng(seed);
  std::vector<std::size_t> pos(text.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  rng.shuffle(pos);
  for (std::size_t i = 0; i < k; ++i) {
    const char orig = text[pos[i]];
    char repl = orig;
    while (repl == orig) repl = static_cast<char>(0x20 + rng.below(0x7e - 0x20 + 1));
    text[pos[i]] = repl;
  }
  return text;
}

std::string cascade_transcribe(const audio::Waveform& w, const AsrStub& asr) { return asr.transcribe(w); }

namespace {

data::DatasetRecord transcribed(const data::DatasetRecord& rec, const data::Manifest& m, const AsrStub& asr) {
  if (rec.modality != data::Modality::speech) return rec;
  data::DatasetRecord out = rec;
  out.text = cascade_transcribe(audio::load_wav(m.resolve(*rec.audio)), asr);
  out.audio.reset();
  out.modality = data::Modality::text;
  return out;
}

}  // namespace

EvalReport evaluate(const SviqaModel& model, const data::Manifest& manifest, InputMode mode,
                    const EvalOptions& opts) {
  std::vector<data::DatasetRecord> recs;
  std::string missing;
  for (const auto& r : manifest.records) {
    try {
      recs.push_back(apply_mode(r, manifest, mode));
    } catch (const ModeError&) {
      missing += (missing.empty() ? "" : ", ") + r.id;
    }
  }
  if (!missing.empty())
    throw ModeError(to_string(mode) + ": no " + (mode == InputMode::force_text ? "text" : "audio") +
                    " rendering for " + missing);
  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  std::vector<RecordResult> results(recs.size());
  std::vector<std::string> errors(recs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < recs.size(); ++i) {
    try {
      const auto& orig = recs[i];
      const auto rec = opts.cascade ? transcribed(orig, manifest, *opts.cascade) : orig;
      const Example ex = model.prepare(rec, manifest.root);
      RecordResult& out = results[i];
      out.id = orig.id;
      out.qtype = orig.qtype;
      out.modality = orig.modality;
      out.gold = orig.answer;
      out.prediction = model.answer(ex, opts.max_new);
      out.correct = score_answer(out.prediction, out.gold) == 1;
      out.prefix = prefix_match(out.prediction, out.gold);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (!errors[i].empty()) throw Error("evaluating " + recs[i].id + ": " + errors[i]);
  return build_report(std::move(results), mode);
}

ModalityAblation evaluate_modalities(const SviqaModel& model, const data::Manifest& manifest,
                                     const EvalOptions& opts) {
  return {evaluate(model, manifest, InputMode::as_is, opts), evaluate(model, manifest, InputMode::force_text, opts),
          evaluate(model, manifest, InputMode::force_speech, opts)};
}

std::string ModalityAblation::table() const {
  std::ostringstream os;
  os << "Input Mode                | Accuracy (%) | n\n";
  os << "Speech + Text Mixed Input | " << pad(pct(mixed.overall), 12) << " | " << mixed.overall.total << "\n";
  os << "Pure Text Input           | " << pad(pct(text.overall), 12) << " | " << text.overall.total << "\n";
  os << "Pure Speech Input         | " << pad(pct(speech.overall), 12) << " | " << speech.overall.total << "\n";
  return os.str();
}

std::string LatencyStats::formatted() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f \xC2\xB1 %.3f", mean, std);
  return buf;
}

LatencyStats summarize_latency(std::vector<double> samples) {
  if (samples.size() < 2) throw ConfigError("latency needs at least 2 samples");
  LatencyStats s;
  double sum = 0;
  for (double x : samples) sum += x;
  s.mean = sum / static_cast<double>(samples.size());
  double ss = 0;
  for (double x : samples) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(samples.size() - 1));
  s.samples = std::move(samples);
  return s;
}

std::string LatencyReport::table() const {
  std::ostringstream os;
  os << "Method          | Average Response Time (s) \xC2\xB1 Std\n";
  os << "End-to-End      | " << end_to_end.formatted() << "\n";
  os << "Cascade ASR+VQA | " << cascade.formatted() << "\n";
  os << "runs: " << n_runs << "\n";
  return os.str();
}

std::string LatencyReport::csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "query,id,end_to_end_s,cascade_s\n";
  for (std::size_t i = 0; i < n_runs; ++i)
    os << i << ',' << ids[i] << ',' << end_to_end.samples[i] << ',' << cascade.samples[i] << '\n';
  return os.str();
}

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

LatencyReport measure_latency(const SviqaModel& model, const data::Manifest& manifest, std::size_t n_runs,
                              const AsrStub& asr, const Clock& clock, int max_new) {
  if (n_runs < 2) throw ConfigError("bench-latency needs at least 2 runs");
  std::vector<data::DatasetRecord> queries;
  for (const auto& r : manifest.records) {
    try {
      queries.push_back(apply_mode(r, manifest, InputMode::force_speech));
    } catch (const ModeError&) {
    }
  }
  if (queries.empty()) throw ModeError("bench-latency: no record has a speech rendering");

  auto end_to_end = [&](const data::DatasetRecord& rec) { return model.answer(model.prepare(rec, manifest.root), max_new); };
  auto cascade = [&](const data::DatasetRecord& rec) {
    const auto wav = audio::load_wav(manifest.resolve(*rec.audio));
    (void)model.speech_features(wav);
    data::DatasetRecord text = rec;
    text.modality = data::Modality::text;
    text.text = cascade_transcribe(wav, asr);
    text.audio.reset();
    return model.answer(model.prepare(text, manifest.root), max_new);
  };

  (void)end_to_end(queries[0]);
  (void)cascade(queries[0]);
  std::vector<double> e2e, cas;
  LatencyReport rep;
  rep.n_runs = n_runs;
  for (std::size_t i = 0; i < n_runs; ++i) {
    const auto& q = queries[(i + 1) % queries.size()];
    rep.ids.push_back(q.id);
    double t0 = clock();
    (void)end_to_end(q);
    double t1 = clock();
    e2e.push_back(t1 - t0);
    t0 = clock();
    (void)cascade(q);
    t1 = clock();
    cas.push_back(t1 - t0);
  }
  rep.end_to_end = summarize_latency(std::move(e2e));
  rep.cascade = summarize_latency(std::move(cas));
  return rep;
}

}  // namespace sviqa::eval
