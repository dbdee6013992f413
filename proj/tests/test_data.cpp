#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sviqa/data.hpp"
#include "sviqa/error.hpp"
#include "sviqa/rng.hpp"
#include "sviqa/vision.hpp"
#include "test_helpers.hpp"

using namespace sviqa;
using namespace sviqa::data;

namespace {

void touch_assets(const testutil::TempDir& dir, const std::vector<std::string>& files) {
  for (const auto& f : files) testutil::write_file(dir / f, "x");
}

std::string text_line(const std::string& id, const std::string& answer, const std::string& qtype = "open_ended") {
  return R"({"id":")" + id + R"(","image":"img.ppm","modality":"text","text":"what?","answer":")" + answer +
         R"(","qtype":")" + qtype + "\"}";
}

std::string speech_line(const std::string& id, const std::string& audio) {
  return R"({"id":")" + id + R"(","image":"img.ppm","modality":"speech","audio":")" + audio +
         R"(","answer":"yes","qtype":"yes_no"})";
}

std::filesystem::path write_manifest(const testutil::TempDir& dir, const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  testutil::write_file(dir / "manifest.jsonl", s);
  return dir / "manifest.jsonl";
}

}  // namespace

TEST_CASE("record validation") {
  DatasetRecord r;
  r.id = "q7";
  r.image = "i.ppm";
  r.answer = "red";
  r.modality = Modality::speech;
  r.audio = "a.wav";
  CHECK_NOTHROW(validate_record(r));
  r.text = "what color?";
  try {
    validate_record(r);
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("q7") != std::string::npos);
  }
  r.audio.reset();
  CHECK_THROWS_AS(validate_record(r), ProtocolError);
  r.modality = Modality::text;
  CHECK_NOTHROW(validate_record(r));
  r.answer = "";
  CHECK_THROWS_AS(validate_record(r), ProtocolError);
}

TEST_CASE("manifest loading") {
  testutil::TempDir dir;
  touch_assets(dir, {"img.ppm", "a.wav", "b.wav"});
  SUBCASE("empty manifest") {
    const auto m = load_and_validate_manifest(write_manifest(dir, {}));
    CHECK(m.records.empty());
    CHECK(m.stats.total == 0);
    for (double r : m.stats.ratios) CHECK(r == 0.0);
  }
  SUBCASE("ratios by counting") {
    std::vector<std::string> lines;
    for (int i = 0; i < 4; ++i) lines.push_back(text_line("y" + std::to_string(i), "yes", "yes_no"));
    lines.push_back(text_line("n0", "3", "numeric"));
    for (int i = 0; i < 5; ++i) lines.push_back(text_line("o" + std::to_string(i), "red"));
    const auto m = load_and_validate_manifest(write_manifest(dir, lines));
    CHECK(m.stats.total == 10);
    CHECK(m.stats.ratios[0] == 0.0);
    CHECK(m.stats.ratios[1] == doctest::Approx(0.4));
    CHECK(m.stats.ratios[2] == doctest::Approx(0.1));
    CHECK(m.stats.ratios[3] == doctest::Approx(0.5));
    double s = 0;
    for (double r : m.stats.ratios) s += r;
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
  SUBCASE("both modalities") {
    const std::string both =
        R"({"id":"bad1","image":"img.ppm","modality":"speech","audio":"a.wav","text":"hi","answer":"x","qtype":"open_ended"})";
    try {
      (void)load_and_validate_manifest(write_manifest(dir, {text_line("ok", "x"), both}));
      FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
      CHECK(std::string(e.what()).find("bad1") != std::string::npos);
    }
  }
  SUBCASE("duplicate id") {
    CHECK_THROWS_AS((void)load_and_validate_manifest(write_manifest(dir, {text_line("d", "x"), text_line("d", "y")})),
                    UniquenessError);
  }
  SUBCASE("shared audio path") {
    CHECK_THROWS_AS(
        (void)load_and_validate_manifest(write_manifest(dir, {speech_line("s1", "a.wav"), speech_line("s2", "a.wav")})),
        CollisionError);
  }
  SUBCASE("missing file names the path") {
    try {
      (void)load_and_validate_manifest(write_manifest(dir, {speech_line("s1", "nope.wav")}));
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("nope.wav") != std::string::npos);
    }
  }
  SUBCASE("malformed json") {
    CHECK_THROWS_AS((void)load_and_validate_manifest(write_manifest(dir, {"{\"id\": 3"})), ParseError);
    CHECK_THROWS_AS((void)load_and_validate_manifest(write_manifest(dir, {R"({"id":"x","image":"img.ppm"})"})),
                    ParseError);
  }
  SUBCASE("record lines round trip") {
    const auto r = parse_record_line(speech_line("s9", "b.wav"), 1);
    const auto back = parse_record_line(format_record_line(r), 1);
    CHECK(back.id == "s9");
    CHECK(back.modality == Modality::speech);
    CHECK(*back.audio == "b.wav");
    CHECK_FALSE(back.text.has_value());
  }
}

TEST_CASE("lookup table") {
  SUBCASE("single pair") {
    const auto t = LookupTable::build({{"q1", "a.wav"}});
    CHECK(t.audio_for("q1") == "a.wav");
    CHECK(t.question_for("a.wav") == "q1");
  }
  SUBCASE("collisions name the key") {
    try {
      (void)LookupTable::build({{"q1", "a.wav"}, {"q2", "a.wav"}});
      FAIL("expected CollisionError");
    } catch (const CollisionError& e) {
      CHECK(std::string(e.what()).find("a.wav") != std::string::npos);
    }
    CHECK_THROWS_AS((void)LookupTable::build({{"q1", "a.wav"}, {"q1", "b.wav"}}), CollisionError);
  }
  SUBCASE("bijection under any insertion order") {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (int i = 0; i < 1000; ++i) pairs.emplace_back("q" + std::to_string(i), "audio/" + std::to_string(i * 7919) + ".wav");
    Rng rng(5);
    rng.shuffle(pairs);
    const auto t = LookupTable::build(pairs);
    CHECK(t.size() == 1000);
    for (const auto& [q, a] : pairs) {
      CHECK(t.question_for(t.audio_for(q)) == q);
      CHECK(t.audio_for(t.question_for(a)) == a);
    }
  }
}

TEST_CASE("question type classifier") {
  CHECK(classify_question_type("yes") == QuestionType::yes_no);
  CHECK(classify_question_type("No.") == QuestionType::yes_no);
  CHECK(classify_question_type("3") == QuestionType::numeric);
  CHECK(classify_question_type("twelve") == QuestionType::numeric);
  CHECK(classify_question_type("blue and white") == QuestionType::open_ended);
  CHECK(classify_question_type("yes", {"yes", "no"}) == QuestionType::single_choice);
  for (const char* a : {"x", "twenty one", "1.5", "-", "the"}) {
    const auto q = classify_question_type(a);
    CHECK(std::count(kQuestionTypes.begin(), kQuestionTypes.end(), q) == 1);
  }
}

TEST_CASE("apportionment") {
  const std::vector<double> table1(kTrainTypeRatios.begin(), kTrainTypeRatios.end());
  CHECK(apportion(1000, table1)[1] == 376);
  CHECK(apportion(4, {0.25, 0.25, 0.25, 0.25}) == std::vector<std::size_t>{1, 1, 1, 1});
  CHECK(apportion(64, table1) == std::vector<std::size_t>{0, 24, 8, 32});
  CHECK_THROWS_AS((void)apportion(10, {0.5, 0.4}), ConfigError);
}

TEST_CASE("tone code") {
  CHECK(tone_frequency(' ') == 300.0);
  CHECK(tone_frequency('!') == 340.0);
  CHECK(tone_frequency('\x01') == tone_frequency('?'));
  const auto w = synthesize_tones("ab", 50);
  CHECK(w.samples.size() == 1600);
}

TEST_CASE("synthetic generator") {
  testutil::TempDir a, b;
  GeneratorConfig cfg;
  cfg.n = 24;
  cfg.seed = 11;
  const auto da = generate_synthetic_dataset(cfg, a.path);
  const auto db = generate_synthetic_dataset(cfg, b.path);
  SUBCASE("byte identical across runs") {
    std::vector<std::string> fa, fb;
    for (const auto& e : std::filesystem::recursive_directory_iterator(a.path))
      if (e.is_regular_file()) fa.push_back(std::filesystem::relative(e.path(), a.path).string());
    for (const auto& e : std::filesystem::recursive_directory_iterator(b.path))
      if (e.is_regular_file()) fb.push_back(std::filesystem::relative(e.path(), b.path).string());
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    REQUIRE(fa == fb);
    for (const auto& f : fa) CHECK(testutil::read_file(a / f) == testutil::read_file(b / f));
  }
  SUBCASE("manifest validates and counts follow apportionment") {
    const auto m = load_and_validate_manifest(da.manifest);
    CHECK(m.records.size() == 24);
    const auto want = apportion(24, std::vector<double>(kTrainTypeRatios.begin(), kTrainTypeRatios.end()));
    for (std::size_t i = 0; i < 4; ++i) CHECK(m.stats.counts[i] == want[i]);
    CHECK(m.alternates.size() == 24);
    for (const auto& r : m.records) {
      CHECK(classify_question_type(r.answer) == r.qtype);
      const auto& alt = m.alternates.at(r.id);
      CHECK_FALSE(alt.text.empty());
      CHECK(std::filesystem::is_regular_file(m.resolve(alt.audio)));
      if (r.modality == Modality::text) CHECK(*r.text == alt.text);
      else CHECK(*r.audio == alt.audio);
    }
  }
  SUBCASE("speech audio encodes the question text") {
    const auto m = load_and_validate_manifest(da.manifest);
    for (const auto& r : m.records) {
      const auto w = audio::load_wav(m.resolve(m.alternates.at(r.id).audio));
      CHECK(w.samples.size() == m.alternates.at(r.id).text.size() * 800);
    }
  }
  SUBCASE("bad ratios") {
    GeneratorConfig bad = cfg;
    bad.ratios = {0.5, 0.5, 0.5, 0.0};
    testutil::TempDir c;
    CHECK_THROWS_AS((void)generate_synthetic_dataset(bad, c.path), ConfigError);
  }
}

TEST_CASE("generator modality split is balanced") {
  testutil::TempDir d;
  GeneratorConfig cfg;
  cfg.n = 400;
  cfg.seed = 3;
  const auto ds = generate_synthetic_dataset(cfg, d.path);
  const auto speech = std::count_if(ds.records.begin(), ds.records.end(),
                                    [](const auto& r) { return r.modality == Modality::speech; });
  CHECK(std::fabs(static_cast<double>(speech) - 200.0) <= 3.0 * std::sqrt(100.0));
}

TEST_CASE("generated answers match the scene") {
  testutil::TempDir d;
  GeneratorConfig cfg;
  cfg.n = 40;
  cfg.seed = 5;
  const auto ds = generate_synthetic_dataset(cfg, d.path);
  const auto m = load_and_validate_manifest(ds.manifest);
  // Color questions: the named shape's cell must contain the answer color.
  const std::map<std::string, std::array<double, 3>> palette{
      {"red", {0.9, 0.1, 0.1}}, {"green", {0.1, 0.8, 0.2}}, {"blue", {0.15, 0.3, 0.95}}, {"yellow", {0.95, 0.9, 0.1}}};
  std::size_t checked = 0;
  for (const auto& r : m.records) {
    const auto& q = m.alternates.at(r.id).text;
    if (q.rfind("what color", 0) != 0) continue;
    const auto img = vision::preprocess_image(vision::load_image(m.resolve(r.image)));
    const auto want = palette.at(r.answer);
    bool found = false;
    for (std::size_t i = 0; i < img.pixels.size() / 3 && !found; ++i) {
      bool match = true;
      for (std::size_t c = 0; c < 3; ++c) match &= std::fabs(img.pixels[i * 3 + c] - want[c]) < 0.01;
      found = match;
    }
    CHECK_MESSAGE(found, r.id);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("batch iterator") {
  SUBCASE("sizes") {
    const BatchIterator it(10, 4, 1, false);
    const auto e = it.epoch(0);
    REQUIRE(e.size() == 3);
    CHECK(e[0].size() == 4);
    CHECK(e[1].size() == 4);
    CHECK(e[2].size() == 2);
  }
  SUBCASE("no shuffle keeps manifest order") {
    const BatchIterator it(7, 3, 1, false);
    std::vector<std::size_t> flat;
    for (const auto& b : it.epoch(2)) flat.insert(flat.end(), b.begin(), b.end());
    CHECK(flat == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  }
  SUBCASE("each epoch is a permutation determined by seed and epoch") {
    const BatchIterator it(23, 5, 9, true);
    for (std::size_t e = 0; e < 4; ++e) {
      std::multiset<std::size_t> seen;
      for (const auto& b : it.epoch(e)) seen.insert(b.begin(), b.end());
      std::multiset<std::size_t> all;
      for (std::size_t i = 0; i < 23; ++i) all.insert(i);
      CHECK(seen == all);
      CHECK(it.epoch(e) == BatchIterator(23, 5, 9, true).epoch(e));
    }
    CHECK(it.epoch(0) != it.epoch(1));
    CHECK(it.batch_at(5) == it.epoch(1)[0]);
  }
}
