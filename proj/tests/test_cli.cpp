#include <doctest.h>

#include <map>
#include <sstream>

#include "sviqa/cli.hpp"
#include "test_helpers.hpp"

namespace fs = std::filesystem;
using testutil::read_file;
using testutil::TempDir;
using testutil::write_file;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "sviqa");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = sviqa::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  return files;
}

const char* kTinyConfig =
    "speech.width = 16\nvision.width = 16\nlm.d_model = 16\nlm.layers = 1\nlm.heads = 2\n"
    "adapter.hidden = 16\ntrain.steps = 3\ntrain.batch_size = 2\n";

}  // namespace

TEST_CASE("cli usage errors") {
  CHECK(run({}).code == 1);
  const auto r = run({"gen-data", "--bogus", "1", "--out", "x"});
  CHECK(r.code == 1);
  CHECK(r.err.find("gen-data") != std::string::npos);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("cli end to end") {
  TempDir dir;
  const auto d1 = dir / "d1", d2 = dir / "d2";
  REQUIRE(run({"gen-data", "--n", "6", "--seed", "7", "--out", d1.string()}).code == 0);
  REQUIRE(run({"gen-data", "--n", "6", "--seed", "7", "--out", d2.string()}).code == 0);
  CHECK(tree(d1) == tree(d2));

  const auto st = run({"stats", "--data", d1.string()});
  CHECK(st.code == 0);
  CHECK_FALSE(st.out.empty());

  write_file(dir / "tiny.cfg", kTinyConfig);
  const auto ck1 = dir / "a.svqc", ck2 = dir / "b.svqc";
  for (const auto& ck : {ck1, ck2}) {
    const auto r = run({"train", "--config", (dir / "tiny.cfg").string(), "--data", d1.string(), "--out",
                        ck.string(), "--metrics", (dir / (ck.stem().string() + ".csv")).string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
  }
  CHECK(read_file(ck1) == read_file(ck2));
  CHECK(read_file(dir / "a.csv") == read_file(dir / "b.csv"));

  SUBCASE("eval is deterministic") {
    const auto e1 = run({"eval", "--checkpoint", ck1.string(), "--data", d1.string(), "--jsonl", (dir / "e1").string()});
    const auto e2 = run({"eval", "--checkpoint", ck1.string(), "--data", d1.string(), "--jsonl", (dir / "e2").string()});
    CHECK(e1.code == 0);
    CHECK(e1.out == e2.out);
    CHECK(read_file(dir / "e1") == read_file(dir / "e2"));
    const auto ab = run({"eval", "--checkpoint", ck1.string(), "--data", d1.string(), "--ablation"});
    CHECK(ab.code == 0);
    CHECK(ab.out.find("Pure Speech Input") != std::string::npos);
    CHECK(run({"eval", "--checkpoint", ck1.string(), "--data", d1.string(), "--mode", "sideways"}).code == 2);
  }
  SUBCASE("infer prints one answer line") {
    const auto img = (d1 / "images" / "q0000.ppm").string();
    const auto a1 = run({"infer", "--checkpoint", ck1.string(), "--image", img, "--audio",
                         (d1 / "audio" / "q0000.wav").string()});
    const auto a2 = run({"infer", "--checkpoint", ck1.string(), "--image", img, "--audio",
                         (d1 / "audio" / "q0000.wav").string()});
    CHECK(a1.code == 0);
    CHECK(std::count(a1.out.begin(), a1.out.end(), '\n') == 1);
    CHECK(a1.out == a2.out);
    CHECK(run({"infer", "--checkpoint", ck1.string(), "--image", img, "--text", "is it red?"}).code == 0);
    CHECK(run({"infer", "--checkpoint", ck1.string(), "--image", img}).code == 1);
    CHECK(run({"infer", "--checkpoint", ck1.string(), "--image", img, "--text", "x", "--audio",
               (d1 / "audio" / "q0000.wav").string()})
              .code == 1);
  }
  SUBCASE("protocol violation exits 2 and names the record") {
    auto man = read_file(d1 / "manifest.jsonl");
    const auto pos = man.find("\"modality\":\"text\"");
    REQUIRE(pos != std::string::npos);
    const auto line_start = man.rfind('\n', pos) + 1;
    const auto id = man.substr(line_start + 7, 5);
    man.insert(man.find("\"answer\"", pos), "\"audio\":\"audio/" + id + ".wav\",");
    write_file(d1 / "manifest.jsonl", man);
    const auto r = run({"eval", "--checkpoint", ck1.string(), "--data", d1.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find(id) != std::string::npos);
  }
  SUBCASE("diverging training exits 3") {
    write_file(dir / "hot.cfg", std::string(kTinyConfig) + "train.lr_max = 1e300\ntrain.lr_min = 1e300\n");
    const auto r = run({"train", "--config", (dir / "hot.cfg").string(), "--data", d1.string(), "--out",
                        (dir / "hot.svqc").string()});
    CHECK(r.code == 3);
  }
  SUBCASE("unknown config key exits 2") {
    write_file(dir / "bad.cfg", "lm.d_modle = 8\n");
    CHECK(run({"train", "--config", (dir / "bad.cfg").string(), "--data", d1.string(), "--out",
               (dir / "x.svqc").string()})
              .code == 2);
  }
}
