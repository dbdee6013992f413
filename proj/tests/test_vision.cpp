#include <doctest.h>

#include "sviqa/error.hpp"
#include "sviqa/gradcheck.hpp"
#include "sviqa/rng.hpp"
#include "sviqa/vision.hpp"
#include "test_helpers.hpp"

using namespace sviqa;
using namespace sviqa::vision;

namespace {
RawImage random_raw(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  RawImage r;
  r.height = h, r.width = w;
  for (std::size_t i = 0; i < h * w * 3; ++i) r.values.push_back(static_cast<double>(rng.below(256)));
  return r;
}
}  // namespace

TEST_CASE("preprocess") {
  SUBCASE("224 input keeps its values") {
    const auto raw = random_raw(224, 224, 1);
    const auto img = preprocess_image(raw);
    for (std::size_t i = 0; i < raw.values.size(); ++i) CHECK(img.pixels[i] == raw.values[i] / 255.0);
  }
  SUBCASE("constant gray stays constant") {
    RawImage raw;
    raw.height = raw.width = 100;
    raw.values.assign(100 * 100 * 3, 128.0);
    const auto img = preprocess_image(raw);
    CHECK(img.height == 224);
    CHECK(img.width == 224);
    for (double v : img.pixels) CHECK(v == 128.0 / 255.0);
  }
  SUBCASE("448 input picks source pixels by nearest neighbour") {
    const auto raw = random_raw(448, 448, 2);
    const auto img = preprocess_image(raw);
    for (std::size_t y = 0; y < 224; y += 7)
      for (std::size_t x = 0; x < 224; x += 5)
        for (std::size_t c = 0; c < 3; ++c)
          CHECK(img.at(y, x, c) == raw.values[((2 * y) * 448 + 2 * x) * 3 + c] / 255.0);
  }
  SUBCASE("non-rgb input") {
    RawImage raw;
    raw.height = raw.width = 4;
    raw.channels = 1;
    raw.values.assign(16, 0.0);
    CHECK_THROWS_AS((void)preprocess_image(raw), FormatError);
  }
}

TEST_CASE("image files") {
  testutil::TempDir dir;
  Image img;
  img.height = 3, img.width = 5;
  for (std::size_t i = 0; i < 45; ++i) img.pixels.push_back(static_cast<double>(i % 17) / 16.0);
  SUBCASE("svqi round trip is exact") {
    save_svqi(dir / "a.svqi", img);
    const auto raw = load_image(dir / "a.svqi");
    CHECK(raw.height == 3);
    CHECK(raw.width == 5);
    for (std::size_t i = 0; i < 45; ++i) CHECK(raw.values[i] / raw.max_value == img.pixels[i]);
  }
  SUBCASE("ppm round trip to 8 bits") {
    save_ppm(dir / "a.ppm", img);
    const auto raw = load_image(dir / "a.ppm");
    CHECK(raw.max_value == 255.0);
    for (std::size_t i = 0; i < 45; ++i) CHECK(std::fabs(raw.values[i] / 255.0 - img.pixels[i]) <= 0.5 / 255.0);
  }
  SUBCASE("truncated ppm") {
    save_ppm(dir / "a.ppm", img);
    const auto bytes = testutil::read_file(dir / "a.ppm");
    testutil::write_file(dir / "b.ppm", bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS((void)load_image(dir / "b.ppm"), ParseError);
  }
  SUBCASE("unknown magic") {
    testutil::write_file(dir / "c.img", "GIF89a....");
    CHECK_THROWS_AS((void)load_image(dir / "c.img"), FormatError);
  }
}

TEST_CASE("vision encoder") {
  const auto img = preprocess_image(random_raw(224, 224, 3));
  SUBCASE("g=4 gives a 4x4 grid") {
    const VisionEncoder enc({4, 48, 1, 2}, 7);
    const auto h = encode_image(img, enc);
    CHECK(h.side == 4);
    CHECK(h.grid.shape() == Shape{16, 48});
    CHECK(vision_token_count(4) == 16);
  }
  SUBCASE("deterministic") {
    const auto a = VisionEncoder({4, 48, 1, 2}, 7).encode(img), b = VisionEncoder({4, 48, 1, 2}, 7).encode(img);
    for (std::size_t i = 0; i < a.grid.numel(); ++i) CHECK(a.grid.data()[i] == b.grid.data()[i]);
  }
  SUBCASE("grid must divide 224") { CHECK_THROWS_AS(VisionEncoder({5, 48, 1, 2}, 7), ConfigError); }
  SUBCASE("full-scale grid") {
    const VisionEncoder enc({16, 8, 0, 1}, 7);
    CHECK(enc.encode(img).grid.rows() == 256);
    CHECK(vision_token_count(16) == 256);
  }
  SUBCASE("frozen") {
    for (const auto& p : VisionEncoder({4, 48, 1, 2}, 7).parameters()) {
      CHECK_FALSE(p.tensor.requires_grad());
      CHECK(p.group == nn::ParamGroup::vision_encoder);
    }
  }
  SUBCASE("swapping two patches permutes rows of the embed-only encoder") {
    const VisionEncoder enc({4, 12, 0, 1}, 9);
    Image swapped = img;
    const std::size_t side = 56;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t a = (y * 224 + x) * 3 + c;                         // patch (0, 0)
          const std::size_t b = ((2 * side + y) * 224 + (3 * side + x)) * 3 + c;  // patch (2, 3)
          std::swap(swapped.pixels[a], swapped.pixels[b]);
        }
    const auto h0 = enc.encode(img), h1 = enc.encode(swapped);
    for (std::size_t c = 0; c < 12; ++c) {
      CHECK(h0.grid.at(0, c) == h1.grid.at(11, c));
      CHECK(h0.grid.at(11, c) == h1.grid.at(0, c));
      CHECK(h0.grid.at(5, c) == h1.grid.at(5, c));
    }
  }
}

TEST_CASE("flatten patches orders pixels by row, column, channel") {
  Image img;
  img.height = img.width = 224;
  for (std::size_t i = 0; i < 224 * 224 * 3; ++i) img.pixels.push_back(static_cast<double>(i % 1000) / 1000.0);
  const auto p = flatten_patches(img, 2);
  REQUIRE(p.shape() == Shape{4, 112 * 112 * 3});
  // patch 3 is the bottom-right one; entry (y=1, x=2, c=1)
  CHECK(p.at(3, (1 * 112 + 2) * 3 + 1) == img.at(112 + 1, 112 + 2, 1));
}

TEST_CASE("projector") {
  SUBCASE("hand computed") {
    ProjectorParams p;
    p.w = Tensor({2, 2}, {1, 0, 0, 1}, true);
    p.b = Tensor({2}, {1, 1}, true);
    PatchGridFeatures h{Tensor({1, 2}, {1, 2}), 1};
    const auto v = project_vision(h, p);
    CHECK(v.tokens.at(0, 0) == 2.0);
    CHECK(v.tokens.at(0, 1) == 3.0);
  }
  SUBCASE("zero grid and zero bias") {
    const auto p = ProjectorParams::init(48, 64, 1);
    const auto v = project_vision({Tensor::zeros({16, 48}), 4}, p);
    CHECK(v.count() == 16);
    for (double x : v.tokens.data()) CHECK(x == 0.0);
  }
  SUBCASE("dimension mismatch") {
    const auto p = ProjectorParams::init(48, 64, 1);
    CHECK_THROWS_AS((void)project_vision({Tensor::zeros({16, 40}), 4}, p), DimensionError);
  }
  SUBCASE("gradients") {
    auto p = ProjectorParams::init(6, 5, 2);
    Rng rng(3);
    const PatchGridFeatures h{nn::normal({4, 6}, 1.0, rng), 2};
    auto f = [&] {
      const auto t = project_vision(h, p).tokens;
      return sum(mul(t, t));
    };
    for (Tensor* t : {&p.w, &p.b}) {
      const auto rep = finite_diff_check(f, *t, 1e-4);
      CHECK_MESSAGE(rep.passed, rep.summary());
    }
  }
}
