#pragma once

// Vision front end: 224×224 preprocessing, a frozen patch encoder producing
// a g×g feature grid, and the trainable linear projector to LM tokens.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sviqa/nn.hpp"
#include "sviqa/tensor.hpp"

namespace sviqa::vision {

inline constexpr std::size_t kImageSide = 224;

// Interleaved H×W×channels buffer with values in [0, max_value].
struct RawImage {
  std::size_t height = 0, width = 0, channels = 3;
  std::vector<double> values;
  double max_value = 255.0;
};

struct Image {
  std::size_t height = 0, width = 0;
  std::vector<double> pixels;  // H×W×3 in [0, 1]
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
};

RawImage load_ppm(const std::filesystem::path& path);  // binary P6, maxval <= 255
void save_ppm(const std::filesystem::path& path, const Image& img);
// "SVQI", u32 H, u32 W, f64 data[H·W·3] in [0, 1]
RawImage load_svqi(const std::filesystem::path& path);
void save_svqi(const std::filesystem::path& path, const Image& img);
// Dispatches on the magic bytes.
RawImage load_image(const std::filesystem::path& path);

// Nearest-neighbour resize to 224×224 and scaling to [0, 1].
Image preprocess_image(const RawImage& raw);

struct VisionEncoderConfig {
  std::size_t grid = 4;    // g
  std::size_t width = 48;  // D_v
  int layers = 1;          // 0 gives the embed-only encoder
  int heads = 2;
};

struct PatchGridFeatures {
  Tensor grid;  // g²×D_v, row-major over the grid
  std::size_t side = 0;
  std::size_t patches() const { return side * side; }
};

std::size_t vision_token_count(std::size_t grid_side);

// Frozen: per-patch flatten → linear embed → bidirectional attention blocks
// → layer-norm.
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(const VisionEncoderConfig& cfg, std::uint64_t seed);

  PatchGridFeatures encode(const Image& img) const;
  const VisionEncoderConfig& config() const { return cfg_; }
  std::vector<nn::NamedParam> parameters() const;

 private:
  VisionEncoderConfig cfg_;
  Tensor w_embed_, b_embed_;
  std::vector<nn::AttentionBlock> blocks_;
  Tensor ln_gain_, ln_bias_;
};

PatchGridFeatures encode_image(const Image& img, const VisionEncoder& enc);

// Patch pixels (y, x, channel order) for every grid cell.
Tensor flatten_patches(const Image& img, std::size_t grid_side);

struct ProjectorParams {
  Tensor w;  // D_v×d_llm
  Tensor b;  // d_llm

  static ProjectorParams init(std::size_t d_vision, std::size_t d_llm, std::uint64_t seed);
  std::vector<nn::NamedParam> parameters() const;
};

struct VisionTokens {
  Tensor tokens;  // g²×d_llm
  std::size_t count() const { return tokens.rows(); }
};

// V = Flatten(H)·W + b
VisionTokens project_vision(const PatchGridFeatures& h, const ProjectorParams& p);

}  // namespace sviqa::vision
