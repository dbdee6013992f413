#include "sviqa/vision.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "sviqa/error.hpp"
#include "sviqa/serialize.hpp"

namespace sviqa::vision {

namespace {
std::string read_ppm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t parse_dim(const std::string& tok, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v <= 0) throw ParseError("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError(std::string("ppm: invalid ") + what + " '" + tok + "'");
  }
}
}  // namespace

RawImage load_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::string magic = read_ppm_token(is);
  if (magic != "P6") throw FormatError("ppm " + path.string() + ": expected binary P6 (3-channel), got '" + magic + "'");
  RawImage img;
  img.width = parse_dim(read_ppm_token(is), "width");
  img.height = parse_dim(read_ppm_token(is), "height");
  const std::size_t maxval = parse_dim(read_ppm_token(is), "maxval");
  if (maxval > 255) throw FormatError("ppm " + path.string() + ": 16-bit maxval not supported");
  img.channels = 3;
  img.max_value = static_cast<double>(maxval);
  std::vector<unsigned char> buf(img.width * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw ParseError("ppm " + path.string() + ": truncated pixel data");
  img.values.assign(buf.begin(), buf.end());
  return img;
}

void save_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.pixels) os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

RawImage load_svqi(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  io::expect_magic(is, "SVQI", "svqi image");
  RawImage img;
  img.height = io::read_u32(is);
  img.width = io::read_u32(is);
  if (img.height == 0 || img.width == 0) throw ParseError("svqi " + path.string() + ": zero-sized image");
  img.channels = 3;
  img.max_value = 1.0;
  img.values.resize(img.height * img.width * 3);
  for (auto& v : img.values) v = io::read_f64(is);
  return img;
}

void save_svqi(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write("SVQI", 4);
  io::write_u32(os, static_cast<std::uint32_t>(img.height));
  io::write_u32(os, static_cast<std::uint32_t>(img.width));
  for (double v : img.pixels) io::write_f64(os, v);
}

RawImage load_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() >= 2 && magic[0] == 'P') return load_ppm(path);
  if (is.gcount() == 4 && std::memcmp(magic, "SVQI", 4) == 0) return load_svqi(path);
  throw FormatError("image " + path.string() + ": unrecognized format (expected P6 PPM or SVQI)");
}

Image preprocess_image(const RawImage& raw) {
  if (raw.channels != 3) throw FormatError("image must have 3 channels, got " + std::to_string(raw.channels));
  if (raw.height == 0 || raw.width == 0) throw FormatError("image has no pixels");
  if (raw.values.size() != raw.height * raw.width * 3) throw FormatError("image buffer size does not match dims");
  if (!(raw.max_value > 0.0)) throw FormatError("image max_value must be positive");
  Image img;
  img.height = kImageSide;
  img.width = kImageSide;
  img.pixels.resize(kImageSide * kImageSide * 3);
  for (std::size_t y = 0; y < kImageSide; ++y) {
    const std::size_t sy = y * raw.height / kImageSide;
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const std::size_t sx = x * raw.width / kImageSide;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = raw.values[(sy * raw.width + sx) * 3 + c] / raw.max_value;
        img.pixels[(y * kImageSide + x) * 3 + c] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

std::size_t vision_token_count(std::size_t grid_side) { return grid_side * grid_side; }

Tensor flatten_patches(const Image& img, std::size_t g) {
  if (g == 0 || img.height % g != 0 || img.width % g != 0)
    throw ConfigError("grid side " + std::to_string(g) + " does not divide the " + std::to_string(img.height) +
                      "-pixel image");
  const std::size_t ph = img.height / g, pw = img.width / g, per = ph * pw * 3;
  std::vector<double> out(g * g * per);
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      double* dst = out.data() + (gy * g + gx) * per;
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x)
          for (std::size_t c = 0; c < 3; ++c) *dst++ = img.at(gy * ph + y, gx * pw + x, c);
    }
  return Tensor({g * g, per}, std::move(out));
}

VisionEncoder::VisionEncoder(const VisionEncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.grid == 0 || kImageSide % cfg.grid != 0)
    throw ConfigError("grid side " + std::to_string(cfg.grid) + " does not divide 224");
  if (cfg.layers < 0) throw ConfigError("vision encoder: layers must be >= 0");
  Rng rng(seed);
  const std::size_t patch = kImageSide / cfg.grid;
  const std::size_t in = patch * patch * 3;
  w_embed_ = nn::uniform({cfg.width, in}, std::sqrt(3.0 / static_cast<double>(in)), rng);
  b_embed_ = nn::constant({cfg.width}, 0.0);
  for (int l = 0; l < cfg.layers; ++l) blocks_.push_back(nn::make_attention_block(cfg.width, cfg.heads, false, rng));
  ln_gain_ = nn::constant({cfg.width}, 1.0);
  ln_bias_ = nn::constant({cfg.width}, 0.0);
}

PatchGridFeatures VisionEncoder::encode(const Image& img) const {
  NoGradGuard guard;
  Tensor h = nn::linear_nt(flatten_patches(img, cfg_.grid), w_embed_, b_embed_);
  for (const auto& b : blocks_) h = nn::attention_block_forward(h, b);
  PatchGridFeatures out;
  out.grid = layer_norm(h, ln_gain_, ln_bias_);
  out.side = cfg_.grid;
  return out;
}

std::vector<nn::NamedParam> VisionEncoder::parameters() const {
  std::vector<nn::NamedParam> out;
  const auto g = nn::ParamGroup::vision_encoder;
  out.push_back({"vision_encoder.w_embed", w_embed_, g});
  out.push_back({"vision_encoder.b_embed", b_embed_, g});
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    nn::append_params(blocks_[i], "vision_encoder.block" + std::to_string(i), g, out);
  out.push_back({"vision_encoder.ln_gain", ln_gain_, g});
  out.push_back({"vision_encoder.ln_bias", ln_bias_, g});
  return out;
}

PatchGridFeatures encode_image(const Image& img, const VisionEncoder& enc) { return enc.encode(img); }

ProjectorParams ProjectorParams::init(std::size_t d_vision, std::size_t d_llm, std::uint64_t seed) {
  Rng rng(seed);
  ProjectorParams p;
  p.w = nn::uniform({d_vision, d_llm}, std::sqrt(3.0 / static_cast<double>(d_vision)), rng, true);
  p.b = nn::constant({d_llm}, 0.0, true);
  return p;
}

std::vector<nn::NamedParam> ProjectorParams::parameters() const {
  const auto g = nn::ParamGroup::vision_projector;
  return {{"vision_projector.w", w, g}, {"vision_projector.b", b, g}};
}

VisionTokens project_vision(const PatchGridFeatures& h, const ProjectorParams& p) {
  if (h.grid.rank() != 2 || h.grid.cols() != p.w.rows())
    throw DimensionError("project_vision: grid width " + std::to_string(h.grid.cols()) + " but projector expects " +
                         std::to_string(p.w.rows()));
  VisionTokens v;
  v.tokens = add_row(matmul(h.grid, p.w), p.b);
  return v;
}

}  // namespace sviqa::vision
