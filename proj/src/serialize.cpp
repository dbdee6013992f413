#include "sviqa/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "sviqa/error.hpp"

namespace sviqa::io {

namespace {
template <typename U>
void write_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename U>
U read_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf{};
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) throw ParseError("unexpected end of data");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

constexpr std::uint32_t kMaxRank = 8;
}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }
void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
double read_f64(std::istream& is) { return std::bit_cast<double>(read_le<std::uint64_t>(is)); }
std::string read_string(std::istream& is) {
  const auto n = read_u32(is);
  if (n > (1u << 28)) throw ParseError("string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw ParseError("unexpected end of data inside string");
  return s;
}

void expect_magic(std::istream& is, const char magic[4], const char* what) {
  char got[4];
  if (!is.read(got, 4)) throw ParseError(std::string(what) + ": file too short for magic bytes");
  if (std::memcmp(got, magic, 4) != 0) throw ParseError(std::string(what) + ": bad magic bytes");
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("SVQT", 4);
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) write_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, "SVQT", "tensor");
  const auto rank = read_u32(is);
  if (rank == 0 || rank > kMaxRank) throw ParseError("tensor: rank " + std::to_string(rank) + " unsupported");
  Shape shape(rank);
  std::uint64_t n = 1;
  for (auto& d : shape) {
    d = read_u32(is);
    if (d == 0) throw ParseError("tensor: zero-sized dimension");
    n *= d;
    if (n > (1ull << 32)) throw ParseError("tensor: element count implausible");
  }
  std::vector<double> data(n);
  for (auto& v : data) v = read_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace sviqa::io
