#pragma once

// Little-endian binary encoding shared by tensor files and checkpoints.
// Tensor record: "SVQT", u32 rank, u32 dims[rank], f64 data[numel].

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "sviqa/tensor.hpp"

namespace sviqa::io {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes

// Readers throw ParseError on truncation.
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);
void expect_magic(std::istream& is, const char magic[4], const char* what);

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace sviqa::io
