#pragma once

// Binary tensor snapshots.
//
// Layout: 8-byte magic "PASTATNS", a u32 little-endian byte length, that
// many bytes of UTF-8 JSON {"shape": [...], "dtype": "f64"}, then the
// row-major payload as little-endian 64-bit floats.

#include "pasta/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace pasta {

inline constexpr char kTensorMagic[8] = {'P', 'A', 'S', 'T', 'A', 'T', 'N', 'S'};

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Full snapshot record as a byte string; handy for byte-identity checks.
std::string tensor_bytes(const Tensor& t);

}  // namespace pasta
