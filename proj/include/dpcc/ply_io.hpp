#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

namespace dpcc {

// Reads vertex x/y/z from an ASCII or binary-little-endian PLY. Extra scalar
// vertex properties are skipped; list properties anywhere in or before the
// vertex element are rejected. Elements after vertex are ignored.
std::vector<std::array<double, 3>> read_ply(const std::string& path);

// Writes points as float32 x/y/z, binary little-endian by default.
void write_ply(const std::string& path, std::span<const std::array<double, 3>> pts,
               bool ascii = false);

}  // namespace dpcc
