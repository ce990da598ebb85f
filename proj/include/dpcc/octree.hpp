#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dpcc/coords.hpp"

namespace dpcc {

// Breadth-first occupancy bytes for a coordinate set on the 2^depth grid.
// Nodes at each level are visited in canonical order; a child's bit index is
// (x_bit << 2) | (y_bit << 1) | z_bit.
std::vector<uint8_t> octree_occupancy_bytes(const CoordSet& coords, int depth);

// [depth u8][range-coded occupancy bytes, order-0 adaptive]. Node counts are
// implicit in the popcounts, so the stream is self-delimiting.
std::vector<uint8_t> octree_encode(const CoordSet& coords, int depth);

// Inverse of octree_encode; validates the embedded depth against the caller's.
CoordSetPtr octree_decode(std::span<const uint8_t> bytes, int depth);

inline double coords_bpp(std::size_t coded_bytes, std::size_t num_points) {
    return 8.0 * double(coded_bytes) / double(num_points);
}

}  // namespace dpcc
