#pragma once

#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

namespace dpcc {

struct Coord {
    int32_t x = 0, y = 0, z = 0;
    friend bool operator==(const Coord&, const Coord&) = default;
};

// Canonical order is lexicographic (x, then y, then z). Every coordinate list
// that crosses a module boundary is sorted this way.
inline bool operator<(const Coord& a, const Coord& b) {
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.z < b.z;
}

// 21 bits per axis with a bias; covers any grid up to depth 16 plus the
// negative overhang produced by kernel offsets.
inline uint64_t coord_key(const Coord& c) {
    constexpr int64_t kBias = int64_t(1) << 20;
    return (uint64_t(c.x + kBias) << 42) | (uint64_t(c.y + kBias) << 21) | uint64_t(c.z + kBias);
}

class CoordSet;
using CoordSetPtr = std::shared_ptr<const CoordSet>;

// Immutable sorted unique coordinate set with a hash index for row lookup.
// Shared by pointer so kernel maps can be cached against object identity.
class CoordSet {
  public:
    static CoordSetPtr make(std::vector<Coord> pts);         // sorts and dedups
    static CoordSetPtr make_sorted(std::vector<Coord> pts);  // input already canonical

    const std::vector<Coord>& pts() const { return pts_; }
    int size() const { return int(pts_.size()); }
    const Coord& operator[](int i) const { return pts_[std::size_t(i)]; }
    bool empty() const { return pts_.empty(); }

    // row index in canonical order, or -1
    int find(const Coord& c) const {
        auto it = index_.find(coord_key(c));
        return it == index_.end() ? -1 : it->second;
    }

  private:
    explicit CoordSet(std::vector<Coord> pts);
    std::vector<Coord> pts_;
    std::unordered_map<uint64_t, int32_t> index_;
};

}  // namespace dpcc
