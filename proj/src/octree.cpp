#include "dpcc/octree.hpp"

#include <algorithm>
#include <stdexcept>

#include "dpcc/range_coder.hpp"

namespace dpcc {

namespace {

void check_range(const CoordSet& coords, int depth) {
    if (coords.empty()) throw std::invalid_argument("octree: empty coordinate set");
    if (depth < 1 || depth > 16) throw std::invalid_argument("octree: depth out of range");
    const int32_t limit = int32_t(1) << depth;
    for (const Coord& c : coords.pts())
        if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= limit || c.y >= limit || c.z >= limit)
            throw std::out_of_range("octree: coordinate outside grid");
}

}  // namespace

std::vector<uint8_t> octree_occupancy_bytes(const CoordSet& coords, int depth) {
    check_range(coords, depth);

    // level[l] holds the sorted node coordinates l splits below the root
    std::vector<std::vector<Coord>> level(std::size_t(depth) + 1);
    level[std::size_t(depth)] = coords.pts();
    for (int l = depth - 1; l >= 0; --l) {
        auto& cur = level[std::size_t(l)];
        cur.reserve(level[std::size_t(l + 1)].size());
        for (const Coord& c : level[std::size_t(l + 1)])
            cur.push_back({c.x >> 1, c.y >> 1, c.z >> 1});
        std::sort(cur.begin(), cur.end());
        cur.erase(std::unique(cur.begin(), cur.end()), cur.end());
    }

    std::vector<uint8_t> bytes;
    for (int l = 0; l < depth; ++l) {
        const auto& parents = level[std::size_t(l)];
        std::vector<uint8_t> occ(parents.size(), 0);
        for (const Coord& c : level[std::size_t(l + 1)]) {
            const Coord p{c.x >> 1, c.y >> 1, c.z >> 1};
            const auto it = std::lower_bound(parents.begin(), parents.end(), p);
            occ[std::size_t(it - parents.begin())] |=
                uint8_t(1u << (((c.x & 1) << 2) | ((c.y & 1) << 1) | (c.z & 1)));
        }
        bytes.insert(bytes.end(), occ.begin(), occ.end());
    }
    return bytes;
}

std::vector<uint8_t> octree_encode(const CoordSet& coords, int depth) {
    const std::vector<uint8_t> occ = octree_occupancy_bytes(coords, depth);
    RangeEncoder enc;
    AdaptiveByteModel model;
    for (uint8_t b : occ) model.encode(enc, b);
    std::vector<uint8_t> coded = enc.finish();

    std::vector<uint8_t> out;
    out.reserve(coded.size() + 1);
    out.push_back(uint8_t(depth));
    out.insert(out.end(), coded.begin(), coded.end());
    return out;
}

CoordSetPtr octree_decode(std::span<const uint8_t> bytes, int depth) {
    if (bytes.empty()) throw std::runtime_error("octree_decode: empty stream");
    if (bytes[0] != uint8_t(depth))
        throw std::runtime_error("octree_decode: depth mismatch with stream header");

    RangeDecoder dec(bytes.subspan(1));
    AdaptiveByteModel model;

    std::vector<Coord> nodes{{0, 0, 0}};
    for (int l = 0; l < depth; ++l) {
        std::vector<Coord> next;
        next.reserve(nodes.size() * 2);
        for (const Coord& p : nodes) {
            const uint8_t occ = model.decode(dec);
            if (occ == 0) throw std::runtime_error("octree_decode: empty occupancy byte");
            for (int bit = 0; bit < 8; ++bit)
                if (occ & (1u << bit))
                    next.push_back({2 * p.x + ((bit >> 2) & 1), 2 * p.y + ((bit >> 1) & 1),
                                    2 * p.z + (bit & 1)});
        }
        // the encoder emits every level in canonical order, and expanding
        // sorted parents does not keep children sorted
        std::sort(next.begin(), next.end());
        nodes = std::move(next);
    }
    return CoordSet::make_sorted(std::move(nodes));
}

}  // namespace dpcc
