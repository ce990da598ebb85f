#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "dpcc/coords.hpp"

namespace dpcc {

// Shifts to the minimum corner, scales uniformly so the widest axis spans
// [0, 2^depth - 1], rounds half away from zero and dedups. All points
// identical collapses to the origin voxel.
std::vector<Coord> voxelize(std::span<const std::array<double, 3>> pts, int depth);

// Symmetric point-to-point geometry PSNR:
//   10 * log10(3 * p^2 / max(mse(a->b), mse(b->a))), p = 2^depth - 1,
// capped at 999 dB when the clouds coincide. Nearest neighbors are exact
// (grid-hash search), so results match a brute-force scan bit for bit.
inline constexpr double kPsnrCap = 999.0;
double d1_psnr(const CoordSet& a, const CoordSet& b, int depth);

struct RdPoint {
    double bpp = 0.0;
    double psnr_db = 0.0;
};

// Rate-distortion curve: at least four points, strictly increasing bpp.
struct RdCurve {
    std::vector<RdPoint> points;
};

// Bjontegaard delta rate of `test` against `anchor`, percent. Cubic
// least-squares fit of log10(bpp) against PSNR per curve, closed-form
// integration over the common PSNR interval. Negative means `test` spends
// fewer bits at equal quality. Throws when the PSNR ranges do not overlap.
double bd_rate(const RdCurve& test, const RdCurve& anchor);

// Recursive median split along the widest axis. The planes fully determine
// the partition, so the same KdPartition routes a second cloud into
// matching blocks. Heap layout: children of plane i are 2i+1 and 2i+2;
// leaves in symmetric order are the blocks.
struct KdPartition {
    struct Plane {
        int axis = 0;  // 0 x, 1 y, 2 z
        double threshold = 0.0;
    };
    int num_blocks = 1;
    std::vector<Plane> planes;  // num_blocks - 1 entries
};

// num_blocks must be a power of two >= 1.
KdPartition kdtree_partition(const std::vector<Coord>& cloud, int num_blocks);

// Routes every point down the recorded planes (<= threshold goes left).
// Blocks are disjoint, may be empty, and together restore the input.
std::vector<std::vector<Coord>> apply_partition(const std::vector<Coord>& cloud,
                                                const KdPartition& p);

// One CSV row of the evaluation output.
struct FrameStat {
    std::string sequence;
    int frame = 0;
    char frame_type = 'I';
    double bpp_coords = 0.0;
    double bpp_feats = 0.0;
    double bpp_total = 0.0;
    double d1_psnr = 0.0;
};

// Header line: sequence,frame,frame_type,bpp_coords,bpp_feats,bpp_total,d1_psnr
void write_frame_csv(const std::string& path, std::span<const FrameStat> rows);

// Two-column bpp,psnr file (header line optional), one rate point per row.
RdCurve read_rd_csv(const std::string& path);

}  // namespace dpcc
