#include "dpcc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace dpcc {

std::vector<Coord> voxelize(std::span<const std::array<double, 3>> pts, int depth) {
    if (depth < 1 || depth > 16) throw std::invalid_argument("voxelize: depth out of [1,16]");
    if (pts.empty()) return {};
    std::array<double, 3> lo = pts[0], hi = pts[0];
    for (const auto& p : pts)
        for (int a = 0; a < 3; ++a) {
            lo[std::size_t(a)] = std::min(lo[std::size_t(a)], p[std::size_t(a)]);
            hi[std::size_t(a)] = std::max(hi[std::size_t(a)], p[std::size_t(a)]);
        }
    double extent = 0.0;
    for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[std::size_t(a)] - lo[std::size_t(a)]);
    const double scale = extent > 0.0 ? (double((1 << depth) - 1)) / extent : 1.0;

    std::vector<Coord> out;
    out.reserve(pts.size());
    for (const auto& p : pts)
        out.push_back({int32_t(std::llround((p[0] - lo[0]) * scale)),
                       int32_t(std::llround((p[1] - lo[1]) * scale)),
                       int32_t(std::llround((p[2] - lo[2]) * scale))});
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

// Cell-hashed exact nearest-neighbor search. Cells are 4^3 voxels; a point
// in a cell at Chebyshev cell distance s is at least 4s-3 voxels away, so
// the shell scan can stop as soon as that bound passes the best hit.
class NnGrid {
  public:
    explicit NnGrid(const CoordSet& pts) : pts_(pts) {
        cells_.reserve(std::size_t(pts.size()));
        for (int i = 0; i < pts.size(); ++i) {
            const Coord& p = pts[i];
            cells_[cell_key({p.x >> 2, p.y >> 2, p.z >> 2})].push_back(i);
        }
    }

    double min_sq_dist(const Coord& q) const {
        const int32_t cx = q.x >> 2, cy = q.y >> 2, cz = q.z >> 2;
        double best = std::numeric_limits<double>::infinity();
        for (int s = 0;; ++s) {
            if (s > 0 && best < sq(4.0 * s - 3.0)) break;
            for (int dx = -s; dx <= s; ++dx) {
                const bool face_xy = std::abs(dx) == s;
                for (int dy = -s; dy <= s; ++dy) {
                    const bool face = face_xy || std::abs(dy) == s;
                    const int step = (face || s == 0) ? 1 : 2 * s;
                    for (int dz = -s; dz <= s; dz += step) {
                        auto it = cells_.find(cell_key({cx + dx, cy + dy, cz + dz}));
                        if (it == cells_.end()) continue;
                        for (int i : it->second) {
                            const Coord& p = pts_[i];
                            const double d = sq(double(p.x) - q.x) + sq(double(p.y) - q.y) +
                                             sq(double(p.z) - q.z);
                            best = std::min(best, d);
                        }
                    }
                }
            }
            if (s > (1 << 15)) throw std::logic_error("nn: search escaped the grid");
        }
        return best;
    }

  private:
    static double sq(double v) { return v * v; }
    static uint64_t cell_key(const Coord& c) { return coord_key(c); }
    const CoordSet& pts_;
    std::unordered_map<uint64_t, std::vector<int>> cells_;
};

double mse_to(const CoordSet& from, const NnGrid& grid) {
    double sum = 0.0;
    for (int i = 0; i < from.size(); ++i) sum += grid.min_sq_dist(from[i]);
    return sum / double(from.size());
}

}  // namespace

double d1_psnr(const CoordSet& a, const CoordSet& b, int depth) {
    if (a.empty() || b.empty()) throw std::invalid_argument("d1_psnr: empty cloud");
    if (depth < 1 || depth > 16) throw std::invalid_argument("d1_psnr: depth out of [1,16]");
    const NnGrid ga(a), gb(b);
    const double mse = std::max(mse_to(a, gb), mse_to(b, ga));
    if (mse == 0.0) return kPsnrCap;
    const double p = double((1 << depth) - 1);
    return std::min(kPsnrCap, 10.0 * std::log10(3.0 * p * p / mse));
}

namespace {

// Least-squares cubic fit of y against centered x; returns {c0..c3, center}.
struct CubicFit {
    double c[4];
    double center;
};

CubicFit fit_cubic(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double center = 0.0;
    for (double v : x) center += v;
    center /= double(n);

    double ata[4][4] = {};
    double aty[4] = {};
    for (std::size_t i = 0; i < n; ++i) {
        const double u = x[i] - center;
        double pow_u[4] = {1.0, u, u * u, u * u * u};
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) ata[r][c] += pow_u[r] * pow_u[c];
            aty[r] += pow_u[r] * y[i];
        }
    }
    // gaussian elimination with partial pivoting on the 4x4 normal system
    int perm[4] = {0, 1, 2, 3};
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(ata[perm[r]][col]) > std::abs(ata[perm[piv]][col])) piv = r;
        std::swap(perm[col], perm[piv]);
        const double d = ata[perm[col]][col];
        if (std::abs(d) < 1e-12)
            throw std::invalid_argument("bd_rate: degenerate curve (repeated PSNR values?)");
        for (int r = col + 1; r < 4; ++r) {
            const double f = ata[perm[r]][col] / d;
            for (int c = col; c < 4; ++c) ata[perm[r]][c] -= f * ata[perm[col]][c];
            aty[perm[r]] -= f * aty[perm[col]];
        }
    }
    CubicFit fit{};
    fit.center = center;
    for (int col = 3; col >= 0; --col) {
        double v = aty[perm[col]];
        for (int c = col + 1; c < 4; ++c) v -= ata[perm[col]][c] * fit.c[c];
        fit.c[col] = v / ata[perm[col]][col];
    }
    return fit;
}

double integrate_fit(const CubicFit& f, double lo, double hi) {
    auto anti = [&](double x) {
        const double u = x - f.center;
        return u * (f.c[0] + u * (f.c[1] / 2 + u * (f.c[2] / 3 + u * f.c[3] / 4)));
    };
    return anti(hi) - anti(lo);
}

void check_curve(const RdCurve& c, const char* who) {
    if (c.points.size() < 4)
        throw std::invalid_argument(std::string("bd_rate: ") + who + " needs >= 4 points");
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        if (!(c.points[i].bpp > 0.0) || !std::isfinite(c.points[i].psnr_db))
            throw std::invalid_argument(std::string("bd_rate: ") + who + " has invalid point");
        if (i > 0 && !(c.points[i].bpp > c.points[i - 1].bpp))
            throw std::invalid_argument(std::string("bd_rate: ") + who +
                                        " bpp not strictly increasing");
    }
}

}  // namespace

double bd_rate(const RdCurve& test, const RdCurve& anchor) {
    check_curve(test, "test curve");
    check_curve(anchor, "anchor curve");

    auto extract = [](const RdCurve& c, std::vector<double>& x, std::vector<double>& y) {
        for (const RdPoint& p : c.points) {
            x.push_back(p.psnr_db);
            y.push_back(std::log10(p.bpp));
        }
    };
    std::vector<double> xt, yt, xa, ya;
    extract(test, xt, yt);
    extract(anchor, xa, ya);

    const double lo = std::max(*std::min_element(xt.begin(), xt.end()),
                               *std::min_element(xa.begin(), xa.end()));
    const double hi = std::min(*std::max_element(xt.begin(), xt.end()),
                               *std::max_element(xa.begin(), xa.end()));
    if (!(lo < hi)) throw std::invalid_argument("bd_rate: PSNR ranges do not overlap");

    const CubicFit ft = fit_cubic(xt, yt);
    const CubicFit fa = fit_cubic(xa, ya);
    const double delta = (integrate_fit(ft, lo, hi) - integrate_fit(fa, lo, hi)) / (hi - lo);
    return 100.0 * (std::pow(10.0, delta) - 1.0);
}

namespace {

int coord_axis(const Coord& c, int axis) { return axis == 0 ? c.x : axis == 1 ? c.y : c.z; }

// Fills the plane at heap index `node` from the points that reached it, then
// recurses on the two halves.
void build_planes(std::vector<Coord>& pts, std::size_t begin, std::size_t end, int node,
                  int levels_left, KdPartition& out) {
    if (levels_left == 0) return;
    const std::size_t n = end - begin;

    int axis = 0;
    int32_t best_extent = -1;
    for (int a = 0; a < 3; ++a) {
        int32_t lo = 0, hi = -1;
        if (n > 0) {
            lo = hi = coord_axis(pts[begin], a);
            for (std::size_t i = begin + 1; i < end; ++i) {
                lo = std::min(lo, coord_axis(pts[i], a));
                hi = std::max(hi, coord_axis(pts[i], a));
            }
        }
        if (hi - lo > best_extent) {
            best_extent = hi - lo;
            axis = a;
        }
    }

    double threshold = 0.0;
    std::size_t mid = begin;
    if (n > 0) {
        std::sort(pts.begin() + std::ptrdiff_t(begin), pts.begin() + std::ptrdiff_t(end),
                  [axis](const Coord& a, const Coord& b) {
                      return coord_axis(a, axis) < coord_axis(b, axis);
                  });
        if (n >= 2)
            threshold = 0.5 * (coord_axis(pts[begin + n / 2 - 1], axis) +
                               coord_axis(pts[begin + n / 2], axis));
        else
            threshold = coord_axis(pts[begin], axis);
        mid = begin;
        while (mid < end && coord_axis(pts[mid], axis) <= threshold) ++mid;
    }

    out.planes[std::size_t(node)] = {axis, threshold};
    build_planes(pts, begin, mid, 2 * node + 1, levels_left - 1, out);
    build_planes(pts, mid, end, 2 * node + 2, levels_left - 1, out);
}

}  // namespace

KdPartition kdtree_partition(const std::vector<Coord>& cloud, int num_blocks) {
    if (num_blocks < 1 || (num_blocks & (num_blocks - 1)) != 0)
        throw std::invalid_argument("kdtree_partition: num_blocks must be a power of two");
    KdPartition p;
    p.num_blocks = num_blocks;
    p.planes.resize(std::size_t(num_blocks - 1));
    int levels = 0;
    while ((1 << levels) < num_blocks) ++levels;
    std::vector<Coord> pts = cloud;
    build_planes(pts, 0, pts.size(), 0, levels, p);
    return p;
}

std::vector<std::vector<Coord>> apply_partition(const std::vector<Coord>& cloud,
                                                const KdPartition& p) {
    if (p.num_blocks < 1 || int(p.planes.size()) != p.num_blocks - 1)
        throw std::invalid_argument("apply_partition: malformed partition");
    std::vector<std::vector<Coord>> blocks(std::size_t(p.num_blocks));
    const int internal = p.num_blocks - 1;
    for (const Coord& c : cloud) {
        int node = 0;
        while (node < internal) {
            const KdPartition::Plane& pl = p.planes[std::size_t(node)];
            node = coord_axis(c, pl.axis) <= pl.threshold ? 2 * node + 1 : 2 * node + 2;
        }
        blocks[std::size_t(node - internal)].push_back(c);
    }
    return blocks;
}

void write_frame_csv(const std::string& path, std::span<const FrameStat> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("csv: cannot write " + path);
    out << "sequence,frame,frame_type,bpp_coords,bpp_feats,bpp_total,d1_psnr\n";
    char buf[256];
    for (const FrameStat& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%c,%.6f,%.6f,%.6f,%.4f\n", r.sequence.c_str(),
                      r.frame, r.frame_type, r.bpp_coords, r.bpp_feats, r.bpp_total, r.d1_psnr);
        out << buf;
    }
    if (!out) throw std::runtime_error("csv: write failed " + path);
}

RdCurve read_rd_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("csv: cannot open " + path);
    RdCurve curve;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        double bpp = 0.0, psnr = 0.0;
        if (!(ss >> bpp >> psnr)) continue;  // header or stray text
        curve.points.push_back({bpp, psnr});
    }
    if (curve.points.empty()) throw std::runtime_error("csv: no rate points in " + path);
    std::sort(curve.points.begin(), curve.points.end(),
              [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
    return curve;
}

}  // namespace dpcc
