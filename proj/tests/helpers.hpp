#pragma once

// Shared oracles and generators for the test suite. Everything here is an
// independent re-derivation: no kernel maps, no tape, no grid hashing.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "dpcc/coords.hpp"
#include "dpcc/mat.hpp"
#include "dpcc/rng.hpp"
#include "dpcc/sparse_tensor.hpp"

namespace testutil {

using dpcc::Coord;
using dpcc::CoordSet;
using dpcc::CoordSetPtr;
using dpcc::Mat;
using dpcc::Rng;

// Random subset of the [0, grid)^3 lattice, at least min_pts points.
inline std::vector<Coord> random_cloud(Rng& rng, int grid, int min_pts, int max_pts) {
    const int n = rng.uniform_int(min_pts, max_pts);
    std::vector<Coord> pts;
    pts.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i)
        pts.push_back({int32_t(rng.uniform_int(0, grid - 1)),
                       int32_t(rng.uniform_int(0, grid - 1)),
                       int32_t(rng.uniform_int(0, grid - 1))});
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.empty()) pts.push_back({0, 0, 0});
    return pts;
}

inline Mat random_mat(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
    Mat m(rows, cols);
    for (double& v : m.v) v = rng.uniform(lo, hi);
    return m;
}

// Brute-force generalized convolution: per target, gather in = s*t + offset
// through a plain ordered map. Mirrors only the documented pair relation.
inline Mat conv_oracle(const CoordSet& in, const Mat& feats, const CoordSet& targets,
                       const Mat& w, const Mat& b, int kernel, int stride) {
    std::map<Coord, int> lookup;
    for (int i = 0; i < in.size(); ++i) lookup[in[i]] = i;
    const auto offs = dpcc::kernel_offsets(kernel);
    const int cin = feats.cols, cout = b.cols;
    Mat out(targets.size(), cout);
    for (int r = 0; r < targets.size(); ++r) {
        for (int c = 0; c < cout; ++c) out(r, c) = b(0, c);
        const Coord t = targets[r];
        for (std::size_t o = 0; o < offs.size(); ++o) {
            const Coord q{stride * t.x + offs[o].x, stride * t.y + offs[o].y,
                          stride * t.z + offs[o].z};
            auto it = lookup.find(q);
            if (it == lookup.end()) continue;
            for (int ci = 0; ci < cin; ++ci) {
                const double x = feats(it->second, ci);
                for (int c = 0; c < cout; ++c) out(r, c) += x * w(int(o) * cin + ci, c);
            }
        }
    }
    return out;
}

// Brute-force generative transposed convolution (kernel 2, stride 2):
// scatter every input into out = 2*in + offset.
inline Mat transpose_oracle(const CoordSet& in, const Mat& feats, const CoordSet& targets,
                            const Mat& w, const Mat& b) {
    const auto offs = dpcc::kernel_offsets(2);
    const int cin = feats.cols, cout = b.cols;
    Mat out(targets.size(), cout);
    for (int r = 0; r < targets.size(); ++r)
        for (int c = 0; c < cout; ++c) out(r, c) = b(0, c);
    for (int i = 0; i < in.size(); ++i)
        for (std::size_t o = 0; o < offs.size(); ++o) {
            const Coord t{2 * in[i].x + offs[o].x, 2 * in[i].y + offs[o].y,
                          2 * in[i].z + offs[o].z};
            const int r = targets.find(t);
            if (r < 0) continue;
            for (int ci = 0; ci < cin; ++ci)
                for (int c = 0; c < cout; ++c)
                    out(r, c) += feats(i, ci) * w(int(o) * cin + ci, c);
        }
    return out;
}

// Literal dense 3D convolution on a grid^3 voxel array (stride 1).
inline Mat dense_conv_oracle(const CoordSet& in, const Mat& feats, int grid, const Mat& w,
                             const Mat& b, int kernel) {
    const int cin = feats.cols, cout = b.cols;
    std::vector<double> dense(std::size_t(grid) * grid * grid * cin, 0.0);
    std::vector<uint8_t> occ(std::size_t(grid) * grid * grid, 0);
    auto at = [&](int x, int y, int z) { return (std::size_t(x) * grid + y) * grid + z; };
    for (int i = 0; i < in.size(); ++i) {
        const Coord c = in[i];
        occ[at(c.x, c.y, c.z)] = 1;
        for (int ci = 0; ci < cin; ++ci) dense[at(c.x, c.y, c.z) * cin + ci] = feats(i, ci);
    }
    const int reach = kernel / 2;
    Mat out(in.size(), cout);
    for (int r = 0; r < in.size(); ++r) {
        const Coord t = in[r];
        for (int c = 0; c < cout; ++c) out(r, c) = b(0, c);
        int o = 0;
        for (int dx = -reach; dx <= reach; ++dx)
            for (int dy = -reach; dy <= reach; ++dy)
                for (int dz = -reach; dz <= reach; ++dz, ++o) {
                    const int x = t.x + dx, y = t.y + dy, z = t.z + dz;
                    if (x < 0 || y < 0 || z < 0 || x >= grid || y >= grid || z >= grid) continue;
                    if (!occ[at(x, y, z)]) continue;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int c = 0; c < cout; ++c)
                            out(r, c) += dense[at(x, y, z) * cin + ci] * w(o * cin + ci, c);
                }
    }
    return out;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

// Index-ordered brute-force symmetric D1 MSE pieces.
inline double brute_mse(const CoordSet& from, const CoordSet& to) {
    double sum = 0.0;
    for (int i = 0; i < from.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < to.size(); ++j) {
            const double dx = double(from[i].x) - to[j].x;
            const double dy = double(from[i].y) - to[j].y;
            const double dz = double(from[i].z) - to[j].z;
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        sum += best;
    }
    return sum / double(from.size());
}

// Hollow sphere shell on the 2^depth grid; translate shifts the center.
inline std::vector<Coord> sphere_shell(int depth, double radius, double cx, double cy, double cz) {
    const int grid = 1 << depth;
    std::vector<Coord> pts;
    const int lo = std::max(0, int(std::floor(std::min({cx, cy, cz}) - radius - 2)));
    const int hi = std::min(grid - 1, int(std::ceil(std::max({cx, cy, cz}) + radius + 2)));
    for (int x = lo; x <= hi; ++x)
        for (int y = lo; y <= hi; ++y)
            for (int z = lo; z <= hi; ++z) {
                const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy) +
                                           (z - cz) * (z - cz));
                if (std::abs(d - radius) <= 0.5) pts.push_back({x, y, z});
            }
    return pts;
}

// Central-difference derivative of f with respect to *x.
template <class F>
inline double num_grad(F&& f, double* x, double h = 1e-5) {
    const double saved = *x;
    *x = saved + h;
    const double up = f();
    *x = saved - h;
    const double dn = f();
    *x = saved;
    return (up - dn) / (2.0 * h);
}

// As num_grad, but reports false when estimates at h and 2h disagree, which
// flags a relu kink inside the probe interval (not a differentiable point).
template <class F>
inline bool num_grad_smooth(F&& f, double* x, double* out, double h = 1e-5) {
    const double d1 = num_grad(f, x, h);
    const double d2 = num_grad(f, x, 2.0 * h);
    *out = d1;
    return std::abs(d1 - d2) <= 1e-6 * std::max(1.0, std::abs(d1));
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace testutil
