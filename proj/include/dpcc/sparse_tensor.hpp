#pragma once

#include <memory>
#include <span>
#include <vector>

#include "dpcc/coords.hpp"
#include "dpcc/mat.hpp"

namespace dpcc {

// Sparse voxel tensor: unique coordinates in canonical order plus one feature
// row per coordinate. `depth` is the grid bit depth at scale 0; a tensor at
// scale s lives on the 2^(depth-s) grid.
struct SparseTensor {
    CoordSetPtr coords;
    Mat feats;
    int scale = 0;
    int depth = 0;

    int num_points() const { return coords ? coords->size() : 0; }
    int channels() const { return feats.cols; }
};

// Sorts, dedups (duplicate coordinates average their feature rows) and range
// checks against the grid. Empty input yields an empty tensor.
SparseTensor build_tensor(const std::vector<Coord>& points, const Mat& feats, int depth,
                          int scale = 0);

// Geometry-only tensor: one channel, every feature 1.
SparseTensor geometry_tensor(const std::vector<Coord>& points, int depth);

// Floor-divides each coordinate by 2^times and dedups.
CoordSetPtr downsample_coords(const CoordSet& coords, int times);

// All eight children 2c + {0,1}^3 of every coordinate; output stays canonical.
CoordSetPtr upsample_children(const CoordSet& coords);

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 3;
    int stride = 1;
    bool transposed = false;
};

// Per-offset lists of (input row, output row) index pairs. Offsets are
// enumerated in a fixed order (x slowest), and each list is ordered by the
// row it was built from, so accumulation order is reproducible.
struct KernelMap {
    struct Pair {
        int32_t in_row;
        int32_t out_row;
    };
    std::vector<Coord> offsets;
    std::vector<std::vector<Pair>> pairs;
    int n_in = 0;
    int n_out = 0;

    std::size_t total_pairs() const {
        std::size_t n = 0;
        for (const auto& p : pairs) n += p.size();
        return n;
    }
};

// Offset enumeration for a cubic kernel: [-k/2, k/2] for odd k, [0, k-1] for
// even k. Weight layout is tied to this order.
std::vector<Coord> kernel_offsets(int kernel_size);

// Active in/out pairs for one convolution:
//   stride 1:             in = out + offset
//   stride 2:             in = 2*out + offset
//   stride 2, transposed: out = 2*in + offset
KernelMap kernel_map(const CoordSet& in, const CoordSet& out, const ConvSpec& spec);

// weights: (K^3 * in_channels) x out_channels, offset-major row blocks.
// bias: 1 x out_channels. Rows with no active pairs get bias only.
Mat conv_apply(const KernelMap& km, const Mat& in, const Mat& weights, const Mat& bias);

// Gradient kernels shared by the autodiff layer and tests.
Mat conv_grad_input(const KernelMap& km, const Mat& grad_out, const Mat& weights, int n_in);
void conv_grad_params(const KernelMap& km, const Mat& in, const Mat& grad_out, Mat& grad_w,
                      Mat& grad_b);

// Convolution on the coordinates the kernel and stride imply, or on explicit
// target coordinates (used to map features from one frame's support onto
// another's).
SparseTensor sparse_conv(const SparseTensor& in, const ConvSpec& spec, const Mat& weights,
                         const Mat& bias, CoordSetPtr target = nullptr);

// Generative transposed convolution: every input coordinate emits all eight
// children. Adjoint of the stride-2 convolution when given transposed weights.
SparseTensor transpose_conv_up(const SparseTensor& in, const ConvSpec& spec, const Mat& weights,
                               const Mat& bias);

// Row indices of the k largest logits, ties broken toward the lower row
// index; returned ascending so downstream tensors stay canonical.
std::vector<int> topk_rows(std::span<const double> logits, int k);

// Keeps the top-k rows by occupancy logit, carrying features over unchanged.
SparseTensor prune(const SparseTensor& in, std::span<const double> occupancy_logits, int k);

// Caches kernel maps and derived coordinate sets keyed by CoordSet identity,
// so repeated passes over the same geometry do no redundant hashing.
class CoordCache {
  public:
    std::shared_ptr<const KernelMap> map(const CoordSetPtr& in, const CoordSetPtr& out,
                                         const ConvSpec& spec);
    CoordSetPtr downsample(const CoordSetPtr& coords, int times);
    CoordSetPtr children(const CoordSetPtr& coords);

  private:
    struct MapKey {
        const void* in;
        const void* out;
        int kernel;
        int stride;
        bool transposed;
        bool operator==(const MapKey&) const = default;
    };
    struct MapKeyHash {
        std::size_t operator()(const MapKey& k) const;
    };
    struct MapEntry {
        std::shared_ptr<const KernelMap> map;
        CoordSetPtr keep_in, keep_out;
    };
    struct DsKey {
        const void* in;
        int times;
        bool operator==(const DsKey&) const = default;
    };
    struct DsKeyHash {
        std::size_t operator()(const DsKey& k) const;
    };
    struct DsEntry {
        CoordSetPtr out;
        CoordSetPtr keep_in;
    };

    std::unordered_map<MapKey, MapEntry, MapKeyHash> maps_;
    std::unordered_map<DsKey, DsEntry, DsKeyHash> derived_;
};

}  // namespace dpcc
