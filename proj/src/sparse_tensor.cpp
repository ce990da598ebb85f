#include "dpcc/sparse_tensor.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dpcc {

CoordSet::CoordSet(std::vector<Coord> pts) : pts_(std::move(pts)) {
    index_.reserve(pts_.size() * 2);
    for (std::size_t i = 0; i < pts_.size(); ++i) index_.emplace(coord_key(pts_[i]), int32_t(i));
}

CoordSetPtr CoordSet::make(std::vector<Coord> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return CoordSetPtr(new CoordSet(std::move(pts)));
}

CoordSetPtr CoordSet::make_sorted(std::vector<Coord> pts) {
    return CoordSetPtr(new CoordSet(std::move(pts)));
}

SparseTensor build_tensor(const std::vector<Coord>& points, const Mat& feats, int depth,
                          int scale) {
    if (depth < 0 || depth > 16) throw std::invalid_argument("build_tensor: depth out of range");
    if (scale < 0 || scale > depth) throw std::invalid_argument("build_tensor: scale out of range");
    if (int(points.size()) != feats.rows)
        throw std::invalid_argument("build_tensor: points/features row mismatch");
    const int32_t limit = int32_t(1) << (depth - scale);
    for (const Coord& c : points) {
        if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= limit || c.y >= limit || c.z >= limit)
            throw std::out_of_range("build_tensor: coordinate outside 2^" +
                                    std::to_string(depth - scale) + " grid");
    }

    std::vector<int> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (points[a] == points[b]) return a < b;
        return points[a] < points[b];
    });

    std::vector<Coord> uniq;
    uniq.reserve(points.size());
    Mat out(0, feats.cols);
    std::vector<double> acc(feats.cols);
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::fill(acc.begin(), acc.end(), 0.0);
        while (j < order.size() && points[order[j]] == points[order[i]]) {
            for (int c = 0; c < feats.cols; ++c) acc[c] += feats(order[j], c);
            ++j;
        }
        uniq.push_back(points[order[i]]);
        for (int c = 0; c < feats.cols; ++c) out.v.push_back(acc[c] / double(j - i));
        i = j;
    }
    out.rows = int(uniq.size());

    SparseTensor t;
    t.coords = CoordSet::make_sorted(std::move(uniq));
    t.feats = std::move(out);
    t.scale = scale;
    t.depth = depth;
    return t;
}

SparseTensor geometry_tensor(const std::vector<Coord>& points, int depth) {
    Mat ones(int(points.size()), 1, 1.0);
    return build_tensor(points, ones, depth, 0);
}

CoordSetPtr downsample_coords(const CoordSet& coords, int times) {
    std::vector<Coord> out;
    out.reserve(coords.size());
    for (const Coord& c : coords.pts())
        out.push_back({c.x >> times, c.y >> times, c.z >> times});
    // floor-division does not preserve lexicographic order, so re-sort
    return CoordSet::make(std::move(out));
}

CoordSetPtr upsample_children(const CoordSet& coords) {
    std::vector<Coord> out;
    out.reserve(std::size_t(coords.size()) * 8);
    for (const Coord& c : coords.pts())
        for (int ox = 0; ox < 2; ++ox)
            for (int oy = 0; oy < 2; ++oy)
                for (int oz = 0; oz < 2; ++oz)
                    out.push_back({2 * c.x + ox, 2 * c.y + oy, 2 * c.z + oz});
    // children of distinct parents interleave, so parent-major is not sorted
    std::sort(out.begin(), out.end());
    return CoordSet::make_sorted(std::move(out));
}

std::vector<Coord> kernel_offsets(int kernel_size) {
    if (kernel_size < 1) throw std::invalid_argument("kernel_offsets: bad kernel size");
    const int lo = (kernel_size % 2 == 1) ? -(kernel_size / 2) : 0;
    const int hi = (kernel_size % 2 == 1) ? kernel_size / 2 : kernel_size - 1;
    std::vector<Coord> offs;
    offs.reserve(std::size_t(kernel_size) * kernel_size * kernel_size);
    for (int ox = lo; ox <= hi; ++ox)
        for (int oy = lo; oy <= hi; ++oy)
            for (int oz = lo; oz <= hi; ++oz) offs.push_back({ox, oy, oz});
    return offs;
}

KernelMap kernel_map(const CoordSet& in, const CoordSet& out, const ConvSpec& spec) {
    if (spec.stride != 1 && spec.stride != 2)
        throw std::invalid_argument("kernel_map: stride must be 1 or 2");
    if (spec.transposed && (spec.stride != 2 || spec.kernel_size != 2))
        throw std::invalid_argument("kernel_map: transposed form is kernel 2 stride 2");

    KernelMap km;
    km.offsets = kernel_offsets(spec.kernel_size);
    km.pairs.resize(km.offsets.size());
    km.n_in = in.size();
    km.n_out = out.size();

    for (std::size_t oi = 0; oi < km.offsets.size(); ++oi) {
        const Coord o = km.offsets[oi];
        auto& list = km.pairs[oi];
        if (spec.transposed) {
            for (int i = 0; i < in.size(); ++i) {
                const Coord c = in[i];
                const int j = out.find({2 * c.x + o.x, 2 * c.y + o.y, 2 * c.z + o.z});
                if (j >= 0) list.push_back({i, j});
            }
        } else {
            const int s = spec.stride;
            for (int j = 0; j < out.size(); ++j) {
                const Coord c = out[j];
                const int i = in.find({s * c.x + o.x, s * c.y + o.y, s * c.z + o.z});
                if (i >= 0) list.push_back({i, j});
            }
        }
    }
    return km;
}

Mat conv_apply(const KernelMap& km, const Mat& in, const Mat& weights, const Mat& bias) {
    const int cin = in.cols;
    const int cout = weights.cols;
    if (weights.rows != int(km.offsets.size()) * cin)
        throw std::invalid_argument("conv_apply: weight rows mismatch kernel volume");
    if (bias.size() != std::size_t(cout))
        throw std::invalid_argument("conv_apply: bias size mismatch");
    if (in.rows != km.n_in) throw std::invalid_argument("conv_apply: input rows mismatch map");

    Mat out(km.n_out, cout);
    for (int j = 0; j < km.n_out; ++j)
        for (int c = 0; c < cout; ++c) out(j, c) = bias.v[std::size_t(c)];

    for (std::size_t oi = 0; oi < km.offsets.size(); ++oi) {
        const double* wblk = weights.row(int(oi) * cin);
        for (const auto& p : km.pairs[oi]) {
            const double* src = in.row(p.in_row);
            double* dst = out.row(p.out_row);
            for (int ci = 0; ci < cin; ++ci) {
                const double a = src[ci];
                const double* wrow = wblk + std::size_t(ci) * cout;
                for (int co = 0; co < cout; ++co) dst[co] += a * wrow[co];
            }
        }
    }
    return out;
}

Mat conv_grad_input(const KernelMap& km, const Mat& grad_out, const Mat& weights, int n_in) {
    const int cout = weights.cols;
    const int cin = weights.rows / int(km.offsets.size());
    Mat gin(n_in, cin);
    for (std::size_t oi = 0; oi < km.offsets.size(); ++oi) {
        const double* wblk = weights.row(int(oi) * cin);
        for (const auto& p : km.pairs[oi]) {
            const double* g = grad_out.row(p.out_row);
            double* dst = gin.row(p.in_row);
            for (int ci = 0; ci < cin; ++ci) {
                const double* wrow = wblk + std::size_t(ci) * cout;
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) acc += g[co] * wrow[co];
                dst[ci] += acc;
            }
        }
    }
    return gin;
}

void conv_grad_params(const KernelMap& km, const Mat& in, const Mat& grad_out, Mat& grad_w,
                      Mat& grad_b) {
    const int cin = in.cols;
    const int cout = grad_out.cols;
    for (std::size_t oi = 0; oi < km.offsets.size(); ++oi) {
        double* wblk = grad_w.row(int(oi) * cin);
        for (const auto& p : km.pairs[oi]) {
            const double* src = in.row(p.in_row);
            const double* g = grad_out.row(p.out_row);
            for (int ci = 0; ci < cin; ++ci) {
                const double a = src[ci];
                double* wrow = wblk + std::size_t(ci) * cout;
                for (int co = 0; co < cout; ++co) wrow[co] += a * g[co];
            }
        }
    }
    for (int j = 0; j < grad_out.rows; ++j) {
        const double* g = grad_out.row(j);
        for (int co = 0; co < cout; ++co) grad_b.v[std::size_t(co)] += g[co];
    }
}

SparseTensor sparse_conv(const SparseTensor& in, const ConvSpec& spec, const Mat& weights,
                         const Mat& bias, CoordSetPtr target) {
    if (in.channels() != spec.in_channels)
        throw std::invalid_argument("sparse_conv: channel mismatch");
    if (spec.transposed) throw std::invalid_argument("sparse_conv: use transpose_conv_up");

    CoordSetPtr out_coords = target;
    int out_scale = in.scale;
    if (!out_coords) {
        if (spec.stride == 2) {
            out_coords = downsample_coords(*in.coords, 1);
            out_scale = in.scale + 1;
        } else {
            out_coords = in.coords;
        }
    } else if (spec.stride == 2) {
        out_scale = in.scale + 1;
    }

    const KernelMap km = kernel_map(*in.coords, *out_coords, spec);
    SparseTensor out;
    out.coords = out_coords;
    out.feats = conv_apply(km, in.feats, weights, bias);
    out.scale = out_scale;
    out.depth = in.depth;
    return out;
}

SparseTensor transpose_conv_up(const SparseTensor& in, const ConvSpec& spec, const Mat& weights,
                               const Mat& bias) {
    if (!spec.transposed) throw std::invalid_argument("transpose_conv_up: spec not transposed");
    if (in.channels() != spec.in_channels)
        throw std::invalid_argument("transpose_conv_up: channel mismatch");
    if (in.scale < 1) throw std::invalid_argument("transpose_conv_up: already at scale 0");

    CoordSetPtr out_coords = upsample_children(*in.coords);
    const KernelMap km = kernel_map(*in.coords, *out_coords, spec);
    SparseTensor out;
    out.coords = out_coords;
    out.feats = conv_apply(km, in.feats, weights, bias);
    out.scale = in.scale - 1;
    out.depth = in.depth;
    return out;
}

std::vector<int> topk_rows(std::span<const double> logits, int k) {
    const int n = int(logits.size());
    const int keep = std::min(k, n);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(), [&](int a, int b) {
        if (logits[std::size_t(a)] != logits[std::size_t(b)])
            return logits[std::size_t(a)] > logits[std::size_t(b)];
        return a < b;
    });
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return idx;
}

SparseTensor prune(const SparseTensor& in, std::span<const double> occupancy_logits, int k) {
    if (int(occupancy_logits.size()) != in.num_points())
        throw std::invalid_argument("prune: logit count mismatch");
    if (k < 0) throw std::invalid_argument("prune: negative k");

    const std::vector<int> rows = topk_rows(occupancy_logits, k);
    std::vector<Coord> coords;
    coords.reserve(rows.size());
    Mat feats(int(rows.size()), in.channels());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        coords.push_back((*in.coords)[rows[r]]);
        const double* src = in.feats.row(rows[r]);
        std::copy(src, src + in.channels(), feats.row(int(r)));
    }

    SparseTensor out;
    out.coords = CoordSet::make_sorted(std::move(coords));
    out.feats = std::move(feats);
    out.scale = in.scale;
    out.depth = in.depth;
    return out;
}

namespace {
uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace

std::size_t CoordCache::MapKeyHash::operator()(const MapKey& k) const {
    uint64_t h = mix64(reinterpret_cast<uint64_t>(k.in));
    h ^= mix64(reinterpret_cast<uint64_t>(k.out)) * 0x9e3779b97f4a7c15ULL;
    h ^= uint64_t(k.kernel) << 32;
    h ^= uint64_t(k.stride) << 40;
    h ^= uint64_t(k.transposed) << 48;
    return std::size_t(h);
}

std::size_t CoordCache::DsKeyHash::operator()(const DsKey& k) const {
    return std::size_t(mix64(reinterpret_cast<uint64_t>(k.in)) ^ uint64_t(k.times));
}

std::shared_ptr<const KernelMap> CoordCache::map(const CoordSetPtr& in, const CoordSetPtr& out,
                                                 const ConvSpec& spec) {
    MapKey key{in.get(), out.get(), spec.kernel_size, spec.stride, spec.transposed};
    auto it = maps_.find(key);
    if (it != maps_.end()) return it->second.map;
    auto km = std::make_shared<KernelMap>(kernel_map(*in, *out, spec));
    maps_.emplace(key, MapEntry{km, in, out});
    return km;
}

CoordSetPtr CoordCache::downsample(const CoordSetPtr& coords, int times) {
    DsKey key{coords.get(), times};
    auto it = derived_.find(key);
    if (it != derived_.end()) return it->second.out;
    CoordSetPtr out = downsample_coords(*coords, times);
    derived_.emplace(key, DsEntry{out, coords});
    return out;
}

CoordSetPtr CoordCache::children(const CoordSetPtr& coords) {
    DsKey key{coords.get(), -1};
    auto it = derived_.find(key);
    if (it != derived_.end()) return it->second.out;
    CoordSetPtr out = upsample_children(*coords);
    derived_.emplace(key, DsEntry{out, coords});
    return out;
}

}  // namespace dpcc
