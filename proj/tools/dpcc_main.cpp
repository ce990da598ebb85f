#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dpcc/codec.hpp"
#include "dpcc/metrics.hpp"
#include "dpcc/octree.hpp"
#include "dpcc/ply_io.hpp"

namespace fs = std::filesystem;
using namespace dpcc;

namespace {

std::vector<std::string> list_ply(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ply")
            files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .ply files in " + dir);
    return files;
}

std::vector<Coord> load_voxelized(const std::string& path, int depth) {
    const auto pts = read_ply(path);
    const double limit = double(1 << depth);
    std::vector<Coord> out;
    out.reserve(pts.size());
    for (const auto& p : pts) {
        for (int a = 0; a < 3; ++a) {
            const double v = p[std::size_t(a)];
            if (v != std::floor(v) || v < 0.0 || v >= limit)
                throw std::runtime_error(path +
                                         ": coordinates are not voxelized for depth " +
                                         std::to_string(depth) + " (run the voxelize command)");
        }
        out.push_back({int32_t(p[0]), int32_t(p[1]), int32_t(p[2])});
    }
    return out;
}

std::vector<SparseTensor> load_frames(const std::string& dir, int depth) {
    std::vector<SparseTensor> frames;
    for (const auto& f : list_ply(dir)) frames.push_back(geometry_tensor(load_voxelized(f, depth), depth));
    return frames;
}

void write_cloud(const std::string& path, const CoordSet& coords) {
    std::vector<std::array<double, 3>> pts;
    pts.reserve(std::size_t(coords.size()));
    for (int i = 0; i < coords.size(); ++i)
        pts.push_back({double(coords[i].x), double(coords[i].y), double(coords[i].z)});
    write_ply(path, pts);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

struct ConfigFlags {
    std::string config_path;
    double lambda = -1.0;
    int depth = -1;
    int gop = -1;
    double lr = -1.0;
    int64_t seed = -1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--lambda", lambda, "rate-distortion tradeoff");
        cmd->add_option("--depth", depth, "voxel grid bit depth");
        cmd->add_option("--gop", gop, "frames per group");
        cmd->add_option("--lr", lr, "Adam learning rate");
        cmd->add_option("--seed", seed, "initialization seed");
    }

    CodecConfig resolve() const {
        CodecConfig cfg;
        if (!config_path.empty()) cfg = CodecConfig::load(config_path);
        if (lambda >= 0.0) cfg.lambda = lambda;
        if (depth > 0) cfg.depth = depth;
        if (gop > 0) cfg.gop = gop;
        if (lr > 0.0) cfg.lr = lr;
        if (seed >= 0) cfg.seed = uint64_t(seed);
        cfg.validate();
        return cfg;
    }
};

// Per-frame substream sizes pulled back out of a sequence container.
struct FrameCost {
    char type = 'I';
    uint32_t n_full = 0;
    std::size_t coord_bytes = 0;
    std::size_t feature_bytes = 0;
    std::size_t total_bytes = 0;
};

std::vector<FrameCost> sequence_costs(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4) throw std::runtime_error("sequence stream truncated");
    uint32_t count = 0;
    for (int i = 0; i < 4; ++i) count |= uint32_t(bytes[std::size_t(i)]) << (8 * i);
    std::size_t pos = 4;
    std::vector<FrameCost> out;
    for (uint32_t i = 0; i < count; ++i) {
        std::size_t used = 0;
        const FrameBitstream fb = FrameBitstream::parse(
            std::span(bytes).subspan(pos), &used);
        out.push_back({fb.frame_type == 0 ? 'I' : 'P', fb.n_full, fb.coord_bytes.size(),
                       fb.feature_bytes.size(), used});
        pos += used;
    }
    return out;
}

int cmd_voxelize(const std::string& in, const std::string& out, int depth, bool ascii) {
    const auto pts = read_ply(in);
    if (pts.empty()) throw std::runtime_error(in + ": empty point cloud");
    const auto vox = voxelize(pts, depth);
    std::vector<std::array<double, 3>> fpts;
    fpts.reserve(vox.size());
    for (const Coord& c : vox) fpts.push_back({double(c.x), double(c.y), double(c.z)});
    write_ply(out, fpts, ascii);
    std::printf("voxelize: %zu points -> %zu voxels at depth %d\n", pts.size(), vox.size(), depth);
    return 0;
}

int cmd_train(const std::string& frames_dir, const ConfigFlags& flags, int steps, int blocks,
              const std::string& ckpt_out) {
    const CodecConfig cfg = flags.resolve();
    if (steps < 1) throw std::runtime_error("train: --steps must be >= 1");
    const auto frames = load_frames(frames_dir, cfg.depth);
    if (frames.size() < 2) throw std::runtime_error("train: need at least 2 frames");

    // consecutive pairs; with blocks > 1 the same planes split both frames
    std::vector<std::pair<SparseTensor, SparseTensor>> pairs;
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
        if (blocks <= 1) {
            pairs.emplace_back(frames[i], frames[i + 1]);
            continue;
        }
        const KdPartition part = kdtree_partition(frames[i].coords->pts(), blocks);
        const auto prev_blocks = apply_partition(frames[i].coords->pts(), part);
        const auto cur_blocks = apply_partition(frames[i + 1].coords->pts(), part);
        for (int b = 0; b < blocks; ++b) {
            if (prev_blocks[std::size_t(b)].empty() || cur_blocks[std::size_t(b)].empty())
                continue;
            pairs.emplace_back(geometry_tensor(prev_blocks[std::size_t(b)], cfg.depth),
                               geometry_tensor(cur_blocks[std::size_t(b)], cfg.depth));
        }
    }
    if (pairs.empty()) throw std::runtime_error("train: no usable frame pairs");

    CodecModel model(cfg);
    AdamOptimizer opt(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    CoordCache cc;
    for (int s = 0; s < steps; ++s) {
        const auto& [prev, cur] = pairs[std::size_t(s) % pairs.size()];
        const LossTerms lt = train_step(model, prev, cur, cfg.lambda, opt, rng, cc);
        if (s % 50 == 0 || s == steps - 1)
            std::printf("step %5d  J=%.5f  rate=%.5f bpp  bce=%.5f\n", s, lt.total, lt.rate_bpp,
                        lt.distortion_bce);
    }
    const uint64_t hash = save_model(model, ckpt_out);
    std::printf("saved %s (hash %016" PRIx64 ")\n", ckpt_out.c_str(), hash);
    return 0;
}

int cmd_encode(const std::string& ckpt, const std::string& frames_dir, int gop,
               const std::string& out_bin) {
    CodecModel model = load_model(ckpt);
    const int g = gop > 0 ? gop : model.cfg.gop;
    const auto frames = load_frames(frames_dir, model.cfg.depth);
    const auto bytes = encode_sequence(model, frames, g);
    write_file(out_bin, bytes);
    const auto costs = sequence_costs(bytes);
    for (std::size_t i = 0; i < costs.size(); ++i)
        std::printf("frame %3zu  %c  %7zu bytes  (%.4f bpp)\n", i, costs[i].type,
                    costs[i].total_bytes, 8.0 * double(costs[i].total_bytes) / costs[i].n_full);
    std::printf("encoded %zu frames -> %s (%zu bytes)\n", frames.size(), out_bin.c_str(),
                bytes.size());
    return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& in_bin, const std::string& outdir) {
    CodecModel model = load_model(ckpt);
    const auto bytes = read_file(in_bin);
    const auto decoded = decode_sequence(model, std::span(bytes));
    fs::create_directories(outdir);
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.ply", i);
        write_cloud((fs::path(outdir) / name).string(), *decoded[i].coords);
    }
    std::printf("decoded %zu frames into %s\n", decoded.size(), outdir.c_str());
    return 0;
}

int cmd_eval(const std::string& ref_dir, const std::string& dec_dir, const std::string& bits,
             const std::string& csv_out, const std::string& sequence, int depth, int jobs) {
    const auto ref_files = list_ply(ref_dir);
    const auto dec_files = list_ply(dec_dir);
    if (ref_files.size() != dec_files.size())
        throw std::runtime_error("eval: ref and dec frame counts differ");
    const auto costs = sequence_costs(read_file(bits));
    if (costs.size() != ref_files.size())
        throw std::runtime_error("eval: bitstream frame count differs from directories");

    const std::size_t n = ref_files.size();
    std::vector<FrameStat> rows(n);
    std::vector<std::string> errors(n);
    const int workers = std::max(1, jobs);
    std::vector<std::thread> pool;
    std::size_t chunk = (n + std::size_t(workers) - 1) / std::size_t(workers);
    for (int w = 0; w < workers; ++w) {
        const std::size_t b = std::size_t(w) * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&, b, e] {
            for (std::size_t i = b; i < e; ++i) {
                try {
                    const auto ref = CoordSet::make(load_voxelized(ref_files[i], depth));
                    const auto dec = CoordSet::make(load_voxelized(dec_files[i], depth));
                    FrameStat& r = rows[i];
                    r.sequence = sequence;
                    r.frame = int(i);
                    r.frame_type = costs[i].type;
                    r.bpp_coords = 8.0 * double(costs[i].coord_bytes) / costs[i].n_full;
                    r.bpp_feats = 8.0 * double(costs[i].feature_bytes) / costs[i].n_full;
                    r.bpp_total = 8.0 * double(costs[i].total_bytes) / costs[i].n_full;
                    r.d1_psnr = d1_psnr(*ref, *dec, depth);
                } catch (const std::exception& ex) {
                    errors[i] = ex.what();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors)
        if (!err.empty()) throw std::runtime_error("eval: " + err);

    write_frame_csv(csv_out, rows);
    double bpp = 0.0, psnr = 0.0;
    for (const FrameStat& r : rows) {
        bpp += r.bpp_total;
        psnr += r.d1_psnr;
    }
    std::printf("avg: %.6f bpp, %.4f dB over %zu frames -> %s\n", bpp / double(n),
                psnr / double(n), n, csv_out.c_str());
    return 0;
}

int cmd_bdrate(const std::string& test_csv, const std::string& anchor_csv) {
    const double r = bd_rate(read_rd_csv(test_csv), read_rd_csv(anchor_csv));
    std::printf("BD-Rate: %.2f%%\n", r);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic point cloud geometry codec"};
    app.require_subcommand(1);

    std::string in_path, out_path, frames_dir, ckpt, bits, ref_dir, dec_dir, csv_path;
    std::string sequence = "seq";
    std::string test_csv, anchor_csv;
    int depth = 10, steps = 1000, blocks = 1, gop = 0, jobs = 1;
    bool ascii = false;
    ConfigFlags flags;

    auto* vox = app.add_subcommand("voxelize", "quantize a point cloud onto a 2^depth grid");
    vox->add_option("input", in_path, "input .ply")->required();
    vox->add_option("output", out_path, "output .ply")->required();
    vox->add_option("--depth", depth, "grid bit depth")->capture_default_str();
    vox->add_flag("--ascii", ascii, "write ASCII instead of binary");

    auto* train = app.add_subcommand("train", "fit a model on a directory of voxelized frames");
    train->add_option("--frames", frames_dir, "directory of voxelized .ply frames")->required();
    train->add_option("--steps", steps, "optimizer steps")->capture_default_str();
    train->add_option("--blocks", blocks, "kd-tree blocks per frame (power of two)")
        ->capture_default_str();
    train->add_option("--ckpt", ckpt, "checkpoint output path")->required();
    flags.attach(train);

    auto* enc = app.add_subcommand("encode", "compress voxelized frames into one bitstream");
    enc->add_option("--ckpt", ckpt, "model checkpoint")->required();
    enc->add_option("--frames", frames_dir, "directory of voxelized .ply frames")->required();
    enc->add_option("--gop", gop, "frames per group (0 = from checkpoint config)");
    enc->add_option("output", out_path, "output .bin")->required();

    auto* dec = app.add_subcommand("decode", "decompress a bitstream into .ply frames");
    dec->add_option("--ckpt", ckpt, "model checkpoint")->required();
    dec->add_option("input", in_path, "input .bin")->required();
    dec->add_option("--outdir", out_path, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "rate/quality report for a decoded sequence");
    ev->add_option("--ref", ref_dir, "reference voxelized frames")->required();
    ev->add_option("--dec", dec_dir, "decoded frames")->required();
    ev->add_option("--bits", bits, "bitstream used for the decode")->required();
    ev->add_option("--csv", csv_path, "output CSV path")->required();
    ev->add_option("--sequence", sequence, "sequence label in the CSV")->capture_default_str();
    ev->add_option("--depth", depth, "grid bit depth")->capture_default_str();
    ev->add_option("--jobs", jobs, "parallel frame evaluations")->capture_default_str();

    auto* bd = app.add_subcommand("bdrate", "BD-Rate between two bpp,psnr CSV curves");
    bd->add_option("--test", test_csv, "test curve CSV")->required();
    bd->add_option("--anchor", anchor_csv, "anchor curve CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (vox->parsed()) return cmd_voxelize(in_path, out_path, depth, ascii);
        if (train->parsed()) return cmd_train(frames_dir, flags, steps, blocks, ckpt);
        if (enc->parsed()) return cmd_encode(ckpt, frames_dir, gop, out_path);
        if (dec->parsed()) return cmd_decode(ckpt, in_path, out_path);
        if (ev->parsed())
            return cmd_eval(ref_dir, dec_dir, bits, csv_path, sequence, depth, jobs);
        if (bd->parsed()) return cmd_bdrate(test_csv, anchor_csv);
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return 1;
    }
    return 0;
}
