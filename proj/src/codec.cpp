#include "dpcc/codec.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "dpcc/checkpoint.hpp"
#include "dpcc/octree.hpp"
#include "dpcc/range_coder.hpp"

namespace dpcc {

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

class ByteReader {
  public:
    explicit ByteReader(std::span<const uint8_t> b) : b_(b) {}
    uint8_t u8() { return need(1), b_[pos_++]; }
    uint16_t u16() {
        need(2);
        uint16_t v = uint16_t(b_[pos_]) | uint16_t(b_[pos_ + 1]) << 8;
        pos_ += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(b_[pos_ + std::size_t(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(b_[pos_ + std::size_t(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::vector<uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<uint8_t> out(b_.begin() + std::ptrdiff_t(pos_),
                                 b_.begin() + std::ptrdiff_t(pos_ + n));
        pos_ += n;
        return out;
    }
    std::size_t pos() const { return pos_; }

  private:
    void need(std::size_t n) {
        if (pos_ + n > b_.size()) throw std::runtime_error("bitstream: truncated");
    }
    std::span<const uint8_t> b_;
    std::size_t pos_ = 0;
};

std::vector<IRBlock> make_irbs(const std::string& name, int width, int count, Rng& rng) {
    std::vector<IRBlock> blocks;
    blocks.reserve(std::size_t(count));
    for (int i = 0; i < count; ++i)
        blocks.emplace_back(name + ".irb" + std::to_string(i), width, rng);
    return blocks;
}

void check_frame_input(const CodecConfig& cfg, const SparseTensor& frame, const char* who) {
    if (frame.num_points() == 0)
        throw std::invalid_argument(std::string(who) + ": empty frame");
    if (frame.depth != cfg.depth)
        throw std::invalid_argument(std::string(who) + ": frame depth mismatch");
    if (frame.scale != 0 || frame.channels() != 1)
        throw std::invalid_argument(std::string(who) + ": expected scale-0 geometry tensor");
}

}  // namespace

EncoderNet::EncoderNet(const CodecConfig& cfg, Rng& rng) {
    const int w[4] = {1, cfg.enc_widths[0], cfg.enc_widths[1], cfg.enc_widths[2]};
    for (int i = 0; i < 3; ++i) {
        down[std::size_t(i)] =
            ConvLayer("enc.down" + std::to_string(i), {w[i], w[i + 1], 2, 2, false}, rng);
        irbs[std::size_t(i)] =
            make_irbs("enc.s" + std::to_string(i + 1), w[i + 1], cfg.irb_per_stage, rng);
    }
    to_bottleneck =
        ConvLayer("enc.bottleneck", {cfg.enc_widths[2], cfg.bottleneck, 3, 1, false}, rng);
}

MultiscaleFeatures EncoderNet::forward(Tape& t, const SparseTensor& p0, CoordCache& cc) {
    MultiscaleFeatures ms;
    CoordSetPtr coords = p0.coords;
    int node = t.track(p0.feats);
    ms.s[0] = {coords, node};
    for (int i = 0; i < 3; ++i) {
        CoordSetPtr next = cc.downsample(coords, 1);
        auto km = cc.map(coords, next, down[std::size_t(i)].spec);
        node = tp_relu(t, down[std::size_t(i)].forward(t, node, km));
        for (IRBlock& blk : irbs[std::size_t(i)]) node = blk.forward(t, node, next, cc);
        coords = next;
        ms.s[std::size_t(i) + 1] = {coords, node};
    }
    auto k3 = cc.map(coords, coords, to_bottleneck.spec);
    ms.s[3].node = to_bottleneck.forward(t, node, k3);
    return ms;
}

void EncoderNet::collect(std::vector<Parameter*>& out) {
    for (int i = 0; i < 3; ++i) {
        down[std::size_t(i)].collect(out);
        for (IRBlock& blk : irbs[std::size_t(i)]) blk.collect(out);
    }
    to_bottleneck.collect(out);
}

DecoderNet::DecoderNet(const CodecConfig& cfg, Rng& rng) {
    const int w[4] = {cfg.bottleneck, cfg.dec_widths[0], cfg.dec_widths[1], cfg.dec_widths[2]};
    for (int i = 0; i < 3; ++i) {
        up[std::size_t(i)] =
            ConvLayer("dec.up" + std::to_string(i), {w[i], w[i + 1], 2, 2, true}, rng);
        irbs[std::size_t(i)] =
            make_irbs("dec.s" + std::to_string(i), w[i + 1], cfg.irb_per_stage, rng);
        head[std::size_t(i)] =
            ConvLayer("dec.head" + std::to_string(i), {w[i + 1], 1, 3, 1, false}, rng);
    }
}

std::array<DecoderNet::StageOut, 3> DecoderNet::forward(Tape& t, int bottleneck_node,
                                                        const CoordSetPtr& c3,
                                                        std::array<int, 3> counts,
                                                        const std::array<CoordSetPtr, 3>* teacher,
                                                        CoordCache& cc) {
    std::array<StageOut, 3> out;
    CoordSetPtr coords = c3;
    int node = bottleneck_node;
    for (int i = 0; i < 3; ++i) {
        StageOut& st = out[std::size_t(i)];
        st.candidates = cc.children(coords);
        auto km_up = cc.map(coords, st.candidates, up[std::size_t(i)].spec);
        int x = tp_relu(t, up[std::size_t(i)].forward(t, node, km_up));
        for (IRBlock& blk : irbs[std::size_t(i)]) x = blk.forward(t, x, st.candidates, cc);
        st.feat_node = x;
        auto k3 = cc.map(st.candidates, st.candidates, head[std::size_t(i)].spec);
        st.logit_node = head[std::size_t(i)].forward(t, x, k3);

        if (teacher) {
            const CoordSet& keep = *(*teacher)[std::size_t(i)];
            for (int r = 0; r < st.candidates->size(); ++r)
                if (keep.find((*st.candidates)[r]) >= 0) st.kept_rows.push_back(r);
        } else {
            st.kept_rows = topk_rows(std::span(t.val(st.logit_node).v), counts[std::size_t(i)]);
        }
        std::vector<Coord> kept;
        kept.reserve(st.kept_rows.size());
        for (int r : st.kept_rows) kept.push_back((*st.candidates)[r]);
        st.kept_coords = CoordSet::make_sorted(std::move(kept));
        st.kept_node = tp_select_rows(t, x, st.kept_rows);

        coords = st.kept_coords;
        node = st.kept_node;
    }
    return out;
}

void DecoderNet::collect(std::vector<Parameter*>& out) {
    for (int i = 0; i < 3; ++i) {
        up[std::size_t(i)].collect(out);
        for (IRBlock& blk : irbs[std::size_t(i)]) blk.collect(out);
        head[std::size_t(i)].collect(out);
    }
}

PredictorNet::PredictorNet(const CodecConfig& cfg, Rng& rng) {
    const int h = cfg.predictor_hidden;
    const int in_w[3] = {1, h + cfg.enc_widths[0], h + cfg.enc_widths[1]};
    const int cat_w[3] = {h + cfg.enc_widths[0], h + cfg.enc_widths[1], h + cfg.bottleneck};
    for (int i = 0; i < 3; ++i) {
        down[std::size_t(i)] =
            ConvLayer("pred.down" + std::to_string(i), {in_w[i], h, 2, 2, false}, rng);
        irbs[std::size_t(i)] =
            make_irbs("pred.s" + std::to_string(i + 1), cat_w[i], cfg.irb_per_stage, rng);
    }
    target = ConvLayer("pred.target", {h + cfg.bottleneck, cfg.bottleneck, 3, 1, false}, rng);
}

int PredictorNet::forward(Tape& t, const MultiscaleFeatures& ref,
                          const CoordSetPtr& target_coords, CoordCache& cc) {
    CoordSetPtr coords = ref.s[0].coords;
    int node = ref.s[0].node;
    for (int i = 0; i < 3; ++i) {
        const CoordSetPtr& next = ref.s[std::size_t(i) + 1].coords;
        auto km = cc.map(coords, next, down[std::size_t(i)].spec);
        node = tp_relu(t, down[std::size_t(i)].forward(t, node, km));
        node = tp_concat_cols(t, node, ref.s[std::size_t(i) + 1].node);
        for (IRBlock& blk : irbs[std::size_t(i)]) node = blk.forward(t, node, next, cc);
        coords = next;
    }
    auto km_t = cc.map(coords, target_coords, target.spec);
    return target.forward(t, node, km_t);
}

void PredictorNet::collect(std::vector<Parameter*>& out) {
    for (int i = 0; i < 3; ++i) {
        down[std::size_t(i)].collect(out);
        for (IRBlock& blk : irbs[std::size_t(i)]) blk.collect(out);
    }
    target.collect(out);
}

CodecModel::CodecModel(const CodecConfig& config) : cfg(config) {
    cfg.validate();
    Rng rng(cfg.seed);
    encoder = EncoderNet(cfg, rng);
    decoder = DecoderNet(cfg, rng);
    predictor = PredictorNet(cfg, rng);
    prior = FactorizedPrior(cfg.bottleneck, rng);
}

std::vector<Parameter*> CodecModel::params() {
    std::vector<Parameter*> out;
    encoder.collect(out);
    decoder.collect(out);
    predictor.collect(out);
    for (Parameter* p : prior.params()) out.push_back(p);
    return out;
}

uint64_t save_model(CodecModel& model, const std::string& path) {
    const auto params = model.params();
    model.checkpoint_hash = save_checkpoint(path, model.cfg, std::span(params));
    return model.checkpoint_hash;
}

CodecModel load_model(const std::string& path) {
    CodecModel model(read_checkpoint_config(path));
    const auto params = model.params();
    model.checkpoint_hash = load_checkpoint_params(path, std::span(params));
    return model;
}

std::size_t FrameBitstream::serialized_size() const {
    return 4 + 1 + 1 + 1 + 1 + 8 + 16 + 4 + coord_bytes.size() + 2 + entropy_header.size() + 4 +
           feature_bytes.size();
}

std::vector<uint8_t> FrameBitstream::serialize() const {
    std::vector<uint8_t> out;
    out.reserve(serialized_size());
    for (char m : {'D', 'P', 'C', 'C'}) out.push_back(uint8_t(m));
    out.push_back(version);
    out.push_back(frame_type);
    out.push_back(depth);
    out.push_back(bottleneck);
    put_u64(out, checkpoint_hash);
    put_u32(out, n_full);
    put_u32(out, n_1ds);
    put_u32(out, n_2ds);
    put_u32(out, n_3ds);
    put_u32(out, uint32_t(coord_bytes.size()));
    out.insert(out.end(), coord_bytes.begin(), coord_bytes.end());
    if (entropy_header.size() > 0xffff) throw std::runtime_error("bitstream: entropy header too large");
    put_u16(out, uint16_t(entropy_header.size()));
    out.insert(out.end(), entropy_header.begin(), entropy_header.end());
    put_u32(out, uint32_t(feature_bytes.size()));
    out.insert(out.end(), feature_bytes.begin(), feature_bytes.end());
    return out;
}

FrameBitstream FrameBitstream::parse(std::span<const uint8_t> bytes, std::size_t* consumed) {
    ByteReader rd(bytes);
    const auto magic = rd.bytes(4);
    if (std::memcmp(magic.data(), "DPCC", 4) != 0)
        throw std::runtime_error("bitstream: bad magic");
    FrameBitstream fb;
    fb.version = rd.u8();
    if (fb.version != 1) throw std::runtime_error("bitstream: unsupported version");
    fb.frame_type = rd.u8();
    if (fb.frame_type > 1) throw std::runtime_error("bitstream: bad frame type");
    fb.depth = rd.u8();
    fb.bottleneck = rd.u8();
    fb.checkpoint_hash = rd.u64();
    fb.n_full = rd.u32();
    fb.n_1ds = rd.u32();
    fb.n_2ds = rd.u32();
    fb.n_3ds = rd.u32();
    if (!(fb.n_full >= fb.n_1ds && fb.n_1ds >= fb.n_2ds && fb.n_2ds >= fb.n_3ds && fb.n_3ds >= 1))
        throw std::runtime_error("bitstream: point counts not monotone");
    fb.coord_bytes = rd.bytes(rd.u32());
    fb.entropy_header = rd.bytes(rd.u16());
    fb.feature_bytes = rd.bytes(rd.u32());
    if (consumed) *consumed = rd.pos();
    return fb;
}

std::vector<uint8_t> make_entropy_header(uint32_t rows,
                                         const std::vector<std::pair<int, int>>& support) {
    std::vector<uint8_t> out;
    put_u32(out, rows);
    for (const auto& [lo, hi] : support) {
        if (lo < -32768 || hi > 32767 || lo > hi)
            throw std::invalid_argument("entropy header: support out of int16 range");
        put_u16(out, uint16_t(int16_t(lo)));
        put_u16(out, uint16_t(int16_t(hi)));
    }
    return out;
}

void parse_entropy_header(std::span<const uint8_t> bytes, uint32_t* rows,
                          std::vector<std::pair<int, int>>* support) {
    ByteReader rd(bytes);
    *rows = rd.u32();
    support->clear();
    if ((bytes.size() - 4) % 4 != 0) throw std::runtime_error("entropy header: bad length");
    const std::size_t channels = (bytes.size() - 4) / 4;
    for (std::size_t c = 0; c < channels; ++c) {
        const int lo = int16_t(rd.u16());
        const int hi = int16_t(rd.u16());
        if (lo > hi) throw std::runtime_error("entropy header: inverted support");
        support->emplace_back(lo, hi);
    }
}

namespace {

// Feature rows are visited in canonical coordinate order, channels fastest.
std::vector<uint8_t> encode_features(const Mat& q, const CdfTable& table) {
    RangeEncoder enc;
    for (int r = 0; r < q.rows; ++r)
        for (int c = 0; c < q.cols; ++c) {
            const double v = q(r, c);
            if (std::abs(v) > 2e9) throw std::runtime_error("encode: feature residual overflow");
            write_value(enc, table.channels[std::size_t(c)], int32_t(std::llround(v)));
        }
    return enc.finish();
}

Mat decode_features(std::span<const uint8_t> bytes, const CdfTable& table, int rows) {
    RangeDecoder dec(bytes);
    Mat q(rows, int(table.channels.size()));
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < q.cols; ++c)
            q(r, c) = double(read_value(dec, table.channels[std::size_t(c)]));
    return q;
}

// Shared synthesis path: runs the decoder on reconstructed bottleneck
// features and returns the geometry-only tensor the next frame predicts from.
SparseTensor run_decoder(CodecModel& model, const Mat& fbar, const CoordSetPtr& c3,
                         std::array<int, 3> counts, CoordCache& cc) {
    Tape t;
    const int node = t.track(fbar);
    const auto stages = model.decoder.forward(t, node, c3, counts, nullptr, cc);
    const CoordSetPtr out = stages[2].kept_coords;
    Mat ones(out->size(), 1, 1.0);
    SparseTensor recon;
    recon.coords = out;
    recon.feats = std::move(ones);
    recon.scale = 0;
    recon.depth = model.cfg.depth;
    return recon;
}

FrameBitstream assemble_frame(CodecModel& model, uint8_t frame_type,
                              const std::array<int, 4>& counts, const CoordSetPtr& c3,
                              const Mat& q) {
    const auto support = choose_support(model.prior, &q);
    const CdfTable table = build_cdf_tables(model.prior, support);

    FrameBitstream fb;
    fb.frame_type = frame_type;
    fb.depth = uint8_t(model.cfg.depth);
    fb.bottleneck = uint8_t(model.cfg.bottleneck);
    fb.checkpoint_hash = model.checkpoint_hash;
    fb.n_full = uint32_t(counts[0]);
    fb.n_1ds = uint32_t(counts[1]);
    fb.n_2ds = uint32_t(counts[2]);
    fb.n_3ds = uint32_t(counts[3]);
    fb.coord_bytes = octree_encode(*c3, model.cfg.depth - 3);
    fb.entropy_header = make_entropy_header(uint32_t(q.rows), support);
    fb.feature_bytes = encode_features(q, table);
    return fb;
}

struct ParsedStreams {
    CoordSetPtr c3;
    Mat q;
    std::array<int, 3> counts;  // keep targets for decoder stages
};

ParsedStreams open_frame(CodecModel& model, const FrameBitstream& fb) {
    if (fb.depth != model.cfg.depth) throw std::runtime_error("decode: depth mismatch");
    if (fb.bottleneck != model.cfg.bottleneck)
        throw std::runtime_error("decode: bottleneck width mismatch");
    if (fb.checkpoint_hash != model.checkpoint_hash)
        throw std::runtime_error("decode: checkpoint hash mismatch");

    ParsedStreams ps;
    ps.c3 = octree_decode(std::span(fb.coord_bytes), model.cfg.depth - 3);
    if (uint32_t(ps.c3->size()) != fb.n_3ds)
        throw std::runtime_error("decode: coordinate count mismatch");

    uint32_t rows = 0;
    std::vector<std::pair<int, int>> support;
    parse_entropy_header(std::span(fb.entropy_header), &rows, &support);
    if (rows != fb.n_3ds || int(support.size()) != model.cfg.bottleneck)
        throw std::runtime_error("decode: entropy header inconsistent");

    const CdfTable table = build_cdf_tables(model.prior, support);
    ps.q = decode_features(std::span(fb.feature_bytes), table, int(rows));
    ps.counts = {int(fb.n_2ds), int(fb.n_1ds), int(fb.n_full)};
    return ps;
}

}  // namespace

EncodedFrame encode_intra(CodecModel& model, const SparseTensor& frame, CoordCache& cc) {
    check_frame_input(model.cfg, frame, "encode_intra");
    Tape t;
    const MultiscaleFeatures ms = model.encoder.forward(t, frame, cc);
    const std::array<int, 4> counts = {frame.num_points(), ms.s[1].coords->size(),
                                       ms.s[2].coords->size(), ms.s[3].coords->size()};
    const Mat q = quantize(t.val(ms.s[3].node));

    EncodedFrame ef;
    ef.stream = assemble_frame(model, 0, counts, ms.s[3].coords, q);
    ef.recon = run_decoder(model, q, ms.s[3].coords,
                           {counts[2], counts[1], counts[0]}, cc);
    return ef;
}

SparseTensor decode_intra(CodecModel& model, const FrameBitstream& fb, CoordCache& cc) {
    if (fb.frame_type != 0) throw std::runtime_error("decode_intra: not an intra frame");
    ParsedStreams ps = open_frame(model, fb);
    return run_decoder(model, ps.q, ps.c3, ps.counts, cc);
}

EncodedFrame encode_inter(CodecModel& model, const SparseTensor& frame,
                          const SparseTensor& prev_recon, CoordCache& cc) {
    check_frame_input(model.cfg, frame, "encode_inter");
    check_frame_input(model.cfg, prev_recon, "encode_inter(reference)");

    Tape t;
    const MultiscaleFeatures ref = model.encoder.forward(t, prev_recon, cc);
    const MultiscaleFeatures cur = model.encoder.forward(t, frame, cc);
    const int pred_node = model.predictor.forward(t, ref, cur.s[3].coords, cc);

    const Mat& f = t.val(cur.s[3].node);
    const Mat& fhat = t.val(pred_node);
    Mat residual = f;
    for (std::size_t i = 0; i < residual.size(); ++i) residual.v[i] -= fhat.v[i];
    const Mat q = quantize(residual);

    Mat fbar = fhat;
    for (std::size_t i = 0; i < fbar.size(); ++i) fbar.v[i] += q.v[i];

    const std::array<int, 4> counts = {frame.num_points(), cur.s[1].coords->size(),
                                       cur.s[2].coords->size(), cur.s[3].coords->size()};
    EncodedFrame ef;
    ef.stream = assemble_frame(model, 1, counts, cur.s[3].coords, q);
    ef.recon = run_decoder(model, fbar, cur.s[3].coords, {counts[2], counts[1], counts[0]}, cc);
    return ef;
}

SparseTensor decode_inter(CodecModel& model, const FrameBitstream& fb,
                          const SparseTensor& prev_recon, CoordCache& cc) {
    if (fb.frame_type != 1) throw std::runtime_error("decode_inter: not an inter frame");
    check_frame_input(model.cfg, prev_recon, "decode_inter(reference)");
    ParsedStreams ps = open_frame(model, fb);

    Tape t;
    const MultiscaleFeatures ref = model.encoder.forward(t, prev_recon, cc);
    const int pred_node = model.predictor.forward(t, ref, ps.c3, cc);

    Mat fbar = t.val(pred_node);
    for (std::size_t i = 0; i < fbar.size(); ++i) fbar.v[i] += ps.q.v[i];
    return run_decoder(model, fbar, ps.c3, ps.counts, cc);
}

std::vector<uint8_t> encode_sequence(CodecModel& model, const std::vector<SparseTensor>& frames,
                                     int gop, std::vector<SparseTensor>* recons) {
    if (frames.empty()) throw std::invalid_argument("encode_sequence: no frames");
    if (gop < 1) throw std::invalid_argument("encode_sequence: gop must be >= 1");

    std::vector<uint8_t> out;
    put_u32(out, uint32_t(frames.size()));
    SparseTensor prev;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        CoordCache cc;
        EncodedFrame ef;
        if (i % std::size_t(gop) == 0)
            ef = encode_intra(model, frames[i], cc);
        else
            ef = encode_inter(model, frames[i], prev, cc);
        const auto bytes = ef.stream.serialize();
        out.insert(out.end(), bytes.begin(), bytes.end());
        prev = std::move(ef.recon);
        if (recons) recons->push_back(prev);
    }
    return out;
}

std::vector<SparseTensor> decode_sequence(CodecModel& model, std::span<const uint8_t> bytes) {
    if (bytes.size() < 4) throw std::runtime_error("decode_sequence: truncated");
    uint32_t count = 0;
    for (int i = 0; i < 4; ++i) count |= uint32_t(bytes[std::size_t(i)]) << (8 * i);
    std::size_t pos = 4;

    std::vector<SparseTensor> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        std::size_t consumed = 0;
        const FrameBitstream fb = FrameBitstream::parse(bytes.subspan(pos), &consumed);
        pos += consumed;
        CoordCache cc;
        if (fb.frame_type == 0) {
            out.push_back(decode_intra(model, fb, cc));
        } else {
            if (out.empty()) throw std::runtime_error("decode_sequence: inter frame without reference");
            out.push_back(decode_inter(model, fb, out.back(), cc));
        }
    }
    if (pos != bytes.size()) throw std::runtime_error("decode_sequence: trailing bytes");
    return out;
}

LossTerms train_step(CodecModel& model, const SparseTensor& prev, const SparseTensor& cur,
                     double lambda, AdamOptimizer& opt, Rng& rng, CoordCache& cc) {
    check_frame_input(model.cfg, prev, "train_step(reference)");
    check_frame_input(model.cfg, cur, "train_step");
    if (lambda < 0.0) throw std::invalid_argument("train_step: lambda must be nonnegative");

    Tape t;
    const MultiscaleFeatures ref = model.encoder.forward(t, prev, cc);
    const MultiscaleFeatures gt = model.encoder.forward(t, cur, cc);
    const int pred_node = model.predictor.forward(t, ref, gt.s[3].coords, cc);

    // residual with uniform quantization noise stands in for rounding
    const int res_node = tp_sub(t, gt.s[3].node, pred_node);
    Mat noise(t.val(res_node).rows, t.val(res_node).cols);
    for (double& e : noise.v) e = rng.uniform(-0.5, 0.5);
    const int noisy_res = tp_add_const(t, res_node, noise);
    const int bits_node = model.prior.tape_bits(t, noisy_res);
    const int rate_node = tp_axpby(t, 1.0 / double(cur.num_points()), bits_node, 0.0, bits_node);

    const int fbar_node = tp_add(t, pred_node, noisy_res);
    const std::array<CoordSetPtr, 3> teacher = {gt.s[2].coords, gt.s[1].coords, cur.coords};
    // half the steps run the decoder on its own pruned candidates, as it must
    // at decode time; labels stay ground-truth membership either way
    const bool self_candidates = rng.uniform(0.0, 1.0) < 0.5;
    const auto stages = model.decoder.forward(t, fbar_node, gt.s[3].coords,
                                              {gt.s[2].coords->size(), gt.s[1].coords->size(),
                                               cur.num_points()},
                                              self_candidates ? nullptr : &teacher, cc);

    std::array<int, 3> bce_nodes{};
    for (int i = 0; i < 3; ++i) {
        const CoordSet& truth = *teacher[std::size_t(i)];
        const CoordSet& cand = *stages[std::size_t(i)].candidates;
        std::vector<double> labels(std::size_t(cand.size()), 0.0);
        for (int r = 0; r < cand.size(); ++r)
            if (truth.find(cand[r]) >= 0) labels[std::size_t(r)] = 1.0;
        bce_nodes[std::size_t(i)] =
            tp_bce_with_logits(t, stages[std::size_t(i)].logit_node, std::move(labels));
    }
    const auto& w = model.cfg.bce_weights;
    const int d01 = tp_axpby(t, w[0], bce_nodes[0], w[1], bce_nodes[1]);
    const int dist_node = tp_axpby(t, 1.0, d01, w[2], bce_nodes[2]);
    const int loss_node = tp_axpby(t, 1.0, rate_node, lambda, dist_node);

    LossTerms terms;
    terms.rate_bpp = t.val(rate_node).v[0];
    terms.distortion_bce = t.val(dist_node).v[0];
    terms.lambda = lambda;
    terms.total = t.val(loss_node).v[0];

    t.backward(loss_node);
    opt.step();
    return terms;
}

}  // namespace dpcc
