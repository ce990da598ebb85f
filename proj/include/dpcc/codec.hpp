#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dpcc/autodiff.hpp"
#include "dpcc/config.hpp"
#include "dpcc/entropy_model.hpp"
#include "dpcc/sparse_tensor.hpp"

namespace dpcc {

// One scale of the analysis pyramid: coordinates plus the tape node that
// holds the features living on them.
struct ScaleFeat {
    CoordSetPtr coords;
    int node = -1;
};

// s[0] is the input at full resolution, s[3] the bottleneck.
struct MultiscaleFeatures {
    std::array<ScaleFeat, 4> s;
};

// Shared analysis network: three stride-2 stages with residual blocks, then
// a projection to the bottleneck width. The same instance processes both the
// reference and the current frame.
struct EncoderNet {
    std::array<ConvLayer, 3> down;
    std::array<std::vector<IRBlock>, 3> irbs;
    ConvLayer to_bottleneck;

    EncoderNet() = default;
    EncoderNet(const CodecConfig& cfg, Rng& rng);
    MultiscaleFeatures forward(Tape& t, const SparseTensor& p0, CoordCache& cc);
    void collect(std::vector<Parameter*>& out);
};

// Synthesis network: three upsample stages, each ending in an occupancy head
// whose logits drive pruning back to the transmitted point counts.
struct DecoderNet {
    std::array<ConvLayer, 3> up;
    std::array<std::vector<IRBlock>, 3> irbs;
    std::array<ConvLayer, 3> head;

    struct StageOut {
        CoordSetPtr candidates;
        int feat_node = -1;   // features on the candidates
        int logit_node = -1;  // occupancy logits, one column
        std::vector<int> kept_rows;
        CoordSetPtr kept_coords;
        int kept_node = -1;  // features restricted to the kept rows
    };

    DecoderNet() = default;
    DecoderNet(const CodecConfig& cfg, Rng& rng);
    // counts: points to keep per stage (scales 2, 1, 0). When teacher is
    // given (training), candidates present in the matching set are kept
    // instead of the top-k by logit.
    std::array<StageOut, 3> forward(Tape& t, int bottleneck_node, const CoordSetPtr& c3,
                                    std::array<int, 3> counts,
                                    const std::array<CoordSetPtr, 3>* teacher, CoordCache& cc);
    void collect(std::vector<Parameter*>& out);
};

// Maps the reference frame's multiscale features onto the current frame's
// bottleneck coordinates: three downscale+concat stages over the reference,
// then one convolution evaluated on the target coordinate set.
struct PredictorNet {
    std::array<ConvLayer, 3> down;
    std::array<std::vector<IRBlock>, 3> irbs;
    ConvLayer target;

    PredictorNet() = default;
    PredictorNet(const CodecConfig& cfg, Rng& rng);
    int forward(Tape& t, const MultiscaleFeatures& ref, const CoordSetPtr& target_coords,
                CoordCache& cc);
    void collect(std::vector<Parameter*>& out);
};

struct CodecModel {
    CodecConfig cfg;
    EncoderNet encoder;
    DecoderNet decoder;
    PredictorNet predictor;
    FactorizedPrior prior;
    uint64_t checkpoint_hash = 0;

    explicit CodecModel(const CodecConfig& config);
    std::vector<Parameter*> params();
};

// Both set model.checkpoint_hash to the hash of the file on disk.
uint64_t save_model(CodecModel& model, const std::string& path);
CodecModel load_model(const std::string& path);

// Frame container, all little-endian:
//   "DPCC" | version u8 | frame_type u8 | depth u8 | bottleneck u8 |
//   checkpoint hash u64 | n_full, n_1ds, n_2ds, n_3ds u32 |
//   coord substream (u32 length + bytes) |
//   entropy header (u16 length + bytes) |
//   feature substream (u32 length + bytes)
// The entropy header holds the element row count and per-channel support
// bounds used to build the frequency tables.
struct FrameBitstream {
    uint8_t version = 1;
    uint8_t frame_type = 0;  // 0 intra, 1 inter
    uint8_t depth = 0;
    uint8_t bottleneck = 0;
    uint64_t checkpoint_hash = 0;
    uint32_t n_full = 0, n_1ds = 0, n_2ds = 0, n_3ds = 0;
    std::vector<uint8_t> coord_bytes;
    std::vector<uint8_t> entropy_header;
    std::vector<uint8_t> feature_bytes;

    std::vector<uint8_t> serialize() const;
    static FrameBitstream parse(std::span<const uint8_t> bytes, std::size_t* consumed = nullptr);
    std::size_t serialized_size() const;
};

std::vector<uint8_t> make_entropy_header(uint32_t rows,
                                         const std::vector<std::pair<int, int>>& support);
void parse_entropy_header(std::span<const uint8_t> bytes, uint32_t* rows,
                          std::vector<std::pair<int, int>>* support);

struct EncodedFrame {
    FrameBitstream stream;
    SparseTensor recon;  // closed-loop reconstruction, geometry only
};

EncodedFrame encode_intra(CodecModel& model, const SparseTensor& frame, CoordCache& cc);
EncodedFrame encode_inter(CodecModel& model, const SparseTensor& frame,
                          const SparseTensor& prev_recon, CoordCache& cc);
SparseTensor decode_intra(CodecModel& model, const FrameBitstream& fb, CoordCache& cc);
SparseTensor decode_inter(CodecModel& model, const FrameBitstream& fb,
                          const SparseTensor& prev_recon, CoordCache& cc);

// Sequence container: u32 frame count, then frames back to back. Frame 0 of
// every group is intra, the rest predict from the previous reconstruction.
std::vector<uint8_t> encode_sequence(CodecModel& model, const std::vector<SparseTensor>& frames,
                                     int gop, std::vector<SparseTensor>* recons = nullptr);
std::vector<SparseTensor> decode_sequence(CodecModel& model, std::span<const uint8_t> bytes);

struct LossTerms {
    double rate_bpp = 0.0;        // estimated bits per input point
    double distortion_bce = 0.0;  // weighted occupancy BCE over scales 2, 1, 0
    double lambda = 0.0;
    double total = 0.0;  // rate_bpp + lambda * distortion_bce
};

// One rate-distortion descent step on a frame pair; consumes the gradients.
LossTerms train_step(CodecModel& model, const SparseTensor& prev, const SparseTensor& cur,
                     double lambda, AdamOptimizer& opt, Rng& rng, CoordCache& cc);

}  // namespace dpcc
