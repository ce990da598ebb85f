#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace dpcc {

// Every tunable lives here. Files are plain key=value lines ('#' comments);
// serialize() emits a canonical form that also doubles as the checkpoint
// manifest, so a model and its settings travel together.
struct CodecConfig {
    int depth = 10;
    std::array<int, 3> enc_widths = {32, 64, 64};  // encoder stage outputs, scales 1..3
    int bottleneck = 8;
    std::array<int, 3> dec_widths = {64, 32, 16};  // decoder stage outputs, scales 2..0
    int predictor_hidden = 64;
    int irb_per_stage = 3;
    double lambda = 4.0;
    int gop = 8;
    double lr = 8e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 1;
    std::array<double, 3> bce_weights = {1.0, 1.0, 1.0};  // scales 2, 1, 0

    std::string serialize() const;
    static CodecConfig parse(const std::string& text);
    static CodecConfig load(const std::string& path);

    // throws std::invalid_argument on any inconsistent setting
    void validate() const;
};

}  // namespace dpcc
