#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dpcc/autodiff.hpp"
#include "dpcc/mat.hpp"
#include "dpcc/range_coder.hpp"
#include "dpcc/rng.hpp"

namespace dpcc {

// Fully factorized learned prior: one monotone CDF per feature channel,
// built from four affine stages of width three with softplus-positive
// matrices and tanh gating, closed by a sigmoid. Integer likelihoods are
// CDF differences across the unit bin, clamped below at 1e-9.
class FactorizedPrior {
  public:
    static constexpr double kMinLikelihood = 1e-9;

    FactorizedPrior() = default;
    FactorizedPrior(int channels, Rng& rng);

    int channels() const { return channels_; }

    double cdf(int channel, double x) const;

    // p per element; y columns are channels
    Mat likelihood(const Mat& y) const;

    // adds U(-0.5, 0.5) per element, then evaluates the unit-bin likelihood
    Mat noisy_likelihood(const Mat& y, Rng& rng) const;

    // sum over elements of -log2 p(element)
    double estimate_bits(const Mat& y) const;

    // training-time bits node; gradients flow to y and to the prior
    int tape_bits(Tape& t, int y);

    // smallest [lo, hi] around zero whose tails each hold <= tail_mass/2
    std::pair<int, int> default_support(int channel, double tail_mass = 1e-6) const;

    std::vector<Parameter*> params();

  private:
    struct Resolved {  // softplus/tanh-applied copies for one channel
        double h1[3], b1[3], a1[3];
        double h2[9], b2[3], a2[3];
        double h3[9], b3[3], a3[3];
        double h4[3], b4;
    };
    struct Scratch {  // saved pre-activations for one evaluation
        double z1[3], z2[3], z3[3], u1[3], u2[3], u3[3];
        double logit;
    };

    Resolved resolve(int channel) const;
    static double eval_logit(const Resolved& r, double x, Scratch& s);
    // chain rule for one evaluation; returns d logit / d x and accumulates
    // parameter gradients scaled by d_logit
    double backprop_logit(int channel, const Resolved& r, const Scratch& s, double x,
                          double d_logit);

    int channels_ = 0;
    Parameter h_[4];  // raw (pre-softplus) matrices, channel-major rows
    Parameter b_[4];
    Parameter a_[3];  // raw (pre-tanh) gates

    friend struct PriorTestAccess;
};

// Round half away from zero, elementwise.
Mat quantize(const Mat& y);

// Quantized cumulative frequencies for one channel; total is always 2^16 and
// every symbol keeps frequency >= 1. The last symbol is an escape that
// switches to a fixed uniform 32-bit raw code.
struct ChannelCdf {
    int32_t v_min = 0;
    int32_t v_max = -1;
    std::vector<uint32_t> cum;  // size num_symbols()+1, cum.back() == 65536

    int num_symbols() const { return int(cum.size()) - 1; }
    int escape_symbol() const { return num_symbols() - 1; }
};

struct CdfTable {
    std::vector<ChannelCdf> channels;
};

// Deterministic function of the prior and the requested per-channel bounds,
// so encoder and decoder derive identical tables from a shared checkpoint.
CdfTable build_cdf_tables(const FactorizedPrior& prior,
                          const std::vector<std::pair<int, int>>& support);

// Default support, optionally widened (within int16) to cover observed data.
std::vector<std::pair<int, int>> choose_support(const FactorizedPrior& prior,
                                                const Mat* quantized = nullptr);

void write_value(RangeEncoder& enc, const ChannelCdf& cdf, int32_t v);
int32_t read_value(RangeDecoder& dec, const ChannelCdf& cdf);

}  // namespace dpcc
