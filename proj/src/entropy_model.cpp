#include "dpcc/entropy_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dpcc {

namespace {

constexpr int kDims[5] = {1, 3, 3, 3, 1};  // per-stage widths
constexpr double kInitScale = 3.0;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
// d softplus(raw) / d raw, recovered from the resolved value
double softplus_slope(double resolved) { return 1.0 - std::exp(-resolved); }

}  // namespace

FactorizedPrior::FactorizedPrior(int channels, Rng& rng) : channels_(channels) {
    if (channels < 1) throw std::invalid_argument("FactorizedPrior: bad channel count");
    const double scale = std::pow(kInitScale, 0.25);
    for (int k = 0; k < 4; ++k) {
        const int rows = kDims[k + 1];
        const int cols = kDims[k];
        const double hinit = std::log(std::expm1(1.0 / (scale * rows)));
        Mat h(channels, rows * cols, hinit);
        h_[k] = Parameter("prior.h" + std::to_string(k), std::move(h));
        Mat bm(channels, rows);
        for (double& e : bm.v) e = rng.uniform(-0.5, 0.5);
        b_[k] = Parameter("prior.b" + std::to_string(k), std::move(bm));
        if (k < 3) a_[k] = Parameter("prior.a" + std::to_string(k), Mat(channels, rows));
    }
}

FactorizedPrior::Resolved FactorizedPrior::resolve(int channel) const {
    Resolved r;
    const auto fill = [&](const Parameter& p, double* dst, int n, bool is_h) {
        const double* src = p.value.row(channel);
        for (int i = 0; i < n; ++i) dst[i] = is_h ? softplus(src[i]) : src[i];
    };
    fill(h_[0], r.h1, 3, true);
    fill(h_[1], r.h2, 9, true);
    fill(h_[2], r.h3, 9, true);
    fill(h_[3], r.h4, 3, true);
    fill(b_[0], r.b1, 3, false);
    fill(b_[1], r.b2, 3, false);
    fill(b_[2], r.b3, 3, false);
    r.b4 = b_[3].value(channel, 0);
    const auto gate = [&](const Parameter& p, double* dst) {
        const double* src = p.value.row(channel);
        for (int i = 0; i < 3; ++i) dst[i] = std::tanh(src[i]);
    };
    gate(a_[0], r.a1);
    gate(a_[1], r.a2);
    gate(a_[2], r.a3);
    return r;
}

double FactorizedPrior::eval_logit(const Resolved& r, double x, Scratch& s) {
    double u0 = x;
    for (int i = 0; i < 3; ++i) {
        s.z1[i] = r.h1[i] * u0 + r.b1[i];
        s.u1[i] = s.z1[i] + r.a1[i] * std::tanh(s.z1[i]);
    }
    for (int i = 0; i < 3; ++i) {
        double z = r.b2[i];
        for (int j = 0; j < 3; ++j) z += r.h2[i * 3 + j] * s.u1[j];
        s.z2[i] = z;
        s.u2[i] = z + r.a2[i] * std::tanh(z);
    }
    for (int i = 0; i < 3; ++i) {
        double z = r.b3[i];
        for (int j = 0; j < 3; ++j) z += r.h3[i * 3 + j] * s.u2[j];
        s.z3[i] = z;
        s.u3[i] = z + r.a3[i] * std::tanh(z);
    }
    double z4 = r.b4;
    for (int j = 0; j < 3; ++j) z4 += r.h4[j] * s.u3[j];
    s.logit = z4;
    return z4;
}

double FactorizedPrior::backprop_logit(int channel, const Resolved& r, const Scratch& s,
                                       double x, double d_logit) {
    double du3[3], du2[3], du1[3];
    // stage 4
    {
        double* gh = h_[3].grad.row(channel);
        for (int j = 0; j < 3; ++j) {
            gh[j] += d_logit * s.u3[j] * softplus_slope(r.h4[j]);
            du3[j] = d_logit * r.h4[j];
        }
        b_[3].grad(channel, 0) += d_logit;
    }
    // stage 3
    double dz3[3];
    {
        double* gh = h_[2].grad.row(channel);
        double* gb = b_[2].grad.row(channel);
        double* ga = a_[2].grad.row(channel);
        for (int i = 0; i < 3; ++i) {
            const double th = std::tanh(s.z3[i]);
            dz3[i] = du3[i] * (1.0 + r.a3[i] * (1.0 - th * th));
            ga[i] += du3[i] * th * (1.0 - r.a3[i] * r.a3[i]);
            gb[i] += dz3[i];
        }
        for (int j = 0; j < 3; ++j) du2[j] = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                gh[i * 3 + j] += dz3[i] * s.u2[j] * softplus_slope(r.h3[i * 3 + j]);
                du2[j] += dz3[i] * r.h3[i * 3 + j];
            }
    }
    // stage 2
    double dz2[3];
    {
        double* gh = h_[1].grad.row(channel);
        double* gb = b_[1].grad.row(channel);
        double* ga = a_[1].grad.row(channel);
        for (int i = 0; i < 3; ++i) {
            const double th = std::tanh(s.z2[i]);
            dz2[i] = du2[i] * (1.0 + r.a2[i] * (1.0 - th * th));
            ga[i] += du2[i] * th * (1.0 - r.a2[i] * r.a2[i]);
            gb[i] += dz2[i];
        }
        for (int j = 0; j < 3; ++j) du1[j] = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                gh[i * 3 + j] += dz2[i] * s.u1[j] * softplus_slope(r.h2[i * 3 + j]);
                du1[j] += dz2[i] * r.h2[i * 3 + j];
            }
    }
    // stage 1
    double dx = 0.0;
    {
        double* gh = h_[0].grad.row(channel);
        double* gb = b_[0].grad.row(channel);
        double* ga = a_[0].grad.row(channel);
        for (int i = 0; i < 3; ++i) {
            const double th = std::tanh(s.z1[i]);
            const double dz1 = du1[i] * (1.0 + r.a1[i] * (1.0 - th * th));
            ga[i] += du1[i] * th * (1.0 - r.a1[i] * r.a1[i]);
            gb[i] += dz1;
            gh[i] += dz1 * x * softplus_slope(r.h1[i]);
            dx += dz1 * r.h1[i];
        }
    }
    return dx;
}

double FactorizedPrior::cdf(int channel, double x) const {
    if (channel < 0 || channel >= channels_)
        throw std::invalid_argument("FactorizedPrior::cdf: bad channel");
    Scratch s;
    return sigmoid(eval_logit(resolve(channel), x, s));
}

Mat FactorizedPrior::likelihood(const Mat& y) const {
    if (y.cols != channels_) throw std::invalid_argument("likelihood: channel mismatch");
    Mat p(y.rows, y.cols);
    Scratch s;
    for (int c = 0; c < y.cols; ++c) {
        const Resolved r = resolve(c);
        for (int i = 0; i < y.rows; ++i) {
            const double x = y(i, c);
            const double hi = sigmoid(eval_logit(r, x + 0.5, s));
            const double lo = sigmoid(eval_logit(r, x - 0.5, s));
            p(i, c) = std::max(hi - lo, kMinLikelihood);
        }
    }
    return p;
}

Mat FactorizedPrior::noisy_likelihood(const Mat& y, Rng& rng) const {
    Mat noisy = y;
    for (double& e : noisy.v) e += rng.uniform(-0.5, 0.5);
    return likelihood(noisy);
}

double FactorizedPrior::estimate_bits(const Mat& y) const {
    const Mat p = likelihood(y);
    double bits = 0.0;
    for (double e : p.v) bits -= std::log2(e);
    return bits;
}

int FactorizedPrior::tape_bits(Tape& t, int y) {
    const Mat& vy = t.val(y);
    if (vy.cols != channels_) throw std::invalid_argument("tape_bits: channel mismatch");

    double bits = 0.0;
    Scratch s;
    for (int c = 0; c < vy.cols; ++c) {
        const Resolved r = resolve(c);
        for (int i = 0; i < vy.rows; ++i) {
            const double x = vy(i, c);
            const double hi = sigmoid(eval_logit(r, x + 0.5, s));
            const double lo = sigmoid(eval_logit(r, x - 0.5, s));
            bits -= std::log2(std::max(hi - lo, kMinLikelihood));
        }
    }
    const int out = t.track(Mat(1, 1, bits));

    FactorizedPrior* self = this;
    t.record([y, out, self](Tape& tp) {
        const double g = tp.grad(out).v[0];
        if (g == 0.0) return;
        const Mat& vy = tp.val(y);
        Mat& gy = tp.grad(y);
        constexpr double kInvLn2 = 1.4426950408889634;  // 1/ln 2
        Scratch shi, slo;
        for (int c = 0; c < vy.cols; ++c) {
            const Resolved r = self->resolve(c);
            for (int i = 0; i < vy.rows; ++i) {
                const double x = vy(i, c);
                const double lhi = eval_logit(r, x + 0.5, shi);
                const double llo = eval_logit(r, x - 0.5, slo);
                const double fhi = sigmoid(lhi);
                const double flo = sigmoid(llo);
                const double p = fhi - flo;
                if (p < kMinLikelihood) continue;  // clamped: flat region
                // d(-log2 p) = -(1 / (p ln 2)) dp
                const double dp = -g * kInvLn2 / p;
                const double dhi = dp * fhi * (1.0 - fhi);
                const double dlo = -dp * flo * (1.0 - flo);
                double dx = self->backprop_logit(c, r, shi, x + 0.5, dhi);
                dx += self->backprop_logit(c, r, slo, x - 0.5, dlo);
                gy(i, c) += dx;
            }
        }
    });
    return out;
}

std::pair<int, int> FactorizedPrior::default_support(int channel, double tail_mass) const {
    const Resolved r = resolve(channel);
    Scratch s;
    const auto lower_tail = [&](int v) { return sigmoid(eval_logit(r, v - 0.5, s)); };
    const auto upper_tail = [&](int v) { return 1.0 - sigmoid(eval_logit(r, v + 0.5, s)); };
    int lo = -2, hi = 2;
    while (lo > -4096 && lower_tail(lo) > tail_mass / 2) --lo;
    while (hi < 4096 && upper_tail(hi) > tail_mass / 2) ++hi;
    return {lo, hi};
}

std::vector<Parameter*> FactorizedPrior::params() {
    std::vector<Parameter*> out;
    for (auto& p : h_) out.push_back(&p);
    for (auto& p : b_) out.push_back(&p);
    for (auto& p : a_) out.push_back(&p);
    return out;
}

Mat quantize(const Mat& y) {
    Mat q = y;
    for (double& e : q.v) e = double(std::llround(e));
    return q;
}

CdfTable build_cdf_tables(const FactorizedPrior& prior,
                          const std::vector<std::pair<int, int>>& support) {
    if (int(support.size()) != prior.channels())
        throw std::invalid_argument("build_cdf_tables: support size mismatch");
    constexpr uint32_t kTotal = 1u << 16;

    CdfTable table;
    table.channels.resize(support.size());
    for (int c = 0; c < prior.channels(); ++c) {
        const auto [lo, hi] = support[std::size_t(c)];
        if (lo > 0 || hi < 0 || hi - lo > 60000)
            throw std::invalid_argument("build_cdf_tables: bad support bounds");
        const int nvals = hi - lo + 1;
        const int nsym = nvals + 1;  // + escape

        std::vector<double> prob(std::size_t(nsym), 0.0);
        double covered = 0.0;
        double prev = prior.cdf(c, lo - 0.5);
        for (int v = lo; v <= hi; ++v) {
            const double cur = prior.cdf(c, v + 0.5);
            const double p = std::max(cur - prev, 0.0);
            prob[std::size_t(v - lo)] = p;
            covered += p;
            prev = cur;
        }
        prob[std::size_t(nsym - 1)] = std::max(1.0 - covered, 0.0);  // escape mass

        std::vector<uint32_t> freq(prob.size(), 0u);
        uint64_t sum = 0;
        for (int s = 0; s < nsym; ++s) {
            freq[std::size_t(s)] =
                std::max<uint32_t>(1, uint32_t(std::llround(prob[std::size_t(s)] * kTotal)));
            sum += freq[std::size_t(s)];
        }
        int64_t diff = int64_t(kTotal) - int64_t(sum);
        while (diff != 0) {
            // adjust the currently largest frequency, ties toward lower index
            int arg = 0;
            for (int s = 1; s < nsym; ++s)
                if (freq[std::size_t(s)] > freq[std::size_t(arg)]) arg = s;
            if (diff > 0) {
                freq[std::size_t(arg)] += uint32_t(diff);
                diff = 0;
            } else {
                const uint32_t dec =
                    uint32_t(std::min<int64_t>(-diff, int64_t(freq[std::size_t(arg)]) - 1));
                if (dec == 0) throw std::runtime_error("build_cdf_tables: cannot normalize");
                freq[std::size_t(arg)] -= dec;
                diff += dec;
            }
        }

        ChannelCdf& ch = table.channels[std::size_t(c)];
        ch.v_min = lo;
        ch.v_max = hi;
        ch.cum.resize(std::size_t(nsym) + 1);
        ch.cum[0] = 0;
        for (int s = 0; s < nsym; ++s) ch.cum[std::size_t(s) + 1] = ch.cum[std::size_t(s)] + freq[std::size_t(s)];
    }
    return table;
}

std::vector<std::pair<int, int>> choose_support(const FactorizedPrior& prior,
                                                const Mat* quantized) {
    std::vector<std::pair<int, int>> support;
    support.reserve(std::size_t(prior.channels()));
    for (int c = 0; c < prior.channels(); ++c) {
        auto [lo, hi] = prior.default_support(c);
        if (quantized) {
            for (int i = 0; i < quantized->rows; ++i) {
                const double v = (*quantized)(i, c);
                if (v < lo) lo = std::max(int(v), -30000);
                if (v > hi) hi = std::min(int(v), 30000);
            }
        }
        support.emplace_back(lo, hi);
    }
    return support;
}

namespace {
uint32_t zigzag(int32_t v) { return (uint32_t(v) << 1) ^ uint32_t(v >> 31); }
int32_t unzigzag(uint32_t u) { return int32_t(u >> 1) ^ -int32_t(u & 1); }
}  // namespace

void write_value(RangeEncoder& enc, const ChannelCdf& cdf, int32_t v) {
    if (v >= cdf.v_min && v <= cdf.v_max) {
        const int s = int(v - cdf.v_min);
        enc.encode(cdf.cum[std::size_t(s)], cdf.cum[std::size_t(s) + 1] - cdf.cum[std::size_t(s)],
                   1u << 16);
    } else {
        const int esc = cdf.escape_symbol();
        enc.encode(cdf.cum[std::size_t(esc)],
                   cdf.cum[std::size_t(esc) + 1] - cdf.cum[std::size_t(esc)], 1u << 16);
        const uint32_t u = zigzag(v);
        enc.encode_raw(u >> 16, 16);
        enc.encode_raw(u & 0xffffu, 16);
    }
}

int32_t read_value(RangeDecoder& dec, const ChannelCdf& cdf) {
    const uint32_t target = dec.decode_freq(1u << 16);
    // cum is nondecreasing: find the symbol whose interval holds target
    const auto it = std::upper_bound(cdf.cum.begin(), cdf.cum.end(), target);
    const int s = int(it - cdf.cum.begin()) - 1;
    dec.decode_update(cdf.cum[std::size_t(s)],
                      cdf.cum[std::size_t(s) + 1] - cdf.cum[std::size_t(s)]);
    if (s != cdf.escape_symbol()) return cdf.v_min + s;
    const uint32_t hi = dec.decode_raw(16);
    const uint32_t lo = dec.decode_raw(16);
    return unzigzag((hi << 16) | lo);
}

}  // namespace dpcc
