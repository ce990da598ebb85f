#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace dpcc {

// Byte-oriented range coder: 32-bit range, 64-bit low to absorb carries,
// renormalization emits one byte whenever range drops below 2^24. Pure
// integer arithmetic; cumulative frequencies must satisfy
// cum + freq <= total <= 2^16 and freq >= 1.
class RangeEncoder {
  public:
    void encode(uint32_t cum, uint32_t freq, uint32_t total) {
        range_ /= total;
        low_ += uint64_t(cum) * range_;
        range_ *= freq;
        while (range_ < kTop) {
            range_ <<= 8;
            shift_low();
        }
    }

    // bits must be <= 16
    void encode_raw(uint32_t value, int bits) { encode(value, 1, uint32_t(1) << bits); }

    std::vector<uint8_t> finish() {
        for (int i = 0; i < 5; ++i) shift_low();
        return std::move(out_);
    }

    std::size_t bytes_pending() const { return out_.size(); }

  private:
    static constexpr uint32_t kTop = uint32_t(1) << 24;

    void shift_low() {
        if (uint32_t(low_) < 0xff000000u || (low_ >> 32) != 0) {
            uint8_t carry = uint8_t(low_ >> 32);
            do {
                out_.push_back(uint8_t(cache_ + carry));
                cache_ = 0xff;
            } while (--pending_ != 0);
            cache_ = uint8_t(low_ >> 24);
        }
        ++pending_;
        low_ = (low_ & 0x00ffffffull) << 8;  // cached byte must not re-enter the carry
    }

    uint64_t low_ = 0;
    uint32_t range_ = 0xffffffffu;
    uint8_t cache_ = 0;
    uint64_t pending_ = 1;  // first shift flushes the initial zero cache byte
    std::vector<uint8_t> out_;
};

class RangeDecoder {
  public:
    explicit RangeDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
        for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
    }

    // cumulative frequency of the next symbol, in [0, total)
    uint32_t decode_freq(uint32_t total) {
        range_ /= total;
        uint32_t v = code_ / range_;
        return v < total ? v : total - 1;
    }

    void decode_update(uint32_t cum, uint32_t freq) {
        code_ -= cum * range_;
        range_ *= freq;
        while (range_ < kTop) {
            code_ = (code_ << 8) | next_byte();
            range_ <<= 8;
        }
    }

    uint32_t decode_raw(int bits) {
        const uint32_t total = uint32_t(1) << bits;
        const uint32_t v = decode_freq(total);
        decode_update(v, 1);
        return v;
    }

    std::size_t bytes_consumed() const { return pos_; }

  private:
    static constexpr uint32_t kTop = uint32_t(1) << 24;

    uint8_t next_byte() {
        if (pos_ >= bytes_.size()) throw std::runtime_error("RangeDecoder: truncated stream");
        return bytes_[pos_++];
    }

    std::span<const uint8_t> bytes_;
    uint32_t range_ = 0xffffffffu;
    uint32_t code_ = 0;
    std::size_t pos_ = 0;
};

// Order-0 adaptive byte model: counts start at 1, increment by 32, halve
// (rounding up) when the total reaches 2^15. Encoder and decoder apply the
// identical update schedule, so their tables stay in lockstep.
class AdaptiveByteModel {
  public:
    AdaptiveByteModel() {
        freq_.fill(1);
        total_ = 256;
    }

    void encode(RangeEncoder& enc, uint8_t symbol) {
        uint32_t cum = 0;
        for (int s = 0; s < symbol; ++s) cum += freq_[std::size_t(s)];
        enc.encode(cum, freq_[symbol], total_);
        update(symbol);
    }

    uint8_t decode(RangeDecoder& dec) {
        const uint32_t target = dec.decode_freq(total_);
        uint32_t cum = 0;
        int s = 0;
        while (cum + freq_[std::size_t(s)] <= target) cum += freq_[std::size_t(s++)];
        dec.decode_update(cum, freq_[std::size_t(s)]);
        update(uint8_t(s));
        return uint8_t(s);
    }

  private:
    void update(uint8_t symbol) {
        freq_[symbol] += 32;
        total_ += 32;
        if (total_ >= (uint32_t(1) << 15)) {
            total_ = 0;
            for (auto& f : freq_) {
                f = (f + 1) >> 1;
                total_ += f;
            }
        }
    }

    std::array<uint32_t, 256> freq_;
    uint32_t total_;
};

}  // namespace dpcc
