#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "dpcc/autodiff.hpp"
#include "dpcc/config.hpp"

namespace dpcc {

// Checkpoint file: "DPCK", version byte, the config manifest, then named
// parameter tensors as raw little-endian float32. The 64-bit FNV-1a hash of
// the whole file identifies the model in frame headers, so a decoder can
// reject streams produced by a different checkpoint.

// Returns the hash of the file just written.
uint64_t save_checkpoint(const std::string& path, const CodecConfig& cfg,
                         std::span<Parameter* const> params);

// Manifest only; lets the caller construct a model before loading weights.
CodecConfig read_checkpoint_config(const std::string& path);

// Fills params (matched by name, shapes validated) and returns the file hash.
uint64_t load_checkpoint_params(const std::string& path, std::span<Parameter* const> params);

}  // namespace dpcc
