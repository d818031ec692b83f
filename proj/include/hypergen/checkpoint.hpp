#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hypergen/ad/tensor.hpp"

// Binary checkpoint files: a magic/version preamble, a JSON header describing
// the payload, and a little-endian f64 blob. Bytes are a pure function of the
// stored content, so save -> load -> save reproduces the file exactly.
namespace hypergen::ckpt {

inline constexpr uint32_t kFormatVersion = 1;

struct Checkpoint {
    std::string component;     // artifact tag, validated on load
    uint64_t fingerprint = 0;  // hash of the producing config
    uint64_t seed = 0;         // seed record of the producing run
    std::vector<std::pair<std::string, ad::Tensor>> arrays;  // insertion order

    void add(const std::string& name, const ad::Tensor& value);
    bool has(const std::string& name) const;
    const ad::Tensor& get(const std::string& name) const;  // checkpoint_error if absent
};

// Writes the file atomically (temp file + rename). Throws checkpoint_error
// on any I/O failure.
void save(const Checkpoint& c, const std::string& path);

// Parses and validates structure only (magic, version, payload size).
Checkpoint load(const std::string& path);

// load() plus component-tag and fingerprint validation. A fingerprint
// mismatch is an error unless force is set; a component mismatch always is.
Checkpoint load_expected(const std::string& path, const std::string& component,
                         uint64_t fingerprint, bool force = false);

bool file_exists(const std::string& path);

}  // namespace hypergen::ckpt
