// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "grpocl/geometry.hpp"

namespace grpocl {

/// Number of tokens in every emitted sequence: OPEN x1 y1 x2 y2 CLOSE.
inline constexpr int kSequenceLength = 6;

/// Coordinate-bin vocabulary. Ids 0..B-1 are bins, B is OPEN, B+1 is CLOSE.
class Vocab {
 public:
  explicit Vocab(int bins_per_axis = 32) : bins_(bins_per_axis) {
    if (bins_ < 2) throw std::invalid_argument("Vocab: bins_per_axis must be >= 2");
  }

  int bins() const noexcept { return bins_; }
  int open() const noexcept { return bins_; }
  int close() const noexcept { return bins_ + 1; }
  int size() const noexcept { return bins_ + 2; }
  bool is_bin(int token) const noexcept { return token >= 0 && token < bins_; }
  bool contains(int token) const noexcept { return token >= 0 && token < size(); }

  /// q(c) = min(floor(c * B), B - 1).
  int quantize(double c) const noexcept {
    const int k = static_cast<int>(std::floor(c * bins_));
    return std::clamp(k, 0, bins_ - 1);
  }

  double bin_center(int k) const noexcept { return (k + 0.5) / bins_; }

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  int bins_;
};

using TokenSequence = std::array<int, kSequenceLength>;

inline std::string to_string(const TokenSequence& s) {
  std::string out = "[";
  for (int t = 0; t < kSequenceLength; ++t) {
    if (t) out += ", ";
    out += std::to_string(s[t]);
  }
  return out + "]";
}

/// Well-formedness predicate backing the format reward.
inline bool validate_format(const TokenSequence& s, const Vocab& v) noexcept {
  return s[0] == v.open() && s[5] == v.close() && v.is_bin(s[1]) && v.is_bin(s[2]) &&
         v.is_bin(s[3]) && v.is_bin(s[4]) && s[1] < s[3] && s[2] < s[4];
}

/// Quantizes a box to its canonical token sequence. When both corners of an
/// axis land in the same bin, the upper bin is bumped by one so the result
/// stays well-formed; throws if the upper bin is already the last one.
inline TokenSequence encode_box(const BBox& b, const Vocab& v) {
  int kx1 = v.quantize(b.x1()), ky1 = v.quantize(b.y1());
  int kx2 = v.quantize(b.x2()), ky2 = v.quantize(b.y2());
  auto widen = [&](int lo, int& hi, const char* axis) {
    if (lo < hi) return;
    if (hi + 1 >= v.bins()) {
      throw std::invalid_argument(std::string("encode_box: box too thin along ") + axis +
                                  " to quantize");
    }
    hi += 1;
  };
  widen(kx1, kx2, "x");
  widen(ky1, ky2, "y");
  return {v.open(), kx1, ky1, kx2, ky2, v.close()};
}

/// Maps a token sequence to a continuous box at bin centers, or nullopt when
/// the sequence is malformed (zero IoU-reward eligibility, not an error).
inline std::optional<BBox> decode_sequence(const TokenSequence& s, const Vocab& v) {
  if (!validate_format(s, v)) return std::nullopt;
  return BBox(v.bin_center(s[1]), v.bin_center(s[2]), v.bin_center(s[3]), v.bin_center(s[4]));
}

}  // namespace grpocl
