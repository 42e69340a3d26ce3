#ifndef CHEBSPECTRAL_SPLIT_HPP
#define CHEBSPECTRAL_SPLIT_HPP

#include "dense.hpp"

#include <algorithm>

namespace chebspectral {

/// Even split of `n` rows into `parts` blocks; the first n % parts blocks get
/// one extra row.
struct EvenSplit {
  Index n = 0;
  Index parts = 1;

  Index begin(Index b) const noexcept {
    const Index base = n / parts;
    const Index extra = n % parts;
    return b * base + std::min(b, extra);
  }
  Index end(Index b) const noexcept { return begin(b + 1); }
  Index size(Index b) const noexcept { return end(b) - begin(b); }
  Index max_size() const noexcept { return n / parts + (n % parts != 0 ? 1 : 0); }
};

/// Two-level row split for a q x q grid: p = q^2 fine blocks from an even
/// split, and coarse block I is the union of fine blocks I*q .. I*q + q - 1.
/// Coarse blocks therefore nest the fine ones exactly, which the 1.5D SpMM
/// relies on.
struct GridSplit {
  Index n = 0;
  Index q = 1;

  EvenSplit fine() const noexcept { return {n, q * q}; }
  Index fine_begin(Index b) const noexcept { return fine().begin(b); }
  Index fine_end(Index b) const noexcept { return fine().end(b); }
  Index fine_size(Index b) const noexcept { return fine().size(b); }
  Index coarse_begin(Index c) const noexcept { return fine().begin(c * q); }
  Index coarse_end(Index c) const noexcept { return fine().begin((c + 1) * q); }
  Index coarse_size(Index c) const noexcept { return coarse_end(c) - coarse_begin(c); }
};

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_SPLIT_HPP
