// Copyright (C) 2026 The xaln authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace xaln {

/// Per-position validity mask: 1 = real element, 0 = padding.
using PadMask = std::vector<std::uint8_t>;

inline PadMask full_mask(std::size_t n) { return PadMask(n, 1); }

inline std::size_t mask_count(const PadMask& m) {
  std::size_t c = 0;
  for (auto v : m) c += (v != 0);
  return c;
}

inline bool mask_any(const PadMask& m) {
  for (auto v : m)
    if (v) return true;
  return false;
}

}  // namespace xaln
