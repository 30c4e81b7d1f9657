#pragma once

#include <filesystem>
#include <iosfwd>

#include "hat/tensor.hpp"

// Tensor snapshot wire format, little-endian throughout:
//   "HATT" | version u8 (=1) | dtype u8 (0 = f32, 1 = f64) | rank u64 |
//   dims u64[rank] | row-major payload
// Snapshots of either dtype load into the current build's Scalar.

HAT_NS_BEGIN

inline constexpr std::uint8_t kSnapshotVersion = 1;

void write_snapshot(std::ostream& os, const Tensor& t);
Tensor read_snapshot(std::istream& is);

void save_snapshot(const std::filesystem::path& path, const Tensor& t);
Tensor load_snapshot(const std::filesystem::path& path);

HAT_NS_END
