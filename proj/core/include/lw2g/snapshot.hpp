#pragma once

// Binary run snapshot.
//
// Layout: "LW2G", u32 version, the encoder and training configuration, then
// the backbone arrays in declaration order, the head, the pool, the subspace
// memory, the accuracy matrix and the per-task reports. Integers are
// little-endian u32/i32/u64, scalars f64, arrays little-endian f32.

#include "lw2g/trainer.hpp"

#include <iosfwd>
#include <string>

namespace lw2g {

inline constexpr std::uint32_t kSnapshotVersion = 1;

void save_snapshot(std::ostream& out, const Experiment& exp);
void save_snapshot(const std::string& path, const Experiment& exp);

/// Rebuilds an experiment. Arrays come back rounded to f32; stored bases
/// are re-orthonormalized so they pass the Basis tolerance again.
Experiment load_snapshot(std::istream& in);
Experiment load_snapshot(const std::string& path);

}  // namespace lw2g
