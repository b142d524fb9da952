#pragma once

#include <string>

#include "ainet/params.hpp"

namespace ainet {

// Checkpoint directory layout:
//   manifest.json      ordered list of {name, shape, dtype:"f64"}
//   <name>.bin         raw little-endian IEEE-754 float64, row-major
// Save/load round-trips are bitwise exact.
void save_checkpoint(const ParamStore& store, const std::string& dir);
void load_checkpoint(ParamStore& store, const std::string& dir);

}  // namespace ainet
