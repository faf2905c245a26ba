#pragma once

#include <filesystem>

#include "orthopred/geometry.hpp"

namespace orthopred {

// ASCII Wavefront OBJ, v/f records only. `v` lines carry 3 floats, or 6 when
// per-vertex color is present. `f` indices are 1-based; texture/normal
// suffixes ("3/7/2") are stripped; polygons are fan-triangulated.
Mesh load_obj(const std::filesystem::path& path);

// Writes a file load_obj can read back; coordinates at 9 significant digits
// so save/load/save is byte-stable.
void save_obj(const Mesh& mesh, const std::filesystem::path& path);

} // namespace orthopred
