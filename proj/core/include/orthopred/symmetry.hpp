#pragma once

#include <span>
#include <utility>
#include <vector>

#include "orthopred/geometry.hpp"

namespace orthopred {

// Left/right vertex correspondence inside a masked region. `pairs` holds
// (p, q) with p != q and mirror(p) == q; `midline` holds self-mirrored
// vertices. Together they cover the mask exactly once.
struct SymmetryPairing {
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> midline;

    int covered() const {
        return 2 * static_cast<int>(pairs.size()) + static_cast<int>(midline.size());
    }
};

// mirror_map must be an involution over the owning topology. Throws DataError
// listing offending vertices when a masked vertex's mirror falls outside the
// mask.
SymmetryPairing build_symmetry_pairing(std::span<const int> mirror_map, const RegionMask& mask);

} // namespace orthopred
