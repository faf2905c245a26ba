#include "orthopred/symmetry.hpp"

#include <sstream>

#include "orthopred/errors.hpp"

namespace orthopred {

SymmetryPairing build_symmetry_pairing(std::span<const int> mirror_map, const RegionMask& mask) {
    SymmetryPairing pairing;
    std::vector<int> offenders;
    for (int v : mask.vertices) {
        if (v < 0 || v >= static_cast<int>(mirror_map.size())) {
            std::ostringstream os;
            os << "mask vertex " << v << " outside mirror map of size " << mirror_map.size();
            throw DataError(os.str());
        }
        const int m = mirror_map[v];
        if (m == v) {
            pairing.midline.push_back(v);
        } else if (!mask.contains(m)) {
            offenders.push_back(v);
        } else if (v < m) {
            pairing.pairs.emplace_back(v, m);
        }
    }
    if (!offenders.empty()) {
        std::ostringstream os;
        os << "mask is not mirror-closed; " << offenders.size()
           << " vertices have mirrors outside the mask:";
        const size_t shown = std::min<size_t>(offenders.size(), 8);
        for (size_t i = 0; i < shown; ++i) {
            os << ' ' << offenders[i];
        }
        if (offenders.size() > shown) {
            os << " ...";
        }
        throw DataError(os.str());
    }
    return pairing;
}

} // namespace orthopred
