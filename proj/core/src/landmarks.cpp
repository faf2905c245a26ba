#include "orthopred/landmarks.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "orthopred/errors.hpp"

namespace orthopred {

LandmarkSet load_landmarks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open landmark file: " + path.string());
    }
    LandmarkSet lm;
    std::string line;
    int count = 0;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        Vec3 p;
        if (!(ls >> p.x >> p.y >> p.z)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue; // blank trailing line
            }
            std::ostringstream os;
            os << path.string() << ":" << line_no << ": expected 'x y z'";
            throw DataError(os.str());
        }
        if (count >= LandmarkSet::kCount) {
            throw DataError(path.string() + ": more than 68 landmark lines");
        }
        if (!is_finite(p)) {
            std::ostringstream os;
            os << path.string() << ":" << line_no << ": non-finite landmark";
            throw DataError(os.str());
        }
        lm[count++] = p;
    }
    if (count != LandmarkSet::kCount) {
        std::ostringstream os;
        os << path.string() << ": expected 68 landmarks, got " << count;
        throw DataError(os.str());
    }
    return lm;
}

void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) {
        throw DataError("cannot write landmark file: " + path.string());
    }
    for (const Vec3& p : landmarks.points) {
        std::fprintf(f, "%.9g %.9g %.9g\n", p.x, p.y, p.z);
    }
    std::fclose(f);
}

Plane fit_midsagittal_plane(const LandmarkSet& landmarks) {
    const Vec3 m1 = (landmarks.left_brow_mid() + landmarks.right_brow_mid()) * 0.5;
    const Vec3 m2 = (landmarks.left_inner_eye() + landmarks.right_inner_eye()) * 0.5;
    if (!is_finite(m1) || !is_finite(m2)) {
        throw DataError("non-finite mid-sagittal anchor landmarks");
    }

    const Vec3 axis{1.0, 0.0, 0.0};
    const Vec3 d = m2 - m1;
    const double len = norm(d);
    if (len <= 1e-9) {
        return Plane::through(m1, axis);
    }
    const Vec3 unit = d / len;
    const Vec3 projected = axis - unit * dot(axis, unit);
    const double plen = norm(projected);
    if (plen <= 1e-9) {
        throw NumericError("mid-sagittal plane degenerate: x-axis parallel to anchor line");
    }
    Plane plane;
    plane.normal = projected / plen;
    if (plane.normal.x < 0.0) {
        plane.normal = -plane.normal;
    }
    plane.offset = dot(plane.normal, (m1 + m2) * 0.5);
    return plane;
}

} // namespace orthopred
