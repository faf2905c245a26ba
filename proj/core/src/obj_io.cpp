#include "orthopred/obj_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "orthopred/errors.hpp"

namespace orthopred {

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& what) {
    std::ostringstream os;
    os << path.string() << ":" << line << ": " << what;
    throw DataError(os.str());
}

// "17/3/9" -> 17. Only the vertex index before the first slash matters.
int face_index(const std::string& token, const std::filesystem::path& path, int line) {
    const std::string head = token.substr(0, token.find('/'));
    size_t consumed = 0;
    int idx = 0;
    try {
        idx = std::stoi(head, &consumed);
    } catch (const std::exception&) {
        parse_fail(path, line, "bad face index '" + token + "'");
    }
    if (consumed != head.size() || idx < 1) {
        parse_fail(path, line, "bad face index '" + token + "' (expected positive 1-based index)");
    }
    return idx;
}

} // namespace

Mesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open OBJ file: " + path.string());
    }

    Mesh mesh;
    bool any_color = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') {
            continue;
        }
        if (tag == "v") {
            std::vector<double> vals;
            double v = 0.0;
            while (ls >> v) {
                vals.push_back(v);
            }
            if (vals.size() != 3 && vals.size() != 6) {
                parse_fail(path, line_no, "vertex record needs 3 or 6 floats, got " +
                                              std::to_string(vals.size()));
            }
            mesh.vertices.push_back({vals[0], vals[1], vals[2]});
            if (vals.size() == 6) {
                any_color = true;
                mesh.colors.resize(mesh.vertices.size() - 1, Vec3{0, 0, 0});
                mesh.colors.push_back({vals[3], vals[4], vals[5]});
            } else if (any_color) {
                mesh.colors.push_back({0, 0, 0});
            }
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string token;
            while (ls >> token) {
                idx.push_back(face_index(token, path, line_no) - 1);
            }
            if (idx.size() < 3) {
                parse_fail(path, line_no, "face with fewer than 3 indices");
            }
            for (size_t k = 1; k + 1 < idx.size(); ++k) {
                const std::array<int, 3> tri{idx[0], idx[k], idx[k + 1]};
                if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
                    parse_fail(path, line_no, "degenerate face with repeated vertex index");
                }
                mesh.triangles.push_back(tri);
            }
        }
        // Other records (vn, vt, o, g, s, usemtl, mtllib, ...) are ignored.
    }

    if (mesh.vertices.empty()) {
        throw DataError("empty mesh (no vertices) in " + path.string());
    }
    try {
        validate_mesh(mesh);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return mesh;
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "w");
    if (!f) {
        throw DataError("cannot write OBJ file: " + path.string());
    }
    const bool colors = mesh.has_colors();
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        if (colors) {
            const Vec3& c = mesh.colors[i];
            std::fprintf(f, "v %.9g %.9g %.9g %.9g %.9g %.9g\n", v.x, v.y, v.z, c.x, c.y, c.z);
        } else {
            std::fprintf(f, "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
        }
    }
    for (const auto& tri : mesh.triangles) {
        std::fprintf(f, "f %d %d %d\n", tri[0] + 1, tri[1] + 1, tri[2] + 1);
    }
    std::fclose(f);
}

} // namespace orthopred
