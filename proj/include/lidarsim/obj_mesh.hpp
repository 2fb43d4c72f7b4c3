#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lidarsim/error.hpp"
#include "lidarsim/geometry.hpp"

namespace lidarsim {

/// Reads the Wavefront OBJ subset used for scene meshes: `v x y z` and
/// triangular `f a b c` records (`a/b/c` index forms and negative indices
/// accepted). Everything else is ignored.
inline std::vector<Triangle> parse_obj(std::istream& in, const std::string& source_name) {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(source_name + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) fail("vertex needs three coordinates");
      vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<long> idx;
      std::string tok;
      while (ls >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        long v = 0;
        try {
          std::size_t used = 0;
          v = std::stol(head, &used);
          if (used != head.size()) fail("bad face index '" + tok + "'");
        } catch (const std::logic_error&) {
          fail("bad face index '" + tok + "'");
        }
        if (v < 0) v = static_cast<long>(vertices.size()) + v + 1;
        if (v < 1 || v > static_cast<long>(vertices.size()))
          fail("face index " + head + " out of range");
        idx.push_back(v - 1);
      }
      if (idx.size() != 3) fail("only triangular faces are supported");
      triangles.push_back({vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]});
    }
  }
  if (triangles.empty()) throw ParseError(source_name + ": mesh has no faces");
  return triangles;
}

inline std::vector<Triangle> load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh file " + path.string());
  return parse_obj(in, path.string());
}

}  // namespace lidarsim
