#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace grendel {

/// The vertex element of a PLY file as a dense row-major table of scalars.
struct PlyTable {
  std::vector<std::string> names;
  std::vector<std::string> types;  // PLY scalar type names ("double", "float", "uchar", ...)
  std::vector<std::string> comments;
  std::size_t rows = 0;
  std::vector<double> values;

  std::size_t cols() const { return names.size(); }
  std::optional<std::size_t> column(const std::string& name) const;
  double at(std::size_t row, std::size_t col) const { return values[row * cols() + col]; }
};

/// Reads the `vertex` element of an ASCII PLY. Other elements are skipped;
/// list properties are only allowed on non-vertex elements.
PlyTable read_ply(const std::filesystem::path& path);

/// Writes an ASCII PLY with a single vertex element. Floating-point values
/// use the shortest representation that round-trips exactly.
void write_ply(const std::filesystem::path& path, const PlyTable& table);

}  // namespace grendel
