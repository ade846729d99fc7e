#include "grendel/ply.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "grendel/error.hpp"

namespace grendel {

namespace {

constexpr std::array<const char*, 16> kScalarTypes{
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double",
    "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64"};

bool is_scalar_type(const std::string& t) {
  return std::find(kScalarTypes.begin(), kScalarTypes.end(), t) != kScalarTypes.end();
}

bool is_float_type(const std::string& t) {
  return t == "float" || t == "double" || t == "float32" || t == "float64";
}

struct Element {
  std::string name;
  std::size_t count = 0;
  bool has_list = false;
  std::vector<std::string> names;
  std::vector<std::string> types;
};

[[noreturn]] void header_error(const std::filesystem::path& path, const std::string& what) {
  throw Error("malformed PLY header in '" + path.string() + "': " + what);
}

double parse_value(std::string_view tok, const std::filesystem::path& path, std::size_t row) {
  double v = 0.0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw Error("bad PLY value '" + std::string(tok) + "' in row " + std::to_string(row) + " of '" +
                path.string() + "'");
  }
  return v;
}

}  // namespace

std::optional<std::size_t> PlyTable::column(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

PlyTable read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open PLY file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") header_error(path, "missing 'ply' magic");

  std::vector<Element> elements;
  std::vector<std::string> comments;
  bool have_format = false;
  bool ended = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key.empty()) continue;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw Error("unsupported PLY format '" + fmt + "' in '" + path.string() + "'");
      have_format = true;
    } else if (key == "comment" || key == "obj_info") {
      comments.push_back(line.size() > key.size() + 1 ? line.substr(key.size() + 1) : "");
    } else if (key == "element") {
      Element e;
      long long n = -1;
      ls >> e.name >> n;
      if (e.name.empty() || n < 0) header_error(path, "bad element line '" + line + "'");
      e.count = static_cast<std::size_t>(n);
      elements.push_back(std::move(e));
    } else if (key == "property") {
      if (elements.empty()) header_error(path, "property before any element");
      std::string type, name;
      ls >> type;
      if (type == "list") {
        elements.back().has_list = true;
        continue;
      }
      ls >> name;
      if (!is_scalar_type(type) || name.empty()) header_error(path, "bad property line '" + line + "'");
      elements.back().types.push_back(type);
      elements.back().names.push_back(name);
    } else if (key == "end_header") {
      ended = true;
      break;
    } else {
      header_error(path, "unknown keyword '" + key + "'");
    }
  }
  if (!ended) header_error(path, "missing end_header");
  if (!have_format) header_error(path, "missing format line");

  auto vertex = std::find_if(elements.begin(), elements.end(),
                             [](const Element& e) { return e.name == "vertex"; });
  if (vertex == elements.end()) header_error(path, "no vertex element");
  if (vertex->has_list) header_error(path, "list properties on vertex element are not supported");

  // Skip instances of elements declared before the vertex element.
  for (auto it = elements.begin(); it != vertex; ++it) {
    for (std::size_t i = 0; i < it->count; ++i) {
      if (!std::getline(in, line)) throw Error("unexpected end of PLY body in '" + path.string() + "'");
    }
  }

  PlyTable table;
  table.names = vertex->names;
  table.types = vertex->types;
  table.comments = std::move(comments);
  table.rows = vertex->count;
  table.values.reserve(table.rows * table.cols());
  for (std::size_t r = 0; r < table.rows; ++r) {
    if (!std::getline(in, line)) throw Error("unexpected end of PLY body in '" + path.string() + "'");
    std::size_t pos = 0;
    std::size_t got = 0;
    while (pos < line.size()) {
      while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      if (pos >= line.size()) break;
      std::size_t end = pos;
      while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
      if (got == table.cols()) {
        throw Error("PLY row " + std::to_string(r) + " has more values than the " +
                    std::to_string(table.cols()) + " declared properties in '" + path.string() + "'");
      }
      table.values.push_back(parse_value(std::string_view(line).substr(pos, end - pos), path, r));
      ++got;
      pos = end;
    }
    if (got != table.cols()) {
      if (got == 0 && in.eof()) throw Error("unexpected end of PLY body in '" + path.string() + "'");
      throw Error("PLY row " + std::to_string(r) + " has " + std::to_string(got) + " values, expected " +
                  std::to_string(table.cols()) + " in '" + path.string() + "'");
    }
  }
  return table;
}

void write_ply(const std::filesystem::path& path, const PlyTable& table) {
  if (table.types.size() != table.names.size() || table.values.size() != table.rows * table.cols()) {
    throw Error("write_ply: inconsistent table shape");
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write PLY file '" + path.string() + "'");
  out << "ply\nformat ascii 1.0\n";
  for (const auto& c : table.comments) out << "comment " << c << "\n";
  out << "element vertex " << table.rows << "\n";
  for (std::size_t c = 0; c < table.cols(); ++c) {
    out << "property " << table.types[c] << " " << table.names[c] << "\n";
  }
  out << "end_header\n";
  std::array<char, 64> buf{};
  std::string row;
  for (std::size_t r = 0; r < table.rows; ++r) {
    row.clear();
    for (std::size_t c = 0; c < table.cols(); ++c) {
      const double v = table.at(r, c);
      std::to_chars_result res;
      if (is_float_type(table.types[c])) {
        res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
      } else {
        res = std::to_chars(buf.data(), buf.data() + buf.size(), static_cast<long long>(v));
      }
      if (c) row.push_back(' ');
      row.append(buf.data(), res.ptr);
    }
    row.push_back('\n');
    out << row;
  }
  if (!out) throw Error("failed writing PLY file '" + path.string() + "'");
}

}  // namespace grendel
