#include "ftso/genotype.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ftso/error.hpp"

namespace ftso {

namespace {

int cell_nodes(const std::vector<GenotypeEdge>& edges) {
  int max_dst = 1;
  for (const auto& e : edges) max_dst = std::max(max_dst, e.dst);
  return max_dst + 2;
}

void validate_cell(const std::vector<GenotypeEdge>& edges, const char* cell) {
  const std::string where = std::string(cell) + " cell: ";
  if (edges.empty()) throw DataError(where + "no edges");
  std::map<int, int> in_degree;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& e = edges[i];
    if (e.dst < 2) {
      throw DataError(where + "edge " + std::to_string(e.src) + "->" +
                      std::to_string(e.dst) + " targets an input node");
    }
    if (e.src < 0 || e.src >= e.dst) {
      throw DataError(where + "edge " + std::to_string(e.src) + "->" +
                      std::to_string(e.dst) + " does not go forward");
    }
    if (e.op == OperatorKind::Zero) {
      throw DataError(where + "edge " + std::to_string(e.src) + "->" +
                      std::to_string(e.dst) + " uses operator 'none'");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (edges[j].src == e.src && edges[j].dst == e.dst) {
        throw DataError(where + "duplicate edge " + std::to_string(e.src) + "->" +
                        std::to_string(e.dst));
      }
    }
    if (++in_degree[e.dst] > 2) {
      throw DataError(where + "node " + std::to_string(e.dst) +
                      " has more than 2 incoming edges");
    }
  }
  const int last = cell_nodes(edges) - 2;
  for (int node = 2; node <= last; ++node) {
    const int d = in_degree.count(node) ? in_degree[node] : 0;
    if (d != 2) {
      throw DataError(where + "node " + std::to_string(node) + " has " +
                      std::to_string(d) + " incoming edges, expected 2");
    }
  }
}

}  // namespace

int Genotype::nodes() const { return std::max(cell_nodes(normal), cell_nodes(reduce)); }

void sort_edges(std::vector<GenotypeEdge>& edges) {
  std::sort(edges.begin(), edges.end(), [](const GenotypeEdge& a, const GenotypeEdge& b) {
    return a.dst != b.dst ? a.dst < b.dst : a.src < b.src;
  });
}

void validate_genotype(const Genotype& g) {
  validate_cell(g.normal, "normal");
  validate_cell(g.reduce, "reduce");
  if (cell_nodes(g.normal) != cell_nodes(g.reduce)) {
    throw DataError("normal and reduce cells describe different node counts (" +
                    std::to_string(cell_nodes(g.normal)) + " vs " +
                    std::to_string(cell_nodes(g.reduce)) + ")");
  }
}

std::string serialize_genotype(const Genotype& g) {
  validate_genotype(g);
  std::ostringstream os;
  os << "genotype v1\n";
  auto section = [&os](const char* name, std::vector<GenotypeEdge> edges) {
    sort_edges(edges);
    os << name << ":\n";
    for (const auto& e : edges) {
      os << e.src << "->" << e.dst << ':' << operator_name(e.op) << '\n';
    }
  };
  section("normal", g.normal);
  section("reduce", g.reduce);
  return os.str();
}

namespace {

// Strict decimal: no sign, no leading zeros.
int parse_index(std::string_view s, std::size_t line_no) {
  if (s.empty() || s.size() > 6 || (s.size() > 1 && s[0] == '0')) {
    throw DataError("line " + std::to_string(line_no) + ": bad node index '" +
                    std::string(s) + "'");
  }
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') {
      throw DataError("line " + std::to_string(line_no) + ": bad node index '" +
                      std::string(s) + "'");
    }
    v = v * 10 + (c - '0');
  }
  return v;
}

GenotypeEdge parse_edge(std::string_view line, std::size_t line_no) {
  const auto arrow = line.find("->");
  const auto colon = line.find(':');
  if (arrow == std::string_view::npos || colon == std::string_view::npos || colon < arrow) {
    throw DataError("line " + std::to_string(line_no) + ": expected 'src->dst:op', got '" +
                    std::string(line) + "'");
  }
  GenotypeEdge e;
  e.src = parse_index(line.substr(0, arrow), line_no);
  e.dst = parse_index(line.substr(arrow + 2, colon - arrow - 2), line_no);
  e.op = parse_operator(line.substr(colon + 1));
  return e;
}

}  // namespace

Genotype parse_genotype(std::string_view text) {
  if (text.empty() || text.back() != '\n') {
    throw DataError("genotype text must end with a newline");
  }
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty() || lines[0] != "genotype v1") {
    throw DataError("line 1: expected header 'genotype v1'");
  }
  if (lines.size() < 2 || lines[1] != "normal:") {
    throw DataError("line 2: expected 'normal:'");
  }
  Genotype g;
  std::vector<GenotypeEdge>* current = &g.normal;
  bool seen_reduce = false;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (lines[i] == "reduce:") {
      if (seen_reduce) throw DataError("line " + std::to_string(i + 1) + ": second 'reduce:'");
      seen_reduce = true;
      current = &g.reduce;
      continue;
    }
    GenotypeEdge e = parse_edge(lines[i], i + 1);
    if (!current->empty()) {
      const auto& prev = current->back();
      if (e.dst < prev.dst || (e.dst == prev.dst && e.src <= prev.src)) {
        throw DataError("line " + std::to_string(i + 1) +
                        ": entries must be sorted by (dst, src) without repeats");
      }
    }
    current->push_back(e);
  }
  if (!seen_reduce) throw DataError("missing 'reduce:' section");
  validate_genotype(g);
  return g;
}

Genotype read_genotype_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open genotype file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_genotype(ss.str());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_genotype_file(const std::string& path, const Genotype& g) {
  const std::string text = serialize_genotype(g);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write genotype file '" + path + "'");
  out << text;
}

Genotype relabel(const Genotype& g, OperatorKind op) {
  Genotype out = g;
  for (auto& e : out.normal) e.op = op;
  for (auto& e : out.reduce) e.op = op;
  return out;
}

}  // namespace ftso
