#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "minopt/expr.hpp"

namespace minopt {

// A grid domain is an ordered list of declared dims (1 to 3 axes).
struct GridDomain {
  std::vector<int> dims;  // indices into ProblemSpec::dims
  friend bool operator==(const GridDomain& a, const GridDomain& b) { return a.dims == b.dims; }
};

struct DimDecl {
  std::string name;
  int64_t extent = 0;
};

struct UnknownField {
  std::string name;
  GridDomain domain;
  int channels = 1;
};

struct ArrayField {
  std::string name;
  GridDomain domain;
  int channels = 1;
};

enum class ComputedMode : uint8_t { kFreeze, kCache };

// A per-channel stored partial of a cache-mode computed array: the derivative
// of channel `channel`'s defining expression with respect to the unknown
// access (field, uchannel, offset), stored as extra channel `store_channel`.
struct ComputedPartial {
  int channel = 0;
  int ufield = 0;
  int uchannel = 0;
  std::array<int16_t, 3> off{0, 0, 0};
  ExprId expr = kNoExpr;
  int store_channel = 0;
};

struct ComputedArray {
  std::string name;
  ComputedMode mode = ComputedMode::kFreeze;
  GridDomain domain;
  std::vector<ExprId> value;  // one defining expression per channel
  std::vector<ComputedPartial> partials;  // cache mode only
  int total_channels() const { return int(value.size() + partials.size()); }
};

struct GraphDecl {
  std::string name;
  std::vector<std::string> slots;
  int arity() const { return int(slots.size()); }
};

enum class DomainKind : uint8_t { kGrid, kGraph };

// One scalar residual template. Grid templates are instantiated per pixel of
// their domain, graph templates per hyperedge.
struct EnergyTemplate {
  ExprId expr = kNoExpr;
  DomainKind kind = DomainKind::kGrid;
  GridDomain domain;    // kind == kGrid
  int graph = -1;       // kind == kGraph
};

struct ExcludeRule {
  GridDomain domain;
  ExprId predicate = kNoExpr;
};

struct ProblemSpec {
  std::vector<DimDecl> dims;
  std::vector<std::string> params;
  std::vector<UnknownField> unknowns;
  std::vector<ArrayField> arrays;
  std::vector<ComputedArray> computed;
  std::vector<GraphDecl> graphs;
  std::vector<EnergyTemplate> energies;
  std::vector<ExcludeRule> excludes;
  ExprArena arena;

  int64_t extent_of(const GridDomain& d) const {
    int64_t n = 1;
    for (int di : d.dims) n *= dims[di].extent;
    return n;
  }
  std::array<int64_t, 3> shape_of(const GridDomain& d) const {
    std::array<int64_t, 3> s{1, 1, 1};
    for (size_t i = 0; i < d.dims.size(); ++i) s[i] = dims[d.dims[i]].extent;
    return s;
  }

  int find_param(const std::string& n) const {
    for (size_t i = 0; i < params.size(); ++i)
      if (params[i] == n) return int(i);
    return -1;
  }
  int find_unknown(const std::string& n) const {
    for (size_t i = 0; i < unknowns.size(); ++i)
      if (unknowns[i].name == n) return int(i);
    return -1;
  }
  int find_array(const std::string& n) const {
    for (size_t i = 0; i < arrays.size(); ++i)
      if (arrays[i].name == n) return int(i);
    return -1;
  }
  int find_computed(const std::string& n) const {
    for (size_t i = 0; i < computed.size(); ++i)
      if (computed[i].name == n) return int(i);
    return -1;
  }
  int find_graph(const std::string& n) const {
    for (size_t i = 0; i < graphs.size(); ++i)
      if (graphs[i].name == n) return int(i);
    return -1;
  }
};

// Row-major linearization, last declared axis fastest. Shared by file I/O,
// kernel execution, and the solver's column layout.
inline int64_t linear_index(const std::array<int64_t, 3>& shape, int nd,
                            const std::array<int64_t, 3>& coord) {
  int64_t idx = 0;
  for (int a = 0; a < nd; ++a) idx = idx * shape[a] + coord[a];
  return idx;
}

inline bool in_shape(const std::array<int64_t, 3>& shape, int nd,
                     const std::array<int64_t, 3>& coord) {
  for (int a = 0; a < nd; ++a)
    if (coord[a] < 0 || coord[a] >= shape[a]) return false;
  return true;
}

}  // namespace minopt
