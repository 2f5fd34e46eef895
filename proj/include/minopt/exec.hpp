#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <span>
#include <thread>
#include <vector>

#include "minopt/eval.hpp"
#include "minopt/program.hpp"

namespace minopt {

enum class ExecMode : uint8_t { kSequential, kParallel };

// Where one program output lands. `slot` selects the addressing rule:
//  - slot < 0 — per-element write: element (grid pixel or graph edge) e owns
//    data[offset + e*stride] exclusively, so parallel execution is race-free
//    and bitwise equal to sequential. Used for residual vectors, Jacobian
//    entry blocks, and per-element cost contributions.
//  - slot >= 0 — vertex scatter (graph only): each edge accumulates into
//    data[offset + vertex*stride] where vertex = edge.verts[slot]; several
//    edges may hit one slot, so parallel order matters up to float
//    reassociation.
template <class Real>
struct OutputBinding {
  Real* data = nullptr;
  int64_t offset = 0;
  int64_t stride = 1;
  int64_t extent = 0;  // valid indices: elements/edges, or vertices of `slot`
  int slot = -1;
};

// Hyperedge table of one graph: `arity` vertex indices per edge, edge-major.
struct EdgeTable {
  int arity = 0;
  std::vector<uint64_t> verts;
  int64_t size() const { return arity ? int64_t(verts.size()) / arity : 0; }
  std::span<const uint64_t> edge(int64_t e) const {
    return {verts.data() + size_t(e) * size_t(arity), size_t(arity)};
  }
};

struct ExecReport {
  bool nonfinite = false;  // some output value was NaN/Inf (flag, not fatal)
};

// Worker-pool width: MINOPT_THREADS caps it, hardware concurrency is the
// default. Read per pass so tests can vary the setting in one process.
inline int exec_threads() {
  if (const char* s = std::getenv("MINOPT_THREADS")) {
    int v = std::atoi(s);
    if (v >= 1) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? int(hc) : 1;
}

// Every buffer the executor sizes at runtime is accounted here. The solver's
// matrix-free contract is that kernel execution never allocates in proportion
// to the residual count: scratch depends only on program size and worker
// count, which the accounting tests pin down by comparing domain sizes.
inline std::atomic<size_t>& exec_alloc_bytes() {
  static std::atomic<size_t> bytes{0};
  return bytes;
}

// Per-worker run state: the register file and one slot per program output.
// Capacity is retained across elements, so the per-element reset inside
// run_program never touches the heap.
template <class Real>
struct ExecScratch {
  std::vector<Real> regs, out;
  void prepare(const KernelProgram& p) {
    grow(regs, p.num_regs);
    grow(out, p.outputs.size());
  }

 private:
  static void grow(std::vector<Real>& v, size_t n) {
    if (v.capacity() < n) {
      exec_alloc_bytes() += (n - v.capacity()) * sizeof(Real);
      v.reserve(n);
    }
    v.resize(n);
  }
};

namespace exec_detail {

inline int64_t domain_extent(const std::array<int64_t, 3>& shape, int nd) {
  int64_t n = 1;
  for (int a = 0; a < nd; ++a) n *= shape[a];
  return n;
}

inline std::array<int64_t, 3> coord_of(const std::array<int64_t, 3>& shape, int nd,
                                       int64_t elem) {
  std::array<int64_t, 3> c{0, 0, 0};
  for (int a = nd - 1; a >= 0; --a) {
    c[a] = elem % shape[a];
    elem /= shape[a];
  }
  return c;
}

template <class Real>
inline int64_t view_extent(const FieldView<Real>& f) {
  int64_t n = 1;
  for (int a = 0; a < f.nd; ++a) n *= f.shape[a];
  return n;
}

// The field view an instruction's load resolves to, or null for non-loads.
template <class Real>
inline const FieldView<Real>* load_view(const Instr& in, const EvalEnv<Real>& env) {
  const std::vector<FieldView<Real>>* pool = nullptr;
  switch (in.op) {
    case Op::kLoadU: pool = &env.unknowns; break;
    case Op::kLoadA: pool = &env.arrays; break;
    case Op::kLoadC: pool = &env.computeds; break;
    case Op::kLoadP: pool = &env.pfields; break;
    default: return nullptr;
  }
  check(in.field >= 0 && size_t(in.field) < pool->size(), Err::kShapeMismatch,
        "kernel reads a field that is not bound");
  const FieldView<Real>& v = (*pool)[size_t(in.field)];
  check(v.data != nullptr, Err::kShapeMismatch, "kernel reads an unbound field view");
  check(in.channel >= 0 && in.channel < v.channels, Err::kShapeMismatch,
        "kernel reads past the bound channel count");
  return &v;
}

// Contiguous chunking of [0, n) across `workers` threads; chunk w is
// [bound(w), bound(w+1)). Fixed partition — no work stealing — so a given
// thread count always maps the same elements to the same worker.
inline int64_t chunk_bound(int64_t n, int workers, int w) {
  return n * int64_t(w) / int64_t(workers);
}

}  // namespace exec_detail

// Run `prog` once per element of the grid domain described by `env`
// (domain_shape/domain_nd; env.pix is overwritten). Output k of element e is
// written — not accumulated — to outs[k].data[offset + e*stride]; elements
// where `excluded` is nonzero write 0 to every output without running the
// program. Parallel mode partitions axis 0 across the worker pool; since
// every element owns its output slots, the result is bitwise identical to
// sequential mode.
template <class Real>
inline ExecReport exec_grid(const KernelProgram& prog, EvalEnv<Real> env,
                            std::span<const OutputBinding<Real>> outs,
                            const uint8_t* excluded = nullptr,
                            ExecMode mode = ExecMode::kSequential) {
  using namespace exec_detail;
  const int nd = env.domain_nd;
  const std::array<int64_t, 3> shape = env.domain_shape;
  const int64_t extent = domain_extent(shape, nd);

  check(outs.size() == prog.outputs.size(), Err::kShapeMismatch,
        "output binding count does not match program outputs");
  for (const OutputBinding<Real>& b : outs) {
    check(b.data != nullptr, Err::kShapeMismatch, "grid output is unbound");
    check(b.slot < 0, Err::kShapeMismatch, "grid outputs take per-element writes, not scatters");
    check(b.extent == extent, Err::kShapeMismatch,
          "grid output extent does not match the domain");
  }
  for (const Instr& in : prog.instrs) (void)load_view(in, env);

  auto run_range = [&](EvalEnv<Real> e, int64_t begin, int64_t end,
                       ExecScratch<Real>& scratch) -> bool {
    bool nonfinite = false;
    scratch.prepare(prog);
    for (int64_t elem = begin; elem < end; ++elem) {
      if (excluded && excluded[elem]) {
        for (const OutputBinding<Real>& b : outs)
          b.data[b.offset + elem * b.stride] = Real(0);
        continue;
      }
      e.pix = coord_of(shape, nd, elem);
      run_program(prog, e, scratch.regs, scratch.out.data());
      for (size_t k = 0; k < outs.size(); ++k) {
        Real v = scratch.out[k];
        if (!std::isfinite(double(v))) nonfinite = true;
        outs[k].data[outs[k].offset + elem * outs[k].stride] = v;
      }
    }
    return nonfinite;
  };

  ExecReport rep;
  const int64_t rows = nd > 0 ? shape[0] : 1;
  const int64_t row_elems = rows > 0 ? extent / rows : 0;
  int workers = mode == ExecMode::kParallel ? int(std::min<int64_t>(exec_threads(), rows)) : 1;
  if (workers <= 1) {
    ExecScratch<Real> scratch;
    rep.nonfinite = run_range(env, 0, extent, scratch);
    return rep;
  }
  std::vector<ExecScratch<Real>> scratch(static_cast<size_t>(workers));
  std::vector<char> flags(static_cast<size_t>(workers), 0);
  {
    std::vector<std::jthread> pool;
    pool.reserve(size_t(workers));
    for (int w = 0; w < workers; ++w) {
      int64_t begin = chunk_bound(rows, workers, w) * row_elems;
      int64_t end = chunk_bound(rows, workers, w + 1) * row_elems;
      pool.emplace_back([&, w, begin, end] { flags[size_t(w)] = run_range(env, begin, end, scratch[size_t(w)]); });
    }
  }
  for (char f : flags) rep.nonfinite |= bool(f);
  return rep;
}

// Run `prog` once per hyperedge and accumulate each output into its scatter
// target: outs[k].data[offset + verts[slot]*stride] += value. Sequential mode
// accumulates in edge order (bitwise reproducible); parallel mode uses atomic
// adds, reproducible only up to floating-point reassociation. Every vertex
// index is validated up front against both the fields the program reads
// through that slot and the scatter targets, so no read or write can land out
// of range mid-pass.
template <class Real>
inline ExecReport exec_graph(const KernelProgram& prog, EvalEnv<Real> env,
                             const EdgeTable& edges,
                             std::span<const OutputBinding<Real>> outs,
                             ExecMode mode = ExecMode::kSequential) {
  using namespace exec_detail;
  check(outs.size() == prog.outputs.size(), Err::kShapeMismatch,
        "output binding count does not match program outputs");

  constexpr int kMaxSlots = 64;
  check(edges.arity >= 0 && edges.arity <= kMaxSlots, Err::kGraphDomain,
        "hyperedge arity out of range");
  std::array<int64_t, kMaxSlots> bound;
  bound.fill(INT64_MAX);
  for (const Instr& in : prog.instrs) {
    const FieldView<Real>* v = load_view(in, env);
    if (!v || !in.acc.graph) continue;
    check(in.acc.slot >= 0 && in.acc.slot < edges.arity, Err::kShapeMismatch,
          "kernel reads a slot beyond the edge arity");
    bound[in.acc.slot] = std::min(bound[in.acc.slot], view_extent(*v));
  }
  for (const OutputBinding<Real>& b : outs) {
    check(b.data != nullptr, Err::kShapeMismatch, "graph output is unbound");
    check(b.slot < edges.arity, Err::kShapeMismatch,
          "graph output scatters through a slot beyond the edge arity");
    if (b.slot >= 0)
      bound[b.slot] = std::min(bound[b.slot], b.extent);
    else
      check(b.extent == edges.size(), Err::kShapeMismatch,
            "per-edge output extent does not match the edge count");
  }
  const int64_t num_edges = edges.size();
  for (int64_t e = 0; e < num_edges; ++e)
    for (int s = 0; s < edges.arity; ++s)
      check(edges.verts[size_t(e) * size_t(edges.arity) + size_t(s)] <
                uint64_t(bound[s]),
            Err::kIndexOutOfRange, "edge references a vertex beyond the bound extent");

  auto run_range = [&](EvalEnv<Real> e, int64_t begin, int64_t end,
                       ExecScratch<Real>& scratch, bool atomic) -> bool {
    bool nonfinite = false;
    scratch.prepare(prog);
    for (int64_t ed = begin; ed < end; ++ed) {
      e.edge = edges.edge(ed);
      run_program(prog, e, scratch.regs, scratch.out.data());
      for (size_t k = 0; k < outs.size(); ++k) {
        Real v = scratch.out[k];
        if (!std::isfinite(double(v))) nonfinite = true;
        const OutputBinding<Real>& b = outs[k];
        if (b.slot < 0) {  // per-edge write: disjoint, no accumulation
          b.data[b.offset + ed * b.stride] = v;
          continue;
        }
        int64_t vert = int64_t(e.edge[size_t(b.slot)]);
        Real* dst = b.data + b.offset + vert * b.stride;
        if (atomic)
          std::atomic_ref<Real>(*dst).fetch_add(v, std::memory_order_relaxed);
        else
          *dst += v;
      }
    }
    return nonfinite;
  };

  ExecReport rep;
  int workers =
      mode == ExecMode::kParallel ? int(std::min<int64_t>(exec_threads(), std::max<int64_t>(num_edges, 1))) : 1;
  if (workers <= 1) {
    ExecScratch<Real> scratch;
    rep.nonfinite = run_range(env, 0, num_edges, scratch, false);
    return rep;
  }
  std::vector<ExecScratch<Real>> scratch(static_cast<size_t>(workers));
  std::vector<char> flags(static_cast<size_t>(workers), 0);
  {
    std::vector<std::jthread> pool;
    pool.reserve(size_t(workers));
    for (int w = 0; w < workers; ++w) {
      int64_t begin = chunk_bound(num_edges, workers, w);
      int64_t end = chunk_bound(num_edges, workers, w + 1);
      pool.emplace_back(
          [&, w, begin, end] { flags[size_t(w)] = run_range(env, begin, end, scratch[size_t(w)], true); });
    }
  }
  for (char f : flags) rep.nonfinite |= bool(f);
  return rep;
}

}  // namespace minopt
