#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "minopt/common.hpp"

namespace minopt {

// Compressed sparse row matrix. Invariants: offs has rows+1 monotone entries,
// column indices are sorted and unique within each row. Houses the
// materialized Jacobian (rows = residual instances, template-major) and the
// assembled normal matrix; empty rows are genuine (a boundary-guarded
// residual instance contributes no entries, not zero-valued ones).
template <class Real>
struct SparseCSR {
  int64_t rows = 0, cols = 0;
  std::vector<int64_t> offs{0};
  std::vector<int64_t> col;
  std::vector<Real> val;

  int64_t nnz() const { return int64_t(col.size()); }

  // Row-streaming assembly: call begin_row() once per row in order, then
  // push() its entries with strictly increasing columns.
  void begin_row() {
    offs.push_back(nnz());
    ++rows;
  }
  void push(int64_t c, Real v) {
    check(rows > 0, Err::kInternal, "CSR push before the first begin_row");
    check(c >= 0 && c < cols, Err::kIndexOutOfRange, "CSR column out of range");
    check(nnz() == offs[size_t(rows) - 1] || col.back() < c, Err::kInternal,
          "CSR row entries must arrive in increasing column order");
    col.push_back(c);
    val.push_back(v);
    offs.back() = nnz();
  }
};

// y = A x, rows accumulated left to right (deterministic).
template <class Real>
inline void spmv(const SparseCSR<Real>& a, std::span<const Real> x, std::span<Real> y) {
  check(int64_t(x.size()) == a.cols && int64_t(y.size()) == a.rows, Err::kShapeMismatch,
        "spmv operand sizes do not match the matrix");
  for (int64_t r = 0; r < a.rows; ++r) {
    Real acc = Real(0);
    for (int64_t k = a.offs[size_t(r)]; k < a.offs[size_t(r) + 1]; ++k)
      acc += a.val[size_t(k)] * x[size_t(a.col[size_t(k)])];
    y[size_t(r)] = acc;
  }
}

// y = A^T x without forming the transpose: row-ordered scatter, deterministic.
template <class Real>
inline void spmv_t(const SparseCSR<Real>& a, std::span<const Real> x, std::span<Real> y) {
  check(int64_t(x.size()) == a.rows && int64_t(y.size()) == a.cols, Err::kShapeMismatch,
        "transposed spmv operand sizes do not match the matrix");
  for (Real& v : y) v = Real(0);
  for (int64_t r = 0; r < a.rows; ++r) {
    Real xr = x[size_t(r)];
    for (int64_t k = a.offs[size_t(r)]; k < a.offs[size_t(r) + 1]; ++k)
      y[size_t(a.col[size_t(k)])] += a.val[size_t(k)] * xr;
  }
}

// Explicit transpose by counting sort over columns; output rows are sorted
// because input rows are visited in order.
template <class Real>
inline SparseCSR<Real> transpose(const SparseCSR<Real>& a) {
  SparseCSR<Real> t;
  t.rows = a.cols;
  t.cols = a.rows;
  t.offs.assign(size_t(a.cols) + 1, 0);
  for (int64_t c : a.col) ++t.offs[size_t(c) + 1];
  for (size_t i = 1; i < t.offs.size(); ++i) t.offs[i] += t.offs[i - 1];
  t.col.resize(size_t(a.nnz()));
  t.val.resize(size_t(a.nnz()));
  std::vector<int64_t> cursor(t.offs.begin(), t.offs.end() - 1);
  for (int64_t r = 0; r < a.rows; ++r)
    for (int64_t k = a.offs[size_t(r)]; k < a.offs[size_t(r) + 1]; ++k) {
      int64_t dst = cursor[size_t(a.col[size_t(k)])]++;
      t.col[size_t(dst)] = r;
      t.val[size_t(dst)] = a.val[size_t(k)];
    }
  return t;
}

// C = A B (Gustavson): one dense accumulator row over B's columns, entries
// emitted in sorted column order. Used once per nonlinear iteration to
// assemble the normal matrix, so an O(cols) scratch is acceptable.
template <class Real>
inline SparseCSR<Real> spgemm(const SparseCSR<Real>& a, const SparseCSR<Real>& b) {
  check(a.cols == b.rows, Err::kShapeMismatch, "spgemm inner dimensions do not match");
  SparseCSR<Real> c;
  c.cols = b.cols;
  std::vector<Real> acc(size_t(b.cols), Real(0));
  std::vector<char> used(size_t(b.cols), 0);
  std::vector<int64_t> touched;
  for (int64_t r = 0; r < a.rows; ++r) {
    touched.clear();
    for (int64_t ka = a.offs[size_t(r)]; ka < a.offs[size_t(r) + 1]; ++ka) {
      int64_t mid = a.col[size_t(ka)];
      Real av = a.val[size_t(ka)];
      for (int64_t kb = b.offs[size_t(mid)]; kb < b.offs[size_t(mid) + 1]; ++kb) {
        int64_t cc = b.col[size_t(kb)];
        if (!used[size_t(cc)]) {
          used[size_t(cc)] = 1;
          acc[size_t(cc)] = Real(0);
          touched.push_back(cc);
        }
        acc[size_t(cc)] += av * b.val[size_t(kb)];
      }
    }
    std::sort(touched.begin(), touched.end());
    c.begin_row();
    for (int64_t cc : touched) {
      c.push(cc, acc[size_t(cc)]);
      used[size_t(cc)] = 0;
    }
  }
  return c;
}

template <class Real>
inline void scale_inplace(SparseCSR<Real>& a, Real s) {
  for (Real& v : a.val) v *= s;
}

// Position of each diagonal entry's value in `val`, inserting explicit zeros
// for missing ones (requires rows == cols). LM adds its damping there in
// place each outer iteration.
template <class Real>
inline std::vector<int64_t> ensure_diag(SparseCSR<Real>& a) {
  check(a.rows == a.cols, Err::kShapeMismatch, "diagonal positions need a square matrix");
  SparseCSR<Real> out;
  out.rows = 0;
  out.cols = a.cols;
  std::vector<int64_t> pos(size_t(a.rows), -1);
  for (int64_t r = 0; r < a.rows; ++r) {
    out.begin_row();
    bool seen = false;
    for (int64_t k = a.offs[size_t(r)]; k < a.offs[size_t(r) + 1]; ++k) {
      int64_t c = a.col[size_t(k)];
      if (!seen && c > r) {
        pos[size_t(r)] = out.nnz();
        out.push(r, Real(0));
        seen = true;
      }
      if (c == r) {
        pos[size_t(r)] = out.nnz();
        seen = true;
      }
      out.push(c, a.val[size_t(k)]);
    }
    if (!seen) {
      pos[size_t(r)] = out.nnz();
      out.push(r, Real(0));
    }
  }
  a = std::move(out);
  return pos;
}

}  // namespace minopt
