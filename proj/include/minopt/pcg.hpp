#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "minopt/common.hpp"

namespace minopt {

struct PcgOptions {
  int max_iters = 10;
  double tol_rel = 1e-3;  // stop when r'z <= tol_rel^2 * r0'z0
  double tol_abs = 0.0;   // ... or r'z <= tol_abs
  bool use_preconditioner = true;
};

struct PcgOutcome {
  int iterations = 0;
  bool indefinite = false;  // p'Ap <= 0: operator not positive definite;
                            // delta holds the last iterate before the failure
  bool nonfinite = false;   // a NaN/Inf reached the recurrence
};

// Scratch vectors reused across linear solves within the outer loop.
template <class Real>
struct PcgWorkspace {
  std::vector<Real> r, z, p, ap;
  void prepare(size_t n) {
    r.resize(n);
    z.resize(n);
    p.resize(n);
    ap.resize(n);
  }
};

namespace pcg_detail {

template <class Real>
inline Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real acc = Real(0);
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Frozen unknowns take no part in the Krylov recurrence: their rows and
// columns act as identity, so every vector entry is pinned to exact zero
// after each update rather than trusting the operator to preserve it.
template <class Real>
inline void zero_excluded(std::span<Real> v, const uint8_t* excluded) {
  if (!excluded) return;
  for (size_t i = 0; i < v.size(); ++i)
    if (excluded[i]) v[i] = Real(0);
}

}  // namespace pcg_detail

// Preconditioned conjugate gradient for A delta = b with Jacobi diagonal m.
// delta starts at zero; apply_a(x, y) must write y = A x. Failures are
// reported through the outcome flags, never thrown: the outer loop decides
// whether a truncated step is still usable.
template <class Real, class ApplyA>
inline PcgOutcome pcg(ApplyA&& apply_a, std::span<const Real> b, std::span<const Real> m,
                      std::span<Real> delta, const PcgOptions& opt,
                      PcgWorkspace<Real>& ws, const uint8_t* excluded = nullptr) {
  const size_t n = b.size();
  check(m.size() == n && delta.size() == n, Err::kShapeMismatch,
        "pcg operand sizes do not match");
  ws.prepare(n);
  std::span<Real> r(ws.r.data(), n), z(ws.z.data(), n), p(ws.p.data(), n),
      ap(ws.ap.data(), n);

  PcgOutcome out;
  for (size_t i = 0; i < n; ++i) {
    delta[i] = Real(0);
    r[i] = b[i];
  }
  pcg_detail::zero_excluded(r, excluded);
  auto precondition = [&] {
    if (opt.use_preconditioner)
      for (size_t i = 0; i < n; ++i) z[i] = r[i] / m[i];
    else
      for (size_t i = 0; i < n; ++i) z[i] = r[i];
    pcg_detail::zero_excluded(z, excluded);
  };
  precondition();

  Real rz = pcg_detail::dot<Real>(r, z);
  if (!std::isfinite(double(rz))) {
    out.nonfinite = true;
    return out;
  }
  const Real stop = std::max(Real(opt.tol_rel) * Real(opt.tol_rel) * rz, Real(opt.tol_abs));
  if (rz <= stop) return out;

  for (size_t i = 0; i < n; ++i) p[i] = z[i];

  for (int k = 0; k < opt.max_iters; ++k) {
    apply_a(std::span<const Real>(p.data(), n), ap);
    pcg_detail::zero_excluded(ap, excluded);
    Real pap = pcg_detail::dot<Real>(p, ap);
    if (!std::isfinite(double(pap))) {
      out.nonfinite = true;
      return out;
    }
    if (pap <= Real(0)) {
      out.indefinite = true;
      return out;
    }
    Real alpha = rz / pap;
    for (size_t i = 0; i < n; ++i) delta[i] += alpha * p[i];
    pcg_detail::zero_excluded(delta, excluded);
    for (size_t i = 0; i < n; ++i) r[i] -= alpha * ap[i];
    pcg_detail::zero_excluded(r, excluded);
    precondition();
    Real rz_next = pcg_detail::dot<Real>(r, z);
    if (!std::isfinite(double(rz_next))) {
      out.nonfinite = true;
      return out;
    }
    ++out.iterations;
    if (rz_next <= stop) return out;
    Real beta = rz_next / rz;
    for (size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    pcg_detail::zero_excluded(p, excluded);
    rz = rz_next;
  }
  return out;
}

}  // namespace minopt
