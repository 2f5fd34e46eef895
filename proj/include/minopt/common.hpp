#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

namespace minopt {

// Error taxonomy. Every failure raised by the compiler, binder, or solver
// carries one of these codes so callers (and tests) can dispatch on it.
enum class Err {
  kSyntax,
  kUndeclaredIdentifier,
  kArityMismatch,
  kNonConstantOffset,
  kMixedDomain,
  kNonConstantExponent,
  kDomainMismatch,
  kNonBooleanPredicate,
  kCyclicComputedArray,
  kShapeMismatch,
  kIndexOutOfRange,
  kFormatError,
  kTruncatedFile,
  kGraphDomain,
  kBindError,
  kNonFiniteCost,
  kCyclicIR,
  kInternal,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::kSyntax: return "SyntaxError";
    case Err::kUndeclaredIdentifier: return "UndeclaredIdentifier";
    case Err::kArityMismatch: return "ArityMismatch";
    case Err::kNonConstantOffset: return "NonConstantOffset";
    case Err::kMixedDomain: return "MixedDomain";
    case Err::kNonConstantExponent: return "NonConstantExponent";
    case Err::kDomainMismatch: return "DomainMismatch";
    case Err::kNonBooleanPredicate: return "NonBooleanPredicate";
    case Err::kCyclicComputedArray: return "CyclicComputedArray";
    case Err::kShapeMismatch: return "ShapeMismatch";
    case Err::kIndexOutOfRange: return "IndexOutOfRange";
    case Err::kFormatError: return "FormatError";
    case Err::kTruncatedFile: return "TruncatedFile";
    case Err::kGraphDomain: return "GraphDomainError";
    case Err::kBindError: return "BindError";
    case Err::kNonFiniteCost: return "NonFiniteCost";
    case Err::kCyclicIR: return "CyclicIR";
    case Err::kInternal: return "InternalError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

inline void check(bool ok, Err code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

// Exact rational, used for Pow exponents. Always normalized: den > 0, gcd = 1.
struct Rat {
  long long num = 0;
  long long den = 1;

  Rat() = default;
  Rat(long long n) : num(n), den(1) {}
  Rat(long long n, long long d) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den == 0) fail(Err::kInternal, "rational with zero denominator");
    if (den < 0) { num = -num; den = -den; }
    long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) { num /= g; den /= g; }
    if (num == 0) den = 1;
  }

  bool is_integer() const { return den == 1; }
  double to_double() const { return double(num) / double(den); }

  friend Rat operator+(Rat a, Rat b) { return Rat(a.num * b.den + b.num * a.den, a.den * b.den); }
  friend Rat operator-(Rat a, Rat b) { return Rat(a.num * b.den - b.num * a.den, a.den * b.den); }
  friend Rat operator*(Rat a, Rat b) { return Rat(a.num * b.num, a.den * b.den); }
  friend bool operator==(Rat a, Rat b) { return a.num == b.num && a.den == b.den; }
  friend bool operator!=(Rat a, Rat b) { return !(a == b); }
};

// Integer power by squaring; shared helper so every execution path rounds identically.
template <class Real>
inline Real ipow(Real x, long long n) {
  if (n < 0) return Real(1) / ipow(x, -n);
  Real r = Real(1);
  while (n > 0) {
    if (n & 1) r *= x;
    x *= x;
    n >>= 1;
  }
  return r;
}

// Evaluate x^(num/den). This single definition is used by the reference
// interpreter and by the compiled-kernel executor, so the two are bitwise equal.
template <class Real>
inline Real pow_eval(Real x, long long num, long long den) {
  if (den == 1) {
    if (num >= -32 && num <= 32) return ipow(x, num);
    return std::pow(x, Real(num));
  }
  if (den == 2) return ipow(std::sqrt(x), num);
  return std::pow(x, Real(num) / Real(den));
}

inline uint64_t hash_mix(uint64_t seed, uint64_t v) {
  // 64-bit variant of the classic hash_combine.
  return seed ^ (v + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
}

inline uint64_t hash_double(double d) {
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(d));
  __builtin_memcpy(&bits, &d, sizeof(bits));
  return bits;
}

}  // namespace minopt
