#pragma once

// Guarded register programs: the compact executable form a ConditionedIR is
// scheduled into.  A program is a straight list of register instructions
// partitioned into blocks, where each block carries a guard id; at run time a
// block whose guard register is zero is skipped wholesale.  Every output is a
// sum of guarded root registers, which reproduces conditioned evaluation
// bitwise (same child association, same math calls as the tree interpreter).

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "minopt/common.hpp"
#include "minopt/expr.hpp"

namespace minopt {

enum class Op : uint8_t {
  kImm,    // dst = imm
  kParam,  // dst = params[field]
  kIndex,  // dst = current element coordinate along axis `field`
  kLoadU,  // dst = unknown field read (acc, channel)
  kLoadA,  // dst = array field read
  kLoadC,  // dst = computed field read
  kLoadP,  // dst = direction (p) field read
  kInB,    // dst = 1 if acc lands inside the domain else 0
  kAdd,    // dst = a + b
  kMul,    // dst = a * b
  kPow,    // dst = pow_eval(a, pnum, pden)
  kUn,     // dst = unary fn `sub` applied to a
  kCmp,    // dst = compare `sub` of (a, b) as 0/1
  kAnd,    // dst = (a != 0 && b != 0) ? 1 : 0
  kOr,     // dst = (a != 0 || b != 0) ? 1 : 0
  kNot,    // dst = (a == 0) ? 1 : 0
  kSel,    // dst = (a != 0) ? b : c
};

struct Instr {
  Op op = Op::kImm;
  uint8_t sub = 0;  // UnaryFn / CmpOp payload
  uint16_t dst = 0;
  uint16_t a = 0, b = 0, c = 0;  // operand registers
  uint32_t gid = 0;              // guard table index (0 = always true)
  int32_t field = 0;
  int32_t channel = 0;
  Access acc{};
  double imm = 0;
  long long pnum = 1, pden = 1;
};

// One guard table entry.  `conds` lists the conjunction members (canonical
// order, InBounds first) for introspection; `reg` holds the register that
// carries the conjunction's 0/1 value at run time.  Entry 0 is "true" and has
// no register.
struct GuardInfo {
  std::vector<ExprId> conds;
  uint16_t reg = 0;
};

// Maximal run of instructions sharing one guard.
struct Block {
  uint32_t gid = 0;
  uint32_t begin = 0, end = 0;  // instruction index range [begin, end)
};

// An output accumulates guarded roots in listed order.
struct KernelOutput {
  std::vector<std::pair<uint32_t, uint16_t>> roots;  // (gid, register)
};

struct KernelProgram {
  std::vector<Instr> instrs;
  std::vector<Block> blocks;
  std::vector<GuardInfo> guards;  // guards[0] is the unconditional guard
  std::vector<KernelOutput> outputs;
  uint32_t num_regs = 0;

  std::string disasm() const;
};

// Executes one element.  `regs` is caller-owned scratch so repeated calls do
// not allocate; it is zeroed every time, which also gives skipped blocks'
// destinations a deterministic value.  EnvT follows the EvalEnv interface:
// params, pix, unknowns/arrays/computeds/pfields field tables, read(),
// inbounds().
template <class Real, class EnvT>
inline void run_program(const KernelProgram& p, const EnvT& env,
                        std::vector<Real>& regs, Real* out) {
  regs.assign(p.num_regs, Real(0));
  Real* r = regs.data();
  for (const Block& blk : p.blocks) {
    if (blk.gid != 0 && r[p.guards[blk.gid].reg] == Real(0)) continue;
    for (uint32_t i = blk.begin; i < blk.end; ++i) {
      const Instr& ins = p.instrs[i];
      Real v;
      switch (ins.op) {
        case Op::kImm: v = Real(ins.imm); break;
        case Op::kParam: v = Real(env.params[size_t(ins.field)]); break;
        case Op::kIndex: v = Real(env.pix[size_t(ins.field)]); break;
        case Op::kLoadU:
          v = env.read(env.unknowns[size_t(ins.field)], ins.acc, ins.channel);
          break;
        case Op::kLoadA:
          v = env.read(env.arrays[size_t(ins.field)], ins.acc, ins.channel);
          break;
        case Op::kLoadC:
          v = env.read(env.computeds[size_t(ins.field)], ins.acc, ins.channel);
          break;
        case Op::kLoadP:
          v = env.read(env.pfields[size_t(ins.field)], ins.acc, ins.channel);
          break;
        case Op::kInB: v = Real(env.inbounds(ins.acc) ? 1 : 0); break;
        case Op::kAdd: v = r[ins.a] + r[ins.b]; break;
        case Op::kMul: v = r[ins.a] * r[ins.b]; break;
        case Op::kPow: v = pow_eval(r[ins.a], ins.pnum, ins.pden); break;
        case Op::kUn: {
          Real x = r[ins.a];
          switch (UnaryFn(ins.sub)) {
            case UnaryFn::kSqrt: v = std::sqrt(x); break;
            case UnaryFn::kSin: v = std::sin(x); break;
            case UnaryFn::kCos: v = std::cos(x); break;
            case UnaryFn::kExp: v = std::exp(x); break;
            case UnaryFn::kLog: v = std::log(x); break;
            case UnaryFn::kAbs: v = std::fabs(x); break;
            case UnaryFn::kAtan: v = std::atan(x); break;
            default: v = Real(0); break;
          }
          break;
        }
        case Op::kCmp: {
          Real x = r[ins.a], y = r[ins.b];
          bool t = false;
          switch (CmpOp(ins.sub)) {
            case CmpOp::kEq: t = x == y; break;
            case CmpOp::kNe: t = x != y; break;
            case CmpOp::kLt: t = x < y; break;
            case CmpOp::kLe: t = x <= y; break;
            case CmpOp::kGt: t = x > y; break;
            case CmpOp::kGe: t = x >= y; break;
          }
          v = Real(t ? 1 : 0);
          break;
        }
        case Op::kAnd:
          v = Real(r[ins.a] != Real(0) && r[ins.b] != Real(0) ? 1 : 0);
          break;
        case Op::kOr:
          v = Real(r[ins.a] != Real(0) || r[ins.b] != Real(0) ? 1 : 0);
          break;
        case Op::kNot: v = Real(r[ins.a] == Real(0) ? 1 : 0); break;
        case Op::kSel: v = r[ins.a] != Real(0) ? r[ins.b] : r[ins.c]; break;
      }
      r[ins.dst] = v;
    }
  }
  for (size_t o = 0; o < p.outputs.size(); ++o) {
    Real acc = Real(0);
    for (auto [gid, reg] : p.outputs[o].roots) {
      if (gid != 0 && r[p.guards[gid].reg] == Real(0)) continue;
      acc += r[reg];
    }
    out[o] = acc;
  }
}

inline std::string KernelProgram::disasm() const {
  std::ostringstream os;
  auto acc_str = [](const Access& a) {
    std::ostringstream s;
    if (a.graph) {
      s << "@v" << a.slot;
    } else {
      s << "(" << a.off[0] << "," << a.off[1] << "," << a.off[2] << ")";
    }
    return s.str();
  };
  os << "regs " << num_regs << "\n";
  for (const Block& blk : blocks) {
    os << "block g" << blk.gid;
    if (blk.gid != 0) os << " @r" << guards[blk.gid].reg;
    os << ":\n";
    for (uint32_t i = blk.begin; i < blk.end; ++i) {
      const Instr& in = instrs[i];
      os << "  r" << in.dst << " = ";
      switch (in.op) {
        case Op::kImm: os << "const " << in.imm; break;
        case Op::kParam: os << "param " << in.field; break;
        case Op::kIndex: os << "index " << in.field; break;
        case Op::kLoadU:
          os << "unknown f" << in.field << ".c" << in.channel << " "
             << acc_str(in.acc);
          break;
        case Op::kLoadA:
          os << "array f" << in.field << ".c" << in.channel << " "
             << acc_str(in.acc);
          break;
        case Op::kLoadC:
          os << "computed f" << in.field << ".c" << in.channel << " "
             << acc_str(in.acc);
          break;
        case Op::kLoadP:
          os << "p f" << in.field << ".c" << in.channel << " "
             << acc_str(in.acc);
          break;
        case Op::kInB: os << "inbounds " << acc_str(in.acc); break;
        case Op::kAdd: os << "add r" << in.a << " r" << in.b; break;
        case Op::kMul: os << "mul r" << in.a << " r" << in.b; break;
        case Op::kPow:
          os << "pow r" << in.a << " " << in.pnum << "/" << in.pden;
          break;
        case Op::kUn: os << "un" << int(in.sub) << " r" << in.a; break;
        case Op::kCmp: os << "cmp" << int(in.sub) << " r" << in.a << " r" << in.b; break;
        case Op::kAnd: os << "and r" << in.a << " r" << in.b; break;
        case Op::kOr: os << "or r" << in.a << " r" << in.b; break;
        case Op::kNot: os << "not r" << in.a; break;
        case Op::kSel:
          os << "sel r" << in.a << " r" << in.b << " r" << in.c;
          break;
      }
      os << "\n";
    }
  }
  for (size_t o = 0; o < outputs.size(); ++o) {
    os << "out" << o << ":";
    for (auto [gid, reg] : outputs[o].roots) os << " g" << gid << ":r" << reg;
    os << "\n";
  }
  return os.str();
}

}  // namespace minopt
