#include "lfp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE2__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace lfp {

void configure_fp_environment() {
#if defined(__SSE2__)
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

namespace {

// Large node buffers are allocated and freed once per graph; keeping them on
// the heap instead of per-allocation mmap regions avoids re-faulting the
// pages every training step.
const int kRuntimeTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 128 << 20);
#endif
  configure_fp_environment();
  return 0;
}();

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void fail_shape(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape) {
    fail_shape(std::string(op) + ": operands live on different tapes");
  }
}

// Multi-index increment in row-major order; false once exhausted.
bool advance(std::vector<Index>& idx, const std::vector<Index>& dims) {
  for (int i = static_cast<int>(dims.size()) - 1; i >= 0; --i) {
    if (++idx[static_cast<std::size_t>(i)] < dims[static_cast<std::size_t>(i)]) return true;
    idx[static_cast<std::size_t>(i)] = 0;
  }
  return false;
}

// Flat offsets of every multi-index over `dims` under `strides`.
void enumerate_offsets(const std::vector<Index>& dims, const std::vector<Index>& strides,
                       std::vector<Index>& out) {
  Index n = 1;
  for (Index d : dims) n *= d;
  out.clear();
  out.reserve(static_cast<std::size_t>(n));
  if (dims.empty()) {
    out.push_back(0);
    return;
  }
  std::vector<Index> idx(dims.size(), 0);
  do {
    Index off = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) off += idx[i] * strides[i];
    out.push_back(off);
  } while (advance(idx, dims));
}

struct ReducePlan {
  Shape out_shape;
  Index red_count = 1;
  // Reduced axes forming one contiguous run let the input be viewed as
  // (outer, red, inner); this covers every single-axis reduction.
  bool contiguous_run = false;
  Index outer = 1, inner = 1;
  // Fallback offset tables for scattered axis sets.
  std::vector<Index> kept_offsets;
  std::vector<Index> red_offsets;
};

ReducePlan make_reduce_plan(const Shape& in, const std::vector<int>& axes, const char* op) {
  const int rank = in.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
  if (axes.empty()) fail_shape(std::string(op) + ": no axes given");
  for (int a : axes) {
    if (a < 0 || a >= rank) {
      fail_shape(std::string(op) + ": axis " + std::to_string(a) +
                 " out of range for shape " + in.str());
    }
    if (reduced[static_cast<std::size_t>(a)]) {
      fail_shape(std::string(op) + ": duplicate axis " + std::to_string(a));
    }
    reduced[static_cast<std::size_t>(a)] = true;
  }
  ReducePlan plan;
  std::vector<Index> out_dims;
  for (int i = 0; i < rank; ++i) {
    if (reduced[static_cast<std::size_t>(i)]) {
      plan.red_count *= in.dim(i);
    } else {
      out_dims.push_back(in.dim(i));
    }
  }
  plan.out_shape = Shape(out_dims);

  const int lo = *std::min_element(axes.begin(), axes.end());
  const int hi = *std::max_element(axes.begin(), axes.end());
  if (hi - lo + 1 == static_cast<int>(axes.size())) {
    plan.contiguous_run = true;
    for (int i = 0; i < lo; ++i) plan.outer *= in.dim(i);
    for (int i = hi + 1; i < rank; ++i) plan.inner *= in.dim(i);
    return plan;
  }

  auto strides = row_major_strides(in);
  std::vector<Index> kept_dims, kept_strides, red_dims, red_strides;
  for (int i = 0; i < rank; ++i) {
    if (reduced[static_cast<std::size_t>(i)]) {
      red_dims.push_back(in.dim(i));
      red_strides.push_back(strides[static_cast<std::size_t>(i)]);
    } else {
      kept_dims.push_back(in.dim(i));
      kept_strides.push_back(strides[static_cast<std::size_t>(i)]);
    }
  }
  enumerate_offsets(kept_dims, kept_strides, plan.kept_offsets);
  enumerate_offsets(red_dims, red_strides, plan.red_offsets);
  return plan;
}

// Binned reproducible summation (two exact quantization levels). Each level
// accumulates multiples of one fixed grid step, which is exact in IEEE
// double arithmetic, so the result is a function of the addend multiset
// only: reductions are bit-stable under any permutation of the addends.
// The dropped third-level residue is below ~2^-100 relative. Clobbers buf.
double canonical_sum(double* buf, Index n) {
  int log2n = 0;
  while ((Index{1} << log2n) < n) ++log2n;
  double amax = 0.0;
  for (Index i = 0; i < n; ++i) amax = std::max(amax, std::abs(buf[i]));
  if (amax == 0.0) return 0.0;
  int e;
  std::frexp(amax, &e);
  const double m1 = std::ldexp(1.0, e + log2n + 2);
  double s1 = 0.0;
  double rmax = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double t = (m1 + buf[i]) - m1;  // exact grid quantization
    buf[i] -= t;                          // exact residue
    s1 += t;                              // exact: all terms on one grid
    rmax = std::max(rmax, std::abs(buf[i]));
  }
  if (rmax == 0.0) return s1;
  std::frexp(rmax, &e);
  const double m2 = std::ldexp(1.0, e + log2n + 2);
  double s2 = 0.0;
  for (Index i = 0; i < n; ++i) s2 += (m2 + buf[i]) - m2;
  return s1 + s2;
}

// Grid step 2^(e(x) + shift) per lane, built from the exponent bits. Zero
// lanes keep a zero grid, which quantizes exactly to zero.
void grid_steps(const ArrayXd& amax, int shift, ArrayXd& m) {
  m.resize(amax.size());
  for (Index i = 0; i < amax.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &amax[i], sizeof(bits));
    std::uint64_t b = (bits >> 52) & 0x7ff;
    if (b == 0) {
      m[i] = 0.0;  // zero or subnormal lane; treated below
      if (amax[i] != 0.0) b = 1;
      else continue;
    }
    const std::uint64_t eb = b + 1 + static_cast<std::uint64_t>(shift);
    const std::uint64_t mb = eb << 52;
    std::memcpy(&m[i], &mb, sizeof(mb));
  }
}

// Column-parallel version of canonical_sum over a row-major (red, inner)
// block: out[i] gets the order-independent sum of column i. Produces the
// same doubles as the scalar kernel on the same multisets.
void canonical_sum_block(const double* block, Index red, Index inner, double* out) {
  int log2n = 0;
  while ((Index{1} << log2n) < red) ++log2n;
  const int shift = log2n + 2;
  thread_local ArrayXd amax, m1, m2, s, resid, t, rmax;
  amax.setZero(inner);
  using CRow = Eigen::Map<const ArrayXd>;
  for (Index r = 0; r < red; ++r) {
    amax = amax.max(CRow(block + r * inner, inner).abs());
  }
  grid_steps(amax, shift, m1);
  s.setZero(inner);
  rmax.setZero(inner);
  resid.resize(red * inner);
  for (Index r = 0; r < red; ++r) {
    CRow row(block + r * inner, inner);
    auto rrow = resid.segment(r * inner, inner);
    t = (m1 + row) - m1;
    s += t;
    rrow = row - t;
    rmax = rmax.max(rrow.abs());
  }
  grid_steps(rmax, shift, m2);
  Eigen::Map<ArrayXd> o(out, inner);
  o = s;
  s.setZero(inner);
  for (Index r = 0; r < red; ++r) {
    auto rrow = resid.segment(r * inner, inner);
    s += (m2 + rrow) - m2;
  }
  o += s;
}

// Effective input strides for broadcasting `in` to `out` (right-aligned).
std::vector<Index> broadcast_strides(const Shape& in, const Shape& out, const char* op) {
  const int ri = in.rank();
  const int ro = out.rank();
  if (ri > ro) {
    fail_shape(std::string(op) + ": cannot broadcast " + in.str() + " to lower-rank " +
               out.str());
  }
  auto in_strides = row_major_strides(in);
  std::vector<Index> eff(static_cast<std::size_t>(ro), 0);
  for (int o = 0; o < ro; ++o) {
    int i = o - (ro - ri);
    if (i < 0) continue;
    Index di = in.dim(i);
    Index dn = out.dim(o);
    if (di == dn) {
      eff[static_cast<std::size_t>(o)] = in_strides[static_cast<std::size_t>(i)];
    } else if (di == 1) {
      eff[static_cast<std::size_t>(o)] = 0;
    } else {
      fail_shape(std::string(op) + ": cannot broadcast " + in.str() + " to " + out.str());
    }
  }
  return eff;
}

thread_local std::vector<double> t_scratch;
thread_local std::vector<Index> t_offsets;

}  // namespace

// --- Shape ------------------------------------------------------------------

void Shape::validate() const {
  for (Index d : dims_) {
    if (d <= 0) fail_shape("shape dimensions must be positive, got " + str());
  }
}

Index Shape::numel() const {
  Index n = 1;
  for (Index d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ", ";
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

std::vector<Index> row_major_strides(const Shape& s) {
  std::vector<Index> strides(static_cast<std::size_t>(s.rank()), 1);
  for (int i = s.rank() - 2; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i + 1)] * s.dim(i + 1);
  }
  return strides;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kNeg: return "neg";
    case Op::kMaxConst: return "max_const";
    case Op::kRelu: return "relu";
    case Op::kSoftmax: return "softmax";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcat: return "concat";
    case Op::kReshape: return "reshape";
    case Op::kBroadcast: return "broadcast";
  }
  return "?";
}

// --- Var --------------------------------------------------------------------

const Shape& Var::shape() const { return tape->node(id).shape; }
const ArrayXd& Var::value() const { return tape->node(id).value; }
const ArrayXd& Var::grad() const { return tape->node(id).grad; }
bool Var::requires_grad() const { return tape->node(id).requires_grad; }

// --- Tape -------------------------------------------------------------------

Var Tape::emit(Node&& n) {
  if (n.value.size() != n.shape.numel()) {
    fail_shape(std::string(op_name(n.op)) + ": value size " +
               std::to_string(n.value.size()) + " does not match shape " + n.shape.str());
  }
  if (!n.value.allFinite()) {
    throw std::runtime_error(std::string(op_name(n.op)) +
                             (n.name.empty() ? "" : " '" + n.name + "'") +
                             " produced a non-finite value");
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(const Shape& shape, ArrayXd values, bool requires_grad, std::string name) {
  Node n;
  n.op = Op::kInput;
  n.shape = shape;
  n.value = std::move(values);
  n.requires_grad = requires_grad;
  n.name = std::move(name);
  return emit(std::move(n));
}

Var Tape::constant(const Shape& shape, ArrayXd values, std::string name) {
  Node n;
  n.op = Op::kConstant;
  n.shape = shape;
  n.value = std::move(values);
  n.name = std::move(name);
  return emit(std::move(n));
}

Var Tape::scalar(double v) {
  ArrayXd a(1);
  a[0] = v;
  return constant(Shape{}, std::move(a));
}

Var Tape::full(const Shape& shape, double v) {
  return constant(shape, ArrayXd::Constant(shape.numel(), v));
}

// --- primitive forward ops ---------------------------------------------------

namespace {

Var unary(Var x, Op op, const std::function<void(const ArrayXd&, ArrayXd&)>& fn) {
  Node n;
  n.op = op;
  n.shape = x.shape();
  n.value.resize(x.value().size());
  fn(x.value(), n.value);
  n.parents = {x.id};
  n.requires_grad = x.requires_grad();
  return x.tape->emit(std::move(n));
}

Var binary_same_shape(Var a, Var b, Op op) {
  check_same_tape(a, b, op_name(op));
  if (a.shape() != b.shape()) {
    fail_shape(std::string(op_name(op)) + ": shapes differ: " + a.shape().str() + " vs " +
               b.shape().str());
  }
  Node n;
  n.op = op;
  n.shape = a.shape();
  switch (op) {
    case Op::kAdd: n.value = a.value() + b.value(); break;
    case Op::kSub: n.value = a.value() - b.value(); break;
    case Op::kMul: n.value = a.value() * b.value(); break;
    default: fail_shape("binary_same_shape: bad op");
  }
  n.parents = {a.id, b.id};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  return a.tape->emit(std::move(n));
}

}  // namespace

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  check_same_tape(a, b, "matmul");
  if (a.shape().rank() != 2 || b.shape().rank() != 2) {
    fail_shape("matmul: operands must be rank 2, got " + a.shape().str() + " and " +
               b.shape().str());
  }
  const Index m = trans_a ? a.shape()[1] : a.shape()[0];
  const Index k = trans_a ? a.shape()[0] : a.shape()[1];
  const Index k2 = trans_b ? b.shape()[1] : b.shape()[0];
  const Index p = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != k2) {
    fail_shape("matmul: inner dimensions differ: " + a.shape().str() +
               (trans_a ? "^T" : "") + " x " + b.shape().str() + (trans_b ? "^T" : ""));
  }
  Node n;
  n.op = Op::kMatMul;
  n.shape = Shape{m, p};
  n.value.resize(m * p);
  {
    ConstMap am(a.value().data(), a.shape()[0], a.shape()[1]);
    ConstMap bm(b.value().data(), b.shape()[0], b.shape()[1]);
    MutMap cm(n.value.data(), m, p);
    if (!trans_a && !trans_b) cm.noalias() = am * bm;
    else if (trans_a && !trans_b) cm.noalias() = am.transpose() * bm;
    else if (!trans_a && trans_b) cm.noalias() = am * bm.transpose();
    else cm.noalias() = am.transpose() * bm.transpose();
  }
  n.parents = {a.id, b.id};
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  n.requires_grad = a.requires_grad() || b.requires_grad();
  return a.tape->emit(std::move(n));
}

Var add(Var a, Var b) { return binary_same_shape(a, b, Op::kAdd); }
Var sub(Var a, Var b) { return binary_same_shape(a, b, Op::kSub); }
Var mul(Var a, Var b) { return binary_same_shape(a, b, Op::kMul); }

Var exp(Var x) {
  return unary(x, Op::kExp, [](const ArrayXd& v, ArrayXd& o) { o = v.exp(); });
}

Var log(Var x) {
  return unary(x, Op::kLog, [](const ArrayXd& v, ArrayXd& o) { o = v.log(); });
}

Var neg(Var x) {
  return unary(x, Op::kNeg, [](const ArrayXd& v, ArrayXd& o) { o = -v; });
}

Var max_const(Var x, double c) {
  Node n;
  n.op = Op::kMaxConst;
  n.shape = x.shape();
  n.value = x.value().max(c);
  n.parents = {x.id};
  n.cval = c;
  n.requires_grad = x.requires_grad();
  return x.tape->emit(std::move(n));
}

Var relu(Var x) {
  return unary(x, Op::kRelu, [](const ArrayXd& v, ArrayXd& o) { o = v.max(0.0); });
}

Var softmax(Var x) {
  if (x.shape().rank() < 1) fail_shape("softmax: requires rank >= 1");
  const Index last = x.shape().last_dim();
  const Index rows = x.numel() / last;
  Node n;
  n.op = Op::kSoftmax;
  n.shape = x.shape();
  n.value.resize(x.numel());
  for (Index r = 0; r < rows; ++r) {
    auto in = x.value().segment(r * last, last);
    auto out = n.value.segment(r * last, last);
    const double mx = in.maxCoeff();
    out = (in - mx).exp();
    out /= out.sum();
  }
  n.parents = {x.id};
  n.requires_grad = x.requires_grad();
  return x.tape->emit(std::move(n));
}

namespace {

Var reduce(Var x, std::vector<int> axes, Op op) {
  std::sort(axes.begin(), axes.end());
  ReducePlan plan = make_reduce_plan(x.shape(), axes, op_name(op));
  const Index red_n = plan.red_count;
  Node n;
  n.op = op;
  n.shape = plan.out_shape;
  n.value.resize(n.shape.numel());
  const double* p = x.value().data();
  auto& buf = t_scratch;
  if (plan.contiguous_run) {
    const Index inner = plan.inner;
    if (inner == 1) {
      buf.resize(static_cast<std::size_t>(red_n));
      for (Index o = 0; o < plan.outer; ++o) {
        std::copy(p + o * red_n, p + (o + 1) * red_n, buf.begin());
        n.value[o] = canonical_sum(buf.data(), red_n);
      }
    } else {
      for (Index o = 0; o < plan.outer; ++o) {
        canonical_sum_block(p + o * red_n * inner, red_n, inner,
                            n.value.data() + o * inner);
      }
    }
  } else {
    buf.resize(static_cast<std::size_t>(red_n));
    for (std::size_t b = 0; b < plan.kept_offsets.size(); ++b) {
      const Index base = plan.kept_offsets[b];
      for (std::size_t j = 0; j < plan.red_offsets.size(); ++j) {
        buf[j] = p[base + plan.red_offsets[j]];
      }
      n.value[static_cast<Index>(b)] = canonical_sum(buf.data(), red_n);
    }
  }
  if (op == Op::kMean) n.value /= static_cast<double>(red_n);
  n.parents = {x.id};
  n.axes = std::move(axes);
  n.requires_grad = x.requires_grad();
  return x.tape->emit(std::move(n));
}

std::vector<int> all_axes(const Shape& s) {
  std::vector<int> axes(static_cast<std::size_t>(s.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}

}  // namespace

Var sum(Var x, std::vector<int> axes) { return reduce(x, std::move(axes), Op::kSum); }
Var mean(Var x, std::vector<int> axes) { return reduce(x, std::move(axes), Op::kMean); }

Var sum_all(Var x) {
  if (x.shape().rank() == 0) return x;
  return sum(x, all_axes(x.shape()));
}

Var mean_all(Var x) {
  if (x.shape().rank() == 0) return x;
  return mean(x, all_axes(x.shape()));
}

Var concat(const std::vector<Var>& xs) {
  if (xs.empty()) fail_shape("concat: no inputs");
  if (xs.size() == 1) return xs[0];
  Tape* tape = xs[0].tape;
  const Shape& s0 = xs[0].shape();
  if (s0.rank() < 1) fail_shape("concat: requires rank >= 1");
  Index total_last = 0;
  for (const Var& x : xs) {
    check_same_tape(xs[0], x, "concat");
    if (x.shape().rank() != s0.rank()) {
      fail_shape("concat: rank mismatch: " + s0.str() + " vs " + x.shape().str());
    }
    for (int i = 0; i + 1 < s0.rank(); ++i) {
      if (x.shape()[i] != s0[i]) {
        fail_shape("concat: leading dims differ: " + s0.str() + " vs " + x.shape().str());
      }
    }
    total_last += x.shape().last_dim();
  }
  std::vector<Index> out_dims = s0.dims();
  out_dims.back() = total_last;
  Node n;
  n.op = Op::kConcat;
  n.shape = Shape(out_dims);
  n.value.resize(n.shape.numel());
  const Index rows = n.shape.numel() / total_last;
  Index col = 0;
  for (const Var& x : xs) {
    const Index l = x.shape().last_dim();
    for (Index r = 0; r < rows; ++r) {
      n.value.segment(r * total_last + col, l) = x.value().segment(r * l, l);
    }
    col += l;
    n.parents.push_back(x.id);
    n.requires_grad = n.requires_grad || x.requires_grad();
  }
  return tape->emit(std::move(n));
}

Var reshape(Var x, const Shape& shape) {
  if (shape.numel() != x.numel()) {
    fail_shape("reshape: cannot reshape " + x.shape().str() + " (numel " +
               std::to_string(x.numel()) + ") to " + shape.str());
  }
  Node n;
  n.op = Op::kReshape;
  n.shape = shape;
  n.value = x.value();
  n.parents = {x.id};
  n.requires_grad = x.requires_grad();
  return x.tape->emit(std::move(n));
}

Var broadcast(Var x, const Shape& shape) {
  auto eff = broadcast_strides(x.shape(), shape, "broadcast");
  Node n;
  n.op = Op::kBroadcast;
  n.shape = shape;
  n.value.resize(shape.numel());
  if (shape.rank() == 0) {
    n.value = x.value();
  } else {
    const Index last = shape.last_dim();
    const Index last_stride = eff.back();
    std::vector<Index> outer_dims(shape.dims().begin(), shape.dims().end() - 1);
    std::vector<Index> outer_strides(eff.begin(), eff.end() - 1);
    auto& offs = t_offsets;
    enumerate_offsets(outer_dims, outer_strides, offs);
    const double* src = x.value().data();
    for (std::size_t o = 0; o < offs.size(); ++o) {
      auto dst = n.value.segment(static_cast<Index>(o) * last, last);
      if (last_stride == 1) {
        dst = x.value().segment(offs[o], last);
      } else {
        dst.setConstant(src[offs[o]]);
      }
    }
  }
  n.parents = {x.id};
  n.requires_grad = x.requires_grad();
  return x.tape->emit(std::move(n));
}

// --- backward ----------------------------------------------------------------

void Tape::backward(Var output) {
  if (output.tape != this || output.id < 0 ||
      output.id >= static_cast<int>(nodes_.size())) {
    fail_shape("backward: output does not belong to this tape");
  }
  if (output.numel() != 1) {
    fail_shape("backward: output must be a scalar, got shape " + output.shape().str());
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) {
      n.grad.resize(n.value.size());
      n.grad.setZero();
    }
  }
  Node& out = nodes_[static_cast<std::size_t>(output.id)];
  if (!out.requires_grad) return;  // constant function: all grads stay zero
  out.grad[0] = 1.0;

  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad) continue;
    const ArrayXd& g = n.grad;
    auto parent = [&](int j) -> Node& {
      return nodes_[static_cast<std::size_t>(n.parents[static_cast<std::size_t>(j)])];
    };
    auto wants = [&](int j) { return parent(j).requires_grad; };
    switch (n.op) {
      case Op::kInput:
      case Op::kConstant:
        break;
      case Op::kMatMul: {
        Node& a = parent(0);
        Node& b = parent(1);
        const Index m = n.shape[0];
        const Index p = n.shape[1];
        ConstMap gm(g.data(), m, p);
        ConstMap am(a.value.data(), a.shape[0], a.shape[1]);
        ConstMap bm(b.value.data(), b.shape[0], b.shape[1]);
        if (a.requires_grad) {
          MutMap da(a.grad.data(), a.shape[0], a.shape[1]);
          if (!n.trans_a) {
            if (n.trans_b) da.noalias() += gm * bm;
            else da.noalias() += gm * bm.transpose();
          } else {
            if (n.trans_b) da.noalias() += bm.transpose() * gm.transpose();
            else da.noalias() += bm * gm.transpose();
          }
        }
        if (b.requires_grad) {
          MutMap db(b.grad.data(), b.shape[0], b.shape[1]);
          if (!n.trans_b) {
            if (n.trans_a) db.noalias() += am * gm;
            else db.noalias() += am.transpose() * gm;
          } else {
            if (n.trans_a) db.noalias() += gm.transpose() * am.transpose();
            else db.noalias() += gm.transpose() * am;
          }
        }
        break;
      }
      case Op::kAdd:
        if (wants(0)) parent(0).grad += g;
        if (wants(1)) parent(1).grad += g;
        break;
      case Op::kSub:
        if (wants(0)) parent(0).grad += g;
        if (wants(1)) parent(1).grad -= g;
        break;
      case Op::kMul:
        if (wants(0)) parent(0).grad += g * parent(1).value;
        if (wants(1)) parent(1).grad += g * parent(0).value;
        break;
      case Op::kExp:
        if (wants(0)) parent(0).grad += g * n.value;
        break;
      case Op::kLog:
        if (wants(0)) parent(0).grad += g / parent(0).value;
        break;
      case Op::kNeg:
        if (wants(0)) parent(0).grad -= g;
        break;
      case Op::kMaxConst:
        // The constant branch is active at equality, so the kink gets 0.
        if (wants(0)) {
          parent(0).grad += g * (parent(0).value > n.cval).cast<double>();
        }
        break;
      case Op::kRelu:
        if (wants(0)) {
          parent(0).grad += g * (parent(0).value > 0.0).cast<double>();
        }
        break;
      case Op::kSoftmax: {
        if (!wants(0)) break;
        const Index last = n.shape.last_dim();
        const Index rows = n.value.size() / last;
        for (Index r = 0; r < rows; ++r) {
          auto y = n.value.segment(r * last, last);
          auto gr = g.segment(r * last, last);
          const double dot = (gr * y).sum();
          parent(0).grad.segment(r * last, last) += y * (gr - dot);
        }
        break;
      }
      case Op::kSum:
      case Op::kMean: {
        if (!wants(0)) break;
        ReducePlan plan = make_reduce_plan(parent(0).shape, n.axes, op_name(n.op));
        const double scale =
            n.op == Op::kMean ? 1.0 / static_cast<double>(plan.red_count) : 1.0;
        ArrayXd& pg = parent(0).grad;
        if (plan.contiguous_run) {
          const Index inner = plan.inner;
          const Index red = plan.red_count;
          for (Index o = 0; o < plan.outer; ++o) {
            auto gseg = g.segment(o * inner, inner);
            for (Index r = 0; r < red; ++r) {
              pg.segment((o * red + r) * inner, inner) += gseg * scale;
            }
          }
        } else {
          for (std::size_t b = 0; b < plan.kept_offsets.size(); ++b) {
            const double gb = g[static_cast<Index>(b)] * scale;
            const Index base = plan.kept_offsets[b];
            for (Index off : plan.red_offsets) pg[base + off] += gb;
          }
        }
        break;
      }
      case Op::kConcat: {
        const Index total_last = n.shape.last_dim();
        const Index rows = n.value.size() / total_last;
        Index col = 0;
        for (std::size_t j = 0; j < n.parents.size(); ++j) {
          Node& pj = parent(static_cast<int>(j));
          const Index l = pj.shape.last_dim();
          if (pj.requires_grad) {
            for (Index r = 0; r < rows; ++r) {
              pj.grad.segment(r * l, l) += g.segment(r * total_last + col, l);
            }
          }
          col += l;
        }
        break;
      }
      case Op::kReshape:
        if (wants(0)) parent(0).grad += g;
        break;
      case Op::kBroadcast: {
        if (!wants(0)) break;
        Node& p = parent(0);
        if (n.shape.rank() == 0) {
          p.grad += g;
          break;
        }
        auto eff = broadcast_strides(p.shape, n.shape, "broadcast");
        const Index last = n.shape.last_dim();
        const Index last_stride = eff.back();
        std::vector<Index> outer_dims(n.shape.dims().begin(), n.shape.dims().end() - 1);
        std::vector<Index> outer_strides(eff.begin(), eff.end() - 1);
        auto& offs = t_offsets;
        enumerate_offsets(outer_dims, outer_strides, offs);
        for (std::size_t o = 0; o < offs.size(); ++o) {
          auto gseg = g.segment(static_cast<Index>(o) * last, last);
          if (last_stride == 1) {
            p.grad.segment(offs[o], last) += gseg;
          } else {
            p.grad[offs[o]] += gseg.sum();
          }
        }
        break;
      }
    }
  }

  for (const Node& n : nodes_) {
    if (n.requires_grad && n.grad.size() > 0 && !n.grad.allFinite()) {
      throw std::runtime_error(std::string("backward: ") + op_name(n.op) +
                               " received a non-finite gradient");
    }
  }
}

// --- composites ---------------------------------------------------------------

Var add_scalar(Var x, double c) {
  return add(x, broadcast(x.tape->scalar(c), x.shape()));
}

Var mul_scalar(Var x, double c) {
  return mul(x, broadcast(x.tape->scalar(c), x.shape()));
}

Var sub_from_scalar(double c, Var x) {
  return sub(broadcast(x.tape->scalar(c), x.shape()), x);
}

Var min_const(Var x, double c) { return neg(max_const(neg(x), -c)); }

Var clamp(Var x, double lo, double hi) { return min_const(max_const(x, lo), hi); }

Var sigmoid(Var x) {
  const Index n = x.numel();
  Var flat = reshape(x, Shape{n, 1});
  Var z = concat({flat, x.tape->full(Shape{n, 1}, 0.0)});
  Var p = softmax(z);
  ArrayXd mask(2);
  mask << 1.0, 0.0;
  Var masked = mul(p, broadcast(x.tape->constant(Shape{2}, mask), Shape{n, 2}));
  return reshape(sum(masked, {1}), x.shape());
}

Var logsumexp_last(Var logits) {
  const Shape& s = logits.shape();
  if (s.rank() < 1) fail_shape("logsumexp: requires rank >= 1");
  const Index last = s.last_dim();
  const Index rows = logits.numel() / last;
  ArrayXd row_max(rows);
  for (Index r = 0; r < rows; ++r) {
    row_max[r] = logits.value().segment(r * last, last).maxCoeff();
  }
  std::vector<Index> row_dims(s.dims().begin(), s.dims().end() - 1);
  Shape row_shape(row_dims);
  std::vector<Index> ext_dims = row_dims;
  ext_dims.push_back(1);
  Var m = logits.tape->constant(row_shape, row_max);
  Var mb = broadcast(reshape(m, Shape(ext_dims)), s);
  Var se = sum(exp(sub(logits, mb)), {s.rank() - 1});
  return add(log(se), m);
}

Var entropy_last(Var logits) {
  Var lse = logsumexp_last(logits);
  Var sz = sum(mul(softmax(logits), logits), {logits.shape().rank() - 1});
  return sub(lse, sz);
}

Var l2_normalize_last(Var x, double eps) {
  const Shape& s = x.shape();
  if (s.rank() < 1) fail_shape("l2_normalize: requires rank >= 1");
  Var ss = sum(mul(x, x), {s.rank() - 1});
  Var inv = exp(mul_scalar(log(add_scalar(ss, eps)), -0.5));
  std::vector<Index> ext_dims(s.dims().begin(), s.dims().end() - 1);
  ext_dims.push_back(1);
  return mul(x, broadcast(reshape(inv, Shape(ext_dims)), s));
}

// --- grad_check ----------------------------------------------------------------

namespace {

double eval_scalar(const GraphBuilder& build, const std::vector<TensorData>& point) {
  Tape tape;
  std::vector<Var> ins;
  ins.reserve(point.size());
  for (const TensorData& p : point) {
    ins.push_back(tape.input(p.shape, p.values, false));
  }
  Var out = build(tape, ins);
  return out.value()[0];
}

}  // namespace

double grad_check(const GraphBuilder& build, const std::vector<TensorData>& point,
                  double h) {
  if (!(h > 1e-7 && h < 1e-3)) {
    fail_shape("grad_check: h must lie in (1e-7, 1e-3), got " + std::to_string(h));
  }
  Tape tape;
  std::vector<Var> ins;
  ins.reserve(point.size());
  for (const TensorData& p : point) {
    ins.push_back(tape.input(p.shape, p.values, true));
  }
  Var out = build(tape, ins);
  if (out.numel() != 1) {
    fail_shape("grad_check: function must produce a scalar, got shape " +
               out.shape().str());
  }
  tape.backward(out);
  std::vector<ArrayXd> analytic;
  analytic.reserve(ins.size());
  for (Var v : ins) analytic.push_back(v.grad());

  double max_err = 0.0;
  std::vector<TensorData> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    for (Index j = 0; j < point[i].values.size(); ++j) {
      const double orig = probe[i].values[j];
      probe[i].values[j] = orig + h;
      const double fp = eval_scalar(build, probe);
      probe[i].values[j] = orig - h;
      const double fm = eval_scalar(build, probe);
      probe[i].values[j] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace lfp
