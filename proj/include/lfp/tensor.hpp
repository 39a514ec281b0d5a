#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace lfp {

using Index = std::int64_t;
using ArrayXd = Eigen::ArrayXd;

/// Dense row-major shape. Rank 0 denotes a scalar (numel 1).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) { validate(); }

  int rank() const { return static_cast<int>(dims_.size()); }
  Index dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  Index operator[](int i) const { return dim(i); }
  const std::vector<Index>& dims() const { return dims_; }
  Index numel() const;
  Index last_dim() const { return dims_.empty() ? 1 : dims_.back(); }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return dims_ != o.dims_; }

  std::string str() const;  // e.g. "[32, 36, 16]"

 private:
  void validate() const;
  std::vector<Index> dims_;
};

/// The closed primitive set. Everything else in the project is composed
/// from these so that each backward rule stays individually auditable.
enum class Op : std::uint8_t {
  kInput,
  kConstant,
  kMatMul,  // 2-D GEMM, optional operand transposes
  kAdd,
  kSub,
  kMul,
  kExp,
  kLog,
  kNeg,
  kMaxConst,  // elementwise max(x, c); gradient 0 when x <= c
  kRelu,      // max(x, 0); gradient 0 when x <= 0
  kSoftmax,   // over the last axis, max-subtracted
  kSum,       // over named axes; reduced axes are dropped
  kMean,
  kConcat,  // over the last axis
  kReshape,
  kBroadcast,  // NumPy-style right-aligned expansion
};

const char* op_name(Op op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until Tape::clear().
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  Index numel() const { return shape().numel(); }
  const ArrayXd& value() const;
  const ArrayXd& grad() const;
  bool requires_grad() const;
};

struct Node {
  Op op = Op::kInput;
  Shape shape;
  ArrayXd value;
  ArrayXd grad;  // sized lazily during backward
  std::vector<int> parents;
  std::vector<int> axes;  // sorted reduce axes for kSum/kMean
  double cval = 0.0;      // kMaxConst threshold
  bool trans_a = false;   // kMatMul operand transposes
  bool trans_b = false;
  bool requires_grad = false;
  std::string name;  // optional; used in input diagnostics
};

/// Eager reverse-mode tape. Nodes are appended in execution order (which is
/// a topological order by construction); backward walks them once in
/// reverse. Values are checked finite after every primitive. Nodes live in
/// a deque so references to them stay valid while the graph grows. Not
/// thread-safe; distinct tapes may live on distinct threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(const Shape& shape, ArrayXd values, bool requires_grad,
            std::string name = {});
  Var constant(const Shape& shape, ArrayXd values, std::string name = {});
  Var scalar(double v);  // rank-0 constant
  /// Constant filled with `v`.
  Var full(const Shape& shape, double v);

  /// Populates grad fields of every requires_grad node reachable from
  /// `output`, which must be a scalar (numel 1). Grads are zeroed first;
  /// fan-out accumulates additively.
  void backward(Var output);

  std::size_t size() const { return nodes_.size(); }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  void clear() { nodes_.clear(); }

  Var emit(Node&& n);

 private:
  std::deque<Node> nodes_;
};

// --- primitives -----------------------------------------------------------

Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var exp(Var x);
Var log(Var x);
Var neg(Var x);
Var max_const(Var x, double c);
Var relu(Var x);
Var softmax(Var x);
Var sum(Var x, std::vector<int> axes);
Var mean(Var x, std::vector<int> axes);
Var sum_all(Var x);
Var mean_all(Var x);
Var concat(const std::vector<Var>& xs);
Var reshape(Var x, const Shape& shape);
Var broadcast(Var x, const Shape& shape);

// --- composites (primitive compositions; no new backward rules) -----------

Var add_scalar(Var x, double c);
Var mul_scalar(Var x, double c);
Var sub_from_scalar(double c, Var x);  // c - x
Var min_const(Var x, double c);
Var clamp(Var x, double lo, double hi);
/// softmax([x, 0]) picked at component 0; exact logistic with an everywhere
/// smooth gradient path.
Var sigmoid(Var x);
/// log-sum-exp over the last axis; the row max enters as a detached
/// constant, which leaves the gradient exact.
Var logsumexp_last(Var logits);
/// Shannon entropy of softmax(logits) per row: lse(z) - sum softmax(z)*z.
Var entropy_last(Var logits);
/// x / max(||x||, ~1e-6) over the last axis, via exp(-0.5 log(sum x^2 + eps)).
/// Zero rows stay exactly zero.
Var l2_normalize_last(Var x, double eps = 1e-12);

// --- verification ----------------------------------------------------------

struct TensorData {
  Shape shape;
  ArrayXd values;
};

using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Central-difference check of the analytic gradient of a scalar-valued
/// builder at `point`. h must lie in (1e-7, 1e-3). Returns
/// max |analytic - numeric| / max(1, |analytic|, |numeric|) over all
/// coordinates of all inputs.
double grad_check(const GraphBuilder& build, const std::vector<TensorData>& point,
                  double h);

std::vector<Index> row_major_strides(const Shape& s);

/// Enables flush-to-zero / denormals-are-zero on this thread. The saturated
/// soft-assignment (decay 5000) underflows most similarity weights to the
/// subnormal range, where x86 arithmetic is microcoded and an order of
/// magnitude slower; those weights are semantically zero. Runs automatically
/// on the main thread; worker threads that build graphs should call it too.
void configure_fp_environment();

}  // namespace lfp
