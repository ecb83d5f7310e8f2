#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rhythm/error.hpp"
#include "rhythm/rng.hpp"

namespace rhythm::nn {

// When enabled, every op output is scanned for NaN/Inf. Explicit tensor
// construction is always scanned.
void set_debug_checks(bool on);
bool debug_checks();

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  std::vector<double> grad;  // empty until populated by backward
  bool requires_grad = false;
  bool frozen = false;    // participates in backward but must never be optimized
  bool produced = false;  // true for op outputs, false for leaves
  std::string name;
};

using NodePtr = std::shared_ptr<TensorNode>;

// 2-D value-semantic tensor handle. Row-major 64-bit floats. Copies alias the
// same storage; values are treated as immutable between explicit mutations by
// their owner (optimizer steps, finite-difference probes).
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->values.size(); }
  std::array<int, 2> shape() const { return {node_->rows, node_->cols}; }

  double at(int r, int c) const;
  double item() const;

  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  bool frozen() const { return node_->frozen; }
  Tensor& set_frozen(bool frozen) {
    node_->frozen = frozen;
    return *this;
  }
  const std::string& name() const { return node_->name; }
  Tensor& set_name(std::string name) {
    node_->name = std::move(name);
    return *this;
  }

  const NodePtr& node() const { return node_; }

 private:
  friend Tensor make_output(int rows, int cols, bool requires_grad);
  NodePtr node_;
};

Tensor uniform_init(int rows, int cols, double lo, double hi, rng::SplitMix64& gen);
Tensor normal_init(int rows, int cols, double stddev, rng::SplitMix64& gen);

void zero_grads(std::span<const Tensor> params);

// Execution record for reverse-mode differentiation. Ops append one backward
// step per executed op; backward() replays them in exact reverse order.
// Gradient buffers live on the tape; leaf gradients are merged into
// TensorNode::grad afterwards. Single-owner: a tape must not be shared
// across threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* name, std::function<void(Tape&)> backward);

  // Lazily-allocated zero-initialized gradient buffer for a node.
  double* grad_of(const NodePtr& node);
  // Null when the node never received gradient during this backward pass.
  const double* find_grad(const TensorNode* node) const;

  void backward(const Tensor& loss);

  std::size_t recorded_ops() const { return records_.size(); }
  std::vector<std::uint32_t> touch_counts() const;

 private:
  void merge_leaf_grads();

  struct Record {
    const char* name;
    std::function<void(Tape&)> fn;
    std::uint32_t touches = 0;
  };
  std::vector<Record> records_;
  std::vector<std::pair<NodePtr, std::vector<double>>> grads_;  // first-touch order
  std::unordered_map<const TensorNode*, std::size_t> grad_index_;
};

struct AttentionStats {
  std::uint64_t score_entries = 0;  // self-attention score-matrix positions
  std::uint64_t pool_entries = 0;   // pooling-attention score positions
};

struct ExecContext {
  Tape* tape = nullptr;
  bool training = false;
  rng::SplitMix64* rng = nullptr;  // dropout noise; required when training
  AttentionStats* attention_stats = nullptr;
};

// --- differentiable ops -----------------------------------------------------
// All ops accept a nullable tape; with a null tape no backward step is
// recorded and outputs do not track gradients.

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T
Tensor transpose(Tape* tape, const Tensor& x);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add_bias_row(Tape* tape, const Tensor& x, const Tensor& bias);  // bias [1,n]
Tensor hadamard(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& x, double factor);
Tensor scale_rows(Tape* tape, const Tensor& x, std::span<const double> factors);
Tensor softmax_rows(Tape* tape, const Tensor& x);
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor gelu(Tape* tape, const Tensor& x);
Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> targets);
Tensor gather_rows(Tape* tape, const Tensor& table, std::span<const int> indices);
Tensor slice_rows(Tape* tape, const Tensor& x, int begin, int end);
Tensor concat_rows(Tape* tape, std::span<const Tensor> parts);
Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b);
Tensor dropout(Tape* tape, const Tensor& x, double rate, bool training, rng::SplitMix64* gen);
Tensor reduce_sum(Tape* tape, const Tensor& x);  // -> 1x1

// Pinned tanh-approximation constant sqrt(2/pi).
inline constexpr double kGeluCoeff = 0.7978845608;

// --- raw kernels (exposed for reuse and benchmarks) -------------------------
// All kernels accumulate into C.
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n);
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n);  // b is [n,k]
void mm_tn(const double* a, const double* g, double* c, int m, int k, int n);  // a^T * g

// --- verification ------------------------------------------------------------
// Compares reverse-mode gradients of `forward`'s scalar output against
// central differences for each parameter. `coords_per_tensor == 0` checks
// every coordinate; otherwise that many seeded random coordinates per tensor.
// Returns the max relative error |analytic - numeric| / max(1, |analytic|).
double finite_diff_check(const std::function<Tensor(Tape*)>& forward,
                         std::span<const Tensor> params, double h = 1e-5,
                         std::size_t coords_per_tensor = 0,
                         std::uint64_t coord_seed = 0x5eed);
double finite_diff_check(const std::function<Tensor(Tape*)>& forward, const Tensor& theta,
                         double h = 1e-5);

}  // namespace rhythm::nn
