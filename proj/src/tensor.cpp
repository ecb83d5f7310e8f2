#include "rhythm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace rhythm::nn {

namespace {

bool g_debug_checks =
#ifdef NDEBUG
    false;
#else
    true;
#endif

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, std::string("non-finite value in ") + what);
  }
}

void debug_check(const Tensor& t, const char* op) {
  if (g_debug_checks) check_finite(t.values(), op);
}

}  // namespace

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

Tensor make_output(int rows, int cols, bool requires_grad) {
  Tensor t;
  t.node_ = std::make_shared<TensorNode>();
  t.node_->rows = rows;
  t.node_->cols = cols;
  t.node_->values.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  t.node_->requires_grad = requires_grad;
  t.node_->produced = true;
  return t;
}

Tensor::Tensor(int rows, int cols, std::vector<double> values, bool requires_grad) {
  require(rows > 0 && cols > 0, ErrorCode::ShapeMismatch, "tensor extents must be positive");
  require(values.size() == static_cast<std::size_t>(rows) * cols, ErrorCode::ShapeMismatch,
          "value count does not match shape");
  check_finite(values, "tensor construction");
  node_ = std::make_shared<TensorNode>();
  node_->rows = rows;
  node_->cols = cols;
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  require(rows > 0 && cols > 0, ErrorCode::ShapeMismatch, "tensor extents must be positive");
  Tensor t;
  t.node_ = std::make_shared<TensorNode>();
  t.node_->rows = rows;
  t.node_->cols = cols;
  t.node_->values.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(int rows, int cols, double value, bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  std::fill(t.node_->values.begin(), t.node_->values.end(), value);
  check_finite(t.values(), "tensor construction");
  return t;
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  int n = static_cast<int>(values.size());
  return Tensor(1, n, std::move(values), requires_grad);
}

double Tensor::at(int r, int c) const {
  require(r >= 0 && r < rows() && c >= 0 && c < cols(), ErrorCode::IndexOutOfRange,
          "tensor index out of range");
  return node_->values[static_cast<std::size_t>(r) * cols() + c];
}

double Tensor::item() const {
  require(rows() == 1 && cols() == 1, ErrorCode::ShapeMismatch, "item() requires a 1x1 tensor");
  return node_->values[0];
}

std::span<const double> Tensor::grad() const {
  require(!node_->grad.empty(), ErrorCode::IndexOutOfRange,
          "gradient not populated; run backward first");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor uniform_init(int rows, int cols, double lo, double hi, rng::SplitMix64& gen) {
  Tensor t = Tensor::zeros(rows, cols, /*requires_grad=*/true);
  for (double& v : t.mutable_values()) v = gen.next_uniform(lo, hi);
  return t;
}

Tensor normal_init(int rows, int cols, double stddev, rng::SplitMix64& gen) {
  Tensor t = Tensor::zeros(rows, cols, /*requires_grad=*/true);
  for (double& v : t.mutable_values()) v = stddev * gen.next_normal();
  return t;
}

void zero_grads(std::span<const Tensor> params) {
  for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
}

// --- Tape --------------------------------------------------------------------

void Tape::record(const char* name, std::function<void(Tape&)> backward) {
  records_.push_back(Record{name, std::move(backward), 0});
}

double* Tape::grad_of(const NodePtr& node) {
  auto it = grad_index_.find(node.get());
  if (it != grad_index_.end()) return grads_[it->second].second.data();
  grad_index_.emplace(node.get(), grads_.size());
  grads_.emplace_back(node, std::vector<double>(node->values.size(), 0.0));
  return grads_.back().second.data();
}

const double* Tape::find_grad(const TensorNode* node) const {
  auto it = grad_index_.find(node);
  return it == grad_index_.end() ? nullptr : grads_[it->second].second.data();
}

void Tape::backward(const Tensor& loss) {
  require(loss.defined() && loss.rows() == 1 && loss.cols() == 1, ErrorCode::ShapeMismatch,
          "backward target must be a 1x1 scalar");
  require(loss.requires_grad(), ErrorCode::ShapeMismatch,
          "backward target does not track gradients");
  grad_of(loss.node())[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->fn(*this);
    ++it->touches;
  }
  merge_leaf_grads();
}

void Tape::merge_leaf_grads() {
  for (auto& [node, buf] : grads_) {
    if (node->produced || !node->requires_grad) continue;
    if (node->grad.empty()) node->grad.assign(node->values.size(), 0.0);
    for (std::size_t i = 0; i < buf.size(); ++i) node->grad[i] += buf[i];
    if (g_debug_checks) {
      for (double v : node->grad) {
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteGradient, "non-finite leaf gradient");
      }
    }
  }
}

std::vector<std::uint32_t> Tape::touch_counts() const {
  std::vector<std::uint32_t> out;
  out.reserve(records_.size());
  for (const Record& r : records_) out.push_back(r.touches);
  return out;
}

// --- kernels ------------------------------------------------------------------

void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  // Materialize b^T once; the transpose cost is negligible next to the product.
  std::vector<double> bt(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<std::size_t>(j) * k;
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = brow[p];
  }
  mm_nn(a, bt.data(), c, m, k, n);
}

void mm_tn(const double* a, const double* g, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* grow = g + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

// --- ops ----------------------------------------------------------------------

namespace {

bool track(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), ErrorCode::ShapeMismatch,
          "matmul inner dimensions disagree: " + std::to_string(a.cols()) + " vs " +
              std::to_string(b.rows()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  bool rg = track(tape, {&a, &b});
  Tensor out = make_output(m, n, rg);
  mm_nn(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n);
  debug_check(out, "matmul");
  if (rg) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape->record("matmul", [an, bn, on, m, k, n](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g) return;
      if (an->requires_grad) mm_nt(g, bn->values.data(), tp.grad_of(an), m, n, k);
      if (bn->requires_grad) mm_tn(an->values.data(), g, tp.grad_of(bn), m, k, n);
    });
  }
  return out;
}

Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), ErrorCode::ShapeMismatch,
          "matmul_nt inner dimensions disagree: " + std::to_string(a.cols()) + " vs " +
              std::to_string(b.cols()));
  const int m = a.rows(), k = a.cols(), n = b.rows();
  bool rg = track(tape, {&a, &b});
  Tensor out = make_output(m, n, rg);
  mm_nt(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n);
  debug_check(out, "matmul_nt");
  if (rg) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape->record("matmul_nt", [an, bn, on, m, k, n](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g) return;
      if (an->requires_grad) mm_nn(g, bn->values.data(), tp.grad_of(an), m, n, k);
      if (bn->requires_grad) mm_tn(g, an->values.data(), tp.grad_of(bn), m, n, k);
    });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& x) {
  const int m = x.rows(), n = x.cols();
  bool rg = track(tape, {&x});
  Tensor out = make_output(n, m, rg);
  const double* src = x.values().data();
  double* dst = out.mutable_values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) dst[static_cast<std::size_t>(j) * m + i] = src[static_cast<std::size_t>(i) * n + j];
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    tape->record("transpose", [xn, on, m, n](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) gx[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::ShapeMismatch,
          "add requires identical shapes");
  bool rg = track(tape, {&a, &b});
  Tensor out = make_output(a.rows(), a.cols(), rg);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.mutable_values().data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
  debug_check(out, "add");
  if (rg) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape->record("add", [an, bn, on](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g) return;
      const std::size_t sz = on->values.size();
      if (an->requires_grad) {
        double* ga = tp.grad_of(an);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = tp.grad_of(bn);
        for (std::size_t i = 0; i < sz; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor add_bias_row(Tape* tape, const Tensor& x, const Tensor& bias) {
  require(bias.rows() == 1 && bias.cols() == x.cols(), ErrorCode::ShapeMismatch,
          "bias must be [1 x cols]");
  const int m = x.rows(), n = x.cols();
  bool rg = track(tape, {&x, &bias});
  Tensor out = make_output(m, n, rg);
  const double* px = x.values().data();
  const double* pb = bias.values().data();
  double* po = out.mutable_values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<std::size_t>(i) * n + j] = px[static_cast<std::size_t>(i) * n + j] + pb[j];
  debug_check(out, "add_bias_row");
  if (rg) {
    NodePtr xn = x.node(), bn = bias.node(), on = out.node();
    tape->record("add_bias_row", [xn, bn, on, m, n](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g) return;
      if (xn->requires_grad) {
        double* gx = tp.grad_of(xn);
        for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i) gx[i] += g[i];
      }
      if (bn->requires_grad) {
        double* gb = tp.grad_of(bn);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

Tensor hadamard(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::ShapeMismatch,
          "hadamard requires identical shapes");
  bool rg = track(tape, {&a, &b});
  Tensor out = make_output(a.rows(), a.cols(), rg);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.mutable_values().data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i];
  debug_check(out, "hadamard");
  if (rg) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape->record("hadamard", [an, bn, on](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g) return;
      const std::size_t sz = on->values.size();
      if (an->requires_grad) {
        double* ga = tp.grad_of(an);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        double* gb = tp.grad_of(bn);
        for (std::size_t i = 0; i < sz; ++i) gb[i] += g[i] * an->values[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& x, double factor) {
  bool rg = track(tape, {&x});
  Tensor out = make_output(x.rows(), x.cols(), rg);
  const double* px = x.values().data();
  double* po = out.mutable_values().data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = factor * px[i];
  debug_check(out, "scale");
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    tape->record("scale", [xn, on, factor](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn);
      for (std::size_t i = 0; i < on->values.size(); ++i) gx[i] += factor * g[i];
    });
  }
  return out;
}

Tensor scale_rows(Tape* tape, const Tensor& x, std::span<const double> factors) {
  require(static_cast<int>(factors.size()) == x.rows(), ErrorCode::ShapeMismatch,
          "one factor per row required");
  const int m = x.rows(), n = x.cols();
  bool rg = track(tape, {&x});
  Tensor out = make_output(m, n, rg);
  const double* px = x.values().data();
  double* po = out.mutable_values().data();
  for (int i = 0; i < m; ++i) {
    const double f = factors[i];
    for (int j = 0; j < n; ++j) po[static_cast<std::size_t>(i) * n + j] = f * px[static_cast<std::size_t>(i) * n + j];
  }
  debug_check(out, "scale_rows");
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    std::vector<double> f(factors.begin(), factors.end());
    tape->record("scale_rows", [xn, on, f = std::move(f), m, n](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(i) * n + j] += f[i] * g[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

Tensor softmax_rows(Tape* tape, const Tensor& x) {
  const int m = x.rows(), n = x.cols();
  bool rg = track(tape, {&x});
  Tensor out = make_output(m, n, rg);
  const double* px = x.values().data();
  double* po = out.mutable_values().data();
  for (int i = 0; i < m; ++i) {
    const double* row = px + static_cast<std::size_t>(i) * n;
    double* orow = po + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) orow[j] *= inv;
  }
  debug_check(out, "softmax_rows");
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    tape->record("softmax_rows", [xn, on, m, n](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn);
      const double* s = on->values.data();
      for (int i = 0; i < m; ++i) {
        const double* gr = g + static_cast<std::size_t>(i) * n;
        const double* sr = s + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += gr[j] * sr[j];
        double* gxr = gx + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gxr[j] += sr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const int m = x.rows(), d = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == d, ErrorCode::ShapeMismatch,
          "layer_norm gamma must be [1 x d]");
  require(beta.rows() == 1 && beta.cols() == d, ErrorCode::ShapeMismatch,
          "layer_norm beta must be [1 x d]");
  require(eps > 0.0, ErrorCode::ShapeMismatch, "layer_norm eps must be positive");
  bool rg = track(tape, {&x, &gamma, &beta});
  Tensor out = make_output(m, d, rg);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m) * d);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const double* px = x.values().data();
  const double* pg = gamma.values().data();
  const double* pb = beta.values().data();
  double* po = out.mutable_values().data();
  for (int i = 0; i < m; ++i) {
    const double* row = px + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    double* hrow = xhat->data() + static_cast<std::size_t>(i) * d;
    double* orow = po + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      hrow[j] = (row[j] - mean) * inv;
      orow[j] = pg[j] * hrow[j] + pb[j];
    }
  }
  debug_check(out, "layer_norm");
  if (rg) {
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    tape->record("layer_norm", [xn, gn, bn, on, xhat, inv_std, m, d](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g) return;
      double* ggamma = gn->requires_grad ? tp.grad_of(gn) : nullptr;
      double* gbeta = bn->requires_grad ? tp.grad_of(bn) : nullptr;
      double* gx = xn->requires_grad ? tp.grad_of(xn) : nullptr;
      const double* pg = gn->values.data();
      for (int i = 0; i < m; ++i) {
        const double* gr = g + static_cast<std::size_t>(i) * d;
        const double* hr = xhat->data() + static_cast<std::size_t>(i) * d;
        if (ggamma || gbeta) {
          for (int j = 0; j < d; ++j) {
            if (ggamma) ggamma[j] += gr[j] * hr[j];
            if (gbeta) gbeta[j] += gr[j];
          }
        }
        if (gx) {
          double mean_h = 0.0, mean_hx = 0.0;
          for (int j = 0; j < d; ++j) {
            const double h = gr[j] * pg[j];
            mean_h += h;
            mean_hx += h * hr[j];
          }
          mean_h /= d;
          mean_hx /= d;
          const double inv = (*inv_std)[i];
          double* gxr = gx + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < d; ++j) {
            const double h = gr[j] * pg[j];
            gxr[j] += inv * (h - mean_h - hr[j] * mean_hx);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(Tape* tape, const Tensor& x) {
  bool rg = track(tape, {&x});
  Tensor out = make_output(x.rows(), x.cols(), rg);
  const double* px = x.values().data();
  double* po = out.mutable_values().data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = px[i];
    const double u = kGeluCoeff * (v + 0.044715 * v * v * v);
    po[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  debug_check(out, "gelu");
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    tape->record("gelu", [xn, on](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn);
      for (std::size_t i = 0; i < xn->values.size(); ++i) {
        const double v = xn->values[i];
        const double u = kGeluCoeff * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double du = kGeluCoeff * (1.0 + 3.0 * 0.044715 * v * v);
        gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
      }
    });
  }
  return out;
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  bool rg = track(tape, {&x});
  Tensor out = make_output(x.rows(), x.cols(), rg);
  const double* px = x.values().data();
  double* po = out.mutable_values().data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = px[i];
    if (v >= 0.0) {
      po[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      po[i] = e / (1.0 + e);
    }
  }
  debug_check(out, "sigmoid");
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    tape->record("sigmoid", [xn, on](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn);
      const double* s = on->values.data();
      for (std::size_t i = 0; i < on->values.size(); ++i) gx[i] += g[i] * s[i] * (1.0 - s[i]);
    });
  }
  return out;
}

Tensor cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> targets) {
  const int b = logits.rows(), v = logits.cols();
  require(static_cast<int>(targets.size()) == b, ErrorCode::ShapeMismatch,
          "one target per logit row required");
  for (int t : targets) {
    require(t >= 0 && t < v, ErrorCode::IndexOutOfRange,
            "target " + std::to_string(t) + " outside vocabulary of " + std::to_string(v));
  }
  bool rg = track(tape, {&logits});
  Tensor out = make_output(1, 1, rg);
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * v);
  const double* pl = logits.values().data();
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* row = pl + static_cast<std::size_t>(i) * v;
    double* prow = probs->data() + static_cast<std::size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < v; ++j) prow[j] *= inv;
    total += (std::log(sum) + mx) - row[targets[i]];
  }
  out.mutable_values()[0] = total / b;
  debug_check(out, "cross_entropy");
  if (rg) {
    NodePtr ln = logits.node(), on = out.node();
    std::vector<int> tgt(targets.begin(), targets.end());
    tape->record("cross_entropy", [ln, on, probs, tgt = std::move(tgt), b, v](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !ln->requires_grad) return;
      const double gscale = g[0] / b;
      double* gl = tp.grad_of(ln);
      for (int i = 0; i < b; ++i) {
        const double* prow = probs->data() + static_cast<std::size_t>(i) * v;
        double* grow = gl + static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) grow[j] += gscale * prow[j];
        grow[tgt[i]] -= gscale;
      }
    });
  }
  return out;
}

Tensor gather_rows(Tape* tape, const Tensor& table, std::span<const int> indices) {
  const int rows = table.rows(), cols = table.cols();
  const int n = static_cast<int>(indices.size());
  require(n > 0, ErrorCode::ShapeMismatch, "gather_rows requires at least one index");
  for (int idx : indices) {
    require(idx >= 0 && idx < rows, ErrorCode::IndexOutOfRange,
            "row index " + std::to_string(idx) + " outside table of " + std::to_string(rows));
  }
  bool rg = track(tape, {&table});
  Tensor out = make_output(n, cols, rg);
  const double* pt = table.values().data();
  double* po = out.mutable_values().data();
  for (int i = 0; i < n; ++i) {
    std::memcpy(po + static_cast<std::size_t>(i) * cols,
                pt + static_cast<std::size_t>(indices[i]) * cols, sizeof(double) * cols);
  }
  if (rg) {
    NodePtr tn = table.node(), on = out.node();
    std::vector<int> idx(indices.begin(), indices.end());
    tape->record("gather_rows", [tn, on, idx = std::move(idx), cols](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !tn->requires_grad) return;
      double* gt = tp.grad_of(tn);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* grow = g + i * cols;
        double* trow = gt + static_cast<std::size_t>(idx[i]) * cols;
        for (int j = 0; j < cols; ++j) trow[j] += grow[j];
      }
    });
  }
  return out;
}

Tensor slice_rows(Tape* tape, const Tensor& x, int begin, int end) {
  require(begin >= 0 && begin < end && end <= x.rows(), ErrorCode::IndexOutOfRange,
          "row slice out of range");
  const int n = end - begin, cols = x.cols();
  bool rg = track(tape, {&x});
  Tensor out = make_output(n, cols, rg);
  std::memcpy(out.mutable_values().data(),
              x.values().data() + static_cast<std::size_t>(begin) * cols,
              sizeof(double) * static_cast<std::size_t>(n) * cols);
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    tape->record("slice_rows", [xn, on, begin, n, cols](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn) + static_cast<std::size_t>(begin) * cols;
      for (std::size_t i = 0; i < static_cast<std::size_t>(n) * cols; ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor concat_rows(Tape* tape, std::span<const Tensor> parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat_rows requires at least one part");
  const int cols = parts[0].cols();
  int rows = 0;
  for (const Tensor& p : parts) {
    require(p.cols() == cols, ErrorCode::ShapeMismatch, "concat_rows column mismatch");
    rows += p.rows();
  }
  bool rg = false;
  if (tape) {
    for (const Tensor& p : parts) rg = rg || p.requires_grad();
  }
  Tensor out = make_output(rows, cols, rg);
  double* po = out.mutable_values().data();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::memcpy(po + offset, p.values().data(), sizeof(double) * p.size());
    offset += p.size();
  }
  if (rg) {
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) nodes.push_back(p.node());
    NodePtr on = out.node();
    tape->record("concat_rows", [nodes = std::move(nodes), on](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g) return;
      std::size_t offset = 0;
      for (const NodePtr& node : nodes) {
        const std::size_t sz = node->values.size();
        if (node->requires_grad) {
          double* gp = tp.grad_of(node);
          for (std::size_t i = 0; i < sz; ++i) gp[i] += g[offset + i];
        }
        offset += sz;
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), ErrorCode::ShapeMismatch, "concat_cols row mismatch");
  const int m = a.rows(), ca = a.cols(), cb = b.cols();
  bool rg = track(tape, {&a, &b});
  Tensor out = make_output(m, ca + cb, rg);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.mutable_values().data();
  for (int i = 0; i < m; ++i) {
    std::memcpy(po + static_cast<std::size_t>(i) * (ca + cb), pa + static_cast<std::size_t>(i) * ca,
                sizeof(double) * ca);
    std::memcpy(po + static_cast<std::size_t>(i) * (ca + cb) + ca,
                pb + static_cast<std::size_t>(i) * cb, sizeof(double) * cb);
  }
  if (rg) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape->record("concat_cols", [an, bn, on, m, ca, cb](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g) return;
      if (an->requires_grad) {
        double* ga = tp.grad_of(an);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < ca; ++j)
            ga[static_cast<std::size_t>(i) * ca + j] += g[static_cast<std::size_t>(i) * (ca + cb) + j];
      }
      if (bn->requires_grad) {
        double* gb = tp.grad_of(bn);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < cb; ++j)
            gb[static_cast<std::size_t>(i) * cb + j] += g[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
      }
    });
  }
  return out;
}

Tensor dropout(Tape* tape, const Tensor& x, double rate, bool training, rng::SplitMix64* gen) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::ShapeMismatch, "dropout rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  require(gen != nullptr, ErrorCode::ShapeMismatch, "dropout in training mode needs an RNG");
  bool rg = track(tape, {&x});
  Tensor out = make_output(x.rows(), x.cols(), rg);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const double keep_inv = 1.0 / (1.0 - rate);
  const double* px = x.values().data();
  double* po = out.mutable_values().data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = gen->next_unit() < rate ? 0.0 : keep_inv;
    (*mask)[i] = m;
    po[i] = px[i] * m;
  }
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    tape->record("dropout", [xn, on, mask](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn);
      for (std::size_t i = 0; i < mask->size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor reduce_sum(Tape* tape, const Tensor& x) {
  bool rg = track(tape, {&x});
  Tensor out = make_output(1, 1, rg);
  double total = 0.0;
  for (double v : x.values()) total += v;
  out.mutable_values()[0] = total;
  debug_check(out, "reduce_sum");
  if (rg) {
    NodePtr xn = x.node(), on = out.node();
    tape->record("reduce_sum", [xn, on](Tape& tp) {
      const double* g = tp.find_grad(on.get());
      if (!g || !xn->requires_grad) return;
      double* gx = tp.grad_of(xn);
      for (std::size_t i = 0; i < xn->values.size(); ++i) gx[i] += g[0];
    });
  }
  return out;
}

// --- finite differences --------------------------------------------------------

double finite_diff_check(const std::function<Tensor(Tape*)>& forward,
                         std::span<const Tensor> params, double h,
                         std::size_t coords_per_tensor, std::uint64_t coord_seed) {
  zero_grads(params);
  Tape tape;
  Tensor loss = forward(&tape);
  require(loss.rows() == 1 && loss.cols() == 1, ErrorCode::ShapeMismatch,
          "finite_diff_check requires a scalar-valued function");
  tape.backward(loss);

  rng::SplitMix64 picker(coord_seed);
  double max_rel = 0.0;
  for (const Tensor& p : params) {
    Tensor param = p;
    std::vector<std::size_t> coords;
    if (coords_per_tensor == 0 || coords_per_tensor >= param.size()) {
      coords.resize(param.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      coords.reserve(coords_per_tensor);
      for (std::size_t i = 0; i < coords_per_tensor; ++i)
        coords.push_back(picker.next_below(param.size()));
    }
    std::span<double> vals = param.mutable_values();
    for (std::size_t i : coords) {
      const double analytic = param.has_grad() ? param.grad()[i] : 0.0;
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = forward(nullptr).item();
      vals[i] = saved - h;
      const double down = forward(nullptr).item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
        fail(ErrorCode::NonFiniteGradient, "non-finite gradient during finite-difference check");
      }
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

double finite_diff_check(const std::function<Tensor(Tape*)>& forward, const Tensor& theta,
                         double h) {
  std::array<Tensor, 1> params{theta};
  return finite_diff_check(forward, params, h, 0, 0x5eed);
}

}  // namespace rhythm::nn
