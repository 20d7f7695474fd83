#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Dense f64 tensors with tape-based reverse-mode autodiff. Everything is
// desk-scale: values live in plain vectors, ops allocate fresh outputs, and
// a Tape owns the backward closures for one forward pass.

namespace tegaarec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};
class IndexError : public Error {
 public:
  using Error::Error;
};
class ContractError : public Error {
 public:
  using Error::Error;
};
class StateError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class IngestError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<std::size_t>());
}

class Tensor;

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // same size as values iff requires_grad
};

Tensor op_output(Shape shape, std::vector<double> values, bool track);

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor values size " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
    }
    d_ = std::make_shared<detail::TensorData>();
    d_->shape = std::move(shape);
    d_->values = std::move(values);
    d_->requires_grad = requires_grad;
    if (requires_grad) d_->grad.assign(d_->values.size(), 0.0);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::vector<double> v) {
    Shape s{1, v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->values.size(); }
  std::size_t rows() const { return d_->shape.at(0); }
  std::size_t cols() const { return d_->shape.size() == 1 ? d_->shape[0] : d_->shape.at(1); }
  bool is_scalar() const { return numel() == 1; }

  std::span<const double> values() const { return d_->values; }
  double operator[](std::size_t i) const { return d_->values[i]; }
  double at(std::size_t r, std::size_t c) const { return d_->values[r * cols() + c]; }

  double item() const {
    if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }

  std::span<double> grad() const {
    if (!d_->requires_grad) throw ContractError("grad() on tensor without requires_grad");
    return d_->grad;
  }

  void zero_grad() const {
    if (d_->requires_grad) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  // Optimizer-only mutation path; everything else treats values as immutable.
  std::span<double> values_mut() const { return d_->values; }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}

  friend Tensor detail::op_output(Shape shape, std::vector<double> values, bool track);

  std::shared_ptr<detail::TensorData> d_;
};

// The tape is append-only during a forward pass; appending order is a valid
// reverse-traversal order for backpropagation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> pullback) { nodes_.push_back(std::move(pullback)); }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  void run_backward() {
    if (consumed_) throw StateError("backward on consumed tape; reset() first");
    consumed_ = true;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

// RAII: installs a tape as the thread's recording target. One tape per
// training thread; evaluation runs with no scope and records nothing.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline Tensor op_output(Shape shape, std::vector<double> values, bool track) {
#ifndef NDEBUG
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by op");
  }
#endif
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = track;
  if (track) d->grad.assign(d->values.size(), 0.0);
  return Tensor(std::move(d));
}

inline bool should_track(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  bool track = detail::should_track({&a, &b});
  Tensor y = detail::op_output({m, n}, std::move(out), track);
  if (track) {
    active_tape()->record([a, b, y, m, k, n] {
      auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        const double* pb2 = b.values().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb2[l * n + j];
            ga[i * k + l] += acc;
          }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        const double* pa2 = a.values().data();
        for (std::size_t l = 0; l < k; ++l)
          for (std::size_t i = 0; i < m; ++i) {
            const double av = pa2[i * k + l];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[l * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return y;
}

inline Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects rank-2, got " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output({n, m}, std::move(out), track);
  if (track) {
    active_tape()->record([x, y, m, n] {
      auto gx = x.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return y;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  bool track = detail::should_track({&a, &b});
  Tensor y = detail::op_output(a.shape(), std::move(out), track);
  if (track) {
    active_tape()->record([a, b, y] {
      auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

// mat [m x n] + row [1 x n], broadcast over rows
inline Tensor add_rows(const Tensor& mat, const Tensor& row) {
  if (mat.rank() != 2 || row.numel() != mat.cols()) {
    throw DimensionError("add_rows shape mismatch " + shape_str(mat.shape()) + " vs " +
                         shape_str(row.shape()));
  }
  const std::size_t m = mat.rows(), n = mat.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = mat[i * n + j] + row[j];
  bool track = detail::should_track({&mat, &row});
  Tensor y = detail::op_output({m, n}, std::move(out), track);
  if (track) {
    active_tape()->record([mat, row, y, m, n] {
      auto g = y.grad();
      if (mat.requires_grad()) {
        auto gm = mat.grad();
        for (std::size_t i = 0; i < m * n; ++i) gm[i] += g[i];
      }
      if (row.requires_grad()) {
        auto gr = row.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      }
    });
  }
  return y;
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output(x.shape(), std::move(out), track);
  if (track) {
    active_tape()->record([x, y, s] {
      auto gx = x.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
    });
  }
  return y;
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output(x.shape(), std::move(out), track);
  if (track) {
    // subgradient at 0 is 0
    active_tape()->record([x, y] {
      auto gx = x.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) gx[i] += g[i];
    });
  }
  return y;
}

inline Tensor row_softmax(const Tensor& x) {
  if (x.rank() != 2 || x.cols() < 1) {
    throw DimensionError("row_softmax expects [m x n], n >= 1, got " + shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[i * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(x[i * n + j] - mx);
      sum += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
  }
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output({m, n}, std::move(out), track);
  if (track) {
    active_tape()->record([x, y, m, n] {
      auto gx = x.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    });
  }
  return y;
}

inline Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding_lookup expects [V x d] table, got " + shape_str(table.shape()));
  }
  const std::size_t v = table.rows(), d = table.cols();
  for (std::int64_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw IndexError("embedding id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(v) + ")");
    }
  }
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(src, src + d, out.begin() + i * d);
  }
  bool track = detail::should_track({&table});
  Tensor y = detail::op_output({ids.size(), d}, std::move(out), track);
  if (track) {
    std::vector<std::int64_t> idv(ids.begin(), ids.end());
    active_tape()->record([table, y, idv, d] {
      auto gt = table.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        double* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
      }
    });
  }
  return y;
}

inline Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1 || a.rank() > 2 ||
      (a.rank() == 2 && a.rows() != b.rows())) {
    throw DimensionError("concat_last leading-dim mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.rank() == 2 ? a.rows() : 1;
  const std::size_t p = a.rank() == 2 ? a.cols() : a.numel();
  const std::size_t q = b.rank() == 2 ? b.cols() : b.numel();
  std::vector<double> out(m * (p + q));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) out[i * (p + q) + j] = a[i * p + j];
    for (std::size_t j = 0; j < q; ++j) out[i * (p + q) + p + j] = b[i * q + j];
  }
  Shape shape = a.rank() == 1 ? Shape{p + q} : Shape{m, p + q};
  bool track = detail::should_track({&a, &b});
  Tensor y = detail::op_output(std::move(shape), std::move(out), track);
  if (track) {
    active_tape()->record([a, b, y, m, p, q] {
      auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
      }
    });
  }
  return y;
}

// rows: each [1 x n] or [n]; result [len(rows) x n]
inline Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ContractError("stack_rows on empty row list");
  const std::size_t n = rows[0].cols();
  for (const Tensor& r : rows) {
    if ((r.rank() == 2 && r.rows() != 1) || r.numel() != n) {
      throw DimensionError("stack_rows expects uniform rows of width " + std::to_string(n));
    }
  }
  const std::size_t m = rows.size();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    auto v = rows[i].values();
    std::copy(v.begin(), v.end(), out.begin() + i * n);
  }
  bool track = false;
  if (active_tape()) {
    for (const Tensor& r : rows) track = track || r.requires_grad();
  }
  Tensor y = detail::op_output({m, n}, std::move(out), track);
  if (track) {
    std::vector<Tensor> held(rows.begin(), rows.end());
    active_tape()->record([held, y, n] {
      auto g = y.grad();
      for (std::size_t i = 0; i < held.size(); ++i) {
        if (!held[i].requires_grad()) continue;
        auto gr = held[i].grad();
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      }
    });
  }
  return y;
}

inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  if (x.rank() != 2 || r0 >= r1 || r1 > x.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(r0) + ", " + std::to_string(r1) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t n = x.cols(), m = r1 - r0;
  std::vector<double> out(x.values().begin() + r0 * n, x.values().begin() + r1 * n);
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output({m, n}, std::move(out), track);
  if (track) {
    active_tape()->record([x, y, r0, m, n] {
      auto gx = x.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < m * n; ++i) gx[r0 * n + i] += g[i];
    });
  }
  return y;
}

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  if (x.rank() != 2 || c0 >= c1 || c1 > x.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * n + c0 + j];
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output({m, w}, std::move(out), track);
  if (track) {
    active_tape()->record([x, y, c0, m, n, w] {
      auto gx = x.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += g[i * w + j];
    });
  }
  return y;
}

// append zero rows up to total_rows
inline Tensor pad_rows(const Tensor& x, std::size_t total_rows) {
  if (x.rank() != 2 || total_rows < x.rows()) {
    throw DimensionError("pad_rows to " + std::to_string(total_rows) + " invalid for " +
                         shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(total_rows * n, 0.0);
  std::copy(x.values().begin(), x.values().end(), out.begin());
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output({total_rows, n}, std::move(out), track);
  if (track) {
    active_tape()->record([x, y, m, n] {
      auto gx = x.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < m * n; ++i) gx[i] += g[i];
    });
  }
  return y;
}

inline Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("mean_rows expects rank-2, got " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
  for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(m);
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output({1, n}, std::move(out), track);
  if (track) {
    active_tape()->record([x, y, m, n] {
      auto gx = x.grad();
      auto g = y.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] / static_cast<double>(m);
    });
  }
  return y;
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  bool track = detail::should_track({&x});
  Tensor y = detail::op_output({1}, {acc}, track);
  if (track) {
    active_tape()->record([x, y] {
      auto gx = x.grad();
      const double g = y.grad()[0];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

// rowwise layer norm with learned gain/bias, biased variance
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
  if (x.rank() != 2 || gain.numel() != x.cols() || bias.numel() != x.cols()) {
    throw DimensionError("layer_norm_rows shape mismatch " + shape_str(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = x[i * n + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
    }
  }
  bool track = detail::should_track({&x, &gain, &bias});
  Tensor y = detail::op_output({m, n}, std::move(out), track);
  if (track) {
    active_tape()->record([x, gain, bias, y, xhat = std::move(xhat), inv_std = std::move(inv_std),
                           m, n] {
      auto g = y.grad();
      if (gain.requires_grad()) {
        auto gg = gain.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dy = 0.0, mean_dy_xhat = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = g[i * n + j] * gain[j];
            mean_dy += dxh;
            mean_dy_xhat += dxh * xhat[i * n + j];
          }
          mean_dy /= static_cast<double>(n);
          mean_dy_xhat /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = g[i * n + j] * gain[j];
            gx[i * n + j] += inv_std[i] * (dxh - mean_dy - xhat[i * n + j] * mean_dy_xhat);
          }
        }
      }
    });
  }
  return y;
}

// mean over batch of -log softmax(logits)[i, target_i], via log-sum-exp
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  if (logits.rank() != 2 || logits.rows() != targets.size()) {
    throw DimensionError("cross_entropy expects [B x V] logits with B targets, got " +
                         shape_str(logits.shape()) + " and " + std::to_string(targets.size()));
  }
  const std::size_t b = logits.rows(), v = logits.cols();
  for (std::int64_t t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("cross_entropy target " + std::to_string(t) + " out of range [0, " +
                       std::to_string(v) + ")");
    }
  }
  double loss = 0.0;
  std::vector<double> lse(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (logits[i * v + j] > logits[i * v + arg]) arg = j;
    const double mx = logits[i * v + arg];
    double rest = 0.0;
    for (std::size_t j = 0; j < v; ++j)
      if (j != arg) rest += std::exp(logits[i * v + j] - mx);
    lse[i] = mx + std::log1p(rest);
    loss += (mx - logits[i * v + static_cast<std::size_t>(targets[i])]) + std::log1p(rest);
  }
  loss /= static_cast<double>(b);
  bool track = detail::should_track({&logits});
  Tensor y = detail::op_output({1}, {loss}, track);
  if (track) {
    std::vector<std::int64_t> tv(targets.begin(), targets.end());
    active_tape()->record([logits, y, tv, lse = std::move(lse), b, v] {
      auto gl = logits.grad();
      const double g = y.grad()[0] / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < v; ++j) {
          const double p = std::exp(logits[i * v + j] - lse[i]);
          gl[i * v + j] += g * (p - (static_cast<std::size_t>(tv[i]) == j ? 1.0 : 0.0));
        }
      }
    });
  }
  return y;
}

inline void backward(const Tensor& loss, Tape& tape) {
  if (!loss.is_scalar()) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward on a loss that was not recorded on the tape");
  }
  loss.grad()[0] += 1.0;
  tape.run_backward();
}

}  // namespace tegaarec
