#include "duplex/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

namespace duplex::tensor {

namespace {

std::atomic<uint64_t> g_seq{0};
thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] void shape_fail(const std::string& op, const std::vector<int>& a,
                             const std::vector<int>& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

std::shared_ptr<Node> make_node(std::vector<int> shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

// Attaches parents and the backward closure when recording is active.
Tensor record(std::shared_ptr<Node> out, const std::vector<Tensor>& inputs,
              std::function<void(Node&)> fn) {
  if (g_grad_enabled && any_requires_grad(inputs)) {
    out->requires_grad = true;
    out->parents.reserve(inputs.size());
    for (const auto& t : inputs) out->parents.push_back(t.node());
    out->backward_fn = std::move(fn);
  }
  return Tensor(std::move(out));
}

int last_dim(const std::vector<int>& shape) {
  if (shape.empty()) throw std::invalid_argument("operation requires rank >= 1");
  return shape.back();
}

}  // namespace

int64_t numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  for (int d : shape)
    if (d < 0) throw std::invalid_argument("negative dimension");
  auto n = make_node(shape, std::vector<double>(numel(shape), v));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("from_data: shape does not match data length");
  auto n = make_node(std::move(shape), std::move(data));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> data(numel(shape));
  for (auto& x : data) x = rng.gaussian() * stddev;
  return from_data(std::move(shape), std::move(data), requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const auto& s = node_->shape;
  if (idx.size() != s.size()) throw std::invalid_argument("at: rank mismatch");
  int64_t flat = 0;
  auto it = idx.begin();
  for (size_t i = 0; i < s.size(); ++i, ++it) {
    if (*it < 0 || *it >= s[i]) throw std::out_of_range("at: index out of range");
    flat = flat * s[i] + *it;
  }
  return node_->value[flat];
}

Tensor Tensor::detach() const {
  auto n = make_node(node_->shape, node_->value);
  return Tensor(std::move(n));
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  std::vector<double> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a, b}, [](Node& self) {
    for (auto& p : self.parents) p->ensure_grad();
    auto& ga = self.parents[0]->grad;
    auto& gb = self.parents[1]->grad;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  std::vector<double> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a, b}, [](Node& self) {
    for (auto& p : self.parents) p->ensure_grad();
    auto& ga = self.parents[0]->grad;
    auto& gb = self.parents[1]->grad;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  std::vector<double> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a, b}, [](Node& self) {
    for (auto& p : self.parents) p->ensure_grad();
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (size_t i = 0; i < self.grad.size(); ++i) {
      pa.grad[i] += self.grad[i] * pb.value[i];
      pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.value()[i] + c;
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a}, [](Node& self) {
    self.parents[0]->ensure_grad();
    auto& ga = self.parents[0]->grad;
    for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = a.value()[i] * c;
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a}, [c](Node& self) {
    self.parents[0]->ensure_grad();
    auto& ga = self.parents[0]->grad;
    for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += c * self.grad[i];
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_fail("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + static_cast<size_t>(p) * n;
      double* vrow = v.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) vrow[j] += aip * brow[j];
    }
  }
  auto out = make_node({m, n}, std::move(v));
  return record(out, {a, b}, [m, k, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    // dA += G B^T ; dB += A^T G
    for (int i = 0; i < m; ++i) {
      const double* grow = self.grad.data() + static_cast<size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const double* brow = pb.value.data() + static_cast<size_t>(p) * n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
        pa.grad[static_cast<size_t>(i) * k + p] += acc;
      }
      const double* arow = pa.value.data() + static_cast<size_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const double aip = arow[p];
        if (aip == 0.0) continue;
        double* gbrow = pb.grad.data() + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank 2 required");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> v(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      v[static_cast<size_t>(j) * m + i] = a.value()[static_cast<size_t>(i) * n + j];
  auto out = make_node({n, m}, std::move(v));
  return record(out, {a}, [m, n](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        p.grad[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
  });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
  auto out = make_node(std::move(shape), a.value());
  return record(out, {a}, [](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

// ---- nonlinearities ----------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* /*name*/, const Tensor& a, Fwd fwd, Bwd bwd) {
  std::vector<double> v(a.size());
  for (int64_t i = 0; i < a.size(); ++i) v[i] = fwd(a.value()[i]);
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a}, [bwd](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      p.grad[i] += self.grad[i] * bwd(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& a) {
  return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp_op(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log_op(const Tensor& a) {
  for (double x : a.value())
    if (!(x > 0.0)) throw std::domain_error("log: non-positive input");
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_op(const Tensor& a) {
  for (double x : a.value())
    if (x < 0.0) throw std::domain_error("sqrt: negative input");
  return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

// ---- last-axis normalizers ----------------------------------------------------

Tensor softmax_last(const Tensor& a) {
  const int d = last_dim(a.shape());
  const int64_t rows = a.size() / d;
  std::vector<double> v(a.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * d;
    double* y = v.data() + r * d;
    double mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < d; ++j) y[j] /= z;
  }
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a}, [d, rows](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* s = self.value.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += g[j] * s[j];
      double* gx = p.grad.data() + r * d;
      for (int j = 0; j < d; ++j) gx[j] += s[j] * (g[j] - dot);
    }
  });
}

Tensor log_softmax_last(const Tensor& a) {
  const int d = last_dim(a.shape());
  const int64_t rows = a.size() / d;
  std::vector<double> v(a.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * d;
    double* y = v.data() + r * d;
    double mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < d; ++j) y[j] = x[j] - lse;
  }
  auto out = make_node(a.shape(), std::move(v));
  return record(out, {a}, [d, rows](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double gsum = 0.0;
      for (int j = 0; j < d; ++j) gsum += g[j];
      double* gx = p.grad.data() + r * d;
      for (int j = 0; j < d; ++j) gx[j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

Tensor logsumexp_last(const Tensor& a) {
  const int d = last_dim(a.shape());
  const int64_t rows = a.size() / d;
  std::vector<int> out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> v(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * d;
    double mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += std::exp(x[j] - mx);
    v[r] = mx + std::log(z);
  }
  auto out = make_node(std::move(out_shape), std::move(v));
  return record(out, {a}, [d, rows](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* x = p.value.data() + r * d;
      double* gx = p.grad.data() + r * d;
      const double lse = self.value[r];
      const double g = self.grad[r];
      for (int j = 0; j < d; ++j) gx[j] += g * std::exp(x[j] - lse);
    }
  });
}

// ---- reductions ----------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  auto out = make_node({1}, {s});
  return record(out, {a}, [](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double x : a.value()) s += x;
  auto out = make_node({1}, {s * inv});
  return record(out, {a}, [inv](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0] * inv;
  });
}

// ---- slicing / concatenation -----------------------------------------------------

Tensor row(const Tensor& a, int i) { return slice_rows(a, i, i + 1); }

Tensor slice_rows(const Tensor& a, int begin, int end) {
  if (a.rank() != 2) throw std::invalid_argument("slice_rows: rank 2 required");
  const int t = a.dim(0), d = a.dim(1);
  if (begin < 0 || end > t || begin > end) throw std::out_of_range("slice_rows: bad range");
  std::vector<double> v(a.value().begin() + static_cast<size_t>(begin) * d,
                        a.value().begin() + static_cast<size_t>(end) * d);
  auto out = make_node({end - begin, d}, std::move(v));
  return record(out, {a}, [begin, d](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      p.grad[static_cast<size_t>(begin) * d + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, int begin, int end) {
  if (a.rank() != 2) throw std::invalid_argument("slice_cols: rank 2 required");
  const int t = a.dim(0), d = a.dim(1);
  if (begin < 0 || end > d || begin > end) throw std::out_of_range("slice_cols: bad range");
  const int w = end - begin;
  std::vector<double> v(static_cast<size_t>(t) * w);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < w; ++j)
      v[static_cast<size_t>(i) * w + j] = a.value()[static_cast<size_t>(i) * d + begin + j];
  auto out = make_node({t, w}, std::move(v));
  return record(out, {a}, [t, d, w, begin](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < w; ++j)
        p.grad[static_cast<size_t>(i) * d + begin + j] +=
            self.grad[static_cast<size_t>(i) * w + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int d = parts[0].dim(1);
  int t = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != d) shape_fail("concat_rows", parts[0].shape(), p.shape());
    t += p.dim(0);
  }
  std::vector<double> v;
  v.reserve(static_cast<size_t>(t) * d);
  for (const auto& p : parts) v.insert(v.end(), p.value().begin(), p.value().end());
  auto out = make_node({t, d}, std::move(v));
  return record(out, parts, [](Node& self) {
    size_t off = 0;
    for (auto& p : self.parents) {
      p->ensure_grad();
      for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[off + i];
      off += p->grad.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int t = parts[0].dim(0);
  int d = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != t) shape_fail("concat_cols", parts[0].shape(), p.shape());
    d += p.dim(1);
  }
  std::vector<double> v(static_cast<size_t>(t) * d);
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < w; ++j)
        v[static_cast<size_t>(i) * d + off + j] = p.value()[static_cast<size_t>(i) * w + j];
    off += w;
  }
  auto out = make_node({t, d}, std::move(v));
  return record(out, parts, [t, d](Node& self) {
    int off = 0;
    for (auto& p : self.parents) {
      p->ensure_grad();
      const int w = p->shape[1];
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < w; ++j)
          p->grad[static_cast<size_t>(i) * w + j] +=
              self.grad[static_cast<size_t>(i) * d + off + j];
      off += w;
    }
  });
}

// ---- broadcast helpers -------------------------------------------------------------

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
    shape_fail("add_rowvec", x.shape(), b.shape());
  const int t = x.dim(0), d = x.dim(1);
  std::vector<double> v(x.size());
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      v[static_cast<size_t>(i) * d + j] = x.value()[static_cast<size_t>(i) * d + j] + b.value()[j];
  auto out = make_node(x.shape(), std::move(v));
  return record(out, {x, b}, [t, d](Node& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    px.ensure_grad();
    pb.ensure_grad();
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) {
        const double g = self.grad[static_cast<size_t>(i) * d + j];
        px.grad[static_cast<size_t>(i) * d + j] += g;
        pb.grad[j] += g;
      }
  });
}

Tensor outer_add(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    shape_fail("outer_add", a.shape(), b.shape());
  const int t = a.dim(0), u = b.dim(0), j = a.dim(1);
  std::vector<double> v(static_cast<size_t>(t) * u * j);
  for (int i = 0; i < t; ++i) {
    const double* ar = a.value().data() + static_cast<size_t>(i) * j;
    for (int q = 0; q < u; ++q) {
      const double* br = b.value().data() + static_cast<size_t>(q) * j;
      double* vr = v.data() + (static_cast<size_t>(i) * u + q) * j;
      for (int k = 0; k < j; ++k) vr[k] = ar[k] + br[k];
    }
  }
  auto out = make_node({t, u, j}, std::move(v));
  return record(out, {a, b}, [t, u, j](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (int i = 0; i < t; ++i)
      for (int q = 0; q < u; ++q) {
        const double* gr = self.grad.data() + (static_cast<size_t>(i) * u + q) * j;
        double* ga = pa.grad.data() + static_cast<size_t>(i) * j;
        double* gb = pb.grad.data() + static_cast<size_t>(q) * j;
        for (int k = 0; k < j; ++k) {
          ga[k] += gr[k];
          gb[k] += gr[k];
        }
      }
  });
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding_rows: table must be rank 2");
  const int v = table.dim(0), e = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v) throw std::out_of_range("embedding_rows: id out of vocabulary");
  std::vector<double> out_v(ids.size() * static_cast<size_t>(e));
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out_v.data() + i * e, table.value().data() + static_cast<size_t>(ids[i]) * e,
                sizeof(double) * e);
  auto out = make_node({static_cast<int>(ids.size()), e}, std::move(out_v));
  return record(out, {table}, [ids, e](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      double* dst = p.grad.data() + static_cast<size_t>(ids[i]) * e;
      const double* src = self.grad.data() + i * e;
      for (int k = 0; k < e; ++k) dst[k] += src[k];
    }
  });
}

Tensor unfold_rows(const Tensor& x, int width, int left_pad) {
  if (x.rank() != 2) throw std::invalid_argument("unfold_rows: rank 2 required");
  if (width < 1 || left_pad < 0 || left_pad >= width)
    throw std::invalid_argument("unfold_rows: bad window");
  const int t = x.dim(0), d = x.dim(1);
  std::vector<double> v(static_cast<size_t>(t) * width * d, 0.0);
  for (int i = 0; i < t; ++i)
    for (int w = 0; w < width; ++w) {
      const int src = i - width + 1 + left_pad + w;
      if (src < 0 || src >= t) continue;
      std::memcpy(v.data() + (static_cast<size_t>(i) * width + w) * d,
                  x.value().data() + static_cast<size_t>(src) * d, sizeof(double) * d);
    }
  auto out = make_node({t, width * d}, std::move(v));
  return record(out, {x}, [t, d, width, left_pad](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < t; ++i)
      for (int w = 0; w < width; ++w) {
        const int src = i - width + 1 + left_pad + w;
        if (src < 0 || src >= t) continue;
        const double* g = self.grad.data() + (static_cast<size_t>(i) * width + w) * d;
        double* dst = p.grad.data() + static_cast<size_t>(src) * d;
        for (int k = 0; k < d; ++k) dst[k] += g[k];
      }
  });
}

Tensor masked_softmax_rows(const Tensor& scores, const std::vector<uint8_t>& mask) {
  if (scores.rank() != 2) throw std::invalid_argument("masked_softmax_rows: rank 2 required");
  const int t = scores.dim(0), s = scores.dim(1);
  if (mask.size() != static_cast<size_t>(t) * s)
    throw std::invalid_argument("masked_softmax_rows: mask size mismatch");
  std::vector<double> v(scores.size(), 0.0);
  for (int i = 0; i < t; ++i) {
    const double* x = scores.value().data() + static_cast<size_t>(i) * s;
    const uint8_t* m = mask.data() + static_cast<size_t>(i) * s;
    double* y = v.data() + static_cast<size_t>(i) * s;
    double mx = -1.0;
    bool any = false;
    for (int j = 0; j < s; ++j)
      if (m[j]) {
        mx = any ? std::max(mx, x[j]) : x[j];
        any = true;
      }
    if (!any) continue;  // fully masked row stays all-zero
    double z = 0.0;
    for (int j = 0; j < s; ++j)
      if (m[j]) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
      }
    for (int j = 0; j < s; ++j)
      if (m[j]) y[j] /= z;
  }
  auto out = make_node(scores.shape(), std::move(v));
  return record(out, {scores}, [t, s, mask](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < t; ++i) {
      const double* y = self.value.data() + static_cast<size_t>(i) * s;
      const double* g = self.grad.data() + static_cast<size_t>(i) * s;
      const uint8_t* m = mask.data() + static_cast<size_t>(i) * s;
      double dot = 0.0;
      for (int j = 0; j < s; ++j)
        if (m[j]) dot += g[j] * y[j];
      double* gx = p.grad.data() + static_cast<size_t>(i) * s;
      for (int j = 0; j < s; ++j)
        if (m[j]) gx[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<uint8_t>& mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0))
    throw std::invalid_argument("attention: incompatible shapes");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor scores = mul_scalar(matmul(q, transpose(k)), scale);
  Tensor w = masked_softmax_rows(scores, mask);
  return matmul(w, v);
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> keep(x.size());
  std::vector<double> v(x.size());
  for (int64_t i = 0; i < x.size(); ++i) {
    keep[i] = rng.uniform() >= rate ? scale : 0.0;
    v[i] = x.value()[i] * keep[i];
  }
  auto out = make_node(x.shape(), std::move(v));
  return record(out, {x}, [keep = std::move(keep)](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * keep[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int d = last_dim(x.shape());
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d)
    throw std::invalid_argument("layer_norm: parameter shape mismatch");
  const int64_t rows = x.size() / d;
  std::vector<double> v(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * inv[r];
      xhat[r * d + j] = h;
      v[r * d + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  auto out = make_node(x.shape(), std::move(v));
  return record(out, {x, gamma, beta},
                [d, rows, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    px.ensure_grad();
    pg.ensure_grad();
    pb.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * d;
      const double* h = xhat.data() + r * d;
      double sum_dxhat = 0.0, sum_dxhat_h = 0.0;
      for (int j = 0; j < d; ++j) {
        pg.grad[j] += g[j] * h[j];
        pb.grad[j] += g[j];
        const double dxhat = g[j] * pg.value[j];
        sum_dxhat += dxhat;
        sum_dxhat_h += dxhat * h[j];
      }
      const double mean_dxhat = sum_dxhat / d;
      const double mean_dxhat_h = sum_dxhat_h / d;
      double* gx = px.grad.data() + r * d;
      for (int j = 0; j < d; ++j) {
        const double dxhat = g[j] * pg.value[j];
        gx[j] += inv[r] * (dxhat - mean_dxhat - h[j] * mean_dxhat_h);
      }
    }
  });
}

Tensor bce_logits_mean(const Tensor& logits, const std::vector<double>& targets) {
  if (logits.size() != static_cast<int64_t>(targets.size()))
    throw std::invalid_argument("bce_logits_mean: size mismatch");
  if (targets.empty()) throw std::invalid_argument("bce_logits_mean: empty input");
  const int64_t n = logits.size();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double x = logits.value()[i];
    const double t = targets[i];
    total += std::max(x, 0.0) - t * x + std::log1p(std::exp(-std::abs(x)));
  }
  auto out = make_node({1}, {total / n});
  return record(out, {logits}, [targets, n](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0] / n;
    for (int64_t i = 0; i < n; ++i) {
      const double x = p.value[i];
      const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      p.grad[i] += g * (s - targets[i]);
    }
  });
}

// ---- reverse pass -----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar");
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  // Interior nodes get fresh gradient buffers; leaves (parameters) accumulate
  // across calls until explicitly zeroed.
  for (Node* n : order)
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : order)
    if (n->backward_fn) n->backward_fn(*n);
}

// ---- parameters & optimizer ----------------------------------------------------------

Tensor& ParameterMap::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  if (!t.requires_grad()) throw std::invalid_argument("parameter must require grad: " + name);
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor* ParameterMap::find(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* ParameterMap::find(const std::string& name) const {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

void ParameterMap::zero_grad() {
  for (auto& [n, t] : items_) t.grad().assign(t.size(), 0.0);
}

int64_t ParameterMap::total_size() const {
  int64_t total = 0;
  for (const auto& [n, t] : items_) total += t.size();
  return total;
}

void ParameterMap::merge(const ParameterMap& other, const std::string& prefix) {
  for (const auto& [n, t] : other.items()) add(prefix + n, t);
}

std::pair<std::vector<double>, std::vector<double>>& AdamState::slot(const std::string& name,
                                                                     size_t n) {
  for (auto& [k, mv] : moments)
    if (k == name) return mv;
  moments.emplace_back(name, std::make_pair(std::vector<double>(n, 0.0),
                                            std::vector<double>(n, 0.0)));
  return moments.back().second;
}

void adam_step(ParameterMap& params, AdamState& state, const AdamConfig& cfg) {
  for (auto& [name, t] : params.items()) {
    for (double g : t.grad())
      if (!std::isfinite(g))
        throw std::runtime_error("adam_step: non-finite gradient in " + name);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.items()) {
    auto& [m, v] = state.slot(name, t.size());
    auto& val = t.mutable_value();
    const auto& g = t.grad();
    for (int64_t i = 0; i < t.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      val[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace duplex::tensor
