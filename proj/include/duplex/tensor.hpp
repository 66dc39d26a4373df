#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "duplex/rng.hpp"

namespace duplex::tensor {

// One recorded node of the computation tape. Values are always f64; shapes up
// to rank 3. Nodes created while gradients are enabled carry parent links and
// a backward closure; plain value nodes carry neither.
struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily by ensure_grad()
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

int64_t numel(const std::vector<int>& shape);

// Shared-ownership handle over a Node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[i]; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  std::vector<double>& grad() { node_->ensure_grad(); return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  double at(std::initializer_list<int> idx) const;

  // Value copy severed from the tape.
  Tensor detach() const;

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// RAII switch that disables tape recording on this thread (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- primitive operations -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // same shape, elementwise
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                   // rank 2
Tensor reshape(const Tensor& a, std::vector<int> shape);

Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);   // domain error on non-positive input
Tensor sqrt_op(const Tensor& a);

// Reductions / normalizers over the last axis (rows of the flattened view).
Tensor softmax_last(const Tensor& a);
Tensor log_softmax_last(const Tensor& a);
Tensor logsumexp_last(const Tensor& a);

Tensor sum_all(const Tensor& a);   // scalar
Tensor mean_all(const Tensor& a);  // scalar

Tensor row(const Tensor& a, int i);                        // [1,D] from [T,D]
Tensor slice_rows(const Tensor& a, int begin, int end);    // [end-begin, D]
Tensor slice_cols(const Tensor& a, int begin, int end);    // [T, end-begin]
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor add_rowvec(const Tensor& x, const Tensor& b);       // [T,D] + [D]
Tensor outer_add(const Tensor& a, const Tensor& b);        // [T,J],[U,J] -> [T,U,J]

// Rows of `table` selected by ids; gradient scatters back into the table.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// Sliding windows of `width` rows ending at each position, zero padded on the
// left by `left_pad` rows: out[t] = concat(x[t-width+1+left_pad ... t+left_pad]).
Tensor unfold_rows(const Tensor& x, int width, int left_pad);

// Row-wise softmax where mask[t*S+j]==0 entries are excluded. A fully masked
// row produces an all-zero row (and propagates zero gradient).
Tensor masked_softmax_rows(const Tensor& scores, const std::vector<uint8_t>& mask);

// Scaled dot-product attention: masked_softmax(q k^T / sqrt(d), mask) v.
// mask is row-major [Tq x Tk], nonzero = position visible.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<uint8_t>& mask);

// Zeroes each element with probability `rate` during training and scales the
// survivors by 1/(1-rate); identity in inference mode. rate must be < 1.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
Tensor bce_logits_mean(const Tensor& logits, const std::vector<double>& targets);

// ---- reverse pass -----------------------------------------------------------

// Accumulates exact reverse-mode gradients of a scalar loss into every
// requires-grad ancestor. Visits each recorded node exactly once, in reverse
// recording order.
void backward(const Tensor& loss);

// ---- parameters & optimizer -------------------------------------------------

class ParameterMap {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  void zero_grad();
  int64_t total_size() const;
  // Adds every entry of `other` under `prefix`.
  void merge(const ParameterMap& other, const std::string& prefix);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  int64_t step = 0;
  // name -> (first moment, second moment), lazily created per parameter
  std::vector<std::pair<std::string, std::pair<std::vector<double>, std::vector<double>>>> moments;

  std::pair<std::vector<double>, std::vector<double>>& slot(const std::string& name, size_t n);
};

// One Adam update from accumulated gradients. Throws std::runtime_error on a
// non-finite gradient; parameters are untouched in that case.
void adam_step(ParameterMap& params, AdamState& state, const AdamConfig& cfg);

}  // namespace duplex::tensor
