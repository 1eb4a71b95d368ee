#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stepqa/errors.hpp"

namespace stepqa {

// Dense 64-bit real tensor, row-major. Immutable once created; every op
// produces a new tensor. node_id/graph_id identify the tensor inside a
// computation graph (-1 / 0 when it is a free constant).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_vector(std::vector<double> values, bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t numel() const { return values_.size(); }
  std::size_t rank() const { return shape_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double item() const;  // requires numel == 1

  bool requires_grad() const { return requires_grad_; }
  int node_id() const { return node_id_; }
  std::uint64_t graph_id() const { return graph_id_; }

  Tensor with_requires_grad(bool rg) const;
  Tensor detached() const;  // copy without graph identity

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  friend class Graph;

  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  int node_id_ = -1;
  std::uint64_t graph_id_ = 0;
};

enum class Op {
  leaf,
  matmul,
  add,
  sub,
  elementwise_mul,
  concat,
  tanh,
  sigmoid,
  relu,
  softmax,
  sum,
  mean,
  slice,
  reshape,
  log,
  clamp_min,
};

std::string op_name(Op op);

// Per-op attributes. axis == -1 means "reduce everything" for sum/mean.
struct OpAttrs {
  int axis = -1;
  std::size_t start = 0;
  std::size_t count = 0;
  double value = 0.0;
  Shape shape;
};

using GradMap = std::unordered_map<int, Tensor>;

// Define-by-run computation tape. Ops always evaluate eagerly; a node is
// recorded only when some input requires a gradient. Rebuilt per forward pass.
class Graph {
 public:
  Graph();

  // Registers a tensor as a graph leaf and returns it with graph identity.
  Tensor leaf(Tensor t);

  Tensor apply(Op op, std::span<const Tensor> inputs, const OpAttrs& attrs = {});
  Tensor apply(Op op, std::initializer_list<Tensor> inputs, const OpAttrs& attrs = {});

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor concat(std::span<const Tensor> parts, int axis);
  Tensor tanh(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor softmax(const Tensor& a, int axis = 0);
  Tensor sum(const Tensor& a, int axis = -1);
  Tensor mean(const Tensor& a, int axis = -1);
  Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t count);
  Tensor reshape(const Tensor& a, Shape shape);
  Tensor log(const Tensor& a);
  Tensor clamp_min(const Tensor& a, double floor);

  // Helpers composed from the ops above.
  Tensor negate(const Tensor& a);
  Tensor scale(const Tensor& a, double factor);
  Tensor stack_rows(std::span<const Tensor> rows);  // m vectors [d] -> [m, d]

  // Reverse-mode sweep from a scalar loss. Returns node_id -> gradient for
  // every recorded tensor that requires a gradient; gradients from multiple
  // consumers accumulate.
  GradMap backward(const Tensor& loss) const;

  std::size_t node_count() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

 private:
  struct Node {
    Op op;
    std::vector<int> inputs;
    Tensor out;
    OpAttrs attrs;
  };

  int ensure_node(const Tensor& t);
  Tensor record(Op op, std::span<const Tensor* const> inputs, Tensor out, const OpAttrs& attrs);
  Tensor record(Op op, std::initializer_list<const Tensor*> inputs, Tensor out,
                const OpAttrs& attrs);

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

// Max over all parameter entries of |analytic - numeric| / max(1e-8,
// |analytic| + |numeric|), with numeric from central differences of `step`.
// `f` must deterministically build a scalar loss from the given leaves.
using ScalarFn = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

double grad_check(const ScalarFn& f, std::vector<Tensor> params, double step,
                  double analytic_perturbation = 0.0);

}  // namespace stepqa
