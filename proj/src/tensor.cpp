#include "stepqa/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace stepqa {

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::atomic<std::uint64_t> next_graph_id{1};

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::string op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::elementwise_mul: return "elementwise_mul";
    case Op::concat: return "concat";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::softmax: return "softmax";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::slice: return "slice";
    case Op::reshape: return "reshape";
    case Op::log: return "log";
    case Op::clamp_min: return "clamp_min";
  }
  return "?";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  if (shape_numel(shape_) != values_.size()) {
    throw ShapeError("tensor shape does not match value count", shape_,
                     Shape{values_.size()});
  }
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor", shape_, Shape{1});
  }
  return values_[0];
}

Tensor Tensor::with_requires_grad(bool rg) const {
  Tensor t = *this;
  t.requires_grad_ = rg;
  t.node_id_ = -1;
  t.graph_id_ = 0;
  return t;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_id_ = -1;
  t.graph_id_ = 0;
  t.requires_grad_ = false;
  return t;
}

Graph::Graph() : id_(next_graph_id.fetch_add(1)) {}

Tensor Graph::leaf(Tensor t) {
  t.node_id_ = static_cast<int>(nodes_.size());
  t.graph_id_ = id_;
  nodes_.push_back(Node{Op::leaf, {}, t, {}});
  return t;
}

int Graph::ensure_node(const Tensor& t) {
  if (t.graph_id_ == id_ && t.node_id_ >= 0) return t.node_id_;
  return leaf(t).node_id_;
}

Tensor Graph::record(Op op, std::span<const Tensor* const> inputs, Tensor out,
                     const OpAttrs& attrs) {
  bool rg = false;
  for (const auto* in : inputs) rg = rg || in->requires_grad_;
  out.requires_grad_ = rg;
  if (!rg) return out;  // constants stay off the tape

  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const auto* in : inputs) ids.push_back(ensure_node(*in));
  out.node_id_ = static_cast<int>(nodes_.size());
  out.graph_id_ = id_;
  nodes_.push_back(Node{op, std::move(ids), out, attrs});
  return out;
}

Tensor Graph::record(Op op, std::initializer_list<const Tensor*> inputs, Tensor out,
                     const OpAttrs& attrs) {
  return record(op, std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                std::move(out), attrs);
}

// ---------------------------------------------------------------------------
// forward ops
// ---------------------------------------------------------------------------

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto bad = [&] { return ShapeError("matmul: incompatible shapes", sa, sb); };

  Tensor out;
  if (sa.size() == 2 && sb.size() == 2) {
    if (sa[1] != sb[0]) throw bad();
    const std::size_t r = sa[0], k = sa[1], c = sb[1];
    std::vector<double> v(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t m = 0; m < k; ++m) {
        const double av = a[i * k + m];
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] += av * b[m * c + j];
      }
    out = Tensor(Shape{r, c}, std::move(v));
  } else if (sa.size() == 2 && sb.size() == 1) {
    if (sa[1] != sb[0]) throw bad();
    const std::size_t r = sa[0], k = sa[1];
    std::vector<double> v(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (std::size_t m = 0; m < k; ++m) acc += a[i * k + m] * b[m];
      v[i] = acc;
    }
    out = Tensor(Shape{r}, std::move(v));
  } else if (sa.size() == 1 && sb.size() == 2) {
    if (sa[0] != sb[0]) throw bad();
    const std::size_t k = sa[0], c = sb[1];
    std::vector<double> v(c, 0.0);
    for (std::size_t m = 0; m < k; ++m) {
      const double av = a[m];
      for (std::size_t j = 0; j < c; ++j) v[j] += av * b[m * c + j];
    }
    out = Tensor(Shape{c}, std::move(v));
  } else if (sa.size() == 1 && sb.size() == 1) {
    if (sa[0] != sb[0]) throw bad();
    double acc = 0.0;
    for (std::size_t m = 0; m < sa[0]; ++m) acc += a[m] * b[m];
    out = Tensor::scalar(acc);
  } else {
    throw bad();
  }
  return record(Op::matmul, {&a, &b}, std::move(out), {});
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  Tensor out;
  if (a.shape() == b.shape()) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
    out = Tensor(a.shape(), std::move(v));
  } else if (a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0]) {
    // bias broadcast over the last axis
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> v(r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a[i * c + j] + b[j];
    out = Tensor(a.shape(), std::move(v));
  } else {
    throw ShapeError("add: incompatible shapes", a.shape(), b.shape());
  }
  return record(Op::add, {&a, &b}, std::move(out), {});
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("sub: incompatible shapes", a.shape(), b.shape());
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  return record(Op::sub, {&a, &b}, Tensor(a.shape(), std::move(v)), {});
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise_mul: incompatible shapes", a.shape(), b.shape());
  }
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return record(Op::elementwise_mul, {&a, &b}, Tensor(a.shape(), std::move(v)), {});
}

Tensor Graph::concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw EmptySequenceError("concat: no inputs");
  const std::size_t rank = parts.front().rank();
  if (rank == 0 || rank > 2 || axis < 0 || static_cast<std::size_t>(axis) >= rank) {
    throw ShapeError("concat: unsupported rank/axis", parts.front().shape(), Shape{});
  }
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch", parts.front().shape(), p.shape());
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != static_cast<std::size_t>(axis) && p.shape()[d] != parts.front().shape()[d]) {
        throw ShapeError("concat: off-axis dimension mismatch", parts.front().shape(), p.shape());
      }
    }
  }

  Tensor out;
  if (rank == 1) {
    std::vector<double> v;
    for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
    out = Tensor::from_vector(std::move(v));
  } else if (axis == 0) {
    const std::size_t c = parts.front().shape()[1];
    std::size_t rows = 0;
    for (const auto& p : parts) rows += p.shape()[0];
    std::vector<double> v;
    v.reserve(rows * c);
    for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
    out = Tensor(Shape{rows, c}, std::move(v));
  } else {
    const std::size_t r = parts.front().shape()[0];
    std::size_t cols = 0;
    for (const auto& p : parts) cols += p.shape()[1];
    std::vector<double> v(r * cols);
    std::size_t col_off = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.shape()[1];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < pc; ++j) v[i * cols + col_off + j] = p[i * pc + j];
      col_off += pc;
    }
    out = Tensor(Shape{r, cols}, std::move(v));
  }
  OpAttrs attrs;
  attrs.axis = axis;
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return record(Op::concat, std::span<const Tensor* const>(ptrs), std::move(out), attrs);
}

namespace {

template <typename F>
Tensor map_values(const Tensor& a, F&& f) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a[i]);
  return Tensor(a.shape(), std::move(v));
}

}  // namespace

Tensor Graph::tanh(const Tensor& a) {
  return record(Op::tanh, {&a}, map_values(a, [](double x) { return std::tanh(x); }), {});
}

Tensor Graph::sigmoid(const Tensor& a) {
  return record(Op::sigmoid, {&a},
                map_values(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }), {});
}

Tensor Graph::relu(const Tensor& a) {
  return record(Op::relu, {&a}, map_values(a, [](double x) { return x > 0.0 ? x : 0.0; }), {});
}

Tensor Graph::log(const Tensor& a) {
  return record(Op::log, {&a}, map_values(a, [](double x) { return std::log(x); }), {});
}

Tensor Graph::clamp_min(const Tensor& a, double floor) {
  OpAttrs attrs;
  attrs.value = floor;
  return record(Op::clamp_min, {&a},
                map_values(a, [floor](double x) { return x < floor ? floor : x; }), attrs);
}

namespace {

// Iterates the rank-1/rank-2 tensor as `lanes` independent slices of `len`
// entries with stride `stride`, calling f(lane_base_index, stride, len).
struct AxisView {
  std::size_t lanes, len, stride, lane_stride;
};

AxisView axis_view(const Shape& s, int axis) {
  if (s.size() == 1) return {1, s[0], 1, 0};
  if (axis == 0) return {s[1], s[0], s[1], 1};   // columns
  return {s[0], s[1], 1, s[1]};                  // rows
}

}  // namespace

Tensor Graph::softmax(const Tensor& a, int axis) {
  if (a.rank() == 0 || a.rank() > 2 || axis < 0 || static_cast<std::size_t>(axis) >= a.rank()) {
    throw ShapeError("softmax: unsupported rank/axis", a.shape(), Shape{});
  }
  if (a.shape()[static_cast<std::size_t>(axis)] == 0 || a.numel() == 0) {
    throw EmptyAxisError("softmax over empty axis");
  }
  const AxisView view = axis_view(a.shape(), axis);
  std::vector<double> v(a.numel());
  for (std::size_t lane = 0; lane < view.lanes; ++lane) {
    const std::size_t base = lane * view.lane_stride;
    double mx = a[base];
    for (std::size_t i = 1; i < view.len; ++i) mx = std::max(mx, a[base + i * view.stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < view.len; ++i) {
      const double e = std::exp(a[base + i * view.stride] - mx);
      v[base + i * view.stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < view.len; ++i) v[base + i * view.stride] /= total;
  }
  OpAttrs attrs;
  attrs.axis = axis;
  return record(Op::softmax, {&a}, Tensor(a.shape(), std::move(v)), attrs);
}

namespace {

Tensor reduce(const Tensor& a, int axis, bool take_mean) {
  if (axis < 0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i];
    if (take_mean) acc /= static_cast<double>(a.numel());
    return Tensor::scalar(acc);
  }
  if (a.rank() == 0 || a.rank() > 2 || static_cast<std::size_t>(axis) >= a.rank()) {
    throw ShapeError("reduce: unsupported rank/axis", a.shape(), Shape{});
  }
  const AxisView view = axis_view(a.shape(), axis);
  std::vector<double> v(view.lanes, 0.0);
  for (std::size_t lane = 0; lane < view.lanes; ++lane) {
    const std::size_t base = lane * view.lane_stride;
    for (std::size_t i = 0; i < view.len; ++i) v[lane] += a[base + i * view.stride];
    if (take_mean) v[lane] /= static_cast<double>(view.len);
  }
  if (a.rank() == 1) return Tensor::scalar(v[0]);
  return Tensor::from_vector(std::move(v));
}

}  // namespace

Tensor Graph::sum(const Tensor& a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return record(Op::sum, {&a}, reduce(a, axis, false), attrs);
}

Tensor Graph::mean(const Tensor& a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return record(Op::mean, {&a}, reduce(a, axis, true), attrs);
}

Tensor Graph::slice(const Tensor& a, int axis, std::size_t start, std::size_t count) {
  if (a.rank() == 0 || a.rank() > 2 || axis < 0 || static_cast<std::size_t>(axis) >= a.rank()) {
    throw ShapeError("slice: unsupported rank/axis", a.shape(), Shape{});
  }
  const std::size_t dim = a.shape()[static_cast<std::size_t>(axis)];
  if (count == 0 || start + count > dim) {
    throw ShapeError("slice: range out of bounds", a.shape(), Shape{start, count});
  }
  Tensor out;
  if (a.rank() == 1) {
    std::vector<double> v(a.values().begin() + static_cast<std::ptrdiff_t>(start),
                          a.values().begin() + static_cast<std::ptrdiff_t>(start + count));
    out = Tensor::from_vector(std::move(v));
  } else {
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    if (axis == 0) {
      std::vector<double> v(a.values().begin() + static_cast<std::ptrdiff_t>(start * c),
                            a.values().begin() + static_cast<std::ptrdiff_t>((start + count) * c));
      out = Tensor(Shape{count, c}, std::move(v));
    } else {
      std::vector<double> v(r * count);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) v[i * count + j] = a[i * c + start + j];
      out = Tensor(Shape{r, count}, std::move(v));
    }
  }
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.start = start;
  attrs.count = count;
  return record(Op::slice, {&a}, std::move(out), attrs);
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: element count mismatch", a.shape(), shape);
  }
  OpAttrs attrs;
  attrs.shape = shape;
  return record(Op::reshape, {&a}, Tensor(std::move(shape), a.values()), attrs);
}

Tensor Graph::negate(const Tensor& a) { return sub(Tensor::zeros(a.shape()), a); }

Tensor Graph::scale(const Tensor& a, double factor) { return mul(a, Tensor::full(a.shape(), factor)); }

Tensor Graph::stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw EmptySequenceError("stack_rows: no inputs");
  std::vector<Tensor> as_rows;
  as_rows.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.rank() != 1) throw ShapeError("stack_rows: expects vectors", r.shape(), Shape{});
    as_rows.push_back(reshape(r, Shape{1, r.numel()}));
  }
  return concat(as_rows, 0);
}

Tensor Graph::apply(Op op, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(op_name(op) + ": wrong operand count", Shape{in.size()}, Shape{n});
    }
  };
  switch (op) {
    case Op::matmul: need(2); return matmul(in[0], in[1]);
    case Op::add: need(2); return add(in[0], in[1]);
    case Op::sub: need(2); return sub(in[0], in[1]);
    case Op::elementwise_mul: need(2); return mul(in[0], in[1]);
    case Op::concat: return concat(in, attrs.axis);
    case Op::tanh: need(1); return tanh(in[0]);
    case Op::sigmoid: need(1); return sigmoid(in[0]);
    case Op::relu: need(1); return relu(in[0]);
    case Op::softmax: need(1); return softmax(in[0], attrs.axis);
    case Op::sum: need(1); return sum(in[0], attrs.axis);
    case Op::mean: need(1); return mean(in[0], attrs.axis);
    case Op::slice: need(1); return slice(in[0], attrs.axis, attrs.start, attrs.count);
    case Op::reshape: need(1); return reshape(in[0], attrs.shape);
    case Op::log: need(1); return log(in[0]);
    case Op::clamp_min: need(1); return clamp_min(in[0], attrs.value);
    case Op::leaf: break;
  }
  throw ShapeError("apply: leaf is not an applicable op", Shape{}, Shape{});
}

Tensor Graph::apply(Op op, std::initializer_list<Tensor> inputs, const OpAttrs& attrs) {
  return apply(op, std::span<const Tensor>(inputs.begin(), inputs.size()), attrs);
}

// ---------------------------------------------------------------------------
// reverse sweep
// ---------------------------------------------------------------------------

GradMap Graph::backward(const Tensor& loss) const {
  if (loss.graph_id_ != id_ || loss.node_id_ < 0 ||
      static_cast<std::size_t>(loss.node_id_) >= nodes_.size()) {
    throw std::invalid_argument("backward: loss tensor is not part of this graph");
  }
  if (loss.numel() != 1) {
    throw NonScalarLossError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }

  std::vector<std::vector<double>> grads(nodes_.size());
  auto grad_of = [&](int id) -> std::vector<double>& {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].out.numel(), 0.0);
    return g;
  };
  grad_of(loss.node_id_)[0] = 1.0;

  for (int nid = loss.node_id_; nid >= 0; --nid) {
    const Node& node = nodes_[static_cast<std::size_t>(nid)];
    const auto& g = grads[static_cast<std::size_t>(nid)];
    if (g.empty() || node.op == Op::leaf) continue;

    const Tensor& y = node.out;
    auto in = [&](std::size_t i) -> const Tensor& {
      return nodes_[static_cast<std::size_t>(node.inputs[i])].out;
    };
    auto gin = [&](std::size_t i) -> std::vector<double>& { return grad_of(node.inputs[i]); };

    switch (node.op) {
      case Op::matmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        auto& ga = gin(0);
        auto& gb = gin(1);
        if (a.rank() == 2 && b.rank() == 2) {
          const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              double acc = 0.0;
              for (std::size_t m = 0; m < c; ++m) acc += g[i * c + m] * b[j * c + m];
              ga[i * k + j] += acc;
            }
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              double acc = 0.0;
              for (std::size_t m = 0; m < r; ++m) acc += a[m * k + i] * g[m * c + j];
              gb[i * c + j] += acc;
            }
        } else if (a.rank() == 2 && b.rank() == 1) {
          const std::size_t r = a.shape()[0], k = a.shape()[1];
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += g[i] * b[j];
          for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < r; ++i) acc += a[i * k + j] * g[i];
            gb[j] += acc;
          }
        } else if (a.rank() == 1 && b.rank() == 2) {
          const std::size_t k = a.shape()[0], c = b.shape()[1];
          for (std::size_t i = 0; i < k; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc += b[i * c + j] * g[j];
            ga[i] += acc;
          }
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[i * c + j] += a[i] * g[j];
        } else {
          const double gs = g[0];
          for (std::size_t i = 0; i < a.numel(); ++i) {
            ga[i] += gs * b[i];
            gb[i] += gs * a[i];
          }
        }
        break;
      }
      case Op::add: {
        auto& ga = gin(0);
        auto& gb = gin(1);
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (a.shape() == b.shape()) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        } else {  // bias broadcast: column-sum
          const std::size_t r = a.shape()[0], c = a.shape()[1];
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
        break;
      }
      case Op::sub: {
        auto& ga = gin(0);
        auto& gb = gin(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::elementwise_mul: {
        auto& ga = gin(0);
        auto& gb = gin(1);
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * b[i];
          gb[i] += g[i] * a[i];
        }
        break;
      }
      case Op::concat: {
        const int axis = node.attrs.axis;
        if (y.rank() == 1 || axis == 0) {
          std::size_t off = 0;
          for (std::size_t p = 0; p < node.inputs.size(); ++p) {
            auto& gp = gin(p);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
            off += gp.size();
          }
        } else {
          const std::size_t r = y.shape()[0], cols = y.shape()[1];
          std::size_t col_off = 0;
          for (std::size_t p = 0; p < node.inputs.size(); ++p) {
            auto& gp = gin(p);
            const std::size_t pc = in(p).shape()[1];
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * cols + col_off + j];
            col_off += pc;
          }
        }
        break;
      }
      case Op::tanh: {
        auto& ga = gin(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::sigmoid: {
        auto& ga = gin(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::relu: {
        auto& ga = gin(0);
        const Tensor& a = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += a[i] > 0.0 ? g[i] : 0.0;
        break;
      }
      case Op::softmax: {
        auto& ga = gin(0);
        const AxisView view = axis_view(y.shape(), node.attrs.axis);
        for (std::size_t lane = 0; lane < view.lanes; ++lane) {
          const std::size_t base = lane * view.lane_stride;
          double dot = 0.0;
          for (std::size_t i = 0; i < view.len; ++i) {
            const std::size_t idx = base + i * view.stride;
            dot += g[idx] * y[idx];
          }
          for (std::size_t i = 0; i < view.len; ++i) {
            const std::size_t idx = base + i * view.stride;
            ga[idx] += y[idx] * (g[idx] - dot);
          }
        }
        break;
      }
      case Op::sum:
      case Op::mean: {
        auto& ga = gin(0);
        const Tensor& a = in(0);
        const int axis = node.attrs.axis;
        if (axis < 0) {
          const double f = node.op == Op::mean ? 1.0 / static_cast<double>(a.numel()) : 1.0;
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * f;
        } else {
          const AxisView view = axis_view(a.shape(), axis);
          const double f = node.op == Op::mean ? 1.0 / static_cast<double>(view.len) : 1.0;
          for (std::size_t lane = 0; lane < view.lanes; ++lane) {
            const std::size_t base = lane * view.lane_stride;
            for (std::size_t i = 0; i < view.len; ++i) ga[base + i * view.stride] += g[lane] * f;
          }
        }
        break;
      }
      case Op::slice: {
        auto& ga = gin(0);
        const Tensor& a = in(0);
        const auto& at = node.attrs;
        if (a.rank() == 1) {
          for (std::size_t i = 0; i < at.count; ++i) ga[at.start + i] += g[i];
        } else {
          const std::size_t c = a.shape()[1];
          if (at.axis == 0) {
            for (std::size_t i = 0; i < at.count * c; ++i) ga[at.start * c + i] += g[i];
          } else {
            const std::size_t r = a.shape()[0];
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < at.count; ++j)
                ga[i * c + at.start + j] += g[i * at.count + j];
          }
        }
        break;
      }
      case Op::reshape: {
        auto& ga = gin(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case Op::log: {
        auto& ga = gin(0);
        const Tensor& a = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
        break;
      }
      case Op::clamp_min: {
        auto& ga = gin(0);
        const Tensor& a = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (a[i] > node.attrs.value) ga[i] += g[i];
        }
        break;
      }
      case Op::leaf:
        break;
    }
  }

  GradMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].out.requires_grad()) continue;
    auto& g = grads[i];
    if (g.empty()) g.assign(nodes_[i].out.numel(), 0.0);
    out.emplace(static_cast<int>(i), Tensor(nodes_[i].out.shape(), std::move(g)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// finite-difference verification
// ---------------------------------------------------------------------------

double grad_check(const ScalarFn& f, std::vector<Tensor> params, double step,
                  double analytic_perturbation) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");

  Graph g;
  std::vector<Tensor> bound;
  bound.reserve(params.size());
  for (const auto& p : params) bound.push_back(g.leaf(p.with_requires_grad(true)));
  const Tensor loss = f(g, bound);
  if (loss.numel() != 1) throw NonScalarLossError("grad_check: f must return a scalar");

  std::vector<std::vector<double>> analytic(params.size());
  if (loss.node_id() >= 0 && loss.graph_id() == g.id()) {
    const GradMap grads = g.backward(loss);
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto it = grads.find(bound[p].node_id());
      analytic[p] = it != grads.end() ? it->second.values()
                                      : std::vector<double>(params[p].numel(), 0.0);
    }
  } else {
    // f ignored its parameters: the loss is a constant with zero gradient.
    for (std::size_t p = 0; p < params.size(); ++p) {
      analytic[p].assign(params[p].numel(), 0.0);
    }
  }
  if (!params.empty() && !analytic.empty() && analytic_perturbation != 0.0 &&
      !analytic[0].empty()) {
    analytic[0][0] += analytic_perturbation;
  }

  auto eval_at = [&](const std::vector<Tensor>& pts) {
    Graph local;
    std::vector<Tensor> consts;
    consts.reserve(pts.size());
    for (const auto& p : pts) consts.push_back(p.with_requires_grad(false));
    return f(local, consts).item();
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      std::vector<Tensor> pts = params;
      std::vector<double> vplus = pts[p].values();
      std::vector<double> vminus = vplus;
      vplus[i] += step;
      vminus[i] -= step;
      pts[p] = Tensor(params[p].shape(), vplus);
      const double fplus = eval_at(pts);
      pts[p] = Tensor(params[p].shape(), vminus);
      const double fminus = eval_at(pts);
      const double numeric = (fplus - fminus) / (2.0 * step);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace stepqa
