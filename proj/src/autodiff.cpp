#include "ufogen/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace ufogen {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::atomic<std::uint64_t> g_sequence{0};
thread_local int g_no_grad_depth = 0;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values,
                                        bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) +
                         " given " + std::to_string(values.size()) +
                         " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return node;
}

// Left-pads `s` with ones to `rank` dimensions.
Shape padded(const Shape& s, std::size_t rank) {
  Shape out(rank - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  const Shape pa = padded(a, rank);
  const Shape pb = padded(b, rank);
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      out[i] = pa[i];
    } else if (pa[i] == 1) {
      out[i] = pb[i];
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " +
                           shape_string(a) + " with " + shape_string(b));
    }
  }
  return out;
}

// Offset into an operand of shape `in` for every element of `out`.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const Shape pin = padded(in, rank);
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    stride[i] = pin[i] == 1 ? 0 : s;
    s *= pin[i];
  }
  const std::size_t total = shape_size(out);
  std::vector<std::size_t> offsets(total);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < total; ++k) {
    offsets[k] = off;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < out[d]) break;
      off -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return offsets;
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
              DA da, DB db) {
  const auto& av = a.data();
  const auto& bv = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                       [da, db](detail::Node& self) {
                         auto& pa = *self.parents[0];
                         auto& pb = *self.parents[1];
                         const auto& g = self.grad;
                         if (pa.requires_grad) {
                           auto& ga = pa.ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             ga[i] += g[i] * da(pa.data[i], pb.data[i]);
                         }
                         if (pb.requires_grad) {
                           auto& gb = pb.ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gb[i] += g[i] * db(pa.data[i], pb.data[i]);
                         }
                       });
  }
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto oa = std::make_shared<std::vector<std::size_t>>(
      broadcast_offsets(a.shape(), out_shape));
  auto ob = std::make_shared<std::vector<std::size_t>>(
      broadcast_offsets(b.shape(), out_shape));
  std::vector<double> out(oa->size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = fwd(av[(*oa)[i]], bv[(*ob)[i]]);
  return make_result(std::move(out_shape), std::move(out), {a.node(), b.node()},
                     [oa, ob, da, db](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       const auto& g = self.grad;
                       if (pa.requires_grad) {
                         auto& ga = pa.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const double x = pa.data[(*oa)[i]];
                           const double y = pb.data[(*ob)[i]];
                           ga[(*oa)[i]] += g[i] * da(x, y);
                         }
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const double x = pa.data[(*oa)[i]];
                           const double y = pb.data[(*ob)[i]];
                           gb[(*ob)[i]] += g[i] * db(x, y);
                         }
                       }
                     });
}

// `deriv(x, y)` receives the input and the forward output.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x.node()},
                     [deriv](detail::Node& self) {
                       auto& p = *self.parents[0];
                       auto& gp = p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         gp[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
                     });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_string(t.shape()));
  }
}

// Shape after reducing `axis` with keepdim semantics.
Shape reduced_shape(const Shape& s, std::size_t axis) {
  Shape out = s;
  out[axis] = 1;
  return out;
}

// outer = product of dims before axis, inner = product after.
void axis_split(const Shape& s, std::size_t axis, std::size_t& outer,
                std::size_t& extent, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_string(x.shape()));
  }
}

}  // namespace

// ---- shape helpers ----------------------------------------------------------

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty() && !data.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor() : node_(make_leaf({}, {0.0}, false)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value),
                          requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

Tensor Tensor::matrix(
    std::initializer_list<std::initializer_list<double>> rows,
    bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  return rank() == 0 ? 1 : shape()[0];
}

std::size_t Tensor::cols() const {
  return rank() < 2 ? 1 : shape()[1];
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

double Tensor::operator()(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= rows() || col >= cols()) {
    throw IndexError("index (" + std::to_string(row) + "," +
                     std::to_string(col) + ") outside " +
                     shape_string(shape()));
  }
  return node_->data[row * cols() + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(shape(), node_->data, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(shape(), node_->data, requires_grad()));
}

bool Tensor::has_grad_fn() const { return !node_->is_leaf(); }

Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<std::shared_ptr<detail::Node>> parents,
                   std::function<void(detail::Node&)> backward_fn) {
  auto node = make_leaf(std::move(shape), std::move(values), false);
  const bool track =
      grad_enabled() &&
      std::any_of(parents.begin(), parents.end(),
                  [](const auto& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// ---- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()},
                     [m, k, n](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       ConstMap g(self.grad.data(), m, n);
                       if (pa.requires_grad) {
                         MutMap(pa.ensure_grad().data(), m, k).noalias() +=
                             g * ConstMap(pb.data.data(), k, n).transpose();
                       }
                       if (pb.requires_grad) {
                         MutMap(pb.ensure_grad().data(), k, n).noalias() +=
                             ConstMap(pa.data.data(), m, k).transpose() * g;
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(x, stable_softplus,
               [](double v, double) { return stable_sigmoid(v); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v * stable_sigmoid(v); },
      [](double v, double) {
        const double s = stable_sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row counts differ (" +
                           std::to_string(n) + " vs " +
                           std::to_string(p.rows()) + ")");
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t col0 = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const auto src = parts[j].data();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(src.begin() + r * widths[j], widths[j],
                  out.begin() + r * total + col0);
    }
    col0 += widths[j];
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result({n, total}, std::move(out), std::move(nodes),
                     [n, total, widths](detail::Node& self) {
                       std::size_t c0 = 0;
                       for (std::size_t j = 0; j < widths.size(); ++j) {
                         auto& p = *self.parents[j];
                         if (p.requires_grad) {
                           auto& g = p.ensure_grad();
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t c = 0; c < widths[j]; ++c)
                               g[r * widths[j] + c] +=
                                   self.grad[r * total + c0 + c];
                         }
                         c0 += widths[j];
                       }
                     });
}

Tensor sum(const Tensor& x, std::optional<std::size_t> axis) {
  const auto xv = x.data();
  if (!axis) {
    double s = 0.0;
    for (double v : xv) s += v;
    return make_result({}, {s}, {x.node()}, [](detail::Node& self) {
      auto& p = *self.parents[0];
      auto& g = p.ensure_grad();
      for (auto& gi : g) gi += self.grad[0];
    });
  }
  check_axis(x, *axis, "sum");
  std::size_t outer, extent, inner;
  axis_split(x.shape(), *axis, outer, extent, inner);
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xv[(o * extent + e) * inner + i];
  return make_result(reduced_shape(x.shape(), *axis), std::move(out),
                     {x.node()}, [outer, extent, inner](detail::Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t e = 0; e < extent; ++e)
                           for (std::size_t i = 0; i < inner; ++i)
                             g[(o * extent + e) * inner + i] +=
                                 self.grad[o * inner + i];
                     });
}

Tensor mean(const Tensor& x, std::optional<std::size_t> axis) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  std::size_t count = x.size();
  if (axis) {
    check_axis(x, *axis, "mean");
    count = x.shape()[*axis];
  }
  return scale(sum(x, axis), 1.0 / static_cast<double>(count));
}

Tensor squared_l2_norm(const Tensor& x, std::optional<std::size_t> axis) {
  if (axis) check_axis(x, *axis, "squared_l2_norm");
  return sum(square(x), axis);
}

// ---- backward ---------------------------------------------------------------

Tape Tape::record(const Tensor& loss) {
  Tape tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{loss.node()};
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    if (node->is_leaf() || !seen.insert(node.get()).second) continue;
    for (const auto& p : node->parents) stack.push_back(p);
    tape.ops_.push_back(std::move(node));
  }
  std::sort(tape.ops_.begin(), tape.ops_.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });
  return tape;
}

std::vector<std::uint64_t> Tape::order() const {
  std::vector<std::uint64_t> out;
  out.reserve(ops_.size());
  for (const auto& op : ops_) out.push_back(op->seq);
  return out;
}

void Tape::run(const Tensor& loss) {
  auto& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (const auto& op : ops_) {
    op->ensure_grad();
    op->backward_fn(*op);
  }
  for (const auto& op : ops_) {
    op->backward_fn = nullptr;
    op->parents.clear();
  }
  ops_.clear();
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward on a loss with no recorded graph");
  }
  Tape tape = Tape::record(loss);
  tape.run(loss);
}

// ---- finite differences -----------------------------------------------------

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double h) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  std::vector<Tensor> params{leaf};
  return finite_difference_check([&] { return f(params[0]); }, params, h);
}

double finite_difference_check(const std::function<Tensor()>& f,
                               std::span<Tensor> params, double h) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor loss = f();
  if (loss.size() != 1) {
    throw ContractError("finite_difference_check needs a scalar function");
  }
  if (loss.requires_grad()) backward(loss);

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& p : params) {
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                     : std::vector<double>(p.size(), 0.0);
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ufogen
