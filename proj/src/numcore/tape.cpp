#include "afm/numcore/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "afm/errors.hpp"

namespace afm::num {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using View = Eigen::Map<RowMajor>;

View view(Matrix& m) {
  return View(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

// Activations use Eigen's vectorized exp. Elements are staged through an
// aligned buffer padded to a whole number of packets so every value takes the
// packet path no matter where its buffer lives; otherwise alignment peeling
// makes results depend on the allocation address.
constexpr std::size_t kBlock = 256;
constexpr std::size_t kPacket = 8;
using Block = Eigen::Map<Eigen::ArrayXd, Eigen::Aligned64>;

template <class Fn>
void blockwise(std::span<const double> x, std::span<double> out, Fn fn) {
  alignas(64) double buf[kBlock];
  for (std::size_t i = 0; i < x.size(); i += kBlock) {
    const std::size_t len = std::min(kBlock, x.size() - i);
    const std::size_t padded = (len + kPacket - 1) / kPacket * kPacket;
    std::copy_n(x.data() + i, len, buf);
    std::fill(buf + len, buf + padded, 0.0);
    Block b(buf, static_cast<Eigen::Index>(padded));
    fn(b);
    std::copy_n(buf, len, out.data() + i);
  }
}

void tanh_into(std::span<const double> x, std::span<double> out) {
  blockwise(x, out, [](Block& b) {
    const Eigen::ArrayXd sign = b.sign();
    b = (-2.0 * b.abs()).exp();
    b = (1.0 - b) / (1.0 + b) * sign;
  });
}

void logistic_into(std::span<const double> x, std::span<double> out) {
  blockwise(x, out, [](Block& b) { b = 1.0 / (1.0 + (-b).exp()); });
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kAddRow: return "add_row";
    case Op::kScale: return "scale";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSilu: return "silu";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kMeanSqNorm: return "mean_sq_norm";
    case Op::kLstmCell: return "lstm_cell";
  }
  return "unknown";
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ValidationError("tape: invalid node handle");
  return nodes_[v.id];
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  output_ = static_cast<std::uint32_t>(nodes_.size() - 1);
  evaluated_ = false;
  return Var{output_};
}

void Tape::shape_error(Op op, std::string_view detail) const {
  throw ValidationError("tape: shape mismatch at node " + std::to_string(nodes_.size()) + " (" +
                        std::string(op_name(op)) + "): " + std::string(detail));
}

Var Tape::input(std::size_t rows, std::size_t cols, std::string name, bool requires_grad) {
  Node n{.op = Op::kInput, .rows = rows, .cols = cols};
  n.index = inputs_.size();
  n.requires_grad = requires_grad;
  n.name = name.empty() ? "input" + std::to_string(inputs_.size()) : std::move(name);
  n.value.reset(rows, cols);
  inputs_.push_back(static_cast<std::uint32_t>(nodes_.size()));
  return push(std::move(n));
}

Var Tape::param(ParamId id) {
  if (params_ == nullptr || id >= params_->size()) {
    throw ValidationError("tape: parameter id " + std::to_string(id) + " is not in the bound set");
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kParam && nodes_[i].index == id) {
      return Var{static_cast<std::uint32_t>(i)};
    }
  }
  const Matrix& v = (*params_)[id].value;
  Node n{.op = Op::kParam, .rows = v.rows(), .cols = v.cols()};
  n.index = id;
  n.requires_grad = true;
  n.name = (*params_)[id].name;
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n{.op = Op::kConstant, .rows = value.rows(), .cols = value.cols()};
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.cols != nb.rows) {
    shape_error(Op::kMatMul, shape_string(na.rows, na.cols) + " * " + shape_string(nb.rows, nb.cols));
  }
  Node n{.op = Op::kMatMul, .rows = na.rows, .cols = nb.cols, .a = a.id, .b = b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::binary_same_shape(Op op, Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols) {
    shape_error(op, shape_string(na.rows, na.cols) + " vs " + shape_string(nb.rows, nb.cols));
  }
  Node n{.op = op, .rows = na.rows, .cols = na.cols, .a = a.id, .b = b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return binary_same_shape(Op::kAdd, a, b); }
Var Tape::sub(Var a, Var b) { return binary_same_shape(Op::kSub, a, b); }
Var Tape::mul(Var a, Var b) { return binary_same_shape(Op::kMul, a, b); }

Var Tape::add_row(Var a, Var row) {
  const Node& na = node(a);
  const Node& nr = node(row);
  if (nr.rows != 1 || nr.cols != na.cols) {
    shape_error(Op::kAddRow, shape_string(na.rows, na.cols) + " + row " + shape_string(nr.rows, nr.cols));
  }
  Node n{.op = Op::kAddRow, .rows = na.rows, .cols = na.cols, .a = a.id, .b = row.id};
  n.requires_grad = na.requires_grad || nr.requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  Var v = unary(Op::kScale, a);
  nodes_[v.id].factor = factor;
  return v;
}

Var Tape::unary(Op op, Var a) {
  const Node& na = node(a);
  Node n{.op = op, .rows = na.rows, .cols = na.cols, .a = a.id};
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::tanh(Var a) { return unary(Op::kTanh, a); }
Var Tape::sigmoid(Var a) { return unary(Op::kSigmoid, a); }
Var Tape::silu(Var a) { return unary(Op::kSilu, a); }

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) shape_error(Op::kConcatCols, "no parts");
  Node n{.op = Op::kConcatCols};
  n.rows = node(parts.front()).rows;
  for (Var p : parts) {
    const Node& np = node(p);
    if (np.rows != n.rows) {
      shape_error(Op::kConcatCols, "row count " + std::to_string(np.rows) + " vs " + std::to_string(n.rows));
    }
    n.cols += np.cols;
    n.requires_grad = n.requires_grad || np.requires_grad;
    n.parts.push_back(p.id);
  }
  return push(std::move(n));
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Node& na = node(a);
  if (count == 0 || begin + count > na.cols) {
    shape_error(Op::kSliceCols, "columns [" + std::to_string(begin) + ", " +
                                    std::to_string(begin + count) + ") of " +
                                    shape_string(na.rows, na.cols));
  }
  Node n{.op = Op::kSliceCols, .rows = na.rows, .cols = count, .a = a.id};
  n.index = begin;
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::mean_sq_norm(Var a) {
  const Node& na = node(a);
  if (na.rows == 0) shape_error(Op::kMeanSqNorm, "empty input");
  Node n{.op = Op::kMeanSqNorm, .rows = 1, .cols = 1, .a = a.id};
  n.requires_grad = na.requires_grad;
  return push(std::move(n));
}

Var Tape::lstm_cell(Var gates, Var prev) {
  const Node& ng = node(gates);
  if (ng.cols == 0 || ng.cols % 4 != 0) {
    shape_error(Op::kLstmCell, "gate width " + std::to_string(ng.cols) + " is not a positive multiple of 4");
  }
  const std::size_t h = ng.cols / 4;
  Node n{.op = Op::kLstmCell, .rows = ng.rows, .cols = 2 * h, .a = gates.id};
  n.requires_grad = ng.requires_grad;
  if (prev.valid()) {
    const Node& np = node(prev);
    if (np.rows != ng.rows || np.cols != 2 * h) {
      shape_error(Op::kLstmCell, "previous state " + shape_string(np.rows, np.cols) + " for gates " +
                                     shape_string(ng.rows, ng.cols));
    }
    n.b = prev.id;
    n.requires_grad = n.requires_grad || np.requires_grad;
  }
  return push(std::move(n));
}

void Tape::set_output(Var v) {
  node(v);
  output_ = v.id;
}

Var Tape::output() const { return Var{output_}; }

void Tape::set_input(Var input, const Matrix& value) {
  Node& n = nodes_.at(input.id);
  if (n.op != Op::kInput) throw ValidationError("tape: node " + std::to_string(input.id) + " is not an input");
  if (value.rows() != n.rows || value.cols() != n.cols) {
    throw ValidationError("tape: input '" + n.name + "' (node " + std::to_string(input.id) +
                          ") expects " + shape_string(n.rows, n.cols) + ", got " +
                          value.shape_string());
  }
  std::copy(value.values().begin(), value.values().end(), n.value.values().begin());
  n.fed = true;
  evaluated_ = false;
}

const Matrix& Tape::forward(std::span<const Matrix> inputs) {
  if (inputs.size() != inputs_.size()) {
    throw ValidationError("tape: forward got " + std::to_string(inputs.size()) + " inputs, graph declares " +
                          std::to_string(inputs_.size()));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) set_input(Var{inputs_[i]}, inputs[i]);
  return forward();
}

const Matrix& Tape::forward() {
  if (nodes_.empty()) throw ValidationError("tape: forward on an empty graph");
  for (std::uint32_t id : inputs_) {
    if (!nodes_[id].fed) throw ValidationError("tape: input '" + nodes_[id].name + "' was never fed");
  }
  for (Node& n : nodes_) evaluate(n);
  evaluated_ = true;
  return nodes_[output_].value;
}

void Tape::evaluate(Node& n) {
  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
      return;
    case Op::kParam:
      n.value = (*params_)[n.index].value;
      return;
    default:
      break;
  }
  if (n.value.rows() != n.rows || n.value.cols() != n.cols) n.value.reset(n.rows, n.cols);
  auto out = n.value.values();
  switch (n.op) {
    case Op::kMatMul:
      view(n.value).noalias() = view(nodes_[n.a].value) * view(nodes_[n.b].value);
      break;
    case Op::kAdd: {
      auto x = nodes_[n.a].value.values();
      auto y = nodes_[n.b].value.values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
      break;
    }
    case Op::kSub: {
      auto x = nodes_[n.a].value.values();
      auto y = nodes_[n.b].value.values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
      break;
    }
    case Op::kMul: {
      auto x = nodes_[n.a].value.values();
      auto y = nodes_[n.b].value.values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
      break;
    }
    case Op::kAddRow: {
      const Matrix& x = nodes_[n.a].value;
      auto r = nodes_[n.b].value.values();
      for (std::size_t i = 0; i < n.rows; ++i) {
        auto src = x.row(i);
        auto dst = n.value.row(i);
        for (std::size_t j = 0; j < n.cols; ++j) dst[j] = src[j] + r[j];
      }
      break;
    }
    case Op::kScale: {
      auto x = nodes_[n.a].value.values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.factor * x[i];
      break;
    }
    case Op::kTanh: {
      tanh_into(nodes_[n.a].value.values(), out);
      break;
    }
    case Op::kSigmoid: {
      logistic_into(nodes_[n.a].value.values(), out);
      break;
    }
    case Op::kSilu: {
      auto x = nodes_[n.a].value.values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * logistic(x[i]);
      break;
    }
    case Op::kConcatCols: {
      std::size_t offset = 0;
      for (std::uint32_t p : n.parts) {
        const Matrix& src = nodes_[p].value;
        for (std::size_t i = 0; i < n.rows; ++i) {
          auto s = src.row(i);
          std::copy(s.begin(), s.end(), n.value.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
        }
        offset += src.cols();
      }
      break;
    }
    case Op::kSliceCols: {
      const Matrix& src = nodes_[n.a].value;
      for (std::size_t i = 0; i < n.rows; ++i) {
        auto s = src.row(i).subspan(n.index, n.cols);
        std::copy(s.begin(), s.end(), n.value.row(i).begin());
      }
      break;
    }
    case Op::kMeanSqNorm: {
      const Matrix& src = nodes_[n.a].value;
      double acc = 0.0;
      for (double x : src.values()) acc += x * x;
      out[0] = acc / static_cast<double>(src.rows());
      break;
    }
    case Op::kLstmCell: {
      const std::size_t h = n.cols / 2;
      const Matrix& z = nodes_[n.a].value;
      const Matrix* prev = n.b == Var::kInvalid ? nullptr : &nodes_[n.b].value;
      if (n.aux.rows() != n.rows || n.aux.cols() != 4 * h) n.aux.reset(n.rows, 4 * h);
      if (n.aux2.rows() != n.rows || n.aux2.cols() != h) n.aux2.reset(n.rows, h);
      // tanh(x) = 2 sigmoid(2x) - 1 lets one pass activate all four gates.
      for (std::size_t r = 0; r < n.rows; ++r) {
        auto src = z.row(r);
        auto dst = n.aux.row(r);
        std::copy(src.begin(), src.end(), dst.begin());
        for (std::size_t j = 2 * h; j < 3 * h; ++j) dst[j] *= 2.0;
      }
      logistic_into(n.aux.values(), n.aux.values());
      for (std::size_t r = 0; r < n.rows; ++r) {
        auto gt = n.aux.row(r);
        auto c = n.aux2.row(r);
        auto hc = n.value.row(r);
        for (std::size_t j = 0; j < h; ++j) {
          gt[2 * h + j] = 2.0 * gt[2 * h + j] - 1.0;
          double cj = gt[j] * gt[2 * h + j];
          if (prev != nullptr) cj += gt[h + j] * prev->row(r)[h + j];
          c[j] = cj;
          hc[h + j] = cj;
        }
      }
      tanh_into(n.aux2.values(), n.aux2.values());
      for (std::size_t r = 0; r < n.rows; ++r) {
        auto gt = n.aux.row(r);
        auto tc = n.aux2.row(r);
        auto hc = n.value.row(r);
        for (std::size_t j = 0; j < h; ++j) hc[j] = gt[3 * h + j] * tc[j];
      }
      break;
    }
    default:
      break;
  }
}

GradientSet Tape::backward() {
  if (!evaluated_) throw ValidationError("tape: backward called before forward");
  Node& out = nodes_[output_];
  if (out.rows != 1 || out.cols != 1) {
    throw ValidationError("tape: backward needs a scalar output, node " + std::to_string(output_) +
                          " is " + shape_string(out.rows, out.cols));
  }
  for (Node& n : nodes_) {
    if (!n.requires_grad) continue;
    if (n.adjoint.rows() != n.rows || n.adjoint.cols() != n.cols) {
      n.adjoint.reset(n.rows, n.cols);
    } else {
      n.adjoint.fill(0.0);
    }
  }
  if (out.requires_grad) {
    out.adjoint[0] = 1.0;
    for (std::size_t i = output_ + 1; i-- > 0;) {
      if (nodes_[i].requires_grad) propagate(nodes_[i]);
    }
  }
  GradientSet grads;
  if (params_ != nullptr) {
    grads = GradientSet::zeros_like(*params_);
    for (const Node& n : nodes_) {
      if (n.op == Op::kParam) grads.blocks[n.index] = n.adjoint;
    }
  }
  return grads;
}

void Tape::propagate(Node& n) {
  const auto g = n.adjoint.values();
  auto grad_of = [this](std::uint32_t id) -> Matrix* {
    Node& x = nodes_[id];
    return x.requires_grad ? &x.adjoint : nullptr;
  };
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
    case Op::kConstant:
      return;
    case Op::kMatMul: {
      if (Matrix* da = grad_of(n.a)) {
        view(*da).noalias() += view(n.adjoint) * view(nodes_[n.b].value).transpose();
      }
      if (Matrix* db = grad_of(n.b)) {
        view(*db).noalias() += view(nodes_[n.a].value).transpose() * view(n.adjoint);
      }
      return;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sign = n.op == Op::kAdd ? 1.0 : -1.0;
      if (Matrix* da = grad_of(n.a)) {
        auto d = da->values();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (Matrix* db = grad_of(n.b)) {
        auto d = db->values();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += sign * g[i];
      }
      return;
    }
    case Op::kMul: {
      auto x = nodes_[n.a].value.values();
      auto y = nodes_[n.b].value.values();
      if (Matrix* da = grad_of(n.a)) {
        auto d = da->values();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
      }
      if (Matrix* db = grad_of(n.b)) {
        auto d = db->values();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
      }
      return;
    }
    case Op::kAddRow: {
      if (Matrix* da = grad_of(n.a)) {
        auto d = da->values();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (Matrix* db = grad_of(n.b)) {
        auto d = db->values();
        for (std::size_t i = 0; i < n.rows; ++i) {
          auto gi = n.adjoint.row(i);
          for (std::size_t j = 0; j < n.cols; ++j) d[j] += gi[j];
        }
      }
      return;
    }
    case Op::kScale: {
      auto d = nodes_[n.a].adjoint.values();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += n.factor * g[i];
      return;
    }
    case Op::kTanh: {
      auto y = n.value.values();
      auto d = nodes_[n.a].adjoint.values();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::kSigmoid: {
      auto y = n.value.values();
      auto d = nodes_[n.a].adjoint.values();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::kSilu: {
      auto x = nodes_[n.a].value.values();
      auto d = nodes_[n.a].adjoint.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = logistic(x[i]);
        d[i] += g[i] * (s + x[i] * s * (1.0 - s));
      }
      return;
    }
    case Op::kConcatCols: {
      std::size_t offset = 0;
      for (std::uint32_t p : n.parts) {
        Node& part = nodes_[p];
        if (part.requires_grad) {
          for (std::size_t i = 0; i < n.rows; ++i) {
            auto src = n.adjoint.row(i).subspan(offset, part.cols);
            auto dst = part.adjoint.row(i);
            for (std::size_t j = 0; j < part.cols; ++j) dst[j] += src[j];
          }
        }
        offset += part.cols;
      }
      return;
    }
    case Op::kSliceCols: {
      Matrix& da = nodes_[n.a].adjoint;
      for (std::size_t i = 0; i < n.rows; ++i) {
        auto src = n.adjoint.row(i);
        auto dst = da.row(i).subspan(n.index, n.cols);
        for (std::size_t j = 0; j < n.cols; ++j) dst[j] += src[j];
      }
      return;
    }
    case Op::kMeanSqNorm: {
      Node& a = nodes_[n.a];
      auto x = a.value.values();
      auto d = a.adjoint.values();
      const double c = 2.0 * g[0] / static_cast<double>(a.rows);
      for (std::size_t i = 0; i < x.size(); ++i) d[i] += c * x[i];
      return;
    }
    case Op::kLstmCell: {
      const std::size_t h = n.cols / 2;
      Matrix* dz = grad_of(n.a);
      const Matrix* prev = n.b == Var::kInvalid ? nullptr : &nodes_[n.b].value;
      Matrix* dprev = n.b == Var::kInvalid ? nullptr : grad_of(n.b);
      for (std::size_t r = 0; r < n.rows; ++r) {
        auto gt = n.aux.row(r);
        auto tc = n.aux2.row(r);
        auto gr = n.adjoint.row(r);
        for (std::size_t j = 0; j < h; ++j) {
          const double i = gt[j];
          const double f = gt[h + j];
          const double gg = gt[2 * h + j];
          const double o = gt[3 * h + j];
          const double dh = gr[j];
          const double dc = gr[h + j] + dh * o * (1.0 - tc[j] * tc[j]);
          if (dz != nullptr) {
            auto d = dz->row(r);
            d[j] += dc * gg * i * (1.0 - i);
            if (prev != nullptr) d[h + j] += dc * prev->row(r)[h + j] * f * (1.0 - f);
            d[2 * h + j] += dc * i * (1.0 - gg * gg);
            d[3 * h + j] += dh * tc[j] * o * (1.0 - o);
          }
          if (dprev != nullptr) dprev->row(r)[h + j] += dc * f;
        }
      }
      return;
    }
  }
}

const Matrix& Tape::value(Var v) const {
  const Node& n = node(v);
  if (n.op == Op::kParam && n.value.empty()) return (*params_)[n.index].value;
  return n.value;
}

const Matrix& Tape::adjoint(Var v) const {
  const Node& n = node(v);
  if (!n.requires_grad) throw ValidationError("tape: node " + std::to_string(v.id) + " does not track gradients");
  return n.adjoint;
}

}  // namespace afm::num
