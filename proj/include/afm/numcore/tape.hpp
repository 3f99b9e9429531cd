#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afm/numcore/matrix.hpp"
#include "afm/numcore/params.hpp"

namespace afm::num {

// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

enum class Op : std::uint8_t {
  kInput,
  kParam,
  kConstant,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kAddRow,
  kScale,
  kTanh,
  kSigmoid,
  kSilu,
  kConcatCols,
  kSliceCols,
  kMeanSqNorm,
  kLstmCell,
};

std::string_view op_name(Op op);

// Reverse-mode gradient tape over a closed set of matrix primitives.
//
// Recording an op only infers and checks shapes. forward() evaluates every
// node in recording order from the current input values and parameter
// values, so one recorded graph is replayed for every batch. backward()
// differentiates the output node, which must be 1x1, and returns gradients
// for every parameter of the bound ParameterSet (zero for unused blocks).
//
// A Tape is single-threaded. Several tapes may read the same ParameterSet
// concurrently as long as nobody writes it.
class Tape {
 public:
  explicit Tape(const ParameterSet* params = nullptr) : params_(params) {}

  // Leaves. Inputs are fed with set_input() or forward(inputs) in
  // declaration order; requires_grad makes adjoint() available for them.
  Var input(std::size_t rows, std::size_t cols, std::string name = {},
            bool requires_grad = false);
  Var param(ParamId id);
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // a (r x c) plus row vector (1 x c) added to every row.
  Var add_row(Var a, Var row);
  Var scale(Var a, double factor);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var silu(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  // Mean over rows of the squared row norm: sum(a^2) / rows, shape 1x1.
  Var mean_sq_norm(Var a);
  // Fused LSTM cell. gates is B x 4H pre-activation in order (i, f, g, o);
  // prev is the previous cell's output or invalid for a zero state. Returns
  // B x 2H holding (h, c).
  Var lstm_cell(Var gates, Var prev = {});

  // Defaults to the most recently recorded node.
  void set_output(Var v);
  Var output() const;

  void set_input(Var input, const Matrix& value);
  const Matrix& forward();
  const Matrix& forward(std::span<const Matrix> inputs);
  GradientSet backward();

  const Matrix& value(Var v) const;
  const Matrix& adjoint(Var v) const;
  std::size_t rows(Var v) const { return node(v).rows; }
  std::size_t cols(Var v) const { return node(v).cols; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t input_count() const { return inputs_.size(); }
  bool evaluated() const { return evaluated_; }

 private:
  struct Node {
    Op op;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::uint32_t a = Var::kInvalid;
    std::uint32_t b = Var::kInvalid;
    std::vector<std::uint32_t> parts;
    std::size_t index = 0;  // slice offset, parameter id or input slot
    double factor = 0.0;
    bool requires_grad = false;
    bool fed = false;
    std::string name;
    Matrix value;
    Matrix adjoint;
    // Forward state kept for the backward pass of fused ops.
    Matrix aux;
    Matrix aux2;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  Var unary(Op op, Var a);
  Var binary_same_shape(Op op, Var a, Var b);
  [[noreturn]] void shape_error(Op op, std::string_view detail) const;
  void evaluate(Node& n);
  void propagate(Node& n);

  const ParameterSet* params_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> inputs_;
  std::uint32_t output_ = Var::kInvalid;
  bool evaluated_ = false;
};

}  // namespace afm::num
