#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "purple/matrix.hpp"

namespace purple::ad {

enum class Op {
    leaf,
    constant,
    matmul,
    add,
    add_row,  // a (r x c) + b (1 x c), broadcast over rows
    sub,
    mul,
    scale,
    transpose,
    row_softmax,
    sigmoid,
    relu,
    log,
    mean_rows,
    max_rows,
    concat_rows,
    concat_cols,
    slice_cols,
    sum,
    pick,
    pl_logprob,
};

const char* op_name(Op op);

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
  public:
    Var() = default;

    std::size_t id() const { return id_; }
    const Tape* tape() const { return tape_; }

  private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records one forward pass. Nodes are appended in evaluation order, so the
/// node list is already topologically sorted and backward walks it in reverse.
///
/// Leaf gradients accumulate across backward() calls until zero_grad().
/// Gradients of interior nodes are scratch space owned by each backward() call.
class Tape {
  public:
    Var leaf(Matrix value);
    Var constant(Matrix value);

    Var matmul(Var a, Var b);
    /// Elementwise sum. `b` may also be a 1 x cols row that is broadcast over the rows of `a`.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double factor);
    Var transpose(Var a);
    Var row_softmax(Var a);
    /// Logistic function clamped into the open interval (0, 1).
    Var sigmoid(Var a);
    Var relu(Var a);
    Var log(Var a);
    /// Column means, producing a 1 x cols row.
    Var mean_rows(Var a);
    /// Column maxima as a 1 x cols row; the gradient flows to the first maximal row.
    Var max_rows(Var a);
    Var concat_rows(std::span<const Var> parts);
    Var concat_cols(std::span<const Var> parts);
    Var slice_cols(Var a, std::size_t start, std::size_t count);
    /// Sum of all entries as a 1 x 1 node.
    Var sum(Var a);
    Var pick(Var a, std::size_t row, std::size_t col);

    /// Plackett-Luce log-probability of the ordered selection `profile` given a
    /// column (or row) of positive scores. Scores below `floor` are lifted to it
    /// and receive no gradient. Throws NumericError when a residual mass is <= floor.
    Var pl_logprob(Var scores, std::span<const std::size_t> profile, double floor = 1e-9);

    void backward(Var root);
    void zero_grad();

    const Matrix& value(Var v) const;
    /// Gradient accumulated on a leaf (zeros when nothing has flowed into it yet).
    const Matrix& grad(Var v) const;
    Op op(Var v) const;
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Op op = Op::leaf;
        Matrix value;
        Matrix grad;
        std::vector<std::size_t> parents;
        std::vector<std::size_t> aux;  // indices for pick / slice / pl_logprob
        double scalar = 0.0;           // scale factor or floor
        bool needs_grad = false;
    };

    Var push(Node node);
    const Node& node(Var v) const;
    void check_owned(Var v) const;
    void propagate(std::size_t id, const Matrix& upstream, std::vector<Matrix>& adj);

    std::vector<Node> nodes_;
};

/// Compares `grad` against central differences of `f` around `params`.
///
/// Returns the max over coordinates of |analytic - central| / max(1, |central|).
/// `params` is perturbed in place and restored before returning.
/// Throws NumericError if `f` evaluates to a non-finite value.
double finite_diff_check(const std::function<double(std::span<const Matrix>)>& f,
                         std::span<Matrix> params, std::span<const Matrix> grad, double h = 1e-5);

}  // namespace purple::ad
