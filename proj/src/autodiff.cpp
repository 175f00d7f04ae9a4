#include "purple/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "purple/errors.hpp"

namespace purple::ad {

namespace {

std::string shape(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

[[noreturn]] void mismatch(const char* what, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape(a) + " vs " + shape(b));
}

// Largest double below one and smallest positive double; keeps sigmoid in (0, 1).
constexpr double kSigmoidHi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
constexpr double kSigmoidLo = std::numeric_limits<double>::denorm_min();

double logistic(double x) {
    double y;
    if (x >= 0) {
        y = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        y = e / (1.0 + e);
    }
    return std::clamp(y, kSigmoidLo, kSigmoidHi);
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "constant";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::add_row: return "add_row";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::scale: return "scale";
        case Op::transpose: return "transpose";
        case Op::row_softmax: return "row_softmax";
        case Op::sigmoid: return "sigmoid";
        case Op::relu: return "relu";
        case Op::log: return "log";
        case Op::mean_rows: return "mean_rows";
        case Op::max_rows: return "max_rows";
        case Op::concat_rows: return "concat_rows";
        case Op::concat_cols: return "concat_cols";
        case Op::slice_cols: return "slice_cols";
        case Op::sum: return "sum";
        case Op::pick: return "pick";
        case Op::pl_logprob: return "pl_logprob";
    }
    return "?";
}

Var Tape::push(Node node) {
    for (auto p : node.parents) node.needs_grad = node.needs_grad || nodes_[p].needs_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("variable does not belong to this tape");
}

const Tape::Node& Tape::node(Var v) const {
    check_owned(v);
    return nodes_[v.id_];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

const Matrix& Tape::grad(Var v) const {
    auto& n = const_cast<Node&>(node(v));
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Op Tape::op(Var v) const { return node(v).op; }

Var Tape::leaf(Matrix value) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.needs_grad = true;
    return push(std::move(n));
}

Var Tape::constant(Matrix value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    const auto& A = node(a).value;
    const auto& B = node(b).value;
    if (A.cols() != B.rows()) mismatch("matmul", A, B);
    Node n;
    n.op = Op::matmul;
    n.value = A * B;
    n.parents = {a.id_, b.id_};
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    const auto& A = node(a).value;
    const auto& B = node(b).value;
    Node n;
    n.parents = {a.id_, b.id_};
    if (A.rows() == B.rows() && A.cols() == B.cols()) {
        n.op = Op::add;
        n.value = A + B;
    } else if (B.rows() == 1 && B.cols() == A.cols()) {
        n.op = Op::add_row;
        n.value = A.rowwise() + B.row(0);
    } else {
        mismatch("add", A, B);
    }
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    const auto& A = node(a).value;
    const auto& B = node(b).value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) mismatch("sub", A, B);
    Node n;
    n.op = Op::sub;
    n.value = A - B;
    n.parents = {a.id_, b.id_};
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    const auto& A = node(a).value;
    const auto& B = node(b).value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) mismatch("mul", A, B);
    Node n;
    n.op = Op::mul;
    n.value = A.cwiseProduct(B);
    n.parents = {a.id_, b.id_};
    return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
    Node n;
    n.op = Op::scale;
    n.value = node(a).value * factor;
    n.scalar = factor;
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    Node n;
    n.op = Op::transpose;
    n.value = node(a).value.transpose();
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::row_softmax(Var a) {
    const auto& A = node(a).value;
    Node n;
    n.op = Op::row_softmax;
    n.value.resize(A.rows(), A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
        const double mx = A.row(r).maxCoeff();
        auto e = (A.row(r).array() - mx).exp();
        n.value.row(r) = e / e.sum();
    }
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    Node n;
    n.op = Op::sigmoid;
    n.value = node(a).value.unaryExpr(&logistic);
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    Node n;
    n.op = Op::relu;
    n.value = node(a).value.cwiseMax(0.0);
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::log(Var a) {
    const auto& A = node(a).value;
    if ((A.array() <= 0.0).any()) throw NumericError("log of a non-positive value");
    Node n;
    n.op = Op::log;
    n.value = A.array().log().matrix();
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::mean_rows(Var a) {
    const auto& A = node(a).value;
    if (A.rows() == 0) throw ShapeError("mean_rows of an empty matrix " + shape(A));
    Node n;
    n.op = Op::mean_rows;
    n.value = A.colwise().mean();
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::max_rows(Var a) {
    const auto& A = node(a).value;
    if (A.rows() == 0) throw ShapeError("max_rows of an empty matrix " + shape(A));
    Node n;
    n.op = Op::max_rows;
    n.value.resize(1, A.cols());
    for (Eigen::Index c = 0; c < A.cols(); ++c) {
        Eigen::Index arg = 0;
        n.value(0, c) = A.col(c).maxCoeff(&arg);
        n.aux.push_back(static_cast<std::size_t>(arg));
    }
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    const auto cols = node(parts[0]).value.cols();
    Eigen::Index rows = 0;
    for (auto p : parts) {
        const auto& P = node(p).value;
        if (P.cols() != cols) mismatch("concat_rows", node(parts[0]).value, P);
        rows += P.rows();
    }
    Node n;
    n.op = Op::concat_rows;
    n.value.resize(rows, cols);
    Eigen::Index at = 0;
    for (auto p : parts) {
        const auto& P = node(p).value;
        n.value.middleRows(at, P.rows()) = P;
        at += P.rows();
        n.parents.push_back(p.id_);
    }
    return push(std::move(n));
}

Var Tape::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    const auto rows = node(parts[0]).value.rows();
    Eigen::Index cols = 0;
    for (auto p : parts) {
        const auto& P = node(p).value;
        if (P.rows() != rows) mismatch("concat_cols", node(parts[0]).value, P);
        cols += P.cols();
    }
    Node n;
    n.op = Op::concat_cols;
    n.value.resize(rows, cols);
    Eigen::Index at = 0;
    for (auto p : parts) {
        const auto& P = node(p).value;
        n.value.middleCols(at, P.cols()) = P;
        at += P.cols();
        n.parents.push_back(p.id_);
    }
    return push(std::move(n));
}

Var Tape::slice_cols(Var a, std::size_t start, std::size_t count) {
    const auto& A = node(a).value;
    if (start + count > static_cast<std::size_t>(A.cols()))
        throw ShapeError("slice_cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of " + shape(A));
    Node n;
    n.op = Op::slice_cols;
    n.value = A.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
    n.aux = {start, count};
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    Node n;
    n.op = Op::sum;
    n.value = Matrix::Constant(1, 1, node(a).value.sum());
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::pick(Var a, std::size_t row, std::size_t col) {
    const auto& A = node(a).value;
    if (row >= static_cast<std::size_t>(A.rows()) || col >= static_cast<std::size_t>(A.cols()))
        throw ShapeError("pick (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " + shape(A));
    Node n;
    n.op = Op::pick;
    n.value = Matrix::Constant(1, 1, A(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)));
    n.aux = {row, col};
    n.parents = {a.id_};
    return push(std::move(n));
}

Var Tape::pl_logprob(Var scores, std::span<const std::size_t> profile, double floor) {
    const auto& s = node(scores).value;
    if (s.rows() != 1 && s.cols() != 1) throw ShapeError("pl_logprob expects a vector of scores, got " + shape(s));
    const auto count = static_cast<std::size_t>(s.size());
    std::vector<bool> used(count, false);
    double residual = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) residual += std::max(s.data()[i], floor);
    double lp = 0.0;
    for (auto idx : profile) {
        if (idx >= count || used[idx]) throw ValidationError("pl_logprob: invalid profile index " + std::to_string(idx));
        if (!(residual > floor)) throw NumericError("pl_logprob: residual score mass is degenerate");
        const double f = std::max(s.data()[idx], floor);
        lp += std::log(f) - std::log(residual);
        residual -= f;
        used[idx] = true;
    }
    Node n;
    n.op = Op::pl_logprob;
    n.value = Matrix::Constant(1, 1, lp);
    n.aux.assign(profile.begin(), profile.end());
    n.scalar = floor;
    n.parents = {scores.id_};
    return push(std::move(n));
}

void Tape::zero_grad() {
    for (auto& n : nodes_)
        if (n.op == Op::leaf) n.grad.resize(0, 0);
}

void Tape::backward(Var root) {
    const auto& r = node(root).value;
    if (r.rows() != 1 || r.cols() != 1) throw ShapeError("backward needs a 1x1 root, got " + shape(r));
    std::vector<Matrix> adj(root.id_ + 1);
    adj[root.id_] = Matrix::Ones(1, 1);
    for (std::size_t id = root.id_ + 1; id-- > 0;) {
        if (adj[id].size() == 0 || !nodes_[id].needs_grad) continue;
        if (nodes_[id].op == Op::leaf) {
            auto& n = nodes_[id];
            if (n.grad.size() == 0)
                n.grad = adj[id];
            else
                n.grad += adj[id];
            continue;
        }
        propagate(id, adj[id], adj);
    }
}

void Tape::propagate(std::size_t id, const Matrix& g, std::vector<Matrix>& adj) {
    const Node& n = nodes_[id];
    auto accumulate = [&](std::size_t p, const auto& contribution) {
        if (!nodes_[p].needs_grad) return;
        if (adj[p].size() == 0)
            adj[p] = contribution;
        else
            adj[p] += contribution;
    };
    auto val = [&](std::size_t i) -> const Matrix& { return nodes_[n.parents[i]].value; };

    switch (n.op) {
        case Op::leaf:
        case Op::constant:
            break;
        case Op::matmul:
            accumulate(n.parents[0], Matrix(g * val(1).transpose()));
            accumulate(n.parents[1], Matrix(val(0).transpose() * g));
            break;
        case Op::add:
            accumulate(n.parents[0], g);
            accumulate(n.parents[1], g);
            break;
        case Op::add_row:
            accumulate(n.parents[0], g);
            accumulate(n.parents[1], Matrix(g.colwise().sum()));
            break;
        case Op::sub:
            accumulate(n.parents[0], g);
            accumulate(n.parents[1], Matrix(-g));
            break;
        case Op::mul:
            accumulate(n.parents[0], Matrix(g.cwiseProduct(val(1))));
            accumulate(n.parents[1], Matrix(g.cwiseProduct(val(0))));
            break;
        case Op::scale:
            accumulate(n.parents[0], Matrix(g * n.scalar));
            break;
        case Op::transpose:
            accumulate(n.parents[0], Matrix(g.transpose()));
            break;
        case Op::row_softmax: {
            // Jacobian-vector product per row: y * (g - <g, y>).
            const Matrix& y = n.value;
            Matrix dx(y.rows(), y.cols());
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                dx.row(r) = y.row(r).array() * (g.row(r).array() - dot);
            }
            accumulate(n.parents[0], dx);
            break;
        }
        case Op::sigmoid: {
            const Matrix& y = n.value;
            accumulate(n.parents[0], Matrix(g.array() * y.array() * (1.0 - y.array())));
            break;
        }
        case Op::relu:
            accumulate(n.parents[0], Matrix((val(0).array() > 0.0).select(g, 0.0)));
            break;
        case Op::log:
            accumulate(n.parents[0], Matrix(g.array() / val(0).array()));
            break;
        case Op::mean_rows: {
            const auto rows = val(0).rows();
            accumulate(n.parents[0], Matrix(g.replicate(rows, 1) / static_cast<double>(rows)));
            break;
        }
        case Op::max_rows: {
            Matrix dx = Matrix::Zero(val(0).rows(), val(0).cols());
            for (Eigen::Index c = 0; c < dx.cols(); ++c)
                dx(static_cast<Eigen::Index>(n.aux[static_cast<std::size_t>(c)]), c) = g(0, c);
            accumulate(n.parents[0], dx);
            break;
        }
        case Op::concat_rows: {
            Eigen::Index at = 0;
            for (std::size_t i = 0; i < n.parents.size(); ++i) {
                const auto rows = val(i).rows();
                accumulate(n.parents[i], Matrix(g.middleRows(at, rows)));
                at += rows;
            }
            break;
        }
        case Op::concat_cols: {
            Eigen::Index at = 0;
            for (std::size_t i = 0; i < n.parents.size(); ++i) {
                const auto cols = val(i).cols();
                accumulate(n.parents[i], Matrix(g.middleCols(at, cols)));
                at += cols;
            }
            break;
        }
        case Op::slice_cols: {
            Matrix dx = Matrix::Zero(val(0).rows(), val(0).cols());
            dx.middleCols(static_cast<Eigen::Index>(n.aux[0]), static_cast<Eigen::Index>(n.aux[1])) = g;
            accumulate(n.parents[0], dx);
            break;
        }
        case Op::sum:
            accumulate(n.parents[0], Matrix(Matrix::Constant(val(0).rows(), val(0).cols(), g(0, 0))));
            break;
        case Op::pick: {
            Matrix dx = Matrix::Zero(val(0).rows(), val(0).cols());
            dx(static_cast<Eigen::Index>(n.aux[0]), static_cast<Eigen::Index>(n.aux[1])) = g(0, 0);
            accumulate(n.parents[0], dx);
            break;
        }
        case Op::pl_logprob: {
            // d/df_i = [i = p_j] / f_i - sum_{j' <= j} 1/D_j'  (all j' for unselected i)
            const Matrix& s = val(0);
            const double floor = n.scalar;
            const auto count = s.size();
            double residual = 0.0;
            for (Eigen::Index i = 0; i < count; ++i) residual += std::max(s.data()[i], floor);
            std::vector<double> cumulative(n.aux.size());
            double acc = 0.0;
            for (std::size_t j = 0; j < n.aux.size(); ++j) {
                acc += 1.0 / residual;
                cumulative[j] = acc;
                residual -= std::max(s.data()[n.aux[j]], floor);
            }
            Matrix dx = Matrix::Constant(s.rows(), s.cols(), -acc);
            for (std::size_t j = 0; j < n.aux.size(); ++j) {
                const auto i = static_cast<Eigen::Index>(n.aux[j]);
                dx.data()[i] = 1.0 / std::max(s.data()[i], floor) - cumulative[j];
            }
            for (Eigen::Index i = 0; i < count; ++i)
                dx.data()[i] = s.data()[i] > floor ? dx.data()[i] * g(0, 0) : 0.0;
            accumulate(n.parents[0], dx);
            break;
        }
    }
}

double finite_diff_check(const std::function<double(std::span<const Matrix>)>& f,
                         std::span<Matrix> params, std::span<const Matrix> grad, double h) {
    if (!(h > 0.0)) throw ValidationError("finite_diff_check needs h > 0");
    if (params.size() != grad.size()) throw ShapeError("finite_diff_check: parameter/gradient count mismatch");
    auto eval = [&] {
        const double v = f(std::span<const Matrix>(params.data(), params.size()));
        if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite evaluation");
        return v;
    };
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p].rows() != grad[p].rows() || params[p].cols() != grad[p].cols())
            mismatch("finite_diff_check", params[p], grad[p]);
        for (Eigen::Index i = 0; i < params[p].size(); ++i) {
            double& x = params[p].data()[i];
            const double saved = x;
            x = saved + h;
            const double up = eval();
            x = saved - h;
            const double down = eval();
            x = saved;
            const double central = (up - down) / (2.0 * h);
            const double err = std::abs(grad[p].data()[i] - central) / std::max(1.0, std::abs(central));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace purple::ad
