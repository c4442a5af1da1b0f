#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lrvd/matrix.hpp"

namespace lrvd {

class Tape;

/// Handle to a node on a ComputeTape.
struct Var {
    int id = -1;
    std::size_t rows = 0;
    std::size_t cols = 0;

    bool is_scalar() const { return rows == 1 && cols == 1; }
};

/// Reverse-mode differentiation tape. Nodes are appended in evaluation order
/// (so inputs always precede consumers) with forward values cached eagerly;
/// backward() walks the list once in reverse, accumulating exact adjoints.
/// One tape per training step; distinct tapes are independent.
class Tape {
public:
    enum class Op {
        kConstant,
        kLeaf,
        kAdd,
        kSub,
        kMul,        // elementwise
        kMatMul,
        kTranspose,
        kScalarMul,  // by compile-time constant scalar
        kAddConst,   // elementwise + constant scalar
        kExp,
        kLog,
        kSigmoid,
        kSqrt,
        kSquare,
        kSum,        // full reduction to 1x1
        kMean,       // full reduction to 1x1
        kRowSoftmax,
        kCrossEntropyWithLabels,
        kClamp,
        kRelu,
        kScaleRows,  // rows of input0 scaled by row-vector input1
        kScaleCols,  // cols of input0 scaled by row-vector input1
        kAddRowVec,  // broadcast row-vector input1 onto input0
    };

    Var constant(Matrix value) { return push(Op::kConstant, std::move(value), -1, -1, false); }

    /// Trainable parameter; receives a gradient slot.
    Var leaf(Matrix value) { return push(Op::kLeaf, std::move(value), -1, -1, true); }

    const Matrix& value(Var v) const { return node(v.id).value; }

    /// Gradient of the last backward() loss w.r.t. v. Zero matrix when the
    /// loss does not depend on v.
    Matrix grad(Var v) const {
        const Node& n = node(v.id);
        if (n.grad.rows() == 0) return Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    std::size_t num_nodes() const { return nodes_.size(); }

    // -- primitives ----------------------------------------------------------

    Var add(Var a, Var b) {
        require_same_shape(a, b, "add");
        return push(Op::kAdd, value(a) + value(b), a.id, b.id);
    }

    Var sub(Var a, Var b) {
        require_same_shape(a, b, "sub");
        return push(Op::kSub, value(a) - value(b), a.id, b.id);
    }

    Var mul(Var a, Var b) {
        require_same_shape(a, b, "mul");
        return push(Op::kMul, hadamard(value(a), value(b)), a.id, b.id);
    }

    Var matmul(Var a, Var b) {
        if (a.cols != b.rows) {
            throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a) +
                                        " * " + shape_str(b));
        }
        return push(Op::kMatMul, lrvd::matmul(value(a), value(b)), a.id, b.id);
    }

    Var transpose(Var a) { return push(Op::kTranspose, value(a).transpose(), a.id, -1); }

    Var scalar_mul(double s, Var a) {
        Var v = push(Op::kScalarMul, value(a) * s, a.id, -1);
        node(v.id).p0 = s;
        return v;
    }

    Var add_const(Var a, double c) {
        Var v = push(Op::kAddConst, value(a).map([c](double x) { return x + c; }), a.id, -1);
        node(v.id).p0 = c;
        return v;
    }

    Var exp(Var a) {
        return push(Op::kExp, value(a).map([](double x) { return std::exp(x); }), a.id, -1);
    }

    Var log(Var a) {
        return push(Op::kLog, value(a).map([](double x) { return std::log(x); }), a.id, -1);
    }

    Var sigmoid(Var a) {
        return push(Op::kSigmoid,
                    value(a).map([](double x) {
                        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                        : std::exp(x) / (1.0 + std::exp(x));
                    }),
                    a.id, -1);
    }

    Var sqrt(Var a) {
        return push(Op::kSqrt, value(a).map([](double x) { return std::sqrt(x); }), a.id, -1);
    }

    Var square(Var a) {
        return push(Op::kSquare, value(a).map([](double x) { return x * x; }), a.id, -1);
    }

    Var sum(Var a) {
        double s = 0.0;
        for (double x : value(a).values()) s += x;
        return push(Op::kSum, Matrix{{s}}, a.id, -1);
    }

    Var mean(Var a) {
        double s = 0.0;
        for (double x : value(a).values()) s += x;
        return push(Op::kMean, Matrix{{s / static_cast<double>(value(a).size())}}, a.id, -1);
    }

    Var row_softmax(Var a) {
        return push(Op::kRowSoftmax, softmax_rows(value(a)), a.id, -1);
    }

    /// Mean negative log-likelihood of integer class labels under row-softmax
    /// of the logits. Fused for numerical stability.
    Var cross_entropy_with_labels(Var logits, const std::vector<int>& labels) {
        const Matrix& x = value(logits);
        if (labels.size() != x.rows()) {
            throw std::invalid_argument("cross_entropy_with_labels: " + std::to_string(labels.size()) +
                                        " labels for " + std::to_string(x.rows()) + " rows");
        }
        double total = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const int y = labels[i];
            if (y < 0 || static_cast<std::size_t>(y) >= x.cols()) {
                throw std::invalid_argument("cross_entropy_with_labels: label " + std::to_string(y) +
                                            " out of range for " + std::to_string(x.cols()) + " classes");
            }
            double mx = x(i, 0);
            for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
            double lse = 0.0;
            for (std::size_t j = 0; j < x.cols(); ++j) lse += std::exp(x(i, j) - mx);
            total += mx + std::log(lse) - x(i, static_cast<std::size_t>(y));
        }
        Var v = push(Op::kCrossEntropyWithLabels,
                     Matrix{{total / static_cast<double>(x.rows())}}, logits.id, -1);
        node(v.id).labels = labels;
        return v;
    }

    Var clamp(Var a, double lo, double hi) {
        Var v = push(Op::kClamp,
                     value(a).map([lo, hi](double x) { return std::min(std::max(x, lo), hi); }),
                     a.id, -1);
        node(v.id).p0 = lo;
        node(v.id).p1 = hi;
        return v;
    }

    Var relu(Var a) {
        return push(Op::kRelu, value(a).map([](double x) { return x > 0.0 ? x : 0.0; }), a.id, -1);
    }

    Var scale_rows(Var m, Var v) {
        require_row_vector(v, value(m).rows(), "scale_rows");
        return push(Op::kScaleRows, lrvd::scale_rows(value(m), value(v).values()), m.id, v.id);
    }

    Var scale_cols(Var m, Var v) {
        require_row_vector(v, value(m).cols(), "scale_cols");
        return push(Op::kScaleCols, lrvd::scale_cols(value(m), value(v).values()), m.id, v.id);
    }

    Var add_rowvec(Var m, Var v) {
        require_row_vector(v, value(m).cols(), "add_rowvec");
        Matrix out = value(m);
        const Matrix& row = value(v);
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += row(0, j);
        return push(Op::kAddRowVec, std::move(out), m.id, v.id);
    }

    // -- backward ------------------------------------------------------------

    /// Accumulate gradients of a scalar loss into every node that
    /// requires_grad. Clears previous gradients first.
    void backward(Var loss) {
        if (!loss.is_scalar()) {
            throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss));
        }
        for (Node& n : nodes_) {
            if (n.requires_grad) {
                n.grad = Matrix(n.value.rows(), n.value.cols());
            }
        }
        if (!nodes_[static_cast<std::size_t>(loss.id)].requires_grad) return;  // loss is constant
        nodes_[static_cast<std::size_t>(loss.id)].grad(0, 0) = 1.0;

        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.requires_grad || n.grad.size() == 0) continue;
            propagate(n);
        }
    }

private:
    struct Node {
        Op op;
        int in0 = -1;
        int in1 = -1;
        Matrix value;
        Matrix grad;  // empty until backward
        bool requires_grad = false;
        double p0 = 0.0;
        double p1 = 0.0;
        std::vector<int> labels;
    };

    Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
    const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    Var push(Op op, Matrix value, int in0, int in1, bool leaf_requires = false) {
        Node n;
        n.op = op;
        n.in0 = in0;
        n.in1 = in1;
        n.requires_grad = leaf_requires;
        if (op != Op::kConstant && op != Op::kLeaf) {
            n.requires_grad = (in0 >= 0 && node(in0).requires_grad) ||
                              (in1 >= 0 && node(in1).requires_grad);
        }
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        const int id = static_cast<int>(nodes_.size()) - 1;
        return Var{id, nodes_.back().value.rows(), nodes_.back().value.cols()};
    }

    void accumulate(int id, const Matrix& g) {
        if (id < 0) return;
        Node& n = node(id);
        if (!n.requires_grad) return;
        n.grad += g;
    }

    static Matrix softmax_rows(const Matrix& x) {
        Matrix p(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double mx = x(i, 0);
            for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
            double z = 0.0;
            for (std::size_t j = 0; j < x.cols(); ++j) {
                p(i, j) = std::exp(x(i, j) - mx);
                z += p(i, j);
            }
            for (std::size_t j = 0; j < x.cols(); ++j) p(i, j) /= z;
        }
        return p;
    }

    void propagate(Node& n) {
        const Matrix& g = n.grad;
        switch (n.op) {
            case Op::kConstant:
            case Op::kLeaf:
                break;
            case Op::kAdd:
                accumulate(n.in0, g);
                accumulate(n.in1, g);
                break;
            case Op::kSub:
                accumulate(n.in0, g);
                accumulate(n.in1, -g);
                break;
            case Op::kMul:
                accumulate(n.in0, hadamard(g, node(n.in1).value));
                accumulate(n.in1, hadamard(g, node(n.in0).value));
                break;
            case Op::kMatMul:
                accumulate(n.in0, lrvd::matmul(g, node(n.in1).value.transpose()));
                accumulate(n.in1, lrvd::matmul(node(n.in0).value.transpose(), g));
                break;
            case Op::kTranspose:
                accumulate(n.in0, g.transpose());
                break;
            case Op::kScalarMul:
                accumulate(n.in0, g * n.p0);
                break;
            case Op::kAddConst:
                accumulate(n.in0, g);
                break;
            case Op::kExp:
                accumulate(n.in0, hadamard(g, n.value));
                break;
            case Op::kLog: {
                Matrix gi = g;
                const Matrix& x = node(n.in0).value;
                for (std::size_t k = 0; k < gi.size(); ++k) gi.values()[k] /= x.values()[k];
                accumulate(n.in0, gi);
                break;
            }
            case Op::kSigmoid: {
                Matrix gi = g;
                for (std::size_t k = 0; k < gi.size(); ++k) {
                    const double s = n.value.values()[k];
                    gi.values()[k] *= s * (1.0 - s);
                }
                accumulate(n.in0, gi);
                break;
            }
            case Op::kSqrt: {
                Matrix gi = g;
                for (std::size_t k = 0; k < gi.size(); ++k) {
                    gi.values()[k] *= 0.5 / n.value.values()[k];
                }
                accumulate(n.in0, gi);
                break;
            }
            case Op::kSquare: {
                Matrix gi = g;
                const Matrix& x = node(n.in0).value;
                for (std::size_t k = 0; k < gi.size(); ++k) gi.values()[k] *= 2.0 * x.values()[k];
                accumulate(n.in0, gi);
                break;
            }
            case Op::kSum: {
                const Matrix& x = node(n.in0).value;
                accumulate(n.in0, Matrix(x.rows(), x.cols(), g(0, 0)));
                break;
            }
            case Op::kMean: {
                const Matrix& x = node(n.in0).value;
                accumulate(n.in0, Matrix(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
                break;
            }
            case Op::kRowSoftmax: {
                const Matrix& y = n.value;
                Matrix gi(y.rows(), y.cols());
                for (std::size_t i = 0; i < y.rows(); ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                    for (std::size_t j = 0; j < y.cols(); ++j)
                        gi(i, j) = y(i, j) * (g(i, j) - dot);
                }
                accumulate(n.in0, gi);
                break;
            }
            case Op::kCrossEntropyWithLabels: {
                const Matrix& x = node(n.in0).value;
                Matrix gi = softmax_rows(x);
                const double scale = g(0, 0) / static_cast<double>(x.rows());
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    gi(i, static_cast<std::size_t>(n.labels[i])) -= 1.0;
                    for (std::size_t j = 0; j < x.cols(); ++j) gi(i, j) *= scale;
                }
                accumulate(n.in0, gi);
                break;
            }
            case Op::kClamp: {
                Matrix gi = g;
                const Matrix& x = node(n.in0).value;
                for (std::size_t k = 0; k < gi.size(); ++k) {
                    const double xv = x.values()[k];
                    if (!(xv > n.p0 && xv < n.p1)) gi.values()[k] = 0.0;
                }
                accumulate(n.in0, gi);
                break;
            }
            case Op::kRelu: {
                Matrix gi = g;
                const Matrix& x = node(n.in0).value;
                for (std::size_t k = 0; k < gi.size(); ++k) {
                    if (x.values()[k] <= 0.0) gi.values()[k] = 0.0;
                }
                accumulate(n.in0, gi);
                break;
            }
            case Op::kScaleRows: {
                const Matrix& m = node(n.in0).value;
                const Matrix& v = node(n.in1).value;
                accumulate(n.in0, lrvd::scale_rows(g, v.values()));
                Matrix gv(1, m.rows());
                for (std::size_t i = 0; i < m.rows(); ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m.cols(); ++j) s += g(i, j) * m(i, j);
                    gv(0, i) = s;
                }
                accumulate(n.in1, gv);
                break;
            }
            case Op::kScaleCols: {
                const Matrix& m = node(n.in0).value;
                const Matrix& v = node(n.in1).value;
                accumulate(n.in0, lrvd::scale_cols(g, v.values()));
                Matrix gv(1, m.cols());
                for (std::size_t j = 0; j < m.cols(); ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m.rows(); ++i) s += g(i, j) * m(i, j);
                    gv(0, j) = s;
                }
                accumulate(n.in1, gv);
                break;
            }
            case Op::kAddRowVec: {
                accumulate(n.in0, g);
                Matrix gv(1, g.cols());
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.rows(); ++i) s += g(i, j);
                    gv(0, j) = s;
                }
                accumulate(n.in1, gv);
                break;
            }
        }
    }

    void require_same_shape(Var a, Var b, const char* op) const {
        if (a.rows != b.rows || a.cols != b.cols) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                                        " vs " + shape_str(b));
        }
    }

    void require_row_vector(Var v, std::size_t len, const char* op) const {
        if (v.rows != 1 || v.cols != len) {
            throw std::invalid_argument(std::string(op) + ": expected 1x" + std::to_string(len) +
                                        " row vector, got " + shape_str(v));
        }
    }

    static std::string shape_str(Var v) {
        return std::to_string(v.rows) + "x" + std::to_string(v.cols);
    }

    std::vector<Node> nodes_;
};

}  // namespace lrvd
