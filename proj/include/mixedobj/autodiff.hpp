#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace mixedobj::ad {

using Matrix = Eigen::MatrixXd;

struct dimension_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct domain_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct contract_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A named model parameter living outside any tape. Gradients accumulate here
// across Tape::backward calls until zero_grad.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;
    bool requires_grad() const;
    int id() const { return id_; }
    Tape* tape() const { return tape_; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward walks it once in reverse.
class Tape {
public:
    Var constant(Matrix v);
    Var leaf(Matrix v, bool requires_grad = true);
    // Leaf bound to an external parameter; backward accumulates into p.grad.
    Var param(Parameter& p, bool requires_grad = true);

    // root must be scalar-shaped (1x1)
    void backward(Var root);

    int clamp_events() const { return clamp_events_; }
    std::size_t size() const { return nodes_.size(); }

    // node-level access used by the op implementations
    int push(Matrix value, bool requires_grad, std::function<void(Tape&)> backprop);
    Matrix& val(int id) { return nodes_[id].value; }
    Matrix& grd(int id) { return nodes_[id].grad; }
    bool needs_grad(int id) const { return nodes_[id].requires_grad; }
    void count_clamp(int n) { clamp_events_ += n; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;  // empty for leaves/constants
    };

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, int>> params_;
    std::unordered_map<Parameter*, int> param_nodes_;
    int clamp_events_ = 0;
};

// --- operations ------------------------------------------------------------

Var matmul(Var a, Var b);    // a * b
Var matmul_t(Var a, Var b);  // a * b^T
// elementwise; b may also be a 1xN row vector broadcast over a's rows
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);
Var scale(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
// natural log; throws domain_error on non-positive input
Var log(Var a);
// log with inputs clamped below exp(-745); counts clamp events on the tape
Var log_clamped(Var a);
// softmax along each row (max-subtracted)
Var softmax_rows(Var a);
Var concat_cols(Var a, Var b);
Var stack_rows(const std::vector<Var>& rows);
Var row(Var a, int i);
// columnwise max over rows -> 1xN; ties resolved to the lowest row index.
// argmax_out, when non-null, receives the winning row index per column.
Var max_over_rows(Var a, std::vector<int>* argmax_out = nullptr);
Var l2_norm(Var a);  // scalar
Var sum(Var a);      // scalar
Var pick(Var row_vec, int k);  // scalar element of a 1xN row
// rows of a vocab-sized matrix selected by index; backward scatter-adds
Var gather_rows(Var table, const std::vector<int>& indices);
// elementwise product with a fixed mask (inverted-dropout style masks are
// produced by the caller)
Var dropout_apply(Var a, const Matrix& mask);

}  // namespace mixedobj::ad
