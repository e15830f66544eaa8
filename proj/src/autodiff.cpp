#include "mixedobj/autodiff.hpp"

#include <memory>

#include <cmath>
#include <sstream>

namespace mixedobj::ad {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << "[" << m.rows() << "x" << m.cols() << "]";
    return os.str();
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw dimension_error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

constexpr double kLogFloor = -745.0;  // most negative finite exp() argument

bool any_grad(std::initializer_list<Var> vs) {
    for (const Var& v : vs)
        if (v.requires_grad()) return true;
    return false;
}

// Pushes a node whose backprop lambda may capture the new node's own id.
template <typename F>
Var emit(Tape& t, Matrix out, bool needs, F&& make_backprop) {
    int id = static_cast<int>(t.size());
    std::function<void(Tape&)> bp;
    if (needs) bp = make_backprop(id);
    t.push(std::move(out), needs, std::move(bp));
    return Var(&t, id);
}

}  // namespace

// --- Var --------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->val(id_); }
const Matrix& Var::grad() const { return tape_->grd(id_); }
bool Var::requires_grad() const { return tape_->needs_grad(id_); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1)
        throw contract_error("scalar() on non-scalar node " + shape_str(v));
    return v(0, 0);
}

// --- Tape -------------------------------------------------------------------

int Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.grad = Matrix::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Matrix v) { return Var(this, push(std::move(v), false, {})); }

Var Tape::leaf(Matrix v, bool requires_grad) { return Var(this, push(std::move(v), requires_grad, {})); }

Var Tape::param(Parameter& p, bool requires_grad) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    int id = push(p.value, requires_grad, {});
    param_nodes_.emplace(&p, id);
    if (requires_grad) params_.emplace_back(&p, id);
    return Var(this, id);
}

void Tape::backward(Var root) {
    if (root.tape() != this) throw contract_error("backward: root belongs to a different tape");
    Matrix& rv = val(root.id());
    if (rv.rows() != 1 || rv.cols() != 1)
        throw contract_error("backward: root must be scalar-shaped, got " + shape_str(rv));
    grd(root.id())(0, 0) += 1.0;
    for (int i = root.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backprop) n.backprop(*this);
    }
    for (auto& [p, id] : params_) p->grad += nodes_[id].grad;
}

// --- ops --------------------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = *a.tape();
    if (a.cols() != b.rows())
        throw dimension_error("matmul: inner dimensions differ " + shape_str(a.value()) + " vs " +
                              shape_str(b.value()));
    int ia = a.id(), ib = b.id();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    return emit(t, a.value() * b.value(), ga || gb, [=](int id) {
        return [=](Tape& t) {
            if (ga) t.grd(ia) += t.grd(id) * t.val(ib).transpose();
            if (gb) t.grd(ib) += t.val(ia).transpose() * t.grd(id);
        };
    });
}

Var matmul_t(Var a, Var b) {
    Tape& t = *a.tape();
    if (a.cols() != b.cols())
        throw dimension_error("matmul_t: inner dimensions differ " + shape_str(a.value()) + " vs " +
                              shape_str(b.value()));
    int ia = a.id(), ib = b.id();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    return emit(t, a.value() * b.value().transpose(), ga || gb, [=](int id) {
        return [=](Tape& t) {
            if (ga) t.grd(ia) += t.grd(id) * t.val(ib);
            if (gb) t.grd(ib) += t.grd(id).transpose() * t.val(ia);
        };
    });
}

namespace {

// shared shape logic for add/sub: equal shapes, or b a 1xN row broadcast
enum class BinMode { Same, RowBroadcast };

BinMode bin_mode(const char* op, const Var& a, const Var& b) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return BinMode::Same;
    if (b.rows() == 1 && a.cols() == b.cols() && a.rows() > 1) return BinMode::RowBroadcast;
    throw dimension_error(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                          shape_str(b.value()));
}

}  // namespace

Var add(Var a, Var b) {
    Tape& t = *a.tape();
    BinMode mode = bin_mode("add", a, b);
    int ia = a.id(), ib = b.id();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Matrix out = (mode == BinMode::Same) ? Matrix(a.value() + b.value())
                                         : Matrix(a.value().rowwise() + b.value().row(0));
    return emit(t, std::move(out), ga || gb, [=](int id) {
        return [=](Tape& t) {
            if (ga) t.grd(ia) += t.grd(id);
            if (gb) {
                if (mode == BinMode::Same)
                    t.grd(ib) += t.grd(id);
                else
                    t.grd(ib) += t.grd(id).colwise().sum();
            }
        };
    });
}

Var sub(Var a, Var b) {
    Tape& t = *a.tape();
    BinMode mode = bin_mode("sub", a, b);
    int ia = a.id(), ib = b.id();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Matrix out = (mode == BinMode::Same) ? Matrix(a.value() - b.value())
                                         : Matrix(a.value().rowwise() - b.value().row(0));
    return emit(t, std::move(out), ga || gb, [=](int id) {
        return [=](Tape& t) {
            if (ga) t.grd(ia) += t.grd(id);
            if (gb) {
                if (mode == BinMode::Same)
                    t.grd(ib) -= t.grd(id);
                else
                    t.grd(ib) -= t.grd(id).colwise().sum();
            }
        };
    });
}

Var cmul(Var a, Var b) {
    Tape& t = *a.tape();
    require_same_shape("cmul", a.value(), b.value());
    int ia = a.id(), ib = b.id();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    return emit(t, a.value().cwiseProduct(b.value()), ga || gb, [=](int id) {
        return [=](Tape& t) {
            if (ga) t.grd(ia) += t.grd(id).cwiseProduct(t.val(ib));
            if (gb) t.grd(ib) += t.grd(id).cwiseProduct(t.val(ia));
        };
    });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    return emit(t, Matrix(a.value() * s), ga, [=](int id) {
        return [=](Tape& t) { t.grd(ia) += t.grd(id) * s; };
    });
}

Var sigmoid(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    return emit(t, std::move(out), ga, [=](int id) {
        return [=](Tape& t) {
            const Matrix& y = t.val(id);
            t.grd(ia) += t.grd(id).cwiseProduct(y.cwiseProduct(Matrix::Ones(y.rows(), y.cols()) - y));
        };
    });
}

Var tanh(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    Matrix out = a.value().array().tanh().matrix();
    return emit(t, std::move(out), ga, [=](int id) {
        return [=](Tape& t) {
            const Matrix& y = t.val(id);
            t.grd(ia) += t.grd(id).cwiseProduct((1.0 - y.array().square()).matrix());
        };
    });
}

Var exp(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    Matrix out = a.value().array().exp().matrix();
    return emit(t, std::move(out), ga, [=](int id) {
        return [=](Tape& t) { t.grd(ia) += t.grd(id).cwiseProduct(t.val(id)); };
    });
}

Var log(Var a) {
    Tape& t = *a.tape();
    if ((a.value().array() <= 0.0).any())
        throw domain_error("log: non-positive input");
    int ia = a.id();
    bool ga = a.requires_grad();
    return emit(t, Matrix(a.value().array().log().matrix()), ga, [=](int id) {
        return [=](Tape& t) { t.grd(ia) += t.grd(id).cwiseQuotient(t.val(ia)); };
    });
}

Var log_clamped(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    const double floor_in = std::exp(kLogFloor);
    int clamped = 0;
    Matrix out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            double x = a.value()(i, j);
            if (x < floor_in) {
                out(i, j) = kLogFloor;
                ++clamped;
            } else {
                out(i, j) = std::log(x);
            }
        }
    }
    t.count_clamp(clamped);
    return emit(t, std::move(out), ga, [=](int id) {
        return [=](Tape& t) {
            // clamped entries get the derivative at the floor; finite either way
            Matrix x = t.val(ia).cwiseMax(floor_in);
            t.grd(ia) += t.grd(id).cwiseQuotient(x);
        };
    });
}

Var softmax_rows(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    Matrix out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        Eigen::RowVectorXd z = a.value().row(i);
        double m = z.maxCoeff();
        Eigen::RowVectorXd e = (z.array() - m).exp();
        out.row(i) = e / e.sum();
    }
    return emit(t, std::move(out), ga, [=](int id) {
        return [=](Tape& t) {
            const Matrix& y = t.val(id);
            const Matrix& dy = t.grd(id);
            for (Eigen::Index i = 0; i < y.rows(); ++i) {
                double dot = y.row(i).dot(dy.row(i));
                t.grd(ia).row(i) +=
                    (y.row(i).array() * (dy.row(i).array() - dot)).matrix();
            }
        };
    });
}

Var concat_cols(Var a, Var b) {
    Tape& t = *a.tape();
    if (a.rows() != b.rows())
        throw dimension_error("concat_cols: row counts differ " + shape_str(a.value()) + " vs " +
                              shape_str(b.value()));
    int ia = a.id(), ib = b.id();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Eigen::Index ca = a.cols();
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    return emit(t, std::move(out), ga || gb, [=](int id) {
        return [=](Tape& t) {
            const Matrix& dy = t.grd(id);
            if (ga) t.grd(ia) += dy.leftCols(ca);
            if (gb) t.grd(ib) += dy.rightCols(dy.cols() - ca);
        };
    });
}

Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw contract_error("stack_rows: empty input");
    Tape& t = *rows.front().tape();
    Eigen::Index cols = rows.front().cols();
    bool needs = false;
    std::vector<int> ids;
    ids.reserve(rows.size());
    for (const Var& r : rows) {
        if (r.rows() != 1 || r.cols() != cols)
            throw dimension_error("stack_rows: expected 1x" + std::to_string(cols) + ", got " +
                                  shape_str(r.value()));
        ids.push_back(r.id());
        needs = needs || r.requires_grad();
    }
    Matrix out(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i].value();
    return emit(t, std::move(out), needs, [ids](int id) {
        return [ids, id](Tape& t) {
            const Matrix& dy = t.grd(id);
            for (std::size_t i = 0; i < ids.size(); ++i)
                if (t.needs_grad(ids[i])) t.grd(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
        };
    });
}

Var row(Var a, int i) {
    Tape& t = *a.tape();
    if (i < 0 || i >= a.rows())
        throw dimension_error("row: index " + std::to_string(i) + " out of range for " + shape_str(a.value()));
    int ia = a.id();
    bool ga = a.requires_grad();
    return emit(t, Matrix(a.value().row(i)), ga, [=](int id) {
        return [=](Tape& t) { t.grd(ia).row(i) += t.grd(id); };
    });
}

Var max_over_rows(Var a, std::vector<int>* argmax_out) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    auto arg = std::make_shared<std::vector<int>>(a.cols());
    Matrix out(1, a.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < a.rows(); ++i)
            if (a.value()(i, j) > a.value()(best, j)) best = i;  // strict: ties keep lowest index
        (*arg)[j] = static_cast<int>(best);
        out(0, j) = a.value()(best, j);
    }
    if (argmax_out) *argmax_out = *arg;
    return emit(t, std::move(out), ga, [=](int id) {
        return [=](Tape& t) {
            const Matrix& dy = t.grd(id);
            for (Eigen::Index j = 0; j < dy.cols(); ++j) t.grd(ia)((*arg)[j], j) += dy(0, j);
        };
    });
}

Var l2_norm(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    double n = a.value().norm();
    return emit(t, Matrix::Constant(1, 1, n), ga, [=](int id) {
        return [=](Tape& t) {
            double norm = t.val(id)(0, 0);
            if (norm > 0.0) t.grd(ia) += (t.grd(id)(0, 0) / norm) * t.val(ia);
        };
    });
}

Var sum(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    bool ga = a.requires_grad();
    return emit(t, Matrix::Constant(1, 1, a.value().sum()), ga, [=](int id) {
        return [=](Tape& t) {
            t.grd(ia).array() += t.grd(id)(0, 0);
        };
    });
}

Var pick(Var row_vec, int k) {
    Tape& t = *row_vec.tape();
    if (row_vec.rows() != 1 || k < 0 || k >= row_vec.cols())
        throw dimension_error("pick: index " + std::to_string(k) + " invalid for " +
                              shape_str(row_vec.value()));
    int ia = row_vec.id();
    bool ga = row_vec.requires_grad();
    return emit(t, Matrix::Constant(1, 1, row_vec.value()(0, k)), ga, [=](int id) {
        return [=](Tape& t) { t.grd(ia)(0, k) += t.grd(id)(0, 0); };
    });
}

Var gather_rows(Var table, const std::vector<int>& indices) {
    Tape& t = *table.tape();
    int ia = table.id();
    bool ga = table.requires_grad();
    Matrix out(static_cast<Eigen::Index>(indices.size()), table.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= table.rows())
            throw dimension_error("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                                  shape_str(table.value()));
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(indices[i]);
    }
    auto idx = std::make_shared<std::vector<int>>(indices);
    return emit(t, std::move(out), ga, [=](int id) {
        return [=](Tape& t) {
            const Matrix& dy = t.grd(id);
            for (std::size_t i = 0; i < idx->size(); ++i)
                t.grd(ia).row((*idx)[i]) += dy.row(static_cast<Eigen::Index>(i));
        };
    });
}

Var dropout_apply(Var a, const Matrix& mask) {
    return cmul(a, a.tape()->constant(mask));
}

}  // namespace mixedobj::ad
