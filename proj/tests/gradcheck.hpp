#pragma once

#include <functional>

#include <Eigen/Dense>

#include "mixedobj/autodiff.hpp"

namespace mixedobj::test {

// Central finite differences of a scalar function with respect to one
// parameter matrix. `f` must re-run the full forward pass reading the
// (mutated) parameter value.
inline Eigen::MatrixXd finite_difference_gradient(ad::Parameter& p, const std::function<double()>& f,
                                                  double h = 1e-5) {
    Eigen::MatrixXd g(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
            double orig = p.value(i, j);
            p.value(i, j) = orig + h;
            double fp = f();
            p.value(i, j) = orig - h;
            double fm = f();
            p.value(i, j) = orig;
            g(i, j) = (fp - fm) / (2.0 * h);
        }
    }
    return g;
}

// max over elements of |a-b| / max(denom_floor, |a| + |b|)
inline double max_rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            double denom_floor = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            double denom = std::max(denom_floor, std::abs(a(i, j)) + std::abs(b(i, j)));
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
        }
    return worst;
}

}  // namespace mixedobj::test
