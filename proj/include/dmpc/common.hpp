#pragma once

#include <Eigen/Dense>
#include <limits>
#include <stdexcept>
#include <string>

namespace dmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Thrown for malformed inputs: dimension mismatches, invalid ids, values
// outside their documented ranges.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Thrown when a matrix required to be (semi)definite fails its eigenvalue
// check, or a program is structurally unusable.
class InvalidProgram : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline bool is_symmetric(const Mat& m, double tol = 1e-9) {
    if (m.rows() != m.cols()) return false;
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const Mat& m) {
    if (m.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Mat& m) {
    if (m.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

// PSD up to the documented slack: eigenvalues >= -1e-10 * max(1, ||M||).
inline bool is_psd(const Mat& m, double tol = 1e-10) {
    if (!is_symmetric(m)) return false;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return min_eigenvalue(m) >= -tol * scale;
}

inline bool is_pd(const Mat& m, double tol = 1e-12) {
    if (!is_symmetric(m)) return false;
    return min_eigenvalue(m) > tol;
}

}  // namespace dmpc
