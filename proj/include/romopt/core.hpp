#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace romopt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;

/// Error type for contract violations and runtime failures in the toolkit.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define ROMOPT_REQUIRE(cond, msg)                                    \
    do {                                                             \
        if (!(cond)) throw ::romopt::Error(std::string(__func__) +   \
                                           ": " + (msg));            \
    } while (0)

}  // namespace romopt
