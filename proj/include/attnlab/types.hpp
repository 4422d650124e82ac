#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace attnlab {

using TokenId = int;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class ErrorKind {
  InvalidDims,
  RankDeficient,
  ArgmaxUnreachable,
  GraphMismatch,
  SchemaViolation,
  IoError,
  UnknownNode,
  NotOrthonormal,
  DomainError,
  NonFiniteLoss,
  NoConvergence,
  ZeroMatrix,
  ConfigError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Frobenius inner product.
inline double frob_dot(const Mat& a, const Mat& b) { return (a.array() * b.array()).sum(); }

}  // namespace attnlab
