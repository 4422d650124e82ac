#include "attnlab/types.hpp"

namespace attnlab {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidDims: return "InvalidDims";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::ArgmaxUnreachable: return "ArgmaxUnreachable";
    case ErrorKind::GraphMismatch: return "GraphMismatch";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::UnknownNode: return "UnknownNode";
    case ErrorKind::NotOrthonormal: return "NotOrthonormal";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::ZeroMatrix: return "ZeroMatrix";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

}  // namespace attnlab
