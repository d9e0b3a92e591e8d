#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>
#include <string>

namespace npcfg {

template <typename Scalar>
inline constexpr Scalar kLogZero = -std::numeric_limits<Scalar>::infinity();

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// log(exp(a) + exp(b)) that tolerates -inf on either side.
template <typename Scalar>
Scalar log_add(Scalar a, Scalar b) {
  if (a == kLogZero<Scalar>) return b;
  if (b == kLogZero<Scalar>) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) return kLogZero<Scalar>;
  const Scalar m = x.maxCoeff();
  if (m == kLogZero<Scalar>) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

// Row-wise log-softmax of a logits matrix.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    auto shifted = (logits.row(r).array() - m).eval();
    const Scalar lse = std::log(shifted.exp().sum());
    out.row(r) = (shifted - lse).matrix();
  }
  return out;
}

/// Standard normal CDF via erf.
template <std::floating_point Scalar>
Scalar normal_cdf(Scalar x) {
  return Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <std::floating_point Scalar>
Scalar normal_pdf(Scalar x) {
  static const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * Scalar(M_PI));
  return inv_sqrt_2pi * std::exp(Scalar(-0.5) * x * x);
}

/// Exact GELU, x * Phi(x).
template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  return x * normal_cdf(x);
}

template <std::floating_point Scalar>
Scalar gelu_grad(Scalar x) {
  return normal_cdf(x) + x * normal_pdf(x);
}

template <typename Derived>
auto gelu(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return v * normal_cdf(v); });
}

inline constexpr double kRmsNormEps = 1e-8;

/// RMS normalization of a single vector: gain * v / sqrt(mean(v^2) + eps).
template <typename DerivedV, typename DerivedG>
Eigen::Matrix<typename DerivedV::Scalar, Eigen::Dynamic, 1>
rms_norm(const Eigen::MatrixBase<DerivedV>& v, const Eigen::MatrixBase<DerivedG>& gain,
         typename DerivedV::Scalar eps = kRmsNormEps) {
  using Scalar = typename DerivedV::Scalar;
  if (v.size() != gain.size()) throw std::invalid_argument("rms_norm: gain size mismatch");
  const Scalar rms = std::sqrt(v.squaredNorm() / Scalar(v.size()) + eps);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = gain(i) * v(i) / rms;
  return out;
}

struct RowNormalization {
  Eigen::MatrixXd rows;
  Eigen::VectorXd norms;
  int zero_rows = 0;
};

/// Divides each row by its Euclidean norm; all-zero rows pass through.
template <typename Derived>
RowNormalization normalize_rows(const Eigen::MatrixBase<Derived>& u) {
  RowNormalization out;
  out.rows = u;
  out.norms = u.rowwise().norm();
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    if (out.norms(r) > 0) {
      out.rows.row(r) /= out.norms(r);
    } else {
      ++out.zero_rows;
    }
  }
  return out;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

}  // namespace npcfg
