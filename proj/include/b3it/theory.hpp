#pragma once

// Softmax-head detectability algebra: covariance/Fisher matrices of the
// categorical output, the SNR^2 criterion through the logit Jacobian, and
// its behaviour as the sampling temperature goes to zero.
//
// Everything here is dense and desk-scale (vocabulary sizes up to ~100).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace b3it::theory {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

/// Logits z of a linear head, an optional logit Jacobian J_z (d x q) and a
/// sampling temperature.
template <typename Scalar = double>
struct SoftmaxHead {
  Vector<Scalar> logits;
  std::optional<Matrix<Scalar>> jacobian;
  Scalar temperature = Scalar(1);

  Index vocab_size() const { return logits.size(); }
  Index parameter_count() const { return jacobian ? jacobian->cols() : 0; }

  void validate() const {
    if (logits.size() < 2) throw std::invalid_argument("SoftmaxHead: need at least 2 logits");
    if (jacobian && jacobian->rows() != logits.size()) {
      throw std::invalid_argument("SoftmaxHead: jacobian rows must equal the number of logits");
    }
  }
};

/// Unit-norm perturbation direction in parameter space.
template <typename Scalar = double>
class Direction {
 public:
  explicit Direction(Vector<Scalar> h) : h_(std::move(h)) {
    if (h_.size() == 0 || std::abs(h_.norm() - Scalar(1)) > Scalar(1e-9)) {
      throw std::invalid_argument("Direction: vector must have unit norm");
    }
  }

  static Direction normalized(const Vector<Scalar>& v) {
    const Scalar n = v.norm();
    if (!(n > Scalar(0))) throw std::invalid_argument("Direction: zero vector");
    return Direction(v / n);
  }

  const Vector<Scalar>& vector() const { return h_; }
  Index size() const { return h_.size(); }

 private:
  Vector<Scalar> h_;
};

template <typename Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& logits, Scalar temperature) {
  if (!(temperature > Scalar(0))) throw std::invalid_argument("softmax: temperature must be > 0");
  if (logits.size() == 0) throw std::invalid_argument("softmax: empty logits");
  const Scalar top = logits.maxCoeff();
  Vector<Scalar> e = ((logits.array() - top) / temperature).exp().matrix();
  return e / e.sum();
}

template <typename Scalar>
Vector<Scalar> softmax(const SoftmaxHead<Scalar>& head) {
  head.validate();
  return softmax<Scalar>(head.logits, head.temperature);
}

/// diag(p) - p p^T. Symmetric PSD with zero row sums.
template <typename Derived>
Matrix<typename Derived::Scalar> sigma(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> s = -p * p.transpose();
  s.diagonal() += p;
  return s;
}

namespace detail {

template <typename Derived>
void require_interior(const Eigen::MatrixBase<Derived>& p_reduced, const char* what) {
  using Scalar = typename Derived::Scalar;
  if (p_reduced.size() == 0) throw std::invalid_argument(std::string(what) + ": empty vector");
  for (Index i = 0; i < p_reduced.size(); ++i) {
    if (!(p_reduced(i) > Scalar(0) && p_reduced(i) < Scalar(1))) {
      throw std::invalid_argument(std::string(what) + ": boundary point, Fisher matrix degenerate");
    }
  }
  if (!(p_reduced.sum() < Scalar(1))) {
    throw std::invalid_argument(std::string(what) + ": reduced coordinates sum to >= 1");
  }
}

}  // namespace detail

/// F(p) = diag(p) - p p^T in reduced (first d-1) coordinates; the inverse
/// Fisher information of the categorical family.
template <typename Derived>
Matrix<typename Derived::Scalar> fisher_reduced(const Eigen::MatrixBase<Derived>& p_reduced) {
  detail::require_interior(p_reduced, "fisher_reduced");
  return sigma(p_reduced);
}

/// Closed-form inverse diag(p)^-1 + (1/p_d) 11^T (Sherman-Morrison).
template <typename Derived>
Matrix<typename Derived::Scalar> fisher_reduced_inverse(const Eigen::MatrixBase<Derived>& p_reduced) {
  using Scalar = typename Derived::Scalar;
  detail::require_interior(p_reduced, "fisher_reduced_inverse");
  const Index n = p_reduced.size();
  const Scalar p_last = Scalar(1) - p_reduced.sum();
  Matrix<Scalar> inv = Matrix<Scalar>::Constant(n, n, Scalar(1) / p_last);
  inv.diagonal() += p_reduced.cwiseInverse();
  return inv;
}

/// A(p): the first d-1 rows of Sigma(p), i.e. d p_{1:d-1} / dz at unit
/// temperature.
template <typename Derived>
Matrix<typename Derived::Scalar> reduced_sigma_rows(const Eigen::MatrixBase<Derived>& p) {
  return sigma(p).topRows(p.size() - 1);
}

/// Jacobian of the reduced output distribution w.r.t. the parameters,
/// (1/tau) A(p^(tau)) J_z, shape (d-1) x q.
template <typename Scalar>
Matrix<Scalar> reduced_output_jacobian(const SoftmaxHead<Scalar>& head) {
  head.validate();
  if (!head.jacobian) throw std::invalid_argument("reduced_output_jacobian: head has no jacobian");
  const Vector<Scalar> p = softmax(head);
  return (reduced_sigma_rows(p) * (*head.jacobian)) / head.temperature;
}

/// SNR^2(h) = (1/tau^2) h^T J_z^T Sigma(p^(tau)) J_z h.
template <typename Scalar>
Scalar snr_squared(const SoftmaxHead<Scalar>& head, const Direction<Scalar>& h) {
  head.validate();
  if (!head.jacobian) throw std::invalid_argument("snr_squared: head has no jacobian");
  if (h.size() != head.jacobian->cols()) {
    throw std::invalid_argument("snr_squared: direction size does not match jacobian columns");
  }
  const Vector<Scalar> p = softmax(head);
  const Vector<Scalar> dz = (*head.jacobian) * h.vector();
  // dz^T Sigma dz = sum p_i dz_i^2 - (p . dz)^2, always >= 0 up to rounding.
  const Scalar mean = p.dot(dz);
  const Scalar quad = p.dot(dz.cwiseAbs2()) - mean * mean;
  return std::max(Scalar(0), quad) / (head.temperature * head.temperature);
}

/// SNR^2(h) = h^T J^T F(p0)^-1 J h for a reduced-coordinate Jacobian J.
template <typename DerivedJ, typename DerivedP>
typename DerivedJ::Scalar snr_squared_reduced(const Eigen::MatrixBase<DerivedJ>& jacobian,
                                              const Eigen::MatrixBase<DerivedP>& p0_reduced,
                                              const Direction<typename DerivedJ::Scalar>& h) {
  using Scalar = typename DerivedJ::Scalar;
  if (jacobian.rows() != p0_reduced.size()) {
    throw std::invalid_argument("snr_squared_reduced: jacobian rows must equal d-1");
  }
  if (jacobian.cols() != h.size()) {
    throw std::invalid_argument("snr_squared_reduced: direction size does not match jacobian columns");
  }
  const Vector<Scalar> jh = jacobian * h.vector();
  const Matrix<Scalar> f_inv = fisher_reduced_inverse(p0_reduced);
  return std::max(Scalar(0), Scalar(jh.dot(f_inv * jh)));
}

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Inverse of the standard normal CDF. Acklam's rational approximation
/// followed by one Halley step, good to ~1e-15 in double.
inline double standard_normal_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) {
    if (u == 0.0) return -std::numeric_limits<double>::infinity();
    if (u == 1.0) return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("standard_normal_quantile: probability outside [0,1]");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double low = 0.02425;
  double x;
  if (u < low) {
    const double q = std::sqrt(-2.0 * std::log(u));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (u <= 1.0 - low) {
    const double q = u - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-u));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = standard_normal_cdf(x) - u;
  const double step = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - step / (1.0 + 0.5 * x * step);
}

/// Limiting Type-II error of the most powerful level-alpha test against a
/// local perturbation of rate s: Phi(Q_alpha - |s| sqrt(SNR^2)).
inline double asymptotic_type2(double alpha, double s, double snr2) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("asymptotic_type2: alpha must be in (0,1)");
  if (snr2 < 0.0) throw std::invalid_argument("asymptotic_type2: SNR^2 must be >= 0");
  const double q_alpha = standard_normal_quantile(1.0 - alpha);
  return standard_normal_cdf(q_alpha - std::abs(s) * std::sqrt(snr2));
}

struct MaximizerSet {
  std::vector<Index> indices;
  Index k() const { return static_cast<Index>(indices.size()); }
};

/// Indices whose logit is within tol of the maximum.
template <typename Derived>
MaximizerSet maximizer_set(const Eigen::MatrixBase<Derived>& z, typename Derived::Scalar tol = 0) {
  if (z.size() == 0) throw std::invalid_argument("maximizer_set: empty logits");
  if (tol < 0) throw std::invalid_argument("maximizer_set: negative tolerance");
  const auto top = z.maxCoeff();
  MaximizerSet m;
  for (Index i = 0; i < z.size(); ++i) {
    if (z(i) >= top - tol) m.indices.push_back(i);
  }
  return m;
}

/// Sigma of the distribution uniform on M (zero elsewhere); trace 1 - 1/k.
template <typename Scalar = double>
Matrix<Scalar> sigma_uniform_on(const MaximizerSet& m, Index d) {
  if (m.indices.empty()) throw std::invalid_argument("sigma_uniform_on: empty index set");
  Vector<Scalar> p = Vector<Scalar>::Zero(d);
  const Scalar mass = Scalar(1) / Scalar(m.k());
  for (Index i : m.indices) {
    if (i < 0 || i >= d) throw std::invalid_argument("sigma_uniform_on: index out of range");
    p(i) = mass;
  }
  return sigma(p);
}

/// Head-only block of the logit Jacobian, [r^T (x) I_d | I_d], of shape
/// d x (d*m + d): derivatives of z = W r + b w.r.t. vec(W) (column-major)
/// and b.
template <typename Derived>
Matrix<typename Derived::Scalar> head_jacobian(const Eigen::MatrixBase<Derived>& r, Index d) {
  using Scalar = typename Derived::Scalar;
  if (r.size() < 1) throw std::invalid_argument("head_jacobian: representation must be nonempty");
  if (d < 1) throw std::invalid_argument("head_jacobian: vocabulary size must be >= 1");
  const Index m = r.size();
  Matrix<Scalar> j = Matrix<Scalar>::Zero(d, d * m + d);
  for (Index c = 0; c < m; ++c) {
    j.block(0, c * d, d, d).diagonal().setConstant(r(c));
  }
  j.rightCols(d).setIdentity();
  return j;
}

struct SweepPoint {
  double temperature;
  double snr_squared;
};

/// SNR^2 at each temperature with logits, jacobian and direction fixed.
template <typename Scalar>
std::vector<SweepPoint> phase_transition_sweep(const SoftmaxHead<Scalar>& head, const Direction<Scalar>& h,
                                               const std::vector<Scalar>& temperatures) {
  if (temperatures.empty()) throw std::invalid_argument("phase_transition_sweep: empty temperature grid");
  std::vector<SweepPoint> out;
  out.reserve(temperatures.size());
  SoftmaxHead<Scalar> at = head;
  for (Scalar tau : temperatures) {
    if (!(tau > Scalar(0))) throw std::invalid_argument("phase_transition_sweep: temperatures must be > 0");
    at.temperature = tau;
    out.push_back({static_cast<double>(tau), static_cast<double>(snr_squared(at, h))});
  }
  return out;
}

/// "tau,snr2" header followed by one row per point.
inline void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& points) {
  const auto old_precision = os.precision(17);
  os << "tau,snr2\n";
  for (const auto& p : points) os << p.temperature << ',' << p.snr_squared << '\n';
  os.precision(old_precision);
}

}  // namespace b3it::theory
