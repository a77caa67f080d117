#include "bnf/bernstein.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "bnf/error.hpp"
#include "bnf/math.hpp"
#include "bnf/root_finding.hpp"

namespace bnf {

BernsteinOrder::BernsteinOrder(int m) : m_(m) {
  if (m < 1) throw InvalidParameterError("Bernstein order must be >= 1, got " + std::to_string(m));
}

ConstrainedFlowParams::ConstrainedFlowParams(double a1, double b1, std::vector<double> theta)
    : a1_(a1), b1_(b1), theta_(std::move(theta)) {
  if (theta_.size() < 2) throw DimensionError("flow needs at least two Bernstein coefficients");
  if (!(a1_ > 0.0) || !std::isfinite(a1_)) throw InvalidParameterError("a1 must be positive and finite");
  if (!std::isfinite(b1_)) throw InvalidParameterError("b1 must be finite");
  if (!(theta_.front() <= -3.0) || !(theta_.back() >= 3.0)) {
    throw InvalidParameterError("Bernstein coefficients must cover [-3, 3]");
  }
  for (std::size_t k = 1; k < theta_.size(); ++k) {
    if (!(theta_[k] > theta_[k - 1]) || !std::isfinite(theta_[k])) {
      std::ostringstream msg;
      msg << "Bernstein coefficients not strictly increasing at index " << k;
      throw InvalidParameterError(msg.str());
    }
  }
}

ConstrainedFlowParams constrain_params(std::span<const double> raw, BernsteinOrder order) {
  const int m = order.value();
  if (static_cast<int>(raw.size()) != order.raw_size()) {
    throw DimensionError("expected " + std::to_string(order.raw_size()) +
                         " unconstrained flow parameters, got " + std::to_string(raw.size()));
  }
  for (double r : raw) {
    if (!std::isfinite(r)) throw InvalidParameterError("non-finite unconstrained flow parameter");
  }
  const double a1 = math::softplus(raw[0]);
  const double b1 = raw[1];
  const double lo = -math::softplus(raw[2]) - 3.0;
  const double hi = math::softplus(raw[static_cast<std::size_t>(m) + 3]) + 3.0;
  const double delta = hi - lo;
  const auto shares = math::softmax(raw.subspan(3, static_cast<std::size_t>(m)));
  const double renorm = 1.0 + m * kMinCoefficientShare;

  std::vector<double> theta(static_cast<std::size_t>(m) + 1);
  theta[0] = lo;
  for (int k = 1; k < m; ++k) {
    theta[k] = theta[k - 1] + delta * (shares[k - 1] + kMinCoefficientShare) / renorm;
  }
  theta[m] = hi;
  return ConstrainedFlowParams(a1, b1, std::move(theta));
}

void bernstein_basis_into(double z1, int degree, std::span<double> out) {
  const double w = 1.0 - z1;
  // out[i] <- z1^i, then multiply by binom * w^(M-i) walking backwards.
  out[0] = 1.0;
  for (int i = 1; i <= degree; ++i) out[i] = out[i - 1] * z1;
  double wpow = 1.0;
  double binom = 1.0;
  for (int i = degree; i >= 0; --i) {
    out[i] *= binom * wpow;
    wpow *= w;
    // binom(M, i-1) = binom(M, i) * i / (M - i + 1)
    binom = binom * i / (degree - i + 1);
  }
}

std::vector<double> bernstein_basis(double z1, BernsteinOrder order) {
  if (!(z1 >= 0.0 && z1 <= 1.0)) {
    throw DomainError("Bernstein basis argument outside [0, 1]: " + std::to_string(z1));
  }
  std::vector<double> out(static_cast<std::size_t>(order.coefficient_count()));
  bernstein_basis_into(z1, order.value(), out);
  return out;
}

namespace {

constexpr int kStackBasis = 64;

double interior_value(double z1, std::span<const double> theta) {
  const int m = static_cast<int>(theta.size()) - 1;
  double buf[kStackBasis + 1];
  std::vector<double> heap;
  std::span<double> basis;
  if (m <= kStackBasis) {
    basis = std::span<double>(buf, static_cast<std::size_t>(m) + 1);
  } else {
    heap.resize(static_cast<std::size_t>(m) + 1);
    basis = heap;
  }
  bernstein_basis_into(z1, m, basis);
  double s = 0.0;
  for (int i = 0; i <= m; ++i) s += basis[i] * theta[i];
  return s;
}

// Bernstein polynomial whose coefficients are the `level`-th forward
// differences of theta, scaled by M!/(M-level)!.
double difference_polynomial(double z1, std::span<const double> theta, int level) {
  const int m = static_cast<int>(theta.size()) - 1;
  if (level > m) return 0.0;
  std::vector<double> diff(theta.begin(), theta.end());
  double scale = 1.0;
  for (int l = 0; l < level; ++l) {
    for (std::size_t i = 0; i + 1 < diff.size(); ++i) diff[i] = diff[i + 1] - diff[i];
    diff.pop_back();
    scale *= (m - l);
  }
  return scale * interior_value(z1, diff);
}

}  // namespace

double f2_derivative(double z1, std::span<const double> theta) {
  return difference_polynomial(std::clamp(z1, 0.0, 1.0), theta, 1);
}

double f2_second_derivative(double z1, std::span<const double> theta) {
  if (z1 < 0.0 || z1 > 1.0) return 0.0;
  return difference_polynomial(z1, theta, 2);
}

double f2_eval(double z1, std::span<const double> theta) {
  if (z1 < 0.0) return theta.front() + f2_derivative(0.0, theta) * z1;
  if (z1 > 1.0) return theta.back() + f2_derivative(1.0, theta) * (z1 - 1.0);
  return interior_value(z1, theta);
}

FlowEvaluation flow_forward(double y, const ConstrainedFlowParams& params) {
  if (!std::isfinite(y)) throw DomainError("flow_forward: non-finite input");
  const double z1 = params.a1() * y - params.b1();
  const auto theta = params.theta();
  return {f2_eval(z1, theta), std::log(params.a1()) + std::log(f2_derivative(z1, theta))};
}

double flow_inverse(double z, const ConstrainedFlowParams& params, double tol, int max_iterations) {
  if (!std::isfinite(z)) throw DomainError("flow_inverse: non-finite latent value");
  if (!(tol > 0.0)) throw DomainError("flow_inverse: tolerance must be positive");
  const auto theta = params.theta();
  const auto to_y = [&](double z1) { return (z1 + params.b1()) / params.a1(); };

  if (z <= theta.front()) return to_y((z - theta.front()) / f2_derivative(0.0, theta));
  if (z >= theta.back()) return to_y(1.0 + (z - theta.back()) / f2_derivative(1.0, theta));

  roots::Tolerance rt;
  rt.max_iterations = max_iterations;
  const auto res = roots::chandrupatla(
      [&](double z1) { return interior_value(z1, theta) - z; }, 0.0, 1.0, rt);
  if (!res.converged || std::abs(res.residual) > tol) {
    throw NumericalError("flow_inverse did not converge (residual " +
                             std::to_string(res.residual) + ")",
                         res.residual);
  }
  return to_y(res.x);
}

}  // namespace bnf
