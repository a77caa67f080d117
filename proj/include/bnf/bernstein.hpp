#pragma once

#include <span>
#include <vector>

namespace bnf {

// Polynomial order M of the Bernstein transform. The flow uses M + 1
// coefficients and is driven by M + 4 unconstrained network outputs.
class BernsteinOrder {
 public:
  explicit BernsteinOrder(int m = 16);
  int value() const noexcept { return m_; }
  int coefficient_count() const noexcept { return m_ + 1; }
  int raw_size() const noexcept { return m_ + 4; }
  friend bool operator==(BernsteinOrder, BernsteinOrder) = default;

 private:
  int m_;
};

// Lower bound on every softmax share used to space the coefficients. Keeps
// neighbouring coefficients strictly ordered in floating point even when the
// logits differ by more than ~40.
inline constexpr double kMinCoefficientShare = 1e-12;

// Validated parameters (a1, b1, theta_0..theta_M) of the flow f = f2 o f1 with
// f1(y) = a1 * y - b1 and f2 the Bernstein polynomial with coefficients theta.
class ConstrainedFlowParams {
 public:
  ConstrainedFlowParams(double a1, double b1, std::vector<double> theta);

  double a1() const noexcept { return a1_; }
  double b1() const noexcept { return b1_; }
  std::span<const double> theta() const noexcept { return theta_; }
  BernsteinOrder order() const { return BernsteinOrder(static_cast<int>(theta_.size()) - 1); }
  // theta_M - theta_0
  double range() const noexcept { return theta_.back() - theta_.front(); }

 private:
  double a1_;
  double b1_;
  std::vector<double> theta_;
};

struct FlowEvaluation {
  double z;
  double log_det;  // log |df/dy|
};

// Maps the M + 4 raw outputs (a1~, b1~, th0~, th1~..thM~, th(M+1)~) onto
// valid flow parameters: a1 = softplus, theta_0 <= -3, theta_M >= 3, and the
// inner coefficients spaced by softmax shares of theta_M - theta_0.
ConstrainedFlowParams constrain_params(std::span<const double> raw, BernsteinOrder order);

// b_{i,M}(z1) = binom(M, i) z1^i (1 - z1)^(M - i), i = 0..M. z1 must lie in [0, 1].
std::vector<double> bernstein_basis(double z1, BernsteinOrder order);

// Same as bernstein_basis but writes into `out` (size M + 1) without range checks.
void bernstein_basis_into(double z1, int degree, std::span<double> out);

// f2(z1) = sum_i b_{i,M}(z1) theta_i, extended linearly outside [0, 1].
double f2_eval(double z1, std::span<const double> theta);

// f2'(z1); constant (boundary value) outside [0, 1].
double f2_derivative(double z1, std::span<const double> theta);

// f2''(z1); zero outside [0, 1].
double f2_second_derivative(double z1, std::span<const double> theta);

FlowEvaluation flow_forward(double y, const ConstrainedFlowParams& params);

inline constexpr double kDefaultInverseTolerance = 1e-9;
inline constexpr int kDefaultInverseIterations = 128;

// Solves flow_forward(y).z == z for y. Inside [theta_0, theta_M] a bracketing
// root finder runs on z1 in [0, 1]; outside, the linear tails are inverted in
// closed form.
double flow_inverse(double z, const ConstrainedFlowParams& params,
                    double tol = kDefaultInverseTolerance,
                    int max_iterations = kDefaultInverseIterations);

}  // namespace bnf
