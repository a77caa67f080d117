#include "bnf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bnf/bernstein.hpp"
#include "bnf/error.hpp"
#include "bnf/math.hpp"

namespace bnf::ad {

// ---------------------------------------------------------------------------
// Tape

Var Tape::record(Matrix value, Backward backward) {
  if (consumed_) throw StateError("tape already consumed by backward(); call clear()");
  nodes_.push_back(Node{std::move(value), Matrix(), false, std::move(backward), {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return record(std::move(value), nullptr); }

Var Tape::variable(Matrix value) { return record(std::move(value), nullptr); }

Var Tape::leaf(Matrix value, std::span<double> grad_sink) {
  if (static_cast<Eigen::Index>(grad_sink.size()) != value.size()) {
    throw DimensionError("leaf gradient sink size mismatch");
  }
  Var v = record(std::move(value), nullptr);
  nodes_[v.id].sink = grad_sink;
  return v;
}

const Matrix& Tape::value(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw StateError("variable does not belong to this tape");
  }
  return nodes_[v.id].value;
}

Matrix Tape::grad(Var v) const {
  const Matrix& val = value(v);
  const Node& n = nodes_[v.id];
  if (!n.has_grad) return Matrix::Zero(val.rows(), val.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward() called before any forward pass");
  if (consumed_) throw StateError("backward() already ran on this tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw DimensionError("backward() needs a scalar loss");
  for (auto& n : nodes_) n.has_grad = false;
  accumulate(loss.id, Matrix::Ones(1, 1));
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (!n.sink.empty()) {
      Eigen::Map<Matrix> sink(n.sink.data(), n.value.rows(), n.value.cols());
      sink += n.grad;
    }
  }
  consumed_ = true;
}

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw StateError("variable is not attached to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw StateError("variables recorded on different tapes");
  return tape_of(a);
}

void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

// Elementwise unary op with derivative computed from input and output values.
template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  Matrix out = t.value(a).unaryExpr(fwd);
  return t.record(std::move(out), [ia, deriv](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(Var{&tp, ia});
    tp.accumulate(ia, g.cwiseProduct(x.unaryExpr(deriv)));
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense and elementwise

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix out = av * bv;
  const int ia = a.id, ib = b.id;
  return t.record(std::move(out), [ia, ib](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(Var{&tp, ia});
    const Matrix& w = tp.value(Var{&tp, ib});
    tp.accumulate(ia, g * w.transpose());
    tp.accumulate(ib, x.transpose() * g);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  same_shape(t.value(a), t.value(b), "add");
  const int ia = a.id, ib = b.id;
  return t.record(t.value(a) + t.value(b), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  same_shape(t.value(a), t.value(b), "sub");
  const int ia = a.id, ib = b.id;
  return t.record(t.value(a) - t.value(b), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  same_shape(t.value(a), t.value(b), "mul");
  const int ia = a.id, ib = b.id;
  return t.record(t.value(a).cwiseProduct(t.value(b)), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct(tp.value(Var{&tp, ib})));
    tp.accumulate(ib, g.cwiseProduct(tp.value(Var{&tp, ia})));
  });
}

Var div(Var a, Var b) {
  Tape& t = tape_of(a, b);
  same_shape(t.value(a), t.value(b), "div");
  const int ia = a.id, ib = b.id;
  return t.record(t.value(a).cwiseQuotient(t.value(b)), [ia, ib](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(Var{&tp, ia});
    const Matrix& y = tp.value(Var{&tp, ib});
    tp.accumulate(ia, g.cwiseQuotient(y));
    tp.accumulate(ib, -g.cwiseProduct(x).cwiseQuotient(y.cwiseProduct(y)));
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  const Matrix& av = t.value(a);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw DimensionError("add_row: bias shape mismatch");
  Matrix out = av.rowwise() + rv.row(0);
  const int ia = a.id, ir = row.id;
  return t.record(std::move(out), [ia, ir](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ir, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.record(t.value(a) * s, [ia, s](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id;
  return t.record(t.value(a).array() + s, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var elu(Var a, double alpha) {
  return unary(
      a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
      [alpha](double x) { return x > 0.0 ? 1.0 : alpha * std::exp(x); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(a, [](double x) { return math::softplus(x); }, [](double x) { return math::sigmoid(x); });
}

Var normal_log_pdf(Var a) {
  return unary(a, [](double x) { return math::normal_log_pdf(x); }, [](double x) { return -x; });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  const int ia = a.id;
  const auto r = av.rows(), c = av.cols();
  Matrix out(1, 1);
  out(0, 0) = av.sum();
  return t.record(std::move(out), [ia, r, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
  });
}

// ---------------------------------------------------------------------------
// Structural

Var cols(Var a, int start, int count) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  if (start < 0 || count < 0 || start + count > av.cols()) throw DimensionError("cols: range out of bounds");
  const int ia = a.id;
  const auto r = av.rows(), c = av.cols();
  return t.record(av.middleCols(start, count), [ia, r, c, start, count](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleCols(start, count) = g;
    tp.accumulate(ia, full);
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows()) throw DimensionError("concat_cols: row counts differ");
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const int ia = a.id, ib = b.id;
  const auto ca = av.cols(), cb = bv.cols();
  return t.record(std::move(out), [ia, ib, ca, cb](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.leftCols(ca));
    tp.accumulate(ib, g.rightCols(cb));
  });
}

Var cumsum_cols(Var a) {
  Tape& t = tape_of(a);
  Matrix out = t.value(a);
  for (Eigen::Index j = 1; j < out.cols(); ++j) out.col(j) += out.col(j - 1);
  const int ia = a.id;
  return t.record(std::move(out), [ia](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    for (Eigen::Index j = ga.cols() - 2; j >= 0; --j) ga.col(j) += ga.col(j + 1);
    tp.accumulate(ia, ga);
  });
}

Var unstack_steps(Var a, int steps) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  if (steps <= 0 || av.cols() % steps != 0) throw DimensionError("unstack_steps: width not divisible by steps");
  const auto rows = av.rows();
  const auto k = av.cols() / steps;
  Matrix out(rows * steps, k);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (int s = 0; s < steps; ++s) out.row(r * steps + s) = av.block(r, s * k, 1, k);
  }
  const int ia = a.id;
  return t.record(std::move(out), [ia, rows, k, steps](Tape& tp, const Matrix& g) {
    Matrix ga(rows, k * steps);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int s = 0; s < steps; ++s) ga.block(r, s * k, 1, k) = g.row(r * steps + s);
    }
    tp.accumulate(ia, ga);
  });
}

// ---------------------------------------------------------------------------
// Row-wise

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    out.row(r) = (av.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  const int ia = a.id;
  Matrix s = out;
  return t.record(std::move(out), [ia, s](Tape& tp, const Matrix& g) {
    Matrix ga(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double dot = s.row(r).dot(g.row(r));
      ga.row(r) = s.row(r).array() * (g.row(r).array() - dot);
    }
    tp.accumulate(ia, ga);
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), av.cols());
  Matrix s(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    const double lse = m + std::log((av.row(r).array() - m).exp().sum());
    out.row(r) = av.row(r).array() - lse;
    s.row(r) = out.row(r).array().exp();
  }
  const int ia = a.id;
  return t.record(std::move(out), [ia, s](Tape& tp, const Matrix& g) {
    Matrix ga = g - s.cwiseProduct(g.rowwise().sum().replicate(1, s.cols()));
    tp.accumulate(ia, ga);
  });
}

Var log_sum_exp_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), 1);
  Matrix w(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    w.row(r) = (av.row(r).array() - m).exp();
    const double s = w.row(r).sum();
    out(r, 0) = m + std::log(s);
    w.row(r) /= s;
  }
  const int ia = a.id;
  return t.record(std::move(out), [ia, w](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, w.cwiseProduct(g.replicate(1, w.cols())));
  });
}

// ---------------------------------------------------------------------------
// Flow primitives

Var constrain_flow(Var raw, int order) {
  Tape& t = tape_of(raw);
  const Matrix& rv = t.value(raw);
  const int m = order;
  if (m < 1 || rv.cols() != m + 4) throw DimensionError("constrain_flow: expected M+4 columns");
  const auto n = rv.rows();
  const double renorm = 1.0 + m * kMinCoefficientShare;

  Matrix out(n, m + 3);
  Matrix shares(n, m);      // softmax shares (before flooring)
  Matrix cumulative(n, m + 1);  // C_k, theta_k = lo + delta * C_k
  for (Eigen::Index r = 0; r < n; ++r) {
    const double a1 = math::softplus(rv(r, 0));
    const double lo = -math::softplus(rv(r, 2)) - 3.0;
    const double hi = math::softplus(rv(r, m + 3)) + 3.0;
    const double delta = hi - lo;
    const double mx = rv.row(r).segment(3, m).maxCoeff();
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      shares(r, j) = std::exp(rv(r, 3 + j) - mx);
      z += shares(r, j);
    }
    shares.row(r) /= z;
    out(r, 0) = a1;
    out(r, 1) = rv(r, 1);
    out(r, 2) = lo;
    cumulative(r, 0) = 0.0;
    double theta = lo;
    for (int k = 1; k < m; ++k) {
      const double share = (shares(r, k - 1) + kMinCoefficientShare) / renorm;
      cumulative(r, k) = cumulative(r, k - 1) + share;
      theta += delta * share;
      out(r, 2 + k) = theta;
    }
    cumulative(r, m) = 1.0;
    out(r, 2 + m) = hi;
  }

  const int ir = raw.id;
  return t.record(std::move(out), [ir, m, renorm, shares, cumulative](Tape& tp, const Matrix& g) {
    const Matrix& rv = tp.value(Var{&tp, ir});
    const auto n = rv.rows();
    Matrix ga = Matrix::Zero(n, m + 4);
    std::vector<double> g_share(static_cast<std::size_t>(m));
    for (Eigen::Index r = 0; r < n; ++r) {
      const double lo = -math::softplus(rv(r, 2)) - 3.0;
      const double hi = math::softplus(rv(r, m + 3)) + 3.0;
      const double delta = hi - lo;
      ga(r, 0) = g(r, 0) * math::sigmoid(rv(r, 0));
      ga(r, 1) = g(r, 1);

      double g_lo = 0.0, g_hi = 0.0;
      for (int k = 0; k <= m; ++k) {
        const double gt = g(r, 2 + k);
        g_lo += gt * (1.0 - cumulative(r, k));
        g_hi += gt * cumulative(r, k);
      }
      // Inner theta_k (0 < k < M) depends on shares j < k: suffix sums of g_theta.
      double suffix = 0.0;
      for (int j = m - 1; j >= 0; --j) {
        if (j + 1 <= m - 1) suffix += g(r, 2 + j + 1);
        g_share[j] = delta * suffix / renorm;
      }
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += shares(r, j) * g_share[j];
      for (int j = 0; j < m; ++j) ga(r, 3 + j) = shares(r, j) * (g_share[j] - dot);

      ga(r, 2) = -math::sigmoid(rv(r, 2)) * g_lo;
      ga(r, m + 3) = math::sigmoid(rv(r, m + 3)) * g_hi;
    }
    tp.accumulate(ir, ga);
  });
}

namespace {

struct FlowRowTerms {
  double z;
  double d;   // f2'(z1)
  double d2;  // f2''(z1), zero on the linear tails
};

// Evaluates z, f2', f2'' at z1 and fills the partials of z and f2' with
// respect to each coefficient.
FlowRowTerms flow_row(double z1, const double* theta, int m, std::vector<double>& basis_m,
                      std::vector<double>& basis_m1, std::vector<double>& basis_m2,
                      std::vector<double>* dz_dtheta, std::vector<double>* dd_dtheta) {
  FlowRowTerms out{};
  if (z1 < 0.0 || z1 > 1.0) {
    const bool left = z1 < 0.0;
    const int i0 = left ? 0 : m - 1;  // the two coefficients setting the slope
    const double slope = m * (theta[i0 + 1] - theta[i0]);
    const double offset = left ? z1 : z1 - 1.0;
    out.z = (left ? theta[0] : theta[m]) + slope * offset;
    out.d = slope;
    out.d2 = 0.0;
    if (dz_dtheta) {
      std::fill(dz_dtheta->begin(), dz_dtheta->end(), 0.0);
      std::fill(dd_dtheta->begin(), dd_dtheta->end(), 0.0);
      (*dz_dtheta)[left ? 0 : m] += 1.0;
      (*dz_dtheta)[i0 + 1] += m * offset;
      (*dz_dtheta)[i0] -= m * offset;
      (*dd_dtheta)[i0 + 1] = m;
      (*dd_dtheta)[i0] = -m;
    }
    return out;
  }
  bernstein_basis_into(z1, m, basis_m);
  bernstein_basis_into(z1, m - 1, basis_m1);
  double z = 0.0;
  for (int i = 0; i <= m; ++i) z += basis_m[i] * theta[i];
  double d = 0.0;
  for (int i = 0; i < m; ++i) d += (theta[i + 1] - theta[i]) * basis_m1[i];
  d *= m;
  double d2 = 0.0;
  if (m >= 2) {
    bernstein_basis_into(z1, m - 2, basis_m2);
    for (int i = 0; i + 2 <= m; ++i) d2 += (theta[i + 2] - 2.0 * theta[i + 1] + theta[i]) * basis_m2[i];
    d2 *= static_cast<double>(m) * (m - 1);
  }
  out = {z, d, d2};
  if (dz_dtheta) {
    for (int i = 0; i <= m; ++i) {
      (*dz_dtheta)[i] = basis_m[i];
      const double left = i >= 1 ? basis_m1[i - 1] : 0.0;
      const double right = i < m ? basis_m1[i] : 0.0;
      (*dd_dtheta)[i] = m * (left - right);
    }
  }
  return out;
}

}  // namespace

Var bernstein_flow(Var params, const Matrix& y) {
  Tape& t = tape_of(params);
  const Matrix& pv = t.value(params);
  const int m = static_cast<int>(pv.cols()) - 3;
  if (m < 1) throw DimensionError("bernstein_flow: expected M+3 parameter columns");
  if (y.rows() != pv.rows() || y.cols() != 1) throw DimensionError("bernstein_flow: target shape mismatch");
  const auto n = pv.rows();

  std::vector<double> bm(m + 1), bm1(m), bm2(std::max(m - 1, 1)), theta(m + 1);
  Matrix out(n, 2);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int i = 0; i <= m; ++i) theta[i] = pv(r, 2 + i);
    const double z1 = pv(r, 0) * y(r, 0) - pv(r, 1);
    const auto terms = flow_row(z1, theta.data(), m, bm, bm1, bm2, nullptr, nullptr);
    out(r, 0) = terms.z;
    out(r, 1) = std::log(pv(r, 0)) + std::log(terms.d);
  }

  const int ip = params.id;
  return t.record(std::move(out), [ip, m, y](Tape& tp, const Matrix& g) {
    const Matrix& pv = tp.value(Var{&tp, ip});
    const auto n = pv.rows();
    std::vector<double> bm(m + 1), bm1(m), bm2(std::max(m - 1, 1)), theta(m + 1);
    std::vector<double> dz(m + 1), dd(m + 1);
    Matrix ga(n, m + 3);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (int i = 0; i <= m; ++i) theta[i] = pv(r, 2 + i);
      const double a1 = pv(r, 0);
      const double z1 = a1 * y(r, 0) - pv(r, 1);
      const auto terms = flow_row(z1, theta.data(), m, bm, bm1, bm2, &dz, &dd);
      const double gz = g(r, 0);
      const double gl = g(r, 1) / terms.d;  // adjoint flowing into f2'
      const double g_z1 = gz * terms.d + gl * terms.d2;
      ga(r, 0) = g(r, 1) / a1 + g_z1 * y(r, 0);
      ga(r, 1) = -g_z1;
      for (int i = 0; i <= m; ++i) ga(r, 2 + i) = gz * dz[i] + gl * dd[i];
    }
    tp.accumulate(ip, ga);
  });
}

Var pinball_sum(Var q, const Matrix& y, std::span<const double> levels) {
  Tape& t = tape_of(q);
  const Matrix& qv = t.value(q);
  if (qv.cols() != static_cast<Eigen::Index>(levels.size()) || y.rows() != qv.rows() || y.cols() != 1) {
    throw DimensionError("pinball_sum: shape mismatch");
  }
  std::vector<double> p(levels.begin(), levels.end());
  double total = 0.0;
  for (Eigen::Index j = 0; j < qv.cols(); ++j) {
    for (Eigen::Index r = 0; r < qv.rows(); ++r) {
      const double diff = qv(r, j) - y(r, 0);
      total += diff * ((y(r, 0) <= qv(r, j) ? 1.0 : 0.0) - p[j]);
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  const int iq = q.id;
  return t.record(std::move(out), [iq, y, p](Tape& tp, const Matrix& g) {
    const Matrix& qv = tp.value(Var{&tp, iq});
    Matrix ga(qv.rows(), qv.cols());
    for (Eigen::Index j = 0; j < qv.cols(); ++j) {
      for (Eigen::Index r = 0; r < qv.rows(); ++r) {
        ga(r, j) = g(0, 0) * ((y(r, 0) <= qv(r, j) ? 1.0 : 0.0) - p[j]);
      }
    }
    tp.accumulate(iq, ga);
  });
}

}  // namespace bnf::ad
