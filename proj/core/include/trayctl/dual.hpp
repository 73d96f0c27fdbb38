// Vector-forward-mode dual numbers: value plus an N-wide derivative row.
// One evaluation of an N-input function with Dual<N> scalars yields the full
// gradient; used for the transition-map Jacobians and the arm Christoffel
// terms. Only the math functions the dynamics actually use are provided.

#pragma once

#include <Eigen/Core>
#include <cmath>

namespace trayctl {

template <int N>
struct Dual {
  using Grad = Eigen::Matrix<double, N, 1>;

  double val{0.0};
  Grad der{Grad::Zero()};

  Dual() = default;
  Dual(double v) : val(v) {}  // NOLINT(google-explicit-constructor)
  Dual(double v, const Grad& d) : val(v), der(d) {}

  // Seed the i-th independent variable.
  static Dual seed(double v, int i) {
    Dual d(v);
    d.der[i] = 1.0;
    return d;
  }

  Dual operator-() const { return {-val, -der}; }

  Dual& operator+=(const Dual& o) {
    val += o.val;
    der += o.der;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    val -= o.val;
    der -= o.der;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    der = der * o.val + o.der * val;
    val *= o.val;
    return *this;
  }
};

template <int N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> Dual<N> operator+(Dual<N> a, double b) { a.val += b; return a; }
template <int N> Dual<N> operator+(double a, Dual<N> b) { b.val += a; return b; }

template <int N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N> Dual<N> operator-(Dual<N> a, double b) { a.val -= b; return a; }
template <int N> Dual<N> operator-(double a, const Dual<N>& b) { return {a - b.val, -b.der}; }

template <int N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N> Dual<N> operator*(Dual<N> a, double b) { return {a.val * b, a.der * b}; }
template <int N> Dual<N> operator*(double a, const Dual<N>& b) { return {a * b.val, a * b.der}; }

template <int N>
Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
  const double inv = 1.0 / b.val;
  return {a.val * inv, (a.der - b.der * (a.val * inv)) * inv};
}
template <int N> Dual<N> operator/(const Dual<N>& a, double b) { return {a.val / b, a.der / b}; }
template <int N>
Dual<N> operator/(double a, const Dual<N>& b) {
  const double inv = 1.0 / b.val;
  return {a * inv, b.der * (-a * inv * inv)};
}

template <int N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.val < b.val; }
template <int N> bool operator<(const Dual<N>& a, double b) { return a.val < b; }
template <int N> bool operator>(const Dual<N>& a, double b) { return a.val > b; }

template <int N> Dual<N> sin(const Dual<N>& x) { return {std::sin(x.val), x.der * std::cos(x.val)}; }
template <int N> Dual<N> cos(const Dual<N>& x) { return {std::cos(x.val), x.der * -std::sin(x.val)}; }
template <int N> Dual<N> exp(const Dual<N>& x) {
  const double e = std::exp(x.val);
  return {e, x.der * e};
}
template <int N> Dual<N> tanh(const Dual<N>& x) {
  const double t = std::tanh(x.val);
  return {t, x.der * (1.0 - t * t)};
}
template <int N> Dual<N> sqrt(const Dual<N>& x) {
  const double s = std::sqrt(x.val);
  return {s, x.der * (0.5 / s)};
}

// Pass-through so templated dynamics code can call the same names on doubles.
using std::cos;
using std::exp;
using std::sin;
using std::sqrt;
using std::tanh;

}  // namespace trayctl
