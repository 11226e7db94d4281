#pragma once

// Second-order forward-mode numbers.
//
// Dual2<T> carries a value together with the first and second derivatives
// along one direction. T may itself be a tape Var, in which case both
// derivative channels stay differentiable with respect to whatever is on the
// tape (forward-over-reverse).

#include <cmath>
#include <span>
#include <vector>

#include "daehn/autodiff/tape.hpp"

namespace daehn::ad {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

template <class T>
struct Dual2 {
  T v{};
  T d1{};
  T d2{};

  Dual2() = default;
  Dual2(double c) : v(c), d1(0.0), d2(0.0) {}  // NOLINT: implicit constants
  Dual2(T value, T first, T second) : v(value), d1(first), d2(second) {}

  static Dual2 constant(T value) { return Dual2(value, T(0.0), T(0.0)); }
  /// Seeds a coordinate of the differentiation direction.
  static Dual2 variable(T value, T seed = T(1.0)) { return Dual2(value, seed, T(0.0)); }
};

template <class T>
Dual2<T> operator+(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2};
}
template <class T>
Dual2<T> operator-(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v - b.v, a.d1 - b.d1, a.d2 - b.d2};
}
template <class T>
Dual2<T> operator-(const Dual2<T>& a) {
  return {-a.v, -a.d1, -a.d2};
}
template <class T>
Dual2<T> operator*(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v * b.v, a.d1 * b.v + a.v * b.d1, a.d2 * b.v + 2.0 * (a.d1 * b.d1) + a.v * b.d2};
}

namespace detail {
// f(g): value f, first f', second f''.
template <class T>
Dual2<T> chain(const Dual2<T>& g, const T& f, const T& fp, const T& fpp) {
  return {f, fp * g.d1, fpp * (g.d1 * g.d1) + fp * g.d2};
}
}  // namespace detail

template <class T>
Dual2<T> operator/(const Dual2<T>& a, const Dual2<T>& b) {
  if (value_of(b.v) == 0.0) throw DomainError("division by zero");
  const T inv = 1.0 / b.v;
  const Dual2<T> r = detail::chain(b, inv, -(inv * inv), 2.0 * (inv * inv * inv));
  return a * r;
}

template <class T> Dual2<T> operator+(const Dual2<T>& a, double b) { return {a.v + b, a.d1, a.d2}; }
template <class T> Dual2<T> operator+(double a, const Dual2<T>& b) { return {a + b.v, b.d1, b.d2}; }
template <class T> Dual2<T> operator-(const Dual2<T>& a, double b) { return {a.v - b, a.d1, a.d2}; }
template <class T> Dual2<T> operator-(double a, const Dual2<T>& b) { return {a - b.v, -b.d1, -b.d2}; }
template <class T> Dual2<T> operator*(const Dual2<T>& a, double b) { return {a.v * b, a.d1 * b, a.d2 * b}; }
template <class T> Dual2<T> operator*(double a, const Dual2<T>& b) { return {a * b.v, a * b.d1, a * b.d2}; }
template <class T> Dual2<T> operator/(const Dual2<T>& a, double b) { return a * (1.0 / b); }
template <class T> Dual2<T> operator/(double a, const Dual2<T>& b) { return Dual2<T>(a) / b; }

template <class T> Dual2<T>& operator+=(Dual2<T>& a, const Dual2<T>& b) { return a = a + b; }
template <class T> Dual2<T>& operator-=(Dual2<T>& a, const Dual2<T>& b) { return a = a - b; }
template <class T> Dual2<T>& operator*=(Dual2<T>& a, const Dual2<T>& b) { return a = a * b; }
template <class T> Dual2<T>& operator+=(Dual2<T>& a, double b) { return a = a + b; }
template <class T> Dual2<T>& operator-=(Dual2<T>& a, double b) { return a = a - b; }
template <class T> Dual2<T>& operator*=(Dual2<T>& a, double b) { return a = a * b; }

template <class T>
Dual2<T> exp(const Dual2<T>& a) {
  using std::exp;
  const T e = exp(a.v);
  return detail::chain(a, e, e, e);
}
template <class T>
Dual2<T> log(const Dual2<T>& a) {
  using std::log;
  if (!(value_of(a.v) > 0.0)) throw DomainError("log of non-positive argument");
  const T inv = 1.0 / a.v;
  return detail::chain(a, log(a.v), inv, -(inv * inv));
}
template <class T>
Dual2<T> sin(const Dual2<T>& a) {
  using std::sin;
  using std::cos;
  const T s = sin(a.v);
  return detail::chain(a, s, cos(a.v), -s);
}
template <class T>
Dual2<T> cos(const Dual2<T>& a) {
  using std::sin;
  using std::cos;
  const T c = cos(a.v);
  return detail::chain(a, c, -sin(a.v), -c);
}
template <class T>
Dual2<T> sqrt(const Dual2<T>& a) {
  using std::sqrt;
  if (value_of(a.v) <= 0.0) throw DomainError("sqrt of non-positive argument in derivative propagation");
  const T s = sqrt(a.v);
  const T fp = 0.5 / s;
  return detail::chain(a, s, fp, -(fp / (2.0 * a.v)));
}
template <class T>
Dual2<T> tanh(const Dual2<T>& a) {
  using std::tanh;
  const T t = tanh(a.v);
  const T fp = 1.0 - t * t;
  return detail::chain(a, t, fp, -2.0 * (t * fp));
}
template <class T>
Dual2<T> pow(const Dual2<T>& a, int n) {
  using std::pow;
  if (n == 0) return Dual2<T>(1.0);
  if (n == 1) return a;
  if (n < 0 && value_of(a.v) == 0.0) throw DomainError("negative power of zero");
  T p = pow(a.v, n - 2);
  return detail::chain(a, p * a.v * a.v, double(n) * (p * a.v), double(n) * (n - 1) * p);
}
template <class T>
Dual2<T> softplus(const Dual2<T>& a) {
  using std::exp;
  const double x = value_of(a.v);
  // sigma = 1/(1+e^-x); softplus' = sigma, softplus'' = sigma (1 - sigma)
  const T e = exp(-a.v);
  const T sigma = 1.0 / (1.0 + e);
  const T f = x > 30.0 ? a.v : softplus(a.v);
  return detail::chain(a, f, sigma, sigma * (1.0 - sigma));
}

template <class T>
double value_of(const Dual2<T>& x) {
  return value_of(x.v);
}

/// Derivative of `program` along input coordinate `axis`: returns, per output,
/// value, first and second directional derivatives.
template <class Program>
std::vector<Dual2<double>> forward_jet(Program&& program, std::span<const double> inputs, std::size_t axis) {
  std::vector<Dual2<double>> x;
  x.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i)
    x.push_back(i == axis ? Dual2<double>::variable(inputs[i]) : Dual2<double>::constant(inputs[i]));
  return program(std::span<const Dual2<double>>(x));
}

template <class Program>
std::vector<double> forward_first(Program&& program, std::span<const double> inputs, std::size_t axis) {
  const auto jet = forward_jet(program, inputs, axis);
  std::vector<double> out;
  out.reserve(jet.size());
  for (const auto& j : jet) out.push_back(j.d1);
  return out;
}

template <class Program>
std::vector<double> forward_second(Program&& program, std::span<const double> inputs, std::size_t axis) {
  const auto jet = forward_jet(program, inputs, axis);
  std::vector<double> out;
  out.reserve(jet.size());
  for (const auto& j : jet) out.push_back(j.d2);
  return out;
}

}  // namespace daehn::ad
