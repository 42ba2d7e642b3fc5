#pragma once

// Forward-mode dual numbers. Nesting Dual<Dual<double>> gives mixed second
// directional derivatives, which is all the polynomial models here need.

namespace qcarleman {

template <class T>
struct Dual {
  T v{};
  T d{};

  constexpr Dual() = default;
  constexpr Dual(double x) : v(x), d(0.0) {}  // NOLINT: implicit lift of constants
  constexpr Dual(T value, T tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    d += o.d;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    d -= o.d;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    d = d * o.v + v * o.d;
    v *= o.v;
    return *this;
  }
};

template <class T>
Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <class T>
Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <class T>
Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <class T>
Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }

template <class T>
Dual<T> operator+(Dual<T> a, double b) { return a += Dual<T>(b); }
template <class T>
Dual<T> operator+(double a, Dual<T> b) { return b += Dual<T>(a); }
template <class T>
Dual<T> operator-(Dual<T> a, double b) { return a -= Dual<T>(b); }
template <class T>
Dual<T> operator-(double a, const Dual<T>& b) { return Dual<T>(a) - b; }
template <class T>
Dual<T> operator*(Dual<T> a, double b) {
  a.v = a.v * b;
  a.d = a.d * b;
  return a;
}
template <class T>
Dual<T> operator*(double a, Dual<T> b) { return b * a; }

// Primal value at any nesting depth.
inline double primal(double x) { return x; }
template <class T>
double primal(const Dual<T>& x) { return primal(x.v); }

}  // namespace qcarleman
