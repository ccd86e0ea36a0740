#pragma once

#include <complex>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

namespace freesde {

using Rational = boost::multiprecision::cpp_rational;
using cplx = std::complex<double>;

// Exact Gaussian-rational scalar a + b*i.
class QComplex {
 public:
  QComplex() = default;
  QComplex(long long re) : re_(re) {}  // NOLINT(google-explicit-constructor)
  QComplex(Rational re, Rational im = 0) : re_(std::move(re)), im_(std::move(im)) {}

  static QComplex i() { return {Rational(0), Rational(1)}; }

  const Rational& real() const { return re_; }
  const Rational& imag() const { return im_; }
  bool is_zero() const { return re_ == 0 && im_ == 0; }
  QComplex conj() const { return {re_, -im_}; }
  cplx to_complex() const {
    return {static_cast<double>(re_), static_cast<double>(im_)};
  }

  QComplex& operator+=(const QComplex& o) {
    re_ += o.re_;
    im_ += o.im_;
    return *this;
  }
  QComplex& operator-=(const QComplex& o) {
    re_ -= o.re_;
    im_ -= o.im_;
    return *this;
  }
  QComplex& operator*=(const QComplex& o) {
    Rational r = re_ * o.re_ - im_ * o.im_;
    im_ = re_ * o.im_ + im_ * o.re_;
    re_ = std::move(r);
    return *this;
  }
  friend QComplex operator+(QComplex a, const QComplex& b) { return a += b; }
  friend QComplex operator-(QComplex a, const QComplex& b) { return a -= b; }
  friend QComplex operator*(QComplex a, const QComplex& b) { return a *= b; }
  friend QComplex operator-(const QComplex& a) { return {-a.re_, -a.im_}; }
  friend bool operator==(const QComplex& a, const QComplex& b) {
    return a.re_ == b.re_ && a.im_ == b.im_;
  }

 private:
  Rational re_{0};
  Rational im_{0};
};

template <class S>
struct ScalarTraits;

template <>
struct ScalarTraits<QComplex> {
  static QComplex conj(const QComplex& c) { return c.conj(); }
  static bool is_zero(const QComplex& c) { return c.is_zero(); }
  static QComplex imag_unit() { return QComplex::i(); }
  static cplx to_complex(const QComplex& c) { return c.to_complex(); }
  static std::string to_string(const QComplex& c);
  static QComplex parse(const std::string& text);
};

template <>
struct ScalarTraits<cplx> {
  static cplx conj(const cplx& c) { return std::conj(c); }
  static bool is_zero(const cplx& c) { return c == cplx{}; }
  static cplx imag_unit() { return {0.0, 1.0}; }
  static cplx to_complex(const cplx& c) { return c; }
  static std::string to_string(const cplx& c);
  static cplx parse(const std::string& text);
};

}  // namespace freesde
