#include <charconv>
#include <string>

#include "freesde/error.hpp"
#include "freesde/scalar.hpp"
#include "freesde/text.hpp"

namespace freesde {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

template <class R, class Fmt>
std::string format_complex(const R& re, const R& im, bool re_zero, bool im_zero, bool im_neg,
                           Fmt fmt) {
  if (im_zero) return fmt(re);
  if (re_zero) return fmt(im) + "i";
  std::string imag = fmt(im);
  if (!im_neg) imag = "+" + imag;
  return "(" + fmt(re) + imag + "i)";
}

// Splits "a+bi" / "bi" / "a" into real and imaginary text.
std::pair<std::string, std::string> split_complex(std::string t) {
  if (t.size() >= 2 && t.front() == '(' && t.back() == ')') t = t.substr(1, t.size() - 2);
  if (t.empty()) throw ParseError("empty coefficient");
  if (t.back() != 'i') return {t, "0"};
  t.pop_back();
  for (std::size_t k = t.size(); k-- > 1;) {
    if ((t[k] == '+' || t[k] == '-') && t[k - 1] != 'e' && t[k - 1] != 'E') {
      return {t.substr(0, k), t.substr(t[k] == '+' ? k + 1 : k)};
    }
  }
  return {"0", t};
}

Rational parse_rational(const std::string& s) {
  try {
    return Rational(s);
  } catch (const std::exception&) {
    throw ParseError("bad rational '" + s + "'");
  }
}

double parse_double(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParseError("bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::string ScalarTraits<QComplex>::to_string(const QComplex& c) {
  return format_complex(c.real(), c.imag(), c.real() == 0, c.imag() == 0, c.imag() < 0,
                        [](const Rational& r) { return r.str(); });
}

QComplex ScalarTraits<QComplex>::parse(const std::string& text) {
  auto [re, im] = split_complex(text);
  return {parse_rational(re), parse_rational(im)};
}

std::string ScalarTraits<cplx>::to_string(const cplx& c) {
  return format_complex(c.real(), c.imag(), c.real() == 0.0, c.imag() == 0.0,
                        std::signbit(c.imag()), format_double);
}

cplx ScalarTraits<cplx>::parse(const std::string& text) {
  auto [re, im] = split_complex(text);
  return {parse_double(re), parse_double(im)};
}

}  // namespace freesde
