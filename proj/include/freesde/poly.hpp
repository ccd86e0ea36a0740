#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <utility>

#include "freesde/error.hpp"
#include "freesde/scalar.hpp"
#include "freesde/word.hpp"

namespace freesde {

inline constexpr std::size_t kMaxDegree = 12;

// Element of A^{⊗K}: sparse map from K-tuples of words to coefficients.
template <class S, std::size_t K>
class Tensor {
 public:
  using Scalar = S;
  using Key = std::array<Word, K>;
  using Terms = std::map<Key, S>;
  static constexpr std::size_t legs = K;

  Tensor() = default;

  static Tensor unit(S c = S(1)) {
    Tensor t;
    t.add_term(Key{}, std::move(c));
    return t;
  }
  static Tensor monomial(Key key, S c = S(1)) {
    Tensor t;
    t.add_term(std::move(key), std::move(c));
    return t;
  }

  void add_term(Key key, const S& c) {
    if (ScalarTraits<S>::is_zero(c)) return;
    auto [it, inserted] = terms_.try_emplace(std::move(key), c);
    if (!inserted) {
      it->second += c;
      if (ScalarTraits<S>::is_zero(it->second)) terms_.erase(it);
    }
  }

  const Terms& terms() const& { return terms_; }
  Terms terms() && { return std::move(terms_); }
  bool empty() const { return terms_.empty(); }
  std::size_t size() const { return terms_.size(); }

  S coeff(const Key& key) const {
    auto it = terms_.find(key);
    return it == terms_.end() ? S(0) : it->second;
  }

  std::size_t degree() const {
    std::size_t d = 0;
    for (const auto& [key, c] : terms_) {
      std::size_t n = 0;
      for (const auto& w : key) n += w.size();
      d = std::max(d, n);
    }
    return d;
  }

  Tensor& operator+=(const Tensor& o) {
    for (const auto& [key, c] : o.terms_) add_term(key, c);
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    for (const auto& [key, c] : o.terms_) add_term(key, -c);
    return *this;
  }
  Tensor& operator*=(const S& s) {
    if (ScalarTraits<S>::is_zero(s)) {
      terms_.clear();
      return *this;
    }
    for (auto it = terms_.begin(); it != terms_.end();) {
      it->second *= s;
      it = ScalarTraits<S>::is_zero(it->second) ? terms_.erase(it) : std::next(it);
    }
    return *this;
  }
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator-(Tensor a) { return a *= S(-1); }
  friend Tensor operator*(Tensor a, const S& s) { return a *= s; }
  friend Tensor operator*(const S& s, Tensor a) { return a *= s; }
  friend bool operator==(const Tensor& a, const Tensor& b) { return a.terms_ == b.terms_; }

 private:
  Terms terms_;
};

template <class S>
using Poly = Tensor<S, 1>;
template <class S>
using BiPoly = Tensor<S, 2>;
template <class S>
using TriPoly = Tensor<S, 3>;

using NCPoly = Poly<QComplex>;
using NCPolyD = Poly<cplx>;
using BiPolyQ = BiPoly<QComplex>;
using BiPolyD = BiPoly<cplx>;
using TriPolyQ = TriPoly<QComplex>;
using TriPolyD = TriPoly<cplx>;

template <class S>
Poly<S> word_poly(Word w, S c = S(1)) {
  return Poly<S>::monomial({std::move(w)}, std::move(c));
}

template <class S>
Poly<S> letter_poly(Letter l, S c = S(1)) {
  return word_poly<S>(Word{l}, std::move(c));
}

inline void check_degree(std::size_t d, std::size_t max_degree) {
  if (d > max_degree) {
    throw DegreeOverflow("degree " + std::to_string(d) + " exceeds cap " +
                         std::to_string(max_degree));
  }
}

template <class S>
Poly<S> mul(const Poly<S>& p, const Poly<S>& q, std::size_t max_degree = kMaxDegree) {
  Poly<S> out;
  for (const auto& [kp, cp] : p.terms()) {
    for (const auto& [kq, cq] : q.terms()) {
      check_degree(kp[0].size() + kq[0].size(), max_degree);
      out.add_term({concat(kp[0], kq[0])}, cp * cq);
    }
  }
  return out;
}

template <class S>
Poly<S> operator*(const Poly<S>& p, const Poly<S>& q) {
  return mul(p, q);
}

template <class S>
Poly<S> power(const Poly<S>& p, unsigned k, std::size_t max_degree = kMaxDegree) {
  Poly<S> out = Poly<S>::unit();
  for (unsigned j = 0; j < k; ++j) out = mul(out, p, max_degree);
  return out;
}

// Multiplies c into leg `leg` of t, on the left (c·w) or the right (w·c).
template <class S, std::size_t K>
Tensor<S, K> mul_leg(const Tensor<S, K>& t, std::size_t leg, const Poly<S>& c, bool from_left,
                     std::size_t max_degree = kMaxDegree) {
  Tensor<S, K> out;
  for (const auto& [key, a] : t.terms()) {
    for (const auto& [kc, b] : c.terms()) {
      auto k2 = key;
      k2[leg] = from_left ? concat(kc[0], key[leg]) : concat(key[leg], kc[0]);
      std::size_t d = 0;
      for (const auto& w : k2) d += w.size();
      check_degree(d, max_degree);
      out.add_term(std::move(k2), a * b);
    }
  }
  return out;
}

// (P⊗1)·U
template <class S>
BiPoly<S> left_mul(const Poly<S>& p, const BiPoly<S>& u) {
  return mul_leg(u, 0, p, true);
}
// U·(1⊗Q)
template <class S>
BiPoly<S> right_mul(const BiPoly<S>& u, const Poly<S>& q) {
  return mul_leg(u, 1, q, false);
}

template <class S>
Poly<S> adjoint(const Poly<S>& p) {
  Poly<S> out;
  for (const auto& [key, c] : p.terms()) out.add_term({adjoint(key[0])}, ScalarTraits<S>::conj(c));
  return out;
}

// (a⊗b)* = b*⊗a*
template <class S>
BiPoly<S> flip_adjoint(const BiPoly<S>& u) {
  BiPoly<S> out;
  for (const auto& [key, c] : u.terms()) {
    out.add_term({adjoint(key[1]), adjoint(key[0])}, ScalarTraits<S>::conj(c));
  }
  return out;
}

template <class S>
BiPoly<S> tensor(const Poly<S>& a, const Poly<S>& b) {
  BiPoly<S> out;
  for (const auto& [ka, ca] : a.terms()) {
    for (const auto& [kb, cb] : b.terms()) out.add_term({ka[0], kb[0]}, ca * cb);
  }
  return out;
}

// (a⊗b)#c = a c b
template <class S>
Poly<S> sharp(const BiPoly<S>& u, const Poly<S>& c, std::size_t max_degree = kMaxDegree) {
  Poly<S> out;
  for (const auto& [key, a] : u.terms()) {
    for (const auto& [kc, b] : c.terms()) {
      check_degree(key[0].size() + kc[0].size() + key[1].size(), max_degree);
      out.add_term({concat(concat(key[0], kc[0]), key[1])}, a * b);
    }
  }
  return out;
}

// a⊗b ↦ ab
template <class S>
Poly<S> multiply_legs(const BiPoly<S>& u) {
  Poly<S> out;
  for (const auto& [key, c] : u.terms()) out.add_term({concat(key[0], key[1])}, c);
  return out;
}

template <class S>
Poly<S> number_op(const Poly<S>& p, std::uint16_t max_family = UINT16_MAX) {
  Poly<S> out;
  for (const auto& [key, c] : p.terms()) {
    const auto n = graded_degree(key[0], max_family);
    if (n) out.add_term(key, c * S(static_cast<long long>(n)));
  }
  return out;
}

template <class S, class F>
Poly<S> map_coefficients(const Poly<S>& p, F&& f) {
  Poly<S> out;
  for (const auto& [key, c] : p.terms()) out.add_term(key, f(key[0], c));
  return out;
}

inline NCPolyD to_numeric(const NCPoly& p) {
  NCPolyD out;
  for (const auto& [key, c] : p.terms()) out.add_term(key, c.to_complex());
  return out;
}

}  // namespace freesde
