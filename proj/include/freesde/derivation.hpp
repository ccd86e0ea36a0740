#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freesde/poly.hpp"

namespace freesde {

// δ = ∂_x (free difference quotient) or δ_k (liberation derivation of family k).
struct Derivation {
  enum class Kind : std::uint8_t { free, liberation };
  Kind kind = Kind::free;
  std::uint16_t target = 0;  // letter id for free, family id for liberation

  static Derivation free_diff(const Letter& x) { return {Kind::free, x.id}; }
  static Derivation liberation(std::uint16_t family) { return {Kind::liberation, family}; }
};

// δ(ℓ) for a single letter, as Σ coef·left⊗right.
template <class S>
struct LetterImage {
  S coef;
  bool letter_left;   // left = ℓ, right = 1
  bool letter_right;  // left = 1, right = ℓ
};

template <class S>
std::vector<LetterImage<S>> letter_image(const Derivation& d, const Letter& l) {
  const S i = ScalarTraits<S>::imag_unit();
  if (d.kind == Derivation::Kind::free) {
    if (l.kind != LetterKind::self_adjoint) {
      throw AlphabetError("free difference quotient is defined on self-adjoint letters only");
    }
    if (l.id == d.target) return {{S(1), false, false}};
    return {};
  }
  if (l.family == 0 || l.family != d.target) return {};
  switch (l.kind) {
    case LetterKind::self_adjoint:
    case LetterKind::projection:
      return {{-i, true, false}, {i, false, true}};  // −i(ℓ⊗1 − 1⊗ℓ)
    case LetterKind::unitary:
      return {{i, false, true}};  // i(1⊗u)
    case LetterKind::unitary_adjoint:
      return {{-i, true, false}};  // −i(u*⊗1)
  }
  return {};
}

// Applies δ to leg `leg` of t, producing a (K+1)-leg tensor by Leibniz.
template <class S, std::size_t K>
Tensor<S, K + 1> derive_leg(const Tensor<S, K>& t, std::size_t leg, const Derivation& d) {
  Tensor<S, K + 1> out;
  for (const auto& [key, c] : t.terms()) {
    const Word& w = key[leg];
    for (std::size_t pos = 0; pos < w.size(); ++pos) {
      for (const auto& img : letter_image<S>(d, w[pos])) {
        typename Tensor<S, K + 1>::Key k2;
        for (std::size_t j = 0; j < leg; ++j) k2[j] = key[j];
        for (std::size_t j = leg + 1; j < K; ++j) k2[j + 1] = key[j];
        k2[leg] = slice(w, 0, img.letter_left ? pos + 1 : pos);
        k2[leg + 1] = slice(w, img.letter_right ? pos : pos + 1, w.size());
        out.add_term(std::move(k2), c * img.coef);
      }
    }
  }
  return out;
}

template <class S>
BiPoly<S> derive(const Poly<S>& p, const Derivation& d) {
  return derive_leg(p, 0, d);
}

template <class S>
BiPoly<S> free_diff(const Poly<S>& p, const Letter& x) {
  return derive(p, Derivation::free_diff(x));
}

template <class S>
BiPoly<S> lib_deriv(const Poly<S>& p, std::uint16_t family) {
  return derive(p, Derivation::liberation(family));
}

enum class Leg : std::uint8_t { left, right };

template <class S>
TriPoly<S> diff_leg(const BiPoly<S>& t, Leg leg, const Derivation& d) {
  return derive_leg(t, leg == Leg::left ? 0 : 1, d);
}

// (δ⊗1)δP + (1⊗δ)δP
template <class S>
TriPoly<S> second_order(const Poly<S>& p, const Derivation& d) {
  const auto first = derive(p, d);
  return diff_leg(first, Leg::left, d) + diff_leg(first, Leg::right, d);
}

}  // namespace freesde
