#pragma once

#include <map>
#include <vector>

#include "freesde/poly.hpp"
#include "freesde/rewrite.hpp"
#include "json.hpp"

namespace freesde {

// All words of degree ≤ d over `letters` that are irreducible under `relations`,
// in key order.
std::vector<Word> enumerate_words(const std::vector<Letter>& letters, std::size_t d,
                                  const RewriteSystem& relations);

// Letters plus the adjoints of unitary letters, sorted and deduplicated.
std::vector<Letter> close_under_adjoint(std::vector<Letter> letters);

class MomentState {
 public:
  MomentState() = default;
  MomentState(std::vector<Letter> letters, std::size_t degree_bound);

  std::size_t degree_bound() const { return degree_bound_; }
  const std::vector<Letter>& letters() const { return letters_; }
  const RewriteSystem& relations() const { return relations_; }
  const std::map<Word, cplx>& moments() const { return moments_; }
  std::vector<Word> basis() const { return enumerate_words(letters_, degree_bound_, relations_); }

  void set(const Word& w, cplx v);
  bool has(const Word& w) const;
  // τ(w) after reducing w with the letter-kind relations.
  cplx moment(const Word& w) const;

  template <class S>
  cplx eval(const Poly<S>& p) const {
    cplx out{};
    for (const auto& [key, c] : p.terms()) out += ScalarTraits<S>::to_complex(c) * moment(key[0]);
    return out;
  }

  nlohmann::json to_json(const Alphabet& names) const;
  static MomentState from_json(const nlohmann::json& j, const Alphabet& names);

 private:
  std::vector<Letter> letters_;
  std::size_t degree_bound_ = 0;
  RewriteSystem relations_;
  std::map<Word, cplx> moments_;
};

// a⊗b⊗c ↦ τ(b)·ac
template <class S>
NCPolyD middle_trace(const TriPoly<S>& t, const MomentState& s) {
  NCPolyD out;
  for (const auto& [key, c] : t.terms()) {
    out.add_term({concat(key[0], key[2])}, ScalarTraits<S>::to_complex(c) * s.moment(key[1]));
  }
  return out;
}

// m(1⊗τ): a⊗b ↦ τ(b)·a
template <class S>
NCPolyD trace_right(const BiPoly<S>& u, const MomentState& s) {
  NCPolyD out;
  for (const auto& [key, c] : u.terms()) {
    out.add_term({key[0]}, ScalarTraits<S>::to_complex(c) * s.moment(key[1]));
  }
  return out;
}

// m(τ⊗1): a⊗b ↦ τ(a)·b
template <class S>
NCPolyD trace_left(const BiPoly<S>& u, const MomentState& s) {
  NCPolyD out;
  for (const auto& [key, c] : u.terms()) {
    out.add_term({key[1]}, ScalarTraits<S>::to_complex(c) * s.moment(key[0]));
  }
  return out;
}

MomentState semicircle_state(double variance, std::size_t d, Letter x = Letter{1});
MomentState projection_state(double trace, std::size_t d, Letter p = Letter{1, LetterKind::projection});
MomentState free_join(const MomentState& s1, const MomentState& s2, std::size_t d);

// Commuting (classical) state: letter k takes value values[point][k] at each sample
// point, weighted by weights[point]. Unitary adjoints take the conjugate value.
MomentState commuting_state(const std::vector<Letter>& letters,
                            const std::vector<std::vector<cplx>>& values,
                            const std::vector<double>& weights, std::size_t d);

// Number of non-crossing pair partitions of 2k points, by explicit enumeration.
unsigned long long count_noncrossing_pairings(unsigned k);

struct PsdReport {
  bool pass = false;
  double min_eigenvalue = 0.0;
  std::size_t dimension = 0;
};

inline constexpr double kPsdTolerance = 1e-9;
inline constexpr double kPsdToleranceEvolved = 1e-6;

PsdReport psd_check(const MomentState& s, double tol = kPsdTolerance);

}  // namespace freesde
