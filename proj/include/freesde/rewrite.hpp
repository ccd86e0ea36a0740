#pragma once

#include <vector>

#include "freesde/poly.hpp"

namespace freesde {

struct RewriteRule {
  Word lhs;
  Word rhs;  // empty = unit
};

using RewriteSystem = std::vector<RewriteRule>;

// pp→p for projections, uu*→1 and u*u→1 for unitaries.
RewriteSystem relations_from_kinds(const std::vector<Letter>& letters);

// Rewrites one word to normal form. Returns false if the pass cap is hit.
bool reduce_word(Word& w, const RewriteSystem& rules, std::size_t max_passes);
Word reduce_word(Word w, const RewriteSystem& rules);

// Smallest (length, lexicographic) representative over rotations and rewrites.
Word cyclic_normal_form(const Word& w, const RewriteSystem& rules);

// Exhaustive left-to-right rewriting. The pass cap is 10·(term count + longest word);
// exceeding it throws NonTermination.
template <class S>
Poly<S> reduce_with_relations(const Poly<S>& p, const RewriteSystem& rules) {
  for (const auto& r : rules) {
    if (r.lhs.empty() || r.rhs.size() > r.lhs.size()) {
      throw NonTermination("rewrite rules must be non-empty and length non-increasing");
    }
  }
  const std::size_t cap = 10 * (p.size() + p.degree());
  Poly<S> out;
  for (const auto& [key, c] : p.terms()) {
    Word w = key[0];
    if (!reduce_word(w, rules, cap)) throw NonTermination("rewrite pass cap exceeded");
    out.add_term({std::move(w)}, c);
  }
  return out;
}

// Normal form modulo trace cyclicity; only meaningful under a trace.
template <class S>
Poly<S> trace_normal_form(const Poly<S>& p, const RewriteSystem& rules) {
  const auto reduced = reduce_with_relations(p, rules);
  Poly<S> out;
  for (const auto& [key, c] : reduced.terms()) out.add_term({cyclic_normal_form(key[0], rules)}, c);
  return out;
}

}  // namespace freesde
