#include "freesde/rewrite.hpp"

#include <algorithm>
#include <set>

namespace freesde {

RewriteSystem relations_from_kinds(const std::vector<Letter>& letters) {
  RewriteSystem rules;
  for (const auto& l : letters) {
    if (l.kind == LetterKind::projection) rules.push_back({{l, l}, {l}});
    if (l.kind == LetterKind::unitary) {
      rules.push_back({{l, adjoint(l)}, {}});
      rules.push_back({{adjoint(l), l}, {}});
    }
  }
  return rules;
}

namespace {

bool apply_once(Word& w, const RewriteSystem& rules) {
  for (std::size_t pos = 0; pos < w.size(); ++pos) {
    for (const auto& r : rules) {
      if (pos + r.lhs.size() > w.size()) continue;
      if (!std::equal(r.lhs.begin(), r.lhs.end(), w.begin() + static_cast<std::ptrdiff_t>(pos))) {
        continue;
      }
      Word out = slice(w, 0, pos);
      out.insert(out.end(), r.rhs.begin(), r.rhs.end());
      out.insert(out.end(), w.begin() + static_cast<std::ptrdiff_t>(pos + r.lhs.size()), w.end());
      w = std::move(out);
      return true;
    }
  }
  return false;
}

bool shorter_or_smaller(const Word& a, const Word& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

}  // namespace

bool reduce_word(Word& w, const RewriteSystem& rules, std::size_t max_passes) {
  for (std::size_t pass = 0; pass <= max_passes; ++pass) {
    if (!apply_once(w, rules)) return true;
  }
  return false;
}

Word reduce_word(Word w, const RewriteSystem& rules) {
  if (!reduce_word(w, rules, 10 * (w.size() + 1))) throw NonTermination("rewrite pass cap exceeded");
  return w;
}

Word cyclic_normal_form(const Word& w, const RewriteSystem& rules) {
  std::set<Word> seen;
  std::vector<Word> frontier{reduce_word(w, rules)};
  Word best = frontier.front();
  while (!frontier.empty()) {
    Word cur = std::move(frontier.back());
    frontier.pop_back();
    if (!seen.insert(cur).second) continue;
    if (shorter_or_smaller(cur, best)) best = cur;
    for (std::size_t r = 1; r < cur.size(); ++r) {
      Word rot = concat(slice(cur, r, cur.size()), slice(cur, 0, r));
      frontier.push_back(reduce_word(std::move(rot), rules));
    }
  }
  return best;
}

}  // namespace freesde
