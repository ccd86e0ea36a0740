#include "freesde/word.hpp"

#include <algorithm>

#include "freesde/error.hpp"

namespace freesde {

Word adjoint(const Word& w) {
  Word out(w.rbegin(), w.rend());
  for (auto& l : out) l = adjoint(l);
  return out;
}

Word concat(const Word& a, const Word& b) {
  Word out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Word slice(const Word& w, std::size_t begin, std::size_t end) {
  return Word(w.begin() + static_cast<std::ptrdiff_t>(begin),
              w.begin() + static_cast<std::ptrdiff_t>(end));
}

std::size_t graded_degree(const Word& w, std::uint16_t max_family) {
  std::size_t runs = 0;
  std::uint16_t prev = 0;
  for (const auto& l : w) {
    const bool active = l.family != 0 && l.family <= max_family;
    if (active && l.family != prev) ++runs;
    prev = active ? l.family : 0;
  }
  return runs;
}

std::string default_letter_name(const Letter& l) {
  const auto id = std::to_string(l.id);
  switch (l.kind) {
    case LetterKind::self_adjoint: return "X" + id;
    case LetterKind::projection: return "P" + id;
    case LetterKind::unitary: return "U" + id;
    case LetterKind::unitary_adjoint: return "U" + id + "*";
  }
  return "?";
}

Letter Alphabet::add(const std::string& name, LetterKind kind, std::uint16_t family) {
  if (name.empty() || name == "1" || name.find_first_of(".* \t\n()") != std::string::npos) {
    throw AlphabetError("invalid letter name '" + name + "'");
  }
  if (kind == LetterKind::unitary_adjoint) {
    throw AlphabetError("register the unitary letter; its adjoint is implicit");
  }
  if (by_name_.count(name) || by_name_.count(name + "*")) {
    throw AlphabetError("duplicate letter name '" + name + "'");
  }
  Letter l{next_id_++, kind, family};
  letters_.push_back(l);
  by_name_.emplace(name, l);
  names_.emplace(l, name);
  if (kind == LetterKind::unitary) {
    Letter a = adjoint(l);
    letters_.push_back(a);
    by_name_.emplace(name + "*", a);
    names_.emplace(a, name + "*");
  }
  return l;
}

Letter Alphabet::operator[](std::string_view name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw AlphabetError("unknown letter '" + std::string(name) + "'");
  return it->second;
}

bool Alphabet::contains(std::string_view name) const { return by_name_.find(name) != by_name_.end(); }

std::string Alphabet::name(const Letter& l) const {
  auto it = names_.find(l);
  return it == names_.end() ? default_letter_name(l) : it->second;
}

std::string Alphabet::word_name(const Word& w) const {
  if (w.empty()) return "1";
  std::string out;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (k) out += '.';
    out += name(w[k]);
  }
  return out;
}

Word Alphabet::parse_word(std::string_view text) const {
  Word w;
  if (text == "1") return w;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto dot = text.find('.', pos);
    if (dot == std::string_view::npos) dot = text.size();
    w.push_back((*this)[text.substr(pos, dot - pos)]);
    pos = dot + 1;
  }
  return w;
}

}  // namespace freesde
