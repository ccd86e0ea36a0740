#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace freesde {

enum class LetterKind : std::uint8_t { self_adjoint, projection, unitary, unitary_adjoint };

struct Letter {
  std::uint16_t id = 0;
  LetterKind kind = LetterKind::self_adjoint;
  // Liberation family; 0 marks letters no derivation acts on.
  std::uint16_t family = 0;

  friend auto operator<=>(const Letter&, const Letter&) = default;
};

using Word = std::vector<Letter>;

inline Letter adjoint(Letter l) {
  if (l.kind == LetterKind::unitary) {
    l.kind = LetterKind::unitary_adjoint;
  } else if (l.kind == LetterKind::unitary_adjoint) {
    l.kind = LetterKind::unitary;
  }
  return l;
}

Word adjoint(const Word& w);
Word concat(const Word& a, const Word& b);
Word slice(const Word& w, std::size_t begin, std::size_t end);

// Number of maximal runs of consecutive letters sharing an active family.
// A run of letters from one family is a single element of that family's algebra.
std::size_t graded_degree(const Word& w, std::uint16_t max_family = UINT16_MAX);

class Alphabet {
 public:
  // Registers a letter; for unitary kinds the adjoint is registered as name + "*".
  Letter add(const std::string& name, LetterKind kind = LetterKind::self_adjoint,
             std::uint16_t family = 0);
  Letter operator[](std::string_view name) const;
  bool contains(std::string_view name) const;
  std::string name(const Letter& l) const;
  std::string word_name(const Word& w) const;  // "X1.X2", "1" for the unit
  Word parse_word(std::string_view text) const;
  // Base letters in registration order (unitary adjoints included after their letter).
  const std::vector<Letter>& letters() const { return letters_; }

 private:
  std::vector<Letter> letters_;
  std::map<std::string, Letter, std::less<>> by_name_;
  std::map<Letter, std::string> names_;
  std::uint16_t next_id_ = 1;
};

std::string default_letter_name(const Letter& l);

}  // namespace freesde
