#pragma once

#include <sstream>
#include <string>

#include "freesde/poly.hpp"

namespace freesde {

std::string format_double(double v);

// One term per line, `coeff * a.b.c` (bare `coeff` for the unit), in key order.
template <class S>
std::string to_text(const Poly<S>& p, const Alphabet& alphabet) {
  if (p.empty()) return "0\n";
  std::string out;
  for (const auto& [key, c] : p.terms()) {
    out += ScalarTraits<S>::to_string(c);
    if (!key[0].empty()) out += " * " + alphabet.word_name(key[0]);
    out += '\n';
  }
  return out;
}

template <class S>
Poly<S> parse_poly(const std::string& text, const Alphabet& alphabet) {
  Poly<S> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    if (line == "0") continue;
    auto star = line.find(" * ");
    if (star == std::string::npos) {
      out.add_term({Word{}}, ScalarTraits<S>::parse(line));
    } else {
      out.add_term({alphabet.parse_word(line.substr(star + 3))},
                   ScalarTraits<S>::parse(line.substr(0, star)));
    }
  }
  return out;
}

}  // namespace freesde
