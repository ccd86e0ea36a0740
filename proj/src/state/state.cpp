#include "freesde/state.hpp"

#include <algorithm>
#include <functional>

#include <Eigen/Eigenvalues>

namespace freesde {

std::vector<Letter> close_under_adjoint(std::vector<Letter> letters) {
  const auto n = letters.size();
  for (std::size_t k = 0; k < n; ++k) {
    if (letters[k].kind == LetterKind::unitary || letters[k].kind == LetterKind::unitary_adjoint) {
      letters.push_back(adjoint(letters[k]));
    }
  }
  std::sort(letters.begin(), letters.end());
  letters.erase(std::unique(letters.begin(), letters.end()), letters.end());
  return letters;
}

std::vector<Word> enumerate_words(const std::vector<Letter>& letters, std::size_t d,
                                  const RewriteSystem& relations) {
  std::vector<Word> out{Word{}};
  std::vector<Word> layer{Word{}};
  for (std::size_t len = 1; len <= d; ++len) {
    std::vector<Word> next;
    for (const auto& w : layer) {
      for (const auto& l : letters) {
        Word v = w;
        v.push_back(l);
        if (reduce_word(v, relations) == v) next.push_back(std::move(v));
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  std::sort(out.begin(), out.end());
  return out;
}

MomentState::MomentState(std::vector<Letter> letters, std::size_t degree_bound)
    : letters_(close_under_adjoint(std::move(letters))),
      degree_bound_(degree_bound),
      relations_(relations_from_kinds(letters_)) {
  moments_[Word{}] = 1.0;
}

void MomentState::set(const Word& w, cplx v) {
  Word r = reduce_word(w, relations_);
  check_degree(r.size(), degree_bound_);
  moments_[r] = v;
}

bool MomentState::has(const Word& w) const { return moments_.count(reduce_word(w, relations_)) > 0; }

cplx MomentState::moment(const Word& w) const {
  Word r = reduce_word(w, relations_);
  check_degree(r.size(), degree_bound_);
  auto it = moments_.find(r);
  if (it == moments_.end()) throw AlphabetError("word outside the state's alphabet");
  return it->second;
}

namespace {

const char* kind_name(LetterKind k) {
  switch (k) {
    case LetterKind::self_adjoint: return "self_adjoint";
    case LetterKind::projection: return "projection";
    case LetterKind::unitary: return "unitary";
    case LetterKind::unitary_adjoint: return "unitary_adjoint";
  }
  return "?";
}

}  // namespace

nlohmann::json MomentState::to_json(const Alphabet& names) const {
  nlohmann::json letters = nlohmann::json::array();
  for (const auto& l : letters_) {
    if (l.kind == LetterKind::unitary_adjoint) continue;
    letters.push_back({{"name", names.name(l)}, {"kind", kind_name(l.kind)}, {"family", l.family}});
  }
  nlohmann::json moments = nlohmann::json::array();
  for (const auto& [w, v] : moments_) moments.push_back({names.word_name(w), v.real(), v.imag()});
  return {{"degree_bound", degree_bound_}, {"letters", letters}, {"moments", moments}};
}

MomentState MomentState::from_json(const nlohmann::json& j, const Alphabet& names) {
  std::vector<Letter> letters;
  for (const auto& l : j.at("letters")) letters.push_back(names[l.at("name").get<std::string>()]);
  MomentState s(letters, j.at("degree_bound").get<std::size_t>());
  for (const auto& m : j.at("moments")) {
    s.set(names.parse_word(m.at(0).get<std::string>()), {m.at(1).get<double>(), m.at(2).get<double>()});
  }
  return s;
}

unsigned long long count_noncrossing_pairings(unsigned k) {
  // pair point 0 with point 2j+1; inside and outside pair independently
  std::function<unsigned long long(unsigned)> count = [&](unsigned m) -> unsigned long long {
    if (m == 0) return 1;
    unsigned long long total = 0;
    for (unsigned j = 0; j < m; ++j) total += count(j) * count(m - 1 - j);
    return total;
  };
  return count(k);
}

MomentState semicircle_state(double variance, std::size_t d, Letter x) {
  if (variance < 0) throw Error("semicircle variance must be non-negative");
  if (x.kind != LetterKind::self_adjoint) throw AlphabetError("semicircle letter must be self-adjoint");
  MomentState s({x}, d);
  for (std::size_t k = 1; k <= d; ++k) {
    double v = 0.0;
    if (k % 2 == 0) {
      v = static_cast<double>(count_noncrossing_pairings(static_cast<unsigned>(k / 2))) *
          std::pow(variance, static_cast<double>(k / 2));
    }
    s.set(Word(k, x), v);
  }
  return s;
}

MomentState projection_state(double trace, std::size_t d, Letter p) {
  if (trace < 0 || trace > 1) throw Error("projection trace must lie in [0,1]");
  if (p.kind != LetterKind::projection) throw AlphabetError("projection letter required");
  MomentState s({p}, d);
  if (d >= 1) s.set(Word{p}, trace);
  return s;
}

MomentState commuting_state(const std::vector<Letter>& letters,
                            const std::vector<std::vector<cplx>>& values,
                            const std::vector<double>& weights, std::size_t d) {
  if (values.size() != weights.size()) throw Error("commuting_state: values/weights size mismatch");
  MomentState s(letters, d);
  auto value_of = [&](std::size_t point, const Letter& l) -> cplx {
    for (std::size_t k = 0; k < letters.size(); ++k) {
      if (letters[k] == l) return values[point][k];
      if (letters[k] == adjoint(l)) return std::conj(values[point][k]);
    }
    throw AlphabetError("letter not in commuting state");
  };
  for (const auto& w : s.basis()) {
    cplx total{};
    for (std::size_t p = 0; p < weights.size(); ++p) {
      cplx prod = weights[p];
      for (const auto& l : w) prod *= value_of(p, l);
      total += prod;
    }
    s.set(w, total);
  }
  return s;
}

namespace {

struct Block {
  int side;
  NCPolyD poly;
};

class FreeJoiner {
 public:
  FreeJoiner(const MomentState& a, const MomentState& b) : states_{&a, &b} {}

  cplx tau(std::vector<Block> blocks) const {
    cplx scale = 1.0;
    if (!normalize(blocks, scale)) return 0.0;
    if (blocks.empty()) return scale;
    if (blocks.size() == 1) return scale * states_[blocks[0].side]->eval(blocks[0].poly);
    // τ(b_1⋯b_m) = Σ_k τ(b_k)·τ(b̊_1⋯b̊_{k−1} b_{k+1}⋯b_m); the all-centered term vanishes
    cplx total{};
    std::vector<Block> centered;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const cplx tk = states_[blocks[k].side]->eval(blocks[k].poly);
      if (tk != cplx{}) {
        std::vector<Block> rest = centered;
        rest.insert(rest.end(), blocks.begin() + static_cast<std::ptrdiff_t>(k + 1), blocks.end());
        total += tk * tau(std::move(rest));
      }
      centered.push_back({blocks[k].side, blocks[k].poly - NCPolyD::unit(tk)});
    }
    return scale * total;
  }

 private:
  // Pulls out scalar blocks and merges neighbours from the same algebra.
  // Returns false if some block is zero.
  static bool normalize(std::vector<Block>& blocks, cplx& scale) {
    bool changed = true;
    while (changed) {
      changed = false;
      std::vector<Block> out;
      for (auto& b : blocks) {
        if (b.poly.empty()) return false;
        if (b.poly.size() == 1 && b.poly.terms().begin()->first[0].empty()) {
          scale *= b.poly.terms().begin()->second;
          changed = true;
        } else if (!out.empty() && out.back().side == b.side) {
          out.back().poly = mul(out.back().poly, b.poly, SIZE_MAX);
          changed = true;
        } else {
          out.push_back(std::move(b));
        }
      }
      blocks = std::move(out);
    }
    return true;
  }

  const MomentState* states_[2];
};

}  // namespace

MomentState free_join(const MomentState& s1, const MomentState& s2, std::size_t d) {
  for (const auto& a : s1.letters()) {
    for (const auto& b : s2.letters()) {
      if (a.id == b.id) throw AlphabetError("free_join requires disjoint alphabets");
    }
  }
  std::vector<Letter> letters = s1.letters();
  letters.insert(letters.end(), s2.letters().begin(), s2.letters().end());
  MomentState out(letters, d);
  FreeJoiner joiner(s1, s2);
  auto side_of = [&](const Letter& l) {
    return std::find(s1.letters().begin(), s1.letters().end(), l) != s1.letters().end() ? 0 : 1;
  };
  for (const auto& w : out.basis()) {
    if (w.empty()) continue;
    std::vector<Block> blocks;
    for (const auto& l : w) blocks.push_back({side_of(l), letter_poly<cplx>(l)});
    out.set(w, joiner.tau(std::move(blocks)));
  }
  return out;
}

PsdReport psd_check(const MomentState& s, double tol) {
  const auto words = enumerate_words(s.letters(), s.degree_bound() / 2, s.relations());
  const auto n = static_cast<Eigen::Index>(words.size());
  Eigen::MatrixXcd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Word ai = adjoint(words[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = s.moment(concat(ai, words[static_cast<std::size_t>(j)]));
  }
  Eigen::MatrixXcd h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h, Eigen::EigenvaluesOnly);
  PsdReport r;
  r.dimension = words.size();
  r.min_eigenvalue = n ? es.eigenvalues().minCoeff() : 0.0;
  r.pass = r.min_eigenvalue >= -tol;
  return r;
}

}  // namespace freesde
