#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "freesde/derivation.hpp"
#include "freesde/state.hpp"

namespace freesde {

// Q(s) = constant + singular / (offset + horizon − s)
struct Drift {
  NCPolyD constant;
  NCPolyD singular;
  double offset = 0.0;
  double horizon = 0.0;

  NCPolyD at(double s) const;
  double clock(double s) const { return 1.0 / (offset + horizon - s); }
  bool empty() const { return constant.empty() && singular.empty(); }
};

struct GeneratorSpec {
  enum class Kind : std::uint8_t { brownian, liberation };

  Kind kind = Kind::brownian;
  std::vector<Letter> generators;         // brownian: X_1..X_n
  std::vector<std::uint16_t> families;    // liberation: 1..n
  std::vector<Drift> drifts;              // indexed like the derivations; missing = 0
  double covariance = 1.0;

  static GeneratorSpec brownian(std::vector<Letter> xs, double covariance = 1.0);
  static GeneratorSpec liberation(std::uint16_t n, double covariance = 1.0);

  std::size_t n() const { return kind == Kind::brownian ? generators.size() : families.size(); }
  Derivation derivation(std::size_t i) const;
  const Drift* drift(std::size_t i) const;
  bool has_drift() const;
  // Throws ConfigError if a drift is not self-adjoint.
  void validate() const;

  nlohmann::json to_json(const Alphabet& names) const;
  static GeneratorSpec from_json(const nlohmann::json& j, const Alphabet& names);
};

// Δ_{Q,s}(P) = Σ_j δ_j(P)#Q_j(s) + (c/2) Σ_i middle_trace((δ_i⊗1)δ_iP + (1⊗δ_i)δ_iP)
NCPolyD apply_generator(const GeneratorSpec& g, const MomentState& s, const NCPolyD& p,
                        double time = 0.0);
inline NCPolyD apply_generator(const GeneratorSpec& g, const MomentState& s, const NCPoly& p,
                               double time = 0.0) {
  return apply_generator(g, s, to_numeric(p), time);
}

// Sorted word list with reduced-word lookup.
struct WordIndex {
  std::vector<Word> words;
  std::map<Word, std::size_t> index;
  RewriteSystem relations;

  WordIndex() = default;
  WordIndex(std::vector<Word> ws, RewriteSystem rel);
  std::optional<std::size_t> find(const Word& w) const;
  std::size_t at(const Word& w) const;
  std::size_t size() const { return words.size(); }
};

// Sparse form of Δ over a finite word set, with middle traces read from a moment vector.
class CompiledGenerator {
 public:
  // Local words are `seeds` closed under the outputs of Δ; moment lookups go through `moments`.
  CompiledGenerator(const GeneratorSpec& g, std::shared_ptr<const WordIndex> moments,
                    const std::vector<Word>& seeds);

  const WordIndex& local() const { return local_; }
  const std::vector<std::size_t>& local_to_moment() const { return local_to_moment_; }

  // out = Δ_t k, both as coefficient vectors over local words.
  void apply(double t, const std::vector<cplx>& m, const std::vector<cplx>& k,
             std::vector<cplx>& out) const;
  // out[w] = τ(Δ_t w) for each local word.
  void traced(double t, const std::vector<cplx>& m, std::vector<cplx>& out) const;
  std::size_t nonzeros() const { return quad_.size() + lin_.size(); }

 private:
  struct Quad {
    std::uint32_t src, mid, outer;
    cplx c;
  };
  struct Lin {
    std::uint32_t src, out, drift;
    bool singular;
    cplx c;
  };
  double clock(std::uint32_t drift, bool singular, double t) const;

  GeneratorSpec spec_;
  std::shared_ptr<const WordIndex> moments_;
  WordIndex local_;
  std::vector<std::size_t> local_to_moment_;
  std::vector<Quad> quad_;
  std::vector<Lin> lin_;
};

class MomentTrajectory {
 public:
  MomentTrajectory(std::vector<Letter> letters, std::size_t degree,
                   std::shared_ptr<const WordIndex> basis)
      : letters_(std::move(letters)), degree_(degree), basis_(std::move(basis)) {}

  const std::vector<double>& times() const { return times_; }
  std::size_t size() const { return times_.size(); }
  std::size_t degree() const { return degree_; }
  const WordIndex& basis() const { return *basis_; }
  std::shared_ptr<const WordIndex> basis_ptr() const { return basis_; }
  const std::vector<cplx>& values(std::size_t k) const { return values_[k]; }
  cplx moment(std::size_t k, const Word& w) const { return values_[k][basis_->at(w)]; }
  MomentState state(std::size_t k) const;
  // Grid index of time s; throws if s is not on the grid.
  std::size_t index_of(double s) const;

  void push(double t, std::vector<cplx> v) {
    times_.push_back(t);
    values_.push_back(std::move(v));
  }

  // Rows `t,word,re,im` for the listed words (all basis words if empty).
  std::string to_csv(const Alphabet& names, const std::vector<Word>& words = {}) const;

 private:
  std::vector<Letter> letters_;
  std::size_t degree_;
  std::shared_ptr<const WordIndex> basis_;
  std::vector<double> times_;
  std::vector<std::vector<cplx>> values_;
};

struct EvolveOptions {
  std::size_t psd_checkpoints = 10;
  double psd_tolerance = kPsdToleranceEvolved;
  double t0 = 0.0;
};

// RK4 on d/dt τ_t(w) = τ_t(Δ_t w) for all words up to the state's degree bound.
MomentTrajectory evolve_moments(const GeneratorSpec& g, const MomentState& s0, double T,
                                std::size_t steps, const EvolveOptions& opt = {});

// Steps with step²·d² ≤ 1e−6.
std::size_t recommended_steps(double T, std::size_t degree);

struct PolyPath {
  std::vector<double> times;     // grid times t_0..t_s
  std::vector<NCPolyD> values;   // K_t^s(P) per grid time
  std::size_t passes = 0;        // non-vanishing recursion increments
};

// K_t^s(P) = P + ∫_t^s Δ_u K_u^s(P) du by iterated increments (brownian kind).
PolyPath backward_solve(const GeneratorSpec& g, const MomentTrajectory& traj, double s,
                        const NCPolyD& p);
// K_t^s(P) with the e^{−N(s−t)} integrating factor (liberation kind, Q = 0).
PolyPath backward_solve_graded(const GeneratorSpec& g, const MomentTrajectory& traj, double s,
                               const NCPolyD& p);
// L_t^s(P) = P − ∫_t^s Δ_{T−u} L_u^s(P) du on a grid symmetric under t ↦ T − t.
PolyPath forward_dual_solve(const GeneratorSpec& g, const MomentTrajectory& traj, double s,
                            const NCPolyD& p);

// max over grid t ≤ s of |τ_s(P) − τ_t(K_t^s(P))|
double duality_residual(const MomentTrajectory& traj, const PolyPath& k, const NCPolyD& p);

// δ*(a⊗b) = aξb − m(1⊗τ)(δa)·b − a·m(τ⊗1)(δb)
NCPolyD voiculescu_dstar(const BiPolyD& u, const NCPolyD& xi, const Derivation& d,
                         const MomentState& s);
// Σ_i δ_i(P)#ξ_i − Σ_i middle_trace((δ_i⊗1)δ_iP + (1⊗δ_i)δ_iP)
NCPolyD laplacian(const NCPolyD& p, const std::vector<NCPolyD>& xi, const GeneratorSpec& g,
                  const MomentState& s);

// Laws with a polynomial conjugate variable: X_0 semicircular of variance σ² (σ² = 0 is X_0 = 0).
struct ConjugateLaw {
  enum class Kind : std::uint8_t { semicircular, formal_zero, general };
  Kind kind = Kind::semicircular;
  double sigma2 = 0.0;
};

// ξ_{i,t} = X_i/(σ²+t)
std::vector<NCPolyD> conjugate_polys(const GeneratorSpec& g, const ConjugateLaw& law, double t);

// Q̄_{i,s} = −ξ̄_{i,s} − Q_i with ξ̄_{i,s} = ξ_{i,T−s}.
GeneratorSpec reversed_drift(const GeneratorSpec& g, const ConjugateLaw& law, double T);

}  // namespace freesde
