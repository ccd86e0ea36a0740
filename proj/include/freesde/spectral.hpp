#pragma once

#include <limits>
#include <string>
#include <vector>

#include "freesde/scalar.hpp"

namespace freesde {

struct Grid {
  double a = 0.0;
  double b = 1.0;
  std::size_t n = 2;

  double h() const { return (b - a) / static_cast<double>(n - 1); }
  double x(std::size_t i) const { return a + h() * static_cast<double>(i); }
  std::vector<double> points() const;
};

class SpectralDensity {
 public:
  SpectralDensity() = default;
  // Clips negatives, normalizes to unit trapezoid mass.
  SpectralDensity(Grid grid, std::vector<double> values, double time = std::numeric_limits<double>::quiet_NaN(),
                  bool atomic_start = false);

  const Grid& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double time() const { return time_; }
  bool atomic_start() const { return atomic_start_; }

  double mass() const;
  double moment(unsigned k) const;
  std::vector<double> cdf() const;  // trapezoid cumulative mass at grid points
  // Linear interpolation, 0 outside the grid.
  double at(double x) const;
  // Density values resampled onto another grid.
  SpectralDensity resample(const Grid& g) const;
  std::string to_csv(const std::vector<double>* xi = nullptr) const;

 private:
  Grid grid_;
  std::vector<double> values_;
  double time_ = std::numeric_limits<double>::quiet_NaN();
  bool atomic_start_ = false;
};

// Initial laws with a Stieltjes transform G(z) = ∫ p(x)/(z−x) dx usable off the real axis.
class InitialLaw {
 public:
  enum class Kind : std::uint8_t { atoms, uniform, semicircle, density };

  static InitialLaw atoms(std::vector<double> positions, std::vector<double> weights);
  static InitialLaw point_mass(double x = 0.0) { return atoms({x}, {1.0}); }
  static InitialLaw uniform(double lo, double hi);
  static InitialLaw semicircle(double mean, double variance);
  static InitialLaw density(const SpectralDensity& p);

  Kind kind() const { return kind_; }
  bool atomic() const;
  cplx stieltjes(cplx z) const;
  cplx stieltjes_derivative(cplx z) const;
  double mean() const;
  double second_moment() const;   // τ(X²)
  double variance() const { return second_moment() - mean() * mean(); }
  double support_lo() const;
  double support_hi() const;
  // Law of λX.
  InitialLaw dilate(double lambda) const;
  // Density sample (non-atomic laws only).
  SpectralDensity sample(const Grid& g) const;

 private:
  Kind kind_ = Kind::atoms;
  std::vector<double> x_;   // atom positions / grid points
  std::vector<double> w_;   // atom weights / grid density values
  double lo_ = 0.0, hi_ = 0.0, mean_ = 0.0, var_ = 0.0;
};

enum class EpsMode : std::uint8_t { boundary, richardson };

struct FlowOptions {
  std::size_t n = 4001;
  EpsMode eps_mode = EpsMode::boundary;
  double pad = 0.05;          // relative grid margin beyond the support bound
  std::size_t max_newton = 60;
};

// Grid covering the support of law ⊞ semicircle(t).
Grid flow_grid(const InitialLaw& law, double t, const FlowOptions& opt = {});

struct FlowSlice {
  SpectralDensity density;
  std::vector<double> analytic_score;  // 2·Re G_t on the grid
};

FlowSlice heat_flow_slice(const InitialLaw& law, double t, const Grid& grid, const FlowOptions& opt = {});
// Density of law ⊞ semicircle(t) via the subordination equation G_t(z) = G_0(z − t G_t(z)).
SpectralDensity free_heat_flow(const InitialLaw& law, double t, const FlowOptions& opt = {});
SpectralDensity free_heat_flow(const SpectralDensity& p0, double t, const FlowOptions& opt = {});

// Subordination point ω with ω + t G_0(ω) = z.
cplx subordination(const InitialLaw& law, double t, cplx z, cplx guess, std::size_t max_newton = 60);

inline constexpr double kScoreTimeFloor = 0.01;

class ScoreFunction {
 public:
  ScoreFunction(Grid grid, std::vector<double> xi) : grid_(grid), xi_(std::move(xi)) {}
  const Grid& grid() const { return grid_; }
  const std::vector<double>& values() const { return xi_; }
  double operator[](std::size_t i) const { return xi_[i]; }
  double at(double x) const;  // linear interpolation, clamped
  double l2_norm(const SpectralDensity& p) const;
  double mean(const SpectralDensity& p) const;

 private:
  Grid grid_;
  std::vector<double> xi_;
};

// ξ(x) = 2·p.v.∫ p(y)/(x−y) dy by symmetric cell-skip quadrature with local correction.
ScoreFunction score(const SpectralDensity& p);
// Φ* = ∫ ξ² p
double fisher_info(const SpectralDensity& p);
double fisher_info(const SpectralDensity& p, const ScoreFunction& xi);
// ∬ ((ξ(x)−ξ(y))/(x−y))² p(x)p(y), diagonal ξ′(x)²
double dirichlet_norm(const SpectralDensity& p, const ScoreFunction& xi);

struct ChiStarOptions {
  double horizon = 8.0;
  double tol = 1e-6;
  std::size_t max_doublings = 12;
  FlowOptions flow{1601};
};

// χ* = ½∫_0^∞ (1/(1+t) − Φ*(X_t)) dt + ½ log 2πe, tail beyond the horizon by Φ* ≈ 1/(var + t).
double chi_star(const InitialLaw& law, const ChiStarOptions& opt = {});

double wasserstein1(const SpectralDensity& p, const SpectralDensity& q);

struct ForwardRun {
  Grid grid;
  std::vector<double> times;              // uniform 0..T
  std::vector<SpectralDensity> densities;
  std::vector<std::vector<double>> scores;  // analytic 2·Re G_t (empty at t = 0 for atomic starts)
};

ForwardRun forward_run(const InitialLaw& law, double T, std::size_t steps, const FlowOptions& opt = {});

struct ReversedRun {
  std::vector<double> times;                // reversed times s_k = T − t
  std::vector<SpectralDensity> densities;
  std::size_t substeps = 0;                 // transport sub-steps taken for the CFL bound
};

struct ReverseOptions {
  bool auto_substep = true;
  double cfl = 1.0;  // max|v|·dt ≤ cfl·h
};

// Reversed diffusion by Strang splitting: transport by −ξ_fwd(T−s) for dt/2, free heat step dt
// (transport with velocity ξ[p̄]/2), transport by −ξ_fwd(T−s−dt) for dt/2. The final step stops
// at s = T − dt, where the forward score at time 0 would be needed.
ReversedRun reversed_flow(const ForwardRun& fwd, const ReverseOptions& opt = {});

}  // namespace freesde
