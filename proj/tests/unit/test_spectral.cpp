#include <cmath>

#include "doctest.h"
#include "freesde/error.hpp"
#include "freesde/generator.hpp"
#include "freesde/spectral.hpp"

using namespace freesde;

namespace {

constexpr double kPi = 3.14159265358979323846;

double semicircle_pdf(double x, double m, double v) {
  const double d = 4 * v - (x - m) * (x - m);
  return d > 0 ? std::sqrt(d) / (2 * kPi * v) : 0.0;
}

SpectralDensity exact_semicircle(const Grid& g, double m, double v) {
  std::vector<double> p(g.n);
  for (std::size_t i = 0; i < g.n; ++i) p[i] = semicircle_pdf(g.x(i), m, v);
  return {g, p, v, false};
}

FlowOptions with_n(std::size_t n) {
  FlowOptions o;
  o.n = n;
  return o;
}

InitialLaw two_atoms() { return InitialLaw::atoms({-1.0, 1.0}, {0.5, 0.5}); }

}  // namespace

TEST_CASE("free_heat_flow examples") {
  auto p = free_heat_flow(InitialLaw::point_mass(), 1.0);
  CHECK(std::abs(p.mass() - 1.0) < 1e-8);
  CHECK(std::abs(p.moment(2) - 1.0) < 1e-4);
  CHECK(std::abs(p.moment(4) - 2.0) < 1e-4);
  CHECK(p.values().front() < 1e-10);
  CHECK(p.values().back() < 1e-10);

  auto q = free_heat_flow(two_atoms(), 1.0);
  CHECK(std::abs(q.moment(2) - 2.0) < 1e-3);

  auto u = InitialLaw::uniform(-1, 1).sample(Grid{-1.5, 1.5, 301});
  auto same = free_heat_flow(u, 0.0);
  CHECK(same.values() == u.values());
  CHECK_THROWS_AS(free_heat_flow(InitialLaw::point_mass(), 0.0), Error);
  CHECK_THROWS_AS(free_heat_flow(InitialLaw::point_mass(), -1.0), Error);
}

TEST_CASE("density matches the closed-form semicircle; boundary ε beats Richardson") {
  double err[2] = {0, 0};
  for (int mode = 0; mode < 2; ++mode) {
    FlowOptions o = with_n(1601);
    o.eps_mode = mode == 0 ? EpsMode::boundary : EpsMode::richardson;
    auto p = free_heat_flow(InitialLaw::point_mass(0.5), 0.7, o);
    for (std::size_t i = 0; i < p.grid().n; ++i) {
      err[mode] = std::max(err[mode], std::abs(p[i] - semicircle_pdf(p.grid().x(i), 0.5, 0.7)));
    }
  }
  CHECK(err[0] < 1e-5);
  CHECK(err[0] < err[1]);
}

TEST_CASE("semicircle plus semicircle stays semicircular") {
  auto p = free_heat_flow(InitialLaw::semicircle(0.0, 0.4), 0.6, with_n(2001));
  CHECK(wasserstein1(p, exact_semicircle(p.grid(), 0.0, 1.0)) < 1e-5);
}

TEST_CASE("subordination reports the failing point") {
  auto law = two_atoms();
  const cplx z(0.3, 1e-9);
  auto w = subordination(law, 1.0, z, cplx(0.3, 1.0));
  CHECK(std::abs(w + law.stieltjes(w) - z) < 1e-12);
  CHECK(w.imag() > 0);
  try {
    subordination(law, 1.0, z, cplx(5.0, 1e-3), 0);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(std::string(e.what()).find("z=0.3") != std::string::npos);
  }
}

TEST_CASE("score examples") {
  for (double t : {0.25, 1.0}) {
    auto p = free_heat_flow(InitialLaw::point_mass(), t);
    auto xi = score(p);
    double worst = 0;
    for (std::size_t i = 0; i < p.grid().n; ++i) {
      const double x = p.grid().x(i);
      if (std::abs(x) < 0.95 * 2 * std::sqrt(t)) worst = std::max(worst, std::abs(xi[i] - x / t));
    }
    CHECK(worst < 1e-3);
  }
  auto ps = free_heat_flow(InitialLaw::point_mass(1.5), 0.5);
  auto xs = score(ps);
  double worst = 0;
  for (std::size_t i = 0; i < ps.grid().n; ++i) {
    const double x = ps.grid().x(i);
    if (std::abs(x - 1.5) < 0.95 * 2 * std::sqrt(0.5)) worst = std::max(worst, std::abs(xs[i] - (x - 1.5) / 0.5));
  }
  CHECK(worst < 1e-3);

  // symmetric start: odd score on the symmetric grid
  auto pq = free_heat_flow(two_atoms(), 0.3);
  auto xq = score(pq);
  const auto n = pq.grid().n;
  double odd = 0;
  for (std::size_t i = 0; i < n; ++i) odd = std::max(odd, std::abs(xq[i] + xq[n - 1 - i]));
  CHECK(odd < 1e-9);
}

TEST_CASE("score is mean zero") {
  for (const auto& law : {InitialLaw::atoms({-1.0, 2.0}, {0.3, 0.7}), InitialLaw::uniform(-0.5, 2.0)}) {
    auto p = free_heat_flow(law, 0.2);
    CHECK(std::abs(score(p).mean(p)) < 1e-6);
  }
}

TEST_CASE("score rejects raw atomic inputs") {
  CHECK_THROWS_AS(score(free_heat_flow(InitialLaw::point_mass(), 0.005)), Error);
  CHECK_NOTHROW(score(free_heat_flow(InitialLaw::point_mass(), kScoreTimeFloor)));
  // a smooth start has no floor
  CHECK_NOTHROW(score(free_heat_flow(InitialLaw::uniform(-1, 1), 0.001)));
}

TEST_CASE("fisher_info: semicircle value and both bounds") {
  CHECK(std::abs(fisher_info(free_heat_flow(InitialLaw::point_mass(), 0.5)) - 2.0) < 1e-3);
  for (const auto& law : {InitialLaw::point_mass(), two_atoms(), InitialLaw::uniform(-1, 1)}) {
    double prev = INFINITY;
    for (int k = 0; k < 20; ++k) {
      const double t = 0.02 * std::pow(150.0, k / 19.0);
      const double phi = fisher_info(free_heat_flow(law, t, with_n(1601)));
      CHECK(phi <= (1 / t) * (1 + 1e-3));
      CHECK(phi >= 1 / (law.second_moment() + t) * (1 - 1e-3));
      CHECK(phi <= prev * (1 + 1e-3));
      prev = phi;
    }
  }
}

TEST_CASE("dirichlet_norm examples") {
  auto p = free_heat_flow(InitialLaw::point_mass(), 0.5);
  CHECK(std::abs(dirichlet_norm(p, score(p)) - 4.0) < 4.0 * 1e-3);

  auto q = free_heat_flow(two_atoms(), 0.7, with_n(801));
  std::vector<double> affine(q.grid().n);
  for (std::size_t i = 0; i < affine.size(); ++i) affine[i] = 1.0 - 3.0 * q.grid().x(i);
  CHECK(std::abs(dirichlet_norm(q, ScoreFunction(q.grid(), affine)) - 9.0) < 1e-9);

  auto coarse = free_heat_flow(two_atoms(), 1.0, with_n(1601));
  auto fine = free_heat_flow(two_atoms(), 1.0, with_n(3201));
  const double dc = dirichlet_norm(coarse, score(coarse));
  const double df = dirichlet_norm(fine, score(fine));
  CHECK(dc > 0);
  CHECK(std::abs(dc - df) <= 0.01 * df);
}

TEST_CASE("heat flow semigroup") {
  auto law = InitialLaw::uniform(-1, 1);
  auto ps = free_heat_flow(law, 0.3, with_n(801));
  auto two_step = free_heat_flow(ps, 0.4, with_n(801));
  auto one_step = free_heat_flow(law, 0.7, with_n(801));
  CHECK(wasserstein1(two_step, one_step) < 1e-3);
}

TEST_CASE("grid moments agree with the moment hierarchy") {
  const Letter X{1};
  auto s0 = commuting_state({X}, {{-1.0}, {1.0}}, {0.5, 0.5}, 4);
  auto traj = evolve_moments(GeneratorSpec::brownian({X}), s0, 1.0, 100);
  auto p = free_heat_flow(two_atoms(), 1.0);
  CHECK(std::abs(p.moment(2) - traj.moment(traj.times().size() - 1, Word(2, X)).real()) < 1e-3);
  CHECK(std::abs(p.moment(4) - traj.moment(traj.times().size() - 1, Word(4, X)).real()) < 1e-3);
}

TEST_CASE("chi_star examples") {
  const double ref = 0.5 * std::log(2 * kPi * std::exp(1.0));
  CHECK(std::abs(chi_star(InitialLaw::semicircle(0.0, 1.0)) - ref) < 1e-4);
  const double a = chi_star(InitialLaw::uniform(-1, 1));
  const double b = chi_star(InitialLaw::uniform(-2, 2));
  CHECK(std::abs(b - a - std::log(2.0)) < 1e-4);
  // one variable: χ* equals χ = ∬ log|x−y| + 3/4 + ½ log 2π, and ∬ log|x−y| = log 2 − 3/2 on [−1,1]
  CHECK(std::abs(a - (std::log(2.0) - 0.75 + 0.5 * std::log(2 * kPi))) < 1e-4);
  CHECK_THROWS_AS(chi_star(InitialLaw::point_mass()), Error);
  for (double t : {0.1, 1.0, 4.0}) {
    CHECK(1 / (1 + t) - fisher_info(free_heat_flow(InitialLaw::uniform(-1, 1), t, with_n(1601))) <= 0);
  }
}

TEST_CASE("reversed flow retraces the forward marginals") {
  const double T = 1.0;
  const std::size_t steps = 800;
  auto fwd = forward_run(InitialLaw::point_mass(), T, steps, with_n(1201));
  auto rev = reversed_flow(fwd);
  REQUIRE(rev.times.size() == steps);
  CHECK(rev.times.back() == doctest::Approx(T - T / steps));
  double worst = 0;
  for (std::size_t k = 0; k < rev.times.size(); ++k) {
    CHECK(std::abs(rev.densities[k].mass() - 1.0) < 1e-8);
    if (T - rev.times[k] >= kScoreTimeFloor - 1e-12) {
      worst = std::max(worst, wasserstein1(rev.densities[k], fwd.densities[steps - k]));
    }
  }
  CHECK(worst <= 2e-3);
  for (std::size_t k : {160u, 400u, 640u}) {
    const double s = rev.times[k];
    CHECK(wasserstein1(rev.densities[k], exact_semicircle(fwd.grid, 0.0, T - s)) <= 2e-3);
  }
  // contraction toward the point mass near s = T
  CHECK(rev.densities.back().moment(2) < 0.01);
}

TEST_CASE("reversed flow CFL guard") {
  auto fwd = forward_run(InitialLaw::point_mass(), 1.0, 10, with_n(801));
  ReverseOptions strict;
  strict.auto_substep = false;
  CHECK_THROWS_AS(reversed_flow(fwd, strict), CflViolation);
  CHECK(reversed_flow(fwd).substeps > 0);
}

TEST_CASE("density csv") {
  SpectralDensity p(Grid{0, 2, 3}, {0, 1, 0});
  CHECK(p.to_csv() == "x,p\n0,0\n1,1\n2,0\n");
  std::vector<double> xi{-0.5, 0, 0.5};
  CHECK(p.to_csv(&xi) == "x,p,xi\n0,0,-0.5\n1,1,0\n2,0,0.5\n");
}
