#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "../unit/test_util.hpp"
#include "freesde/cli.hpp"
#include "freesde/error.hpp"
#include "freesde/generator.hpp"
#include "freesde/matrixmc.hpp"
#include "freesde/spectral.hpp"

using namespace freesde;

namespace {

// pinned tolerances
constexpr double kDualityTol = 5e-7;
constexpr double kDualitySeconds = 60;
constexpr double kFisherRelTol = 1e-3;
constexpr double kGapTol = 1e-3;
constexpr double kConjSeconds = 60;
constexpr double kIsometryRelTol = 0.05;
constexpr double kQvRelTol = 0.02;
constexpr double kUnitaryFloor = 0.01;
constexpr double kFreenessTol = 0.01;
constexpr double kZ = 3.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

unsigned threads() { return std::max(1u, std::thread::hardware_concurrency()); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Mat zeros(std::size_t N) { return Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N)); }

bool within(const MeanSe& m, double target, double floor = 0.0) {
  return std::abs(m.mean - target) <= std::max(kZ * m.se, floor);
}

// 1. duality τ_s(P) = τ_t(K_t^s(P)) on random polynomials
Outcome duality() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  const double T = 1.0;
  const std::size_t steps = 400, degree = 6;
  double worst = 0.0;
  std::size_t count = 0;

  struct Setup {
    GeneratorSpec g;
    MomentState s0;
    std::vector<Letter> letters;
  };
  std::vector<Setup> setups;
  {
    const Letter a{1}, b{2}, c{3};
    MomentState s1 = semicircle_state(0.3, degree, a);
    MomentState s2 = free_join(s1, semicircle_state(0.0, degree, b), degree);
    MomentState s3 = free_join(s2, semicircle_state(1.0, degree, c), degree);
    setups.push_back({GeneratorSpec::brownian({a}), s1, {a}});
    setups.push_back({GeneratorSpec::brownian({a, b}), s2, {a, b}});
    setups.push_back({GeneratorSpec::brownian({a, b, c}), s3, {a, b, c}});
  }
  {
    const Letter p{1, LetterKind::projection, 1}, q{2, LetterKind::projection, 0}, r{3, LetterKind::projection, 2};
    // nested diagonal projections on [0,1]
    auto s2 = commuting_state({p, q}, {{1.0, 1.0}, {1.0, 0.0}, {0.0, 0.0}}, {0.3, 0.2, 0.5}, degree);
    auto s3 = commuting_state({p, q, r}, {{1.0, 1.0, 1.0}, {1.0, 0.0, 1.0}, {1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},
                              {0.2, 0.3, 0.1, 0.4}, degree);
    setups.push_back({GeneratorSpec::liberation(1), s2, {p, q}});
    setups.push_back({GeneratorSpec::liberation(2), s3, {p, q, r}});
  }
  const std::size_t per_setup[] = {10, 10, 10, 10, 10};
  for (std::size_t i = 0; i < setups.size(); ++i) {
    const auto& su = setups[i];
    const auto traj = evolve_moments(su.g, su.s0, T, steps);
    const bool graded = su.g.kind == GeneratorSpec::Kind::liberation;
    std::uniform_int_distribution<std::size_t> pick_s(steps / 4, steps);
    for (std::size_t k = 0; k < per_setup[i]; ++k) {
      auto p = testutil::random_poly<cplx>(rng, su.letters, degree, 6, true);
      if (graded) p = reduce_with_relations(p, su.s0.relations());
      const double s = traj.times()[pick_s(rng)];
      PolyPath path;
      try {
        path = graded ? backward_solve_graded(su.g, traj, s, p) : backward_solve(su.g, traj, s, p);
      } catch (const std::exception& e) {
        throw Error("setup " + std::to_string(i) + ": " + e.what());
      }
      worst = std::max(worst, duality_residual(traj, path, p));
      ++count;
    }
  }
  const double secs = seconds_since(t0);
  return {count == 50 && worst <= kDualityTol && secs <= kDualitySeconds,
          std::to_string(count) + " polynomials, max residual " + fmt(worst) + " (tol " + fmt(kDualityTol) + "), " +
              fmt(secs) + " s"};
}

nlohmann::json two_atom() { return {{"type", "atoms"}, {"positions", {-1.0, 1.0}}, {"weights", {0.5, 0.5}}}; }

// 2. Fisher bounds and monotonicity on 20 sample times
Outcome fisher_bounds() {
  std::vector<double> times;
  for (int k = 0; k < 20; ++k) times.push_back(0.05 * std::pow(100.0, k / 19.0));
  const nlohmann::json laws[] = {{{"type", "point_mass"}}, two_atom(), {{"type", "uniform"}, {"lo", -1.0}, {"hi", 1.0}}};
  bool pass = true;
  std::string detail;
  for (const auto& law : laws) {
    FisherParams p;
    p.law = law;
    p.times = times;
    p.subintervals = 0;
    p.relative_tolerance = kFisherRelTol;
    const auto r = run_fisher(p);
    double worst = 0.0;
    for (const auto& row : r.rows) {
      worst = std::max({worst, (row.lower - row.phi) / row.lower, (row.phi - row.upper) / row.upper});
    }
    pass = pass && r.bounds_pass && r.monotone_pass;
    detail += law["type"].get<std::string>() + ": worst bound excess " + fmt(worst) +
              (r.monotone_pass ? ", monotone; " : ", NOT monotone; ");
  }
  return {pass, detail + "tol " + fmt(kFisherRelTol) + " relative"};
}

// 3. Φ*(X_t) − Φ*(X_s) − ∫_t^s ‖∂ξ_u‖² du ≥ −tol, equality for the semicircular family
Outcome fisher_gap() {
  const auto t0 = std::chrono::steady_clock::now();
  const nlohmann::json laws[] = {{{"type", "point_mass"}},
                                 two_atom(),
                                 {{"type", "uniform"}, {"lo", -1.0}, {"hi", 1.0}},
                                 {{"type", "semicircle"}, {"variance", 1.0}}};
  bool pass = true;
  std::string detail;
  for (const auto& law : laws) {
    FisherParams p;
    p.law = law;
    p.times = {0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
    p.subintervals = 40;
    p.gap_tolerance = kGapTol;
    p.relative_tolerance = kFisherRelTol;
    p.bounds = false;
    const auto r = run_fisher(p);
    double lo = INFINITY, rel = 0.0;
    for (const auto& iv : r.intervals) {
      lo = std::min(lo, iv.gap);
      rel = std::max(rel, std::abs(iv.gap) / std::abs(iv.phi_drop));
    }
    pass = pass && r.gap_pass && r.equality_pass;
    detail += law["type"].get<std::string>() + ": min gap " + fmt(lo);
    if (r.semicircular) detail += ", max |gap|/drop " + fmt(rel);
    detail += "; ";
  }
  const double secs = seconds_since(t0);
  pass = pass && secs <= kConjSeconds;
  return {pass, detail + fmt(secs) + " s"};
}

// 4–6 share one reversal run
const ReverseResult& reversal() {
  static const ReverseResult r = run_reverse(ReverseParams{}, 4242, threads());
  return r;
}

Outcome marginals() {
  const auto& r = reversal();
  double worst = 0.0;
  std::size_t failed = 0;
  for (const auto& m : r.marginals) {
    worst = std::max(worst, std::abs(m.reversed.mean - m.forward.mean));
    failed += m.pass ? 0 : 1;
  }
  return {r.marginals_pass, std::to_string(r.marginals.size()) + " (s, degree) pairs, max |Δ| " + fmt(worst) + ", " +
                                std::to_string(failed) + " outside max(3 SE, 0.02)"};
}

Outcome levy() {
  const auto& r = reversal();
  return {r.levy_pass && r.negative_pass,
          "martingale z " + fmt(r.levy.martingale.worst_z) + ", fourth-moment exponent " +
              fmt(r.levy.fourth_moment.value) + ", covariance z " + fmt(r.levy.covariance.worst_z) +
              "; +ξ̄ control martingale z " + fmt(r.negative.martingale.worst_z) + " (needs ≥ 5)"};
}

Outcome identity() {
  const auto& r = reversal();
  std::string detail;
  for (const auto& f : r.fits) {
    detail += f.biprocess + ": order " + fmt(f.order) + ", terminal " + fmt(f.terminal) + "; ";
  }
  return {r.identity_pass, detail + "needs order ≥ 0.4, terminal ≤ 0.05"};
}

// 7. isometry, quadratic variation and sandwiched quadratic variation
Outcome isometry_qv() {
  bool pass = true;
  std::string detail;
  const Letter x{1};
  {
    const std::size_t N = 512, steps = 64, trials = 6;
    const double dt = 1.0 / steps;
    const BiPolyD u = tensor(letter_poly<cplx>(x), NCPolyD::unit());
    std::vector<double> lhs(trials), rhs(trials);
    parallel_trials(trials, threads(), [&](std::size_t t) {
      auto rng = trial_rng(7001, t);
      ItoIntegral integral(N);
      Mat s = zeros(N);
      for (std::size_t k = 0; k < steps; ++k) {
        const Mat ds = gue_increment(N, dt, rng);
        integral.add(u, {{x, s}}, dt * k, dt * k, dt * (k + 1), ds);
        s += ds;
      }
      lhs[t] = ntr_product(integral.value().adjoint(), integral.value()).real();
      rhs[t] = integral.isometry_rhs();
    });
    const double l = mean_se(lhs).mean, r = mean_se(rhs).mean;
    const double rel = std::abs(l - r) / r;
    pass = pass && rel <= kIsometryRelTol;
    detail += "isometry rel err " + fmt(rel) + " at N=512; ";
  }
  {
    auto rng = trial_rng(7002, 0);
    const auto path = euler_forward(GeneratorSpec::brownian({x}), {zeros(64)}, 1.0, 1600, rng);
    const double qv = ntr(quadratic_variation(path, "X1", "X1")).real();
    pass = pass && std::abs(qv - 1.0) <= kQvRelTol;
    detail += "QV " + fmt(qv) + " at 1600 steps; ";
  }
  {
    const std::size_t N = 64, trials = 20;
    Mat b = diagonal_projection(N, 16), d = diagonal_projection(N, 40, 10);
    b.diagonal().array() += 0.5;
    const double expect = (ntr(b) * ntr(d)).real();
    std::vector<double> v(trials);
    for (std::size_t t = 0; t < trials; ++t) {
      auto rng = trial_rng(7003, t);
      const auto path = euler_forward(GeneratorSpec::brownian({x}), {zeros(N)}, 1.0, 200, rng);
      v[t] = sandwiched_qv(path, "X1", b, d).real();
    }
    const auto m = mean_se(v);
    pass = pass && within(m, expect);
    detail += "sandwiched QV " + fmt(m.mean) + " ± " + fmt(m.se) + " vs " + fmt(expect);
  }
  return {pass, detail};
}

// 8. unitary Brownian motion and liberation
Outcome liberation_mc() {
  bool pass = true;
  std::string detail;
  {
    const std::size_t N = 128, trials = 8;
    UnitaryOptions opt;
    opt.record_every = 5;
    std::vector<MatrixPath> paths(trials);
    parallel_trials(trials, threads(), [&](std::size_t t) {
      auto rng = trial_rng(8001, t);
      paths[t] = free_unitary_bm(N, 3.0, 150, rng, opt);
    });
    double worst = 0.0;
    bool ok = true;
    for (std::size_t k = 0; k < paths[0].times.size(); ++k) {
      std::vector<double> re;
      for (const auto& p : paths) re.push_back(ntr(p.frames[0][k]).real());
      const auto m = mean_se(re);
      const double e = std::exp(-paths[0].times[k] / 2);
      worst = std::max(worst, std::abs(m.mean - e));
      ok = ok && within(m, e, kUnitaryFloor);
    }
    pass = pass && ok;
    detail += "max |tr U_t − e^{−t/2}| " + fmt(worst) + " for t ≤ 3; ";
  }
  {
    const double a = 0.4, b = 0.3;
    const std::size_t N = 120, trials = 8, steps = 400;
    const double T = 8.0;
    LiberationOptions opt;
    opt.unitary.record_every = 25;
    std::vector<MatrixPath> paths(trials);
    parallel_trials(trials, threads(), [&](std::size_t t) {
      auto rng = trial_rng(8002, t);
      paths[t] = liberation_traj(a, b, N, T, steps, rng, opt);
    });
    const Letter pl{1, LetterKind::projection, 1}, ql{2, LetterKind::projection, 0};
    auto s0 = commuting_state({pl, ql}, {{1.0, 1.0}, {1.0, 0.0}, {0.0, 0.0}}, {b, a - b, 1 - a}, 4);
    const auto ode = evolve_moments(GeneratorSpec::liberation(1), s0, T, 800);
    double worst_z = 0.0, at_end = 0.0;
    for (std::size_t k = 0; k < paths[0].times.size(); ++k) {
      std::vector<double> v;
      for (const auto& p : paths) v.push_back(ntr_product(p.frames[1][k], p.frames[0][k]).real());
      const auto m = mean_se(v);
      const double t = paths[0].times[k];
      const double target = ode.moment(ode.index_of(t), {ql, pl, ql}).real();
      if (t <= 3.0 + 1e-9) {
        worst_z = std::max(worst_z, std::abs(m.mean - target) / m.se);
        pass = pass && within(m, target);
      }
      at_end = m.mean;
    }
    const bool free_end = std::abs(at_end - a * b) <= kFreenessTol;
    pass = pass && free_end;
    detail += "τ(qpq) ODE vs MC worst z " + fmt(worst_z) + " for t ≤ 3; τ(qpq)(8) " + fmt(at_end) + " vs τ(p)τ(q) " +
              fmt(a * b);
  }
  return {pass, detail};
}

// 9. vanishing one-sided derivative of F̄_T at 0
Outcome liberation_derivative() {
  const auto r = run_liberation(LiberationParams{}, 9001, threads());
  std::string detail;
  for (const auto& s : r.symbolic) detail += s.term + " → " + s.normal_form + "; ";
  detail += "F̄′(0) fit " + fmt(r.slope.mean) + " ± " + fmt(r.slope.se);
  if (r.trivial) detail += " (r_T = 0)";
  return {r.pass(), detail};
}

// 10. byte-identical outputs on repeated runs, independent of the thread count
Outcome determinism() {
  auto run = [](const nlohmann::json& j, unsigned th) {
    auto c = parse_run_config(j);
    c.threads = th;
    return run_command(c).files;
  };
  const nlohmann::json configs[] = {
      {{"command", "moments"}, {"seed", 3}, {"moments", {{"degree", 6}, {"steps", 100}}}},
      {{"command", "reverse"},
       {"seed", 3},
       {"reverse",
        {{"N", 24}, {"steps", 100}, {"trials", 6}, {"times", {0.5}}, {"levy_points", 5},
         {"identity", {{"N", 8}, {"trials", 2}, {"meshes", {50, 100}}}}}}},
      {{"command", "fisher"}, {"fisher", {{"times", {0.5, 1.0}}, {"n", 801}, {"subintervals", 2}}}},
      {{"command", "liberation"}, {"seed", 3}, {"liberation", {{"N", 20}, {"steps", 40}, {"trials", 3}, {"window", 8}}}},
  };
  bool pass = true;
  std::size_t files = 0;
  for (const auto& j : configs) {
    const auto a = run(j, 1), b = run(j, 1), c = run(j, 3);
    pass = pass && a == b && a == c;
    files += a.size();
  }
  return {pass, std::to_string(files) + " output files compared across 3 runs (1, 1 and 3 threads)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"duality invariant", duality},
      {"Fisher bounds and monotonicity", fisher_bounds},
      {"conjugate-variable inequality", fisher_gap},
      {"time-reversal marginals", marginals},
      {"free Lévy verification of the reversed noise", levy},
      {"reversal stochastic-integral identity", identity},
      {"Ito isometry and quadratic variation", isometry_qv},
      {"liberation", liberation_mc},
      {"liberated projections derivative", liberation_derivative},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %2d %s  %s [%s s]: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[k].first,
                fmt(seconds_since(t0)).c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
