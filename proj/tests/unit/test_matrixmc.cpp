#include <cmath>
#include <sstream>

#include "doctest.h"
#include "freesde/error.hpp"
#include "freesde/matrixmc.hpp"

using namespace freesde;

namespace {

const Letter X{1};
const Letter X2{2};

Mat zeros(std::size_t N) { return Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N)); }

NCPolyD xpow(unsigned k, Letter l = X) { return word_poly<cplx>(Word(k, l)); }

template <class F>
MeanSe over_trials(std::size_t trials, std::uint64_t seed, F f) {
  std::vector<double> xs(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    auto rng = trial_rng(seed, t);
    xs[t] = f(rng);
  }
  return mean_se(xs);
}

bool within(const MeanSe& m, double target, double floor = 0.0) {
  return std::abs(m.mean - target) <= std::max(3 * m.se, floor);
}

// Forward S (X_0 = 0, Q = 0) with the constructed reversed noise at the given forward times.
struct ReversalRun {
  std::vector<double> w;          // recorded forward times, increasing, last = T
  std::vector<Mat> x, a, a_neg;
};

ReversalRun reversal_run(std::size_t N, double T, std::size_t steps, std::size_t every, Rng& rng) {
  ReversalRun r;
  const double dt = T / static_cast<double>(steps);
  Mat s = zeros(N), prev = zeros(N);
  ReversedNoise good(N, 0.0), bad(N, 0.0, -1.0);
  for (std::size_t k = 0; k < steps; ++k) {
    add_gue_increment(s, dt, rng);
    const double w0 = dt * static_cast<double>(k), w1 = dt * static_cast<double>(k + 1);
    good.step(w0, w1, prev, s, s);
    bad.step(w0, w1, prev, s, s);
    prev = s;
    if ((k + 1) % every == 0) {
      r.w.push_back(w1);
      r.x.push_back(s);
      r.a.push_back(good.A());
      r.a_neg.push_back(bad.A());
    }
  }
  return r;
}

// reversed times s_k = T − w in increasing order with S̄_s = A(T−s) − A(T) and past observable X̄_s
LevyTrial reversed_trial(const ReversalRun& r, bool negative) {
  const auto& a = negative ? r.a_neg : r.a;
  LevyTrial t;
  const double T = r.w.back();
  for (std::size_t k = r.w.size(); k-- > 0;) {
    t.times.push_back(T - r.w[k]);
    t.z.push_back(a[k] - a.back());
    t.past.push_back({r.x[k]});
  }
  return t;
}

}  // namespace

TEST_CASE("trial seeds and parallel trials are deterministic") {
  CHECK(trial_seed(7, 0) == trial_seed(7, 0));
  CHECK(trial_seed(7, 0) != trial_seed(7, 1));
  CHECK(trial_seed(7, 0) != trial_seed(8, 0));
  auto run = [](unsigned threads) {
    std::vector<double> out(9);
    parallel_trials(out.size(), threads, [&](std::size_t t) {
      auto rng = trial_rng(3, t);
      out[t] = ntr(gue_increment(16, 0.1, rng)).real();
    });
    return out;
  };
  CHECK(run(1) == run(3));
  CHECK_THROWS_AS(parallel_trials(4, 2, [](std::size_t t) { if (t == 2) throw Error("boom"); }), Error);
}

TEST_CASE("gue_increment") {
  const double dt = 0.01;
  auto m2 = over_trials(200, 11, [&](Rng& rng) {
    Mat d = gue_increment(32, dt, rng);
    CHECK(hermitian_defect(d) == 0.0);
    return ntr_product(d, d).real();
  });
  CHECK(within(m2, dt));
  auto m1 = over_trials(200, 12, [&](Rng& rng) { return ntr(gue_increment(32, dt, rng)).real(); });
  CHECK(within(m1, 0.0));
  Rng rng(5);
  Mat d = gue_increment(512, dt, rng);
  Mat d2 = d * d;
  CHECK(std::abs(ntr_product(d2, d2).real() - 2 * dt * dt) <= 0.05 * 2 * dt * dt);
  CHECK_THROWS_AS(gue_increment(4, 0.0, rng), Error);
}

TEST_CASE("eval_matrix binds letters and unitary adjoints") {
  const Letter U{3, LetterKind::unitary, 1};
  Rng rng(1);
  Mat h = gue_increment(8, 1.0, rng);
  Mat u = expi(h);
  Bindings b{{X, h}, {U, u}};
  NCPolyD p = word_poly<cplx>({X, U}, cplx(2)) + word_poly<cplx>({adjoint(U), U}) + NCPolyD::unit(cplx(0, 1));
  Mat expect = 2.0 * h * u + u.adjoint() * u + cplx(0, 1) * Mat::Identity(8, 8);
  CHECK((eval_matrix(p, b, 8) - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(eval_matrix(xpow(1, X2), b, 8), Error);
}

TEST_CASE("euler_forward: semicircle moments, freeness, invariants") {
  const std::size_t N = 128;
  auto g = GeneratorSpec::brownian({X, X2});
  std::vector<double> m2, m4, mixed;
  for (std::size_t t = 0; t < 20; ++t) {
    auto rng = trial_rng(21, t);
    auto path = euler_forward(g, {zeros(N), zeros(N)}, 1.0, 20, rng);
    for (const auto& f : path.frames[0]) CHECK(hermitian_defect(f) <= 1e-12);
    const Mat& a = path.frames[0].back();
    const Mat& b = path.frames[1].back();
    const Mat a2 = a * a;
    m2.push_back(ntr(a2).real());
    m4.push_back(ntr_product(a2, a2).real());
    const Mat ab = a * b;
    mixed.push_back(ntr_product(ab, ab).real());
  }
  // finite-N exact values: E tr(X²) = T, E tr(X⁴) = (2 + 1/N²)T², E tr(XYXY) = T²/N²
  CHECK(within(mean_se(m2), 1.0));
  CHECK(within(mean_se(m4), 2.0 + 1.0 / (N * N)));
  CHECK(within(mean_se(mixed), 1.0 / (N * N)));
}

TEST_CASE("euler_forward with drift follows the moment ODE") {
  auto g = GeneratorSpec::brownian({X});
  g.drifts = {Drift{xpow(1) * cplx(-1.0), {}, 0, 0}};
  const double T = 1.0;
  auto m = over_trials(10, 31, [&](Rng& rng) {
    auto path = euler_forward(g, {zeros(96)}, T, 200, rng);
    const Mat& x = path.frames[0].back();
    return ntr_product(x, x).real();
  });
  auto traj = evolve_moments(g, semicircle_state(0.0, 4), T, 200);
  const double ode = traj.moment(traj.times().size() - 1, Word(2, X)).real();
  CHECK(std::abs(ode - 0.5 * (1 - std::exp(-2 * T))) < 1e-8);
  // Euler bias O(dt) on top of the MC bars
  CHECK(std::abs(m.mean - ode) <= 3 * m.se + 2 * T / 200);

  auto bad = GeneratorSpec::brownian({X});
  bad.drifts = {Drift{xpow(3) * cplx(50.0), {}, 0, 0}};
  Rng rng(1);
  CHECK_THROWS_AS(euler_forward(bad, {zeros(8)}, 1.0, 50, rng), Error);
  CHECK_THROWS_AS(euler_forward(GeneratorSpec::liberation(1), {zeros(8)}, 1.0, 5, rng), ConfigError);
}

TEST_CASE("free unitary Brownian motion") {
  const std::size_t N = 64;
  const double T = 2.0;
  const Letter U{3, LetterKind::unitary, 1};
  auto lib = GeneratorSpec::liberation(1);
  auto traj = evolve_moments(lib, commuting_state({U}, {{1.0}}, {1.0}, 4), T, 200);
  const auto last = traj.times().size() - 1;
  const double u1 = traj.moment(last, {U}).real();
  const double u2 = traj.moment(last, {U, U}).real();
  CHECK(std::abs(u1 - std::exp(-T / 2)) < 1e-8);
  for (auto mode : {UnitaryStep::exponential, UnitaryStep::euler_polar}) {
    UnitaryOptions opt;
    opt.step = mode;
    std::vector<double> t1, t2;
    for (std::size_t t = 0; t < 6; ++t) {
      auto rng = trial_rng(41, t);
      auto path = free_unitary_bm(N, T, 100, rng, opt);
      for (const auto& u : path.frames[0]) CHECK(unitary_defect(u) <= 1e-10);
      const Mat& u = path.frames[0].back();
      t1.push_back(ntr(u).real());
      t2.push_back(ntr_product(u, u).real());
      CHECK(std::abs(ntr_product(u, u.adjoint()) - 1.0) < 1e-10);
    }
    // step bias O(dt) and finite-N O(1/N²) ride on top of the bars
    CHECK(within(mean_se(t1), u1, 0.01));
    CHECK(within(mean_se(t2), u2, 0.01));
  }
}

TEST_CASE("liberation trajectory") {
  const std::size_t N = 100;
  const double a = 0.3, b = 0.4;
  const Letter P{3, LetterKind::projection, 1}, Q{4, LetterKind::projection, 0};
  auto lib = GeneratorSpec::liberation(1);
  // nested start: τ(qpq)(0) = min(a, b)
  auto s0 = commuting_state({P, Q}, {{1.0, 1.0}, {0.0, 1.0}, {0.0, 0.0}}, {a, b - a, 1 - b}, 6);
  auto traj = evolve_moments(lib, s0, 1.0, 100);
  const Word qpq{Q, P, Q};
  const NCPolyD slope = apply_generator(lib, s0, word_poly<cplx>(qpq));
  double predicted = 0;
  for (const auto& [k, c] : slope.terms()) predicted += (c * s0.moment(k[0])).real();
  CHECK(predicted == doctest::Approx(-(a - a * b)));

  std::vector<double> end, rate;
  for (std::size_t t = 0; t < 8; ++t) {
    auto rng = trial_rng(51, t);
    auto path = liberation_traj(a, b, N, 1.0, 100, rng);
    for (const auto& p : path.frames[0]) CHECK(std::abs(ntr(p).real() - a) < 1e-12);
    const Mat& q = path.frames[1][0];
    end.push_back(ntr_product(q, path.frames[0].back()).real());
    rate.push_back((ntr_product(q, path.frames[0][1]).real() - a) / (path.times[1] - path.times[0]));
  }
  const double ode = traj.moment(traj.times().size() - 1, qpq).real();
  CHECK(ode == doctest::Approx(a * b + (a - a * b) * std::exp(-1.0)).epsilon(1e-6));
  CHECK(within(mean_se(end), ode, 2e-3));
  // the first step carries an O(dt) curvature bias
  CHECK(within(mean_se(rate), predicted, 0.01 * 100 * std::abs(predicted)));
  Rng rng(1);
  CHECK_THROWS_AS(liberation_traj(0.0, 0.5, 8, 1.0, 2, rng), ConfigError);
}

TEST_CASE("liberated projections become free at large t") {
  std::vector<double> end;
  for (std::size_t t = 0; t < 4; ++t) {
    auto rng = trial_rng(52, t);
    UnitaryOptions u;
    u.record_every = 400;
    auto path = liberation_traj(0.5, 0.5, 64, 8.0, 400, rng, {u});
    end.push_back(ntr_product(path.frames[1][0], path.frames[0].back()).real());
  }
  CHECK(within(mean_se(end), 0.25, 0.01));
}

TEST_CASE("stochastic integrals") {
  const std::size_t N = 48;
  auto g = GeneratorSpec::brownian({X});
  EulerOptions opt;
  opt.record_noise = true;
  Rng rng(61);
  auto path = euler_forward(g, {zeros(N)}, 1.0, 40, rng, opt);
  std::vector<std::size_t> left(40);
  for (std::size_t k = 0; k < left.size(); ++k) left[k] = k;
  const BiPolyD one = BiPolyD::unit();
  Mat st = stochastic_integral(one, path, "S1", {}, left);
  CHECK((st - path.frame("S1", 40)).cwiseAbs().maxCoeff() < 1e-12);
  auto future = left;
  future[7] = 8;
  CHECK_THROWS_AS(stochastic_integral(tensor(xpow(1), NCPolyD::unit()), path, "S1", {{X, "X1"}}, future),
                  AdaptednessError);
  ItoIntegral direct(N);
  CHECK_THROWS_AS(direct.add(one, {}, 0.5, 0.4, 0.5, zeros(N)), AdaptednessError);

  // isometry and martingale property for U = X⊗X over many short paths
  const BiPolyD u = tensor(xpow(1), xpow(1));
  std::vector<double> lhs, rhs, mart;
  for (std::size_t t = 0; t < 40; ++t) {
    auto r = trial_rng(62, t);
    auto p = euler_forward(g, {zeros(32)}, 1.0, 16, r, opt);
    ItoIntegral I(32);
    for (std::size_t k = 0; k < 16; ++k) {
      I.add(u, {{X, p.frame("X1", k)}}, p.times[k], p.times[k], p.times[k + 1], p.frame("S1", k + 1) - p.frame("S1", k));
      if (k == 7) mart.push_back(ntr_product(p.frame("S1", 16) - p.frame("S1", 8), I.value()).real());
    }
    lhs.push_back(ntr_product(I.value().adjoint(), I.value()).real());
    rhs.push_back(I.isometry_rhs());
  }
  const auto l = mean_se(lhs), r = mean_se(rhs);
  CHECK(std::abs(l.mean - r.mean) <= 3 * std::hypot(l.se, r.se));
  CHECK(within(mean_se(mart), 0.0));
}

TEST_CASE("quadratic variation") {
  const std::size_t N = 64;
  EulerOptions opt;
  opt.record_noise = true;
  Rng rng(71);
  auto path = euler_forward(GeneratorSpec::brownian({X, X2}), {zeros(N), zeros(N)}, 1.0, 256, rng, opt);
  auto seq = qv_refinement(path, "S1", "S1", 5);
  REQUIRE(seq.size() == 5);
  CHECK(seq.front().mesh == doctest::Approx(16.0 / 256));
  CHECK(seq.back().mesh == doctest::Approx(1.0 / 256));
  CHECK(std::abs(seq.back().trace.real() - 1.0) < 0.02);
  CHECK(std::abs(ntr(quadratic_variation(path, "S1", "S1")).real() - seq.back().trace.real()) < 1e-10);
  CHECK(std::abs(ntr(quadratic_variation(path, "S1", "S2"))) < 0.02);
  Mat b = Mat::Zero(N, N), d = Mat::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    b(i, i) = i < N / 4 ? 1.0 : 0.0;
    d(i, i) = 1.0 + 0.5 * std::sin(double(i));
  }
  const double expect = ntr(b).real() * ntr(d).real();
  CHECK(std::abs(sandwiched_qv(path, "S1", b, d).real() - expect) < 0.05 * expect);
}

TEST_CASE("matrix δ* agrees with the symbolic conjugate formula") {
  const std::size_t N = 400;
  const double t = 0.8;
  Rng rng(81);
  Mat x = gue_increment(N, t, rng);
  const BiPolyD u = tensor(xpow(2), xpow(1)) + tensor(xpow(1), NCPolyD::unit());
  auto state = semicircle_state(t, 8);
  const NCPolyD sym = voiculescu_dstar(u, xpow(1) * cplx(1 / t), Derivation::free_diff(X), state);
  const Mat num = matrix_dstar(u, X, {{X, x}}, x / t);
  // finite-N traces replace τ: agreement to O(1/N)
  CHECK((num - eval_matrix(sym, {{X, x}}, N)).cwiseAbs().maxCoeff() < 0.05);
  // δ*(X⊗1) = X²/t − 1 exactly with tr(1) = 1
  const Mat e = matrix_dstar(tensor(xpow(1), NCPolyD::unit()), X, {{X, x}}, x / t);
  CHECK((e - (x * x / t - Mat::Identity(N, N))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("reversed_euler reproduces the forward marginals") {
  const std::size_t N = 64;
  const double T = 1.0;
  auto g = GeneratorSpec::brownian({X});
  std::vector<double> fwd_m2, rev_m2, rev_m4;
  for (std::size_t t = 0; t < 8; ++t) {
    auto rng = trial_rng(91, t);
    auto f = euler_forward(g, {zeros(N)}, T, 100, rng);
    auto r = reversed_euler(g, ConjugateLaw{}, T, 100, {f.frames[0].back()}, rng);
    CHECK(r.times.back() == doctest::Approx(T - 0.01));
    // s = 0.5
    const Mat& x = r.frames[0][50];
    const Mat x2 = x * x;
    rev_m2.push_back(ntr(x2).real());
    rev_m4.push_back(ntr_product(x2, x2).real());
  }
  CHECK(within(mean_se(rev_m2), 0.5, 0.02));
  CHECK(within(mean_se(rev_m4), 2 * 0.25, 0.02));
}

TEST_CASE("reversed_euler with a spectral drift") {
  FlowOptions fo;
  fo.n = 801;
  auto spec = forward_run(InitialLaw::uniform(-1, 1), 0.5, 50, fo);
  std::vector<double> m2;
  for (std::size_t t = 0; t < 6; ++t) {
    auto rng = trial_rng(92, t);
    // X_T: uniform diagonal plus an independent GUE of variance T
    Mat x = gue_increment(64, 0.5, rng);
    for (Eigen::Index i = 0; i < 64; ++i) x(i, i) += -1.0 + 2.0 * (i + 0.5) / 64;
    auto r = reversed_euler(spec, x, rng);
    const Mat& y = r.frames[0][25];  // s = 0.25
    m2.push_back(ntr_product(y, y).real());
  }
  CHECK(within(mean_se(m2), 1.0 / 3 + 0.25, 0.03));
}

TEST_CASE("constructed reversed noise is a free Brownian motion; +ξ̄ control fails") {
  const std::size_t N = 48;
  std::vector<LevyStatistics> good, bad, fwd;
  for (std::size_t t = 0; t < 30; ++t) {
    auto rng = trial_rng(101, t);
    auto run = reversal_run(N, 1.0, 200, 20, rng);
    good.push_back(levy_statistics(reversed_trial(run, false)));
    bad.push_back(levy_statistics(reversed_trial(run, true)));
    LevyTrial f;
    f.times.push_back(0.0);
    f.z.push_back(zeros(N));
    f.past.push_back({zeros(N)});
    for (std::size_t k = 0; k + 1 < run.w.size(); ++k) {
      f.times.push_back(run.w[k]);
      f.z.push_back(run.x[k]);
      f.past.push_back({run.x[k]});
    }
    fwd.push_back(levy_statistics(f));
    // tr(ΔS̄²) ≈ Δt
    auto tr = reversed_trial(run, false);
    const Mat dz = tr.z[5] - tr.z[4];
    CHECK(std::abs(ntr_product(dz, dz).real() - 0.1) < 0.03);
  }
  auto rg = levy_test(good), rb = levy_test(bad), rf = levy_test(fwd);
  CHECK(rf.pass());
  CHECK(rg.pass());
  CHECK(rg.fourth_moment.value >= 1.4);
  CHECK_FALSE(rb.martingale.pass);
  CHECK(rb.martingale.worst_z >= 5);
  CHECK(rg.to_json()["pass"] == true);
}

TEST_CASE("reversal identity residual shrinks with the mesh") {
  const std::size_t N = 32;
  const double T = 1.0;
  const BiPolyD cases[] = {BiPolyD::unit(), tensor(xpow(1), NCPolyD::unit())};
  for (const auto& u : cases) {
    double res[2];
    for (int level = 0; level < 2; ++level) {
      const std::size_t fine = 800, stride = level == 0 ? 4 : 1;
      std::vector<double> rs;
      for (std::size_t t = 0; t < 3; ++t) {
        auto rng = trial_rng(111, t);
        const double dt = T / fine;
        Mat s = zeros(N), prev = zeros(N);
        ReversedNoise noise(N, 0.0);
        std::vector<Mat> xs{prev}, as{noise.A()};
        for (std::size_t k = 0; k < fine; ++k) {
          add_gue_increment(s, dt, rng);
          noise.step(dt * k, dt * (k + 1), prev, s, s);
          prev = s;
          xs.push_back(s);
          as.push_back(noise.A());
        }
        ReversalIdentity id(u, X, T, 0.2, 0.8, 0.0, N);
        for (std::size_t k = 0; k + stride <= fine; k += stride) {
          id.step(dt * k, dt * (k + stride), xs[k], xs[k + stride], xs[k + stride] - xs[k], as[k + stride] - as[k]);
        }
        rs.push_back(id.residual());
      }
      res[level] = mean_se(rs).mean;
    }
    CHECK(res[1] < res[0]);
    CHECK(res[1] < 0.05);
  }
}

TEST_CASE("wedge_projection") {
  const std::size_t N = 40;
  Mat a = diagonal_projection(N, 20), b = diagonal_projection(N, 15, 10);
  auto r = wedge_projection(a, a);
  CHECK(r.rank == 20);
  CHECK((r.p - a).cwiseAbs().maxCoeff() < 1e-10);
  auto m = wedge_projection(a, b);
  CHECK(m.rank == 10);
  CHECK((m.p - diagonal_projection(N, 10, 10)).cwiseAbs().maxCoeff() < 1e-10);
  // generic position with traces summing below one: trivial intersection
  Rng rng(121);
  Mat u = expi(gue_increment(N, 4.0, rng));
  Mat c = u * diagonal_projection(N, 12) * u.adjoint();
  symmetrize(c);
  auto z = wedge_projection(c, diagonal_projection(N, 16));
  CHECK(z.rank == 0);
  CHECK(z.p.cwiseAbs().maxCoeff() == 0.0);
  Mat notp = a * 0.5;
  CHECK_THROWS_AS(wedge_projection(notp, a), Error);
}

TEST_CASE("binary dump round trip and determinism") {
  auto g = GeneratorSpec::brownian({X});
  Rng r1(5), r2(5);
  auto p1 = euler_forward(g, {zeros(6)}, 1.0, 4, r1);
  auto p2 = euler_forward(g, {zeros(6)}, 1.0, 4, r2);
  std::ostringstream o1, o2;
  p1.write_binary(o1);
  p2.write_binary(o2);
  CHECK(o1.str() == o2.str());
  CHECK(o1.str().size() == 24 + 5 * 8 + 5 * 36 * 16);
  std::istringstream in(o1.str());
  auto back = MatrixPath::read_binary(in);
  CHECK(back.N == 6);
  CHECK(back.times == p1.times);
  CHECK(back.frames[0][3] == p1.frames[0][3]);
  std::istringstream cut(o1.str().substr(0, 30));
  CHECK_THROWS_AS(MatrixPath::read_binary(cut), ParseError);
}
