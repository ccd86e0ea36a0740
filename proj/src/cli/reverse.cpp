#include <cmath>
#include <numeric>

#include "freesde/cli.hpp"
#include "freesde/derivation.hpp"
#include "freesde/error.hpp"

namespace freesde {

namespace {

const Letter kX{1};

Mat zeros(std::size_t N) { return Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N)); }

// grid index of time t on a mesh of width dt
std::size_t grid_index(double t, double dt, const char* what) {
  const double k = t / dt;
  const auto i = static_cast<std::size_t>(std::llround(k));
  if (std::abs(k - static_cast<double>(i)) > 1e-6) {
    throw ConfigError(std::string(what) + " " + std::to_string(t) + " is not on the time grid");
  }
  return i;
}

// tr_N(x^d) for d = 1..D
std::vector<double> power_traces(const Mat& x, unsigned D) {
  std::vector<double> out;
  Mat p = x;
  for (unsigned d = 1; d <= D; ++d) {
    if (d > 1) p = (p * x).eval();
    out.push_back(ntr(p).real());
  }
  return out;
}

struct MarginalTrial {
  std::vector<std::vector<double>> forward, reversed;  // [time][degree−1]
  LevyStatistics good, bad;
};

MarginalTrial marginal_trial(const ReverseParams& p, std::uint64_t seed, std::size_t trial) {
  auto rng = trial_rng(seed, trial);
  const std::size_t N = p.N, K = p.steps;
  const double dt = p.T / static_cast<double>(K);
  const std::size_t levy_every = K / p.levy_points;

  std::vector<std::size_t> fwd_index, rev_index;
  for (double s : p.times) {
    rev_index.push_back(grid_index(s, dt, "reverse.times"));
    fwd_index.push_back(K - rev_index.back());
  }

  MarginalTrial out;
  out.forward.resize(p.times.size());
  Mat x = p.x0_variance > 0 ? gue_increment(N, p.x0_variance, rng) : zeros(N);
  Mat s = zeros(N), prev = x;
  // the +ξ̄ construction A₋ = S + J is recovered from A₊ = S − J as 2S − A₊
  ReversedNoise good(N, p.x0_variance);
  std::vector<Mat> xs, as, bs;
  for (std::size_t k = 0; k < K; ++k) {
    const Mat d = gue_increment(N, dt, rng);
    s += d;
    prev.swap(x);
    x = prev + d;
    const double w0 = dt * static_cast<double>(k), w1 = dt * static_cast<double>(k + 1);
    good.step(w0, w1, prev, x, s);
    for (std::size_t i = 0; i < fwd_index.size(); ++i) {
      if (fwd_index[i] == k + 1) out.forward[i] = power_traces(x, p.max_degree);
    }
    if ((k + 1) % levy_every == 0) {
      xs.push_back(x);
      as.push_back(good.A());
      bs.push_back(2.0 * s - good.A());
    }
  }

  // reversed times s = T − w, increasing; S̄_s = A(T−s) − A(T)
  for (int negative = 0; negative < 2; ++negative) {
    const auto& a = negative ? bs : as;
    LevyTrial lt;
    for (std::size_t k = xs.size(); k-- > 0;) {
      lt.times.push_back(p.T - dt * static_cast<double>((k + 1) * levy_every));
      lt.z.push_back(a[k] - a.back());
      lt.past.push_back({xs[k]});
    }
    (negative ? out.bad : out.good) = levy_statistics(lt);
  }

  std::size_t every = 0;
  for (auto i : rev_index) every = std::gcd(every, i);
  EulerOptions opt;
  opt.record_every = every;
  const auto rev = reversed_euler(GeneratorSpec::brownian({kX}), ConjugateLaw{ConjugateLaw::Kind::semicircular, p.x0_variance},
                                  p.T, K, {x}, rng, opt);
  for (auto i : rev_index) out.reversed.push_back(power_traces(rev.frames[0].at(i / every), p.max_degree));
  return out;
}

struct IdentityCase {
  std::string name;
  BiPolyD u;
};

std::vector<IdentityCase> identity_cases() {
  const NCPolyD x = letter_poly<cplx>(kX);
  // K_t^s(X²) = X² + (s−t) for Q = 0, so δ K_t^s(X²) = δ(X²)
  return {{"1⊗1", BiPolyD::unit()},
          {"X⊗1", tensor(x, NCPolyD::unit())},
          {"δK(X²)", free_diff(x * x, kX)}};
}

// residual[case][mesh] for one forward path at the finest mesh
std::vector<std::vector<double>> identity_trial(const ReverseParams& p, std::uint64_t seed, std::size_t trial) {
  auto rng = trial_rng(seed ^ 0x5eed1de7ULL, trial);
  const auto cases = identity_cases();
  const std::size_t N = p.identity_N, M = p.meshes.back();
  const double dt = p.T / static_cast<double>(M);
  struct Level {
    std::size_t stride;
    Mat x, s, a;
    std::vector<ReversalIdentity> ids;
  };
  Mat x = p.x0_variance > 0 ? gue_increment(N, p.x0_variance, rng) : zeros(N);
  Mat s = zeros(N), prev = x;
  ReversedNoise noise(N, p.x0_variance);
  std::vector<Level> levels;
  for (auto m : p.meshes) {
    Level l{M / m, x, s, noise.A(), {}};
    for (const auto& c : cases) {
      l.ids.emplace_back(c.u, kX, p.T, p.identity_u, p.identity_v, p.x0_variance, N);
    }
    levels.push_back(std::move(l));
  }
  for (std::size_t k = 0; k < M; ++k) {
    const Mat d = gue_increment(N, dt, rng);
    s += d;
    x += d;
    noise.step(dt * static_cast<double>(k), dt * static_cast<double>(k + 1), prev, x, s);
    prev = x;
    for (auto& l : levels) {
      if ((k + 1) % l.stride != 0) continue;
      const double w1 = dt * static_cast<double>(k + 1), w0 = w1 - dt * static_cast<double>(l.stride);
      const Mat ds = s - l.s, da = noise.A() - l.a;
      for (auto& id : l.ids) id.step(w0, w1, l.x, x, ds, da);
      l.x = x;
      l.s = s;
      l.a = noise.A();
    }
  }
  std::vector<std::vector<double>> out(cases.size(), std::vector<double>(levels.size()));
  for (std::size_t c = 0; c < cases.size(); ++c) {
    for (std::size_t m = 0; m < levels.size(); ++m) out[c][m] = levels[m].ids[c].residual();
  }
  return out;
}

// least-squares slope of log r against log h
double fitted_order(const std::vector<double>& h, const std::vector<double>& r) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    mx += std::log(h[i]);
    my += std::log(std::max(r[i], 1e-300));
  }
  mx /= static_cast<double>(h.size());
  my /= static_cast<double>(h.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double dx = std::log(h[i]) - mx;
    sxy += dx * (std::log(std::max(r[i], 1e-300)) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace

bool ReverseResult::pass() const {
  if (!marginals_pass || !identity_pass) return false;
  return negative_control ? negative.pass() : levy_pass && negative_pass;
}

ReverseResult run_reverse(const ReverseParams& p, std::uint64_t seed, unsigned threads) {
  ReverseResult r;
  r.negative_control = p.negative_control;

  std::vector<MarginalTrial> trials(p.trials);
  parallel_trials(p.trials, threads, [&](std::size_t t) { trials[t] = marginal_trial(p, seed, t); });

  r.marginals_pass = true;
  for (std::size_t i = 0; i < p.times.size(); ++i) {
    for (unsigned d = 1; d <= p.max_degree; ++d) {
      std::vector<double> rev, fwd, diff;
      for (const auto& t : trials) {
        rev.push_back(t.reversed[i][d - 1]);
        fwd.push_back(t.forward[i][d - 1]);
        diff.push_back(rev.back() - fwd.back());
      }
      const auto sd = mean_se(diff);
      MarginalRow row{p.times[i], d, mean_se(rev), mean_se(fwd), false};
      row.pass = std::abs(row.reversed.mean - row.forward.mean) <= std::max(3 * sd.se, p.marginal_floor);
      r.marginals_pass = r.marginals_pass && row.pass;
      r.marginals.push_back(row);
    }
  }

  std::vector<LevyStatistics> good, bad;
  for (auto& t : trials) {
    good.push_back(std::move(t.good));
    bad.push_back(std::move(t.bad));
  }
  r.levy = levy_test(good, p.z_bound, p.min_exponent);
  r.negative = levy_test(bad, p.z_bound, p.min_exponent);
  r.levy_pass = r.levy.pass();
  r.negative_pass = !r.negative.martingale.pass && r.negative.martingale.worst_z >= p.negative_z;

  r.identity_pass = true;
  if (p.identity) {
    std::vector<std::vector<std::vector<double>>> res(p.identity_trials);
    parallel_trials(p.identity_trials, threads, [&](std::size_t t) { res[t] = identity_trial(p, seed, t); });
    const auto cases = identity_cases();
    std::vector<double> h;
    for (auto m : p.meshes) h.push_back(p.T / static_cast<double>(m));
    for (std::size_t c = 0; c < cases.size(); ++c) {
      std::vector<double> means;
      for (std::size_t m = 0; m < p.meshes.size(); ++m) {
        std::vector<double> xs;
        for (const auto& t : res) xs.push_back(t[c][m]);
        r.identity.push_back({cases[c].name, p.meshes[m], mean_se(xs)});
        means.push_back(r.identity.back().residual.mean);
      }
      IdentityFit fit{cases[c].name, fitted_order(h, means), means.back(), false};
      fit.pass = fit.order >= p.min_order && fit.terminal <= p.max_terminal;
      r.identity_pass = r.identity_pass && fit.pass;
      r.fits.push_back(fit);
    }
  }
  return r;
}

}  // namespace freesde
