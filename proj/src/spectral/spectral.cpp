#include "freesde/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/gauss.hpp>

#include "freesde/error.hpp"
#include "freesde/text.hpp"

namespace freesde {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> trapezoid_weights(const Grid& g) {
  std::vector<double> w(g.n, g.h());
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}

std::string z_text(cplx z) { return "z=" + format_double(z.real()) + "+" + format_double(z.imag()) + "i"; }

}  // namespace

std::vector<double> Grid::points() const {
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = x(i);
  return xs;
}

SpectralDensity::SpectralDensity(Grid grid, std::vector<double> values, double time, bool atomic_start)
    : grid_(grid), values_(std::move(values)), time_(time), atomic_start_(atomic_start) {
  if (values_.size() != grid_.n || grid_.n < 3) throw Error("density/grid size mismatch");
  for (auto& v : values_) v = std::max(v, 0.0);
  const double m = mass();
  if (!(m > 0)) throw Error("density has zero mass");
  for (auto& v : values_) v /= m;
}

double SpectralDensity::mass() const {
  const auto w = trapezoid_weights(grid_);
  return std::inner_product(w.begin(), w.end(), values_.begin(), 0.0);
}

double SpectralDensity::moment(unsigned k) const {
  const auto w = trapezoid_weights(grid_);
  double m = 0.0;
  for (std::size_t i = 0; i < grid_.n; ++i) m += w[i] * values_[i] * std::pow(grid_.x(i), k);
  return m;
}

std::vector<double> SpectralDensity::cdf() const {
  std::vector<double> f(grid_.n, 0.0);
  const double h = grid_.h();
  for (std::size_t i = 1; i < grid_.n; ++i) f[i] = f[i - 1] + 0.5 * h * (values_[i - 1] + values_[i]);
  return f;
}

double SpectralDensity::at(double x) const {
  const double u = (x - grid_.a) / grid_.h();
  if (u < 0 || u > static_cast<double>(grid_.n - 1)) return 0.0;
  const auto i = std::min(static_cast<std::size_t>(u), grid_.n - 2);
  const double f = u - static_cast<double>(i);
  return (1 - f) * values_[i] + f * values_[i + 1];
}

SpectralDensity SpectralDensity::resample(const Grid& g) const {
  std::vector<double> v(g.n);
  for (std::size_t i = 0; i < g.n; ++i) v[i] = at(g.x(i));
  return {g, v, time_, atomic_start_};
}

std::string SpectralDensity::to_csv(const std::vector<double>* xi) const {
  std::ostringstream out;
  out << (xi ? "x,p,xi\n" : "x,p\n");
  for (std::size_t i = 0; i < grid_.n; ++i) {
    out << format_double(grid_.x(i)) << ',' << format_double(values_[i]);
    if (xi) out << ',' << format_double((*xi)[i]);
    out << '\n';
  }
  return out.str();
}

InitialLaw InitialLaw::atoms(std::vector<double> positions, std::vector<double> weights) {
  if (positions.empty() || positions.size() != weights.size()) throw Error("atoms: bad sizes");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  InitialLaw l;
  l.kind_ = Kind::atoms;
  for (auto& w : weights) {
    if (w < 0) throw Error("atoms: negative weight");
    w /= total;
  }
  l.x_ = std::move(positions);
  l.w_ = std::move(weights);
  l.lo_ = *std::min_element(l.x_.begin(), l.x_.end());
  l.hi_ = *std::max_element(l.x_.begin(), l.x_.end());
  for (std::size_t i = 0; i < l.x_.size(); ++i) {
    l.mean_ += l.w_[i] * l.x_[i];
    l.var_ += l.w_[i] * l.x_[i] * l.x_[i];
  }
  l.var_ -= l.mean_ * l.mean_;
  return l;
}

InitialLaw InitialLaw::uniform(double lo, double hi) {
  if (!(hi > lo)) throw Error("uniform: empty interval");
  InitialLaw l;
  l.kind_ = Kind::uniform;
  l.lo_ = lo;
  l.hi_ = hi;
  l.mean_ = 0.5 * (lo + hi);
  l.var_ = (hi - lo) * (hi - lo) / 12.0;
  return l;
}

InitialLaw InitialLaw::semicircle(double mean, double variance) {
  if (variance < 0) throw Error("semicircle: negative variance");
  InitialLaw l;
  l.kind_ = Kind::semicircle;
  l.mean_ = mean;
  l.var_ = variance;
  l.lo_ = mean - 2 * std::sqrt(variance);
  l.hi_ = mean + 2 * std::sqrt(variance);
  return l;
}

InitialLaw InitialLaw::density(const SpectralDensity& p) {
  InitialLaw l;
  l.kind_ = Kind::density;
  l.x_ = p.grid().points();
  l.w_ = p.values();
  const auto& v = l.w_;
  std::size_t first = 0, last = v.size() - 1;
  while (first < last && v[first] == 0.0) ++first;
  while (last > first && v[last] == 0.0) --last;
  l.lo_ = l.x_[first > 0 ? first - 1 : 0];
  l.hi_ = l.x_[std::min(last + 1, v.size() - 1)];
  l.mean_ = p.moment(1);
  l.var_ = p.moment(2) - l.mean_ * l.mean_;
  return l;
}

bool InitialLaw::atomic() const { return kind_ == Kind::atoms || (kind_ == Kind::semicircle && var_ == 0.0); }

cplx InitialLaw::stieltjes(cplx z) const {
  switch (kind_) {
    case Kind::atoms: {
      cplx g{};
      for (std::size_t i = 0; i < x_.size(); ++i) g += w_[i] / (z - x_[i]);
      return g;
    }
    case Kind::uniform:
      return (std::log(z - lo_) - std::log(z - hi_)) / (hi_ - lo_);
    case Kind::semicircle: {
      const cplx w = z - mean_;
      if (var_ == 0.0) return 1.0 / w;
      const double r = 2 * std::sqrt(var_);
      return (w - std::sqrt(w - r) * std::sqrt(w + r)) / (2 * var_);
    }
    case Kind::density: {
      cplx g{};
      const double h = x_[1] - x_[0];
      cplx lprev = std::log(z - x_[0]);
      for (std::size_t j = 0; j + 1 < x_.size(); ++j) {
        const cplx lnext = std::log(z - x_[j + 1]);
        if (w_[j] != 0.0 || w_[j + 1] != 0.0) {
          const double s = (w_[j + 1] - w_[j]) / h;
          g += (w_[j] + s * (z - x_[j])) * (lprev - lnext) - s * h;
        }
        lprev = lnext;
      }
      return g;
    }
  }
  return {};
}

cplx InitialLaw::stieltjes_derivative(cplx z) const {
  switch (kind_) {
    case Kind::atoms: {
      cplx g{};
      for (std::size_t i = 0; i < x_.size(); ++i) g -= w_[i] / ((z - x_[i]) * (z - x_[i]));
      return g;
    }
    case Kind::uniform:
      return (1.0 / (z - lo_) - 1.0 / (z - hi_)) / (hi_ - lo_);
    case Kind::semicircle: {
      const cplx w = z - mean_;
      if (var_ == 0.0) return -1.0 / (w * w);
      const double r = 2 * std::sqrt(var_);
      return (1.0 - w / (std::sqrt(w - r) * std::sqrt(w + r))) / (2 * var_);
    }
    case Kind::density: {
      cplx g{};
      const double h = x_[1] - x_[0];
      for (std::size_t j = 0; j + 1 < x_.size(); ++j) {
        if (w_[j] == 0.0 && w_[j + 1] == 0.0) continue;
        const double s = (w_[j + 1] - w_[j]) / h;
        const cplx a = z - x_[j], b = z - x_[j + 1];
        g += s * (std::log(a) - std::log(b)) + (w_[j] + s * a) * (1.0 / a - 1.0 / b);
      }
      return g;
    }
  }
  return {};
}

double InitialLaw::mean() const { return mean_; }
double InitialLaw::second_moment() const { return var_ + mean_ * mean_; }
double InitialLaw::support_lo() const { return lo_; }
double InitialLaw::support_hi() const { return hi_; }

InitialLaw InitialLaw::dilate(double lambda) const {
  if (!(lambda > 0)) throw Error("dilation factor must be positive");
  switch (kind_) {
    case Kind::atoms: {
      auto xs = x_;
      for (auto& x : xs) x *= lambda;
      return atoms(xs, w_);
    }
    case Kind::uniform: return uniform(lo_ * lambda, hi_ * lambda);
    case Kind::semicircle: return semicircle(mean_ * lambda, var_ * lambda * lambda);
    case Kind::density: {
      Grid g{x_.front() * lambda, x_.back() * lambda, x_.size()};
      return density(SpectralDensity(g, w_));
    }
  }
  return *this;
}

SpectralDensity InitialLaw::sample(const Grid& g) const {
  if (atomic()) throw Error("atomic law has no density");
  std::vector<double> v(g.n);
  for (std::size_t i = 0; i < g.n; ++i) {
    const double x = g.x(i);
    switch (kind_) {
      case Kind::uniform: v[i] = (x >= lo_ && x <= hi_) ? 1.0 / (hi_ - lo_) : 0.0; break;
      case Kind::semicircle: {
        const double d = 4 * var_ - (x - mean_) * (x - mean_);
        v[i] = d > 0 ? std::sqrt(d) / (2 * kPi * var_) : 0.0;
        break;
      }
      case Kind::density: {
        const double h = x_[1] - x_[0];
        const double u = (x - x_.front()) / h;
        if (u < 0 || u > static_cast<double>(x_.size() - 1)) break;
        const auto j = std::min(static_cast<std::size_t>(u), x_.size() - 2);
        const double f = u - static_cast<double>(j);
        v[i] = (1 - f) * w_[j] + f * w_[j + 1];
        break;
      }
      case Kind::atoms: break;
    }
  }
  return {g, v, 0.0, false};
}

Grid flow_grid(const InitialLaw& law, double t, const FlowOptions& opt) {
  const double r = 2 * std::sqrt(std::max(t, 0.0));
  double lo = law.support_lo() - r, hi = law.support_hi() + r;
  const double pad = opt.pad * std::max(hi - lo, 1e-3);
  return {lo - pad, hi + pad, opt.n};
}

cplx subordination(const InitialLaw& law, double t, cplx z, cplx guess, std::size_t max_newton) {
  if (t == 0.0) return z;
  auto F = [&](cplx w) { return w + t * law.stieltjes(w) - z; };
  cplx w = guess.imag() > 0 ? guess : cplx(guess.real(), std::max(z.imag(), 1e-3));
  cplx f = F(w);
  const double tol = 1e-14 * (1.0 + std::abs(z));
  for (std::size_t it = 0; it < max_newton; ++it) {
    if (std::abs(f) <= tol) return w;
    const cplx step = -f / (1.0 + t * law.stieltjes_derivative(w));
    double lambda = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 50; ++halving, lambda *= 0.5) {
      const cplx cand = w + lambda * step;
      if (!(cand.imag() > 0)) continue;
      const cplx fc = F(cand);
      if (std::abs(fc) < std::abs(f) || std::abs(fc) <= tol) {
        w = cand;
        f = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (std::abs(f) <= 1e-10 * (1.0 + std::abs(z))) return w;
  throw ConvergenceError("subordination Newton failed at " + z_text(z));
}

namespace {

// G_t(x + iε) with homotopy in ε when continuation from the neighbour fails.
cplx solve_point(const InitialLaw& law, double t, double x, double eps, double scale, cplx& guess,
                 bool& have_guess, std::size_t max_newton) {
  const cplx z(x, eps);
  if (have_guess) {
    try {
      guess = subordination(law, t, z, guess, max_newton);
      return law.stieltjes(guess);
    } catch (const ConvergenceError&) {
    }
  }
  double e = scale;
  cplx w(x, e);
  while (true) {
    w = subordination(law, t, cplx(x, e), w, max_newton);
    if (e <= eps) break;
    e = std::max(eps, e * 0.25);
  }
  guess = w;
  have_guess = true;
  return law.stieltjes(w);
}

}  // namespace

FlowSlice heat_flow_slice(const InitialLaw& law, double t, const Grid& grid, const FlowOptions& opt) {
  if (t < 0) throw Error("negative flow time");
  if (t == 0.0) {
    auto p = law.sample(grid);
    return {SpectralDensity(grid, p.values(), 0.0, false), {}};
  }
  const double width = grid.b - grid.a;
  const double h = grid.h();
  std::vector<double> dens(grid.n), xi(grid.n);
  auto sweep = [&](double eps, std::vector<cplx>& g) {
    cplx guess{};
    bool have = false;
    g.resize(grid.n);
    for (std::size_t i = 0; i < grid.n; ++i) {
      g[i] = solve_point(law, t, grid.x(i), eps, width, guess, have, opt.max_newton);
    }
  };
  if (opt.eps_mode == EpsMode::boundary) {
    std::vector<cplx> g;
    sweep(1e-12 * width, g);
    for (std::size_t i = 0; i < grid.n; ++i) {
      dens[i] = -g[i].imag() / kPi;
      xi[i] = 2 * g[i].real();
    }
  } else {
    std::vector<cplx> g1, g2;
    sweep(4 * h, g1);
    sweep(8 * h, g2);
    for (std::size_t i = 0; i < grid.n; ++i) {
      const cplx g = 2.0 * g1[i] - g2[i];
      dens[i] = -g.imag() / kPi;
      xi[i] = 2 * g.real();
    }
  }
  return {SpectralDensity(grid, dens, t, law.atomic()), xi};
}

SpectralDensity free_heat_flow(const InitialLaw& law, double t, const FlowOptions& opt) {
  if (t == 0.0 && law.atomic()) throw Error("atomic law has no density at t = 0");
  return heat_flow_slice(law, t, flow_grid(law, t, opt), opt).density;
}

SpectralDensity free_heat_flow(const SpectralDensity& p0, double t, const FlowOptions& opt) {
  if (t == 0.0) return p0;
  return free_heat_flow(InitialLaw::density(p0), t, opt);
}

double ScoreFunction::at(double x) const {
  const double u = std::clamp((x - grid_.a) / grid_.h(), 0.0, static_cast<double>(grid_.n - 1));
  const auto i = std::min(static_cast<std::size_t>(u), grid_.n - 2);
  const double f = u - static_cast<double>(i);
  return (1 - f) * xi_[i] + f * xi_[i + 1];
}

double ScoreFunction::l2_norm(const SpectralDensity& p) const { return std::sqrt(fisher_info(p, *this)); }

double ScoreFunction::mean(const SpectralDensity& p) const {
  const auto w = trapezoid_weights(grid_);
  double m = 0.0;
  for (std::size_t i = 0; i < grid_.n; ++i) m += w[i] * xi_[i] * p[i];
  return m;
}

namespace {

std::vector<double> centered_derivative(const std::vector<double>& v, double h) {
  const auto n = v.size();
  std::vector<double> d(n);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2 * h);
  d[0] = (v[1] - v[0]) / h;
  d[n - 1] = (v[n - 1] - v[n - 2]) / h;
  return d;
}

}  // namespace

ScoreFunction score(const SpectralDensity& p) {
  if (p.atomic_start() && !(p.time() >= kScoreTimeFloor)) {
    throw Error("score needs t ≥ 0.01 for atomic starts (raw atomic inputs rejected)");
  }
  const auto& g = p.grid();
  const auto n = g.n;
  const double h = g.h();
  const auto w = trapezoid_weights(g);
  const auto& v = p.values();
  const auto dp = centered_derivative(v, h);
  // uniform grid: 1/(x_i − x_j) = inv[i − j]
  std::vector<double> inv(n, 0.0);
  for (std::size_t d = 1; d < n; ++d) inv[d] = 1.0 / (h * static_cast<double>(d));
  std::vector<double> xi(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double pi_ = v[i];
    double s = 0.0;
    for (std::size_t j = 0; j < i; ++j) s += w[j] * (v[j] - pi_) * inv[i - j];
    for (std::size_t j = i + 1; j < n; ++j) s -= w[j] * (v[j] - pi_) * inv[j - i];
    s -= w[i] * dp[i];
    if (pi_ != 0.0) {
      const double xi_i = g.x(i);
      const double left = std::max(xi_i - g.a, 0.5 * h), right = std::max(g.b - xi_i, 0.5 * h);
      s += pi_ * std::log(left / right);
    }
    xi[i] = 2 * s;
  }
  return {g, xi};
}

double fisher_info(const SpectralDensity& p, const ScoreFunction& xi) {
  const auto w = trapezoid_weights(p.grid());
  double f = 0.0;
  for (std::size_t i = 0; i < p.grid().n; ++i) f += w[i] * xi[i] * xi[i] * p[i];
  return f;
}

double fisher_info(const SpectralDensity& p) { return fisher_info(p, score(p)); }

double dirichlet_norm(const SpectralDensity& p, const ScoreFunction& xi) {
  const auto& g = p.grid();
  const auto w = trapezoid_weights(g);
  const auto dxi = centered_derivative(xi.values(), g.h());
  // restrict to the support, keeping index distances for the 1/(x_i − x_j) table
  std::size_t lo = 0, hi = g.n;
  while (lo < hi && p[lo] <= 0) ++lo;
  while (hi > lo && p[hi - 1] <= 0) --hi;
  const std::size_t m = hi - lo;
  std::vector<double> q(m), x(m), inv(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    q[i] = w[lo + i] * p[lo + i];
    x[i] = xi[lo + i];
  }
  for (std::size_t d = 1; d < m; ++d) inv[d] = 1.0 / (g.h() * static_cast<double>(d));
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    total += q[i] * q[i] * dxi[lo + i] * dxi[lo + i];
    double row = 0.0;
    const double xi_i = x[i];
    for (std::size_t j = i + 1; j < m; ++j) {
      const double k = (x[j] - xi_i) * inv[j - i];
      row += q[j] * k * k;
    }
    total += 2 * q[i] * row;
  }
  return total;
}

double chi_star(const InitialLaw& law, const ChiStarOptions& opt) {
  if (law.atomic()) throw Error("χ* is −∞ for atomic laws");
  const double var = law.variance();
  // t = e^{w²} − 1 absorbs the √t onset of smooth starts and the slow tail; the integrand
  // carries grid noise, so fixed panels are used instead of adaptive refinement
  auto integrand = [&](double w) {
    const double e = std::exp(w * w);
    const double t = e - 1.0;
    const auto p = free_heat_flow(law, t, opt.flow);
    return (1.0 / (1.0 + t) - fisher_info(p)) * 2.0 * w * e;
  };
  using GL = boost::math::quadrature::gauss<double, 10>;
  auto panels = [&](double w0, double w1, int count) {
    double s = 0.0;
    for (int k = 0; k < count; ++k) {
      const double a = w0 + (w1 - w0) * k / count, b = w0 + (w1 - w0) * (k + 1) / count;
      s += GL::integrate(integrand, a, b);
    }
    return s;
  };
  auto w_of = [](double t) { return std::sqrt(std::log1p(t)); };
  double horizon = opt.horizon;
  double body = panels(0.0, w_of(horizon), 6);
  auto total = [&](double H, double b) { return 0.5 * (b + std::log((var + H) / (1.0 + H))); };
  double prev = total(horizon, body);
  for (std::size_t k = 0; k < opt.max_doublings; ++k) {
    body += panels(w_of(horizon), w_of(2 * horizon), 2);
    horizon *= 2;
    const double cur = total(horizon, body);
    if (std::abs(cur - prev) <= opt.tol) return cur + 0.5 * std::log(2 * kPi * std::exp(1.0));
    prev = cur;
  }
  throw ConvergenceError("χ* horizon doubling did not stabilize");
}

double wasserstein1(const SpectralDensity& p, const SpectralDensity& q) {
  const double a = std::min(p.grid().a, q.grid().a), b = std::max(p.grid().b, q.grid().b);
  const double h = std::min(p.grid().h(), q.grid().h());
  const auto n = static_cast<std::size_t>(std::ceil((b - a) / h)) + 1;
  const Grid g{a, b, n};
  const auto pp = p.resample(g).cdf(), qq = q.resample(g).cdf();
  double w = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    w += 0.5 * g.h() * (std::abs(pp[i] - qq[i]) + std::abs(pp[i - 1] - qq[i - 1]));
  }
  return w;
}

ForwardRun forward_run(const InitialLaw& law, double T, std::size_t steps, const FlowOptions& opt) {
  if (!(T > 0) || steps < 2) throw Error("forward_run needs T > 0 and at least two steps");
  ForwardRun run;
  run.grid = flow_grid(law, T, opt);
  const double dt = T / static_cast<double>(steps);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = dt * static_cast<double>(k);
    run.times.push_back(t);
    if (k == 0 && law.atomic()) {
      // atoms deposited on the nearest grid nodes; no score at t = 0
      std::vector<double> v(run.grid.n, 0.0);
      const auto& g = run.grid;
      const double mean = law.mean();
      const double u = (mean - g.a) / g.h();
      const auto i = std::min(static_cast<std::size_t>(u), g.n - 2);
      v[i] = 1.0;
      v[i + 1] = 1.0;
      run.densities.emplace_back(g, v, 0.0, true);
      run.scores.emplace_back();
      continue;
    }
    auto slice = heat_flow_slice(law, t, run.grid, opt);
    run.densities.push_back(std::move(slice.density));
    run.scores.push_back(std::move(slice.analytic_score));
  }
  return run;
}

namespace {

std::vector<double> density_from_cdf(const std::vector<double>& f, double h) {
  std::vector<double> p(f.size(), 0.0);
  for (std::size_t i = 1; i + 1 < f.size(); ++i) p[i] = (f[i + 1] - f[i - 1]) / (2 * h);
  return p;
}

double interp(const std::vector<double>& v, const Grid& g, double x) {
  const double u = std::clamp((x - g.a) / g.h(), 0.0, static_cast<double>(g.n - 1));
  const auto i = std::min(static_cast<std::size_t>(u), g.n - 2);
  const double f = u - static_cast<double>(i);
  return (1 - f) * v[i] + f * v[i + 1];
}

class Transporter {
 public:
  Transporter(const Grid& g, const ReverseOptions& opt) : g_(g), opt_(opt) {}

  // Moves the CDF along characteristics of the frozen velocity field v for time dt.
  std::vector<double> operator()(const std::vector<double>& f, const std::vector<double>& v, double dt) {
    double vmax = 0.0;
    for (double x : v) vmax = std::max(vmax, std::abs(x));
    const double h = g_.h();
    std::size_t m = 1;
    if (vmax * dt > opt_.cfl * h) {
      if (!opt_.auto_substep) {
        throw CflViolation("transport step violates max|v|·dt ≤ h (" + format_double(vmax * dt) + " > " +
                           format_double(h) + ")");
      }
      m = static_cast<std::size_t>(std::ceil(vmax * dt / (opt_.cfl * h)));
      substeps += m - 1;
    }
    auto cur = f;
    for (std::size_t k = 0; k < m; ++k) cur = step(cur, v, dt / static_cast<double>(m));
    return cur;
  }

  std::size_t substeps = 0;

 private:
  std::vector<double> step(const std::vector<double>& f, const std::vector<double>& v, double dt) const {
    const auto n = g_.n;
    std::vector<double> y(n), fy(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = g_.x(i);
      const double mid = x + 0.5 * dt * v[i];
      y[i] = x + dt * interp(v, g_, mid);
      fy[i] = f[i];
    }
    for (std::size_t i = 1; i < n; ++i) {
      if (!(y[i] > y[i - 1])) throw CflViolation("characteristics crossed during transport");
    }
    const double y0 = y.front(), y1 = y.back();
    boost::math::interpolators::pchip<std::vector<double>> spline(std::move(y), std::move(fy));
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = g_.x(i);
      if (x <= y0) out[i] = 0.0;
      else if (x >= y1) out[i] = 1.0;
      else out[i] = std::clamp(spline(x), 0.0, 1.0);
    }
    for (std::size_t i = 1; i < n; ++i) out[i] = std::max(out[i], out[i - 1]);
    out.front() = 0.0;
    out.back() = 1.0;
    return out;
  }

  Grid g_;
  ReverseOptions opt_;
};

}  // namespace

ReversedRun reversed_flow(const ForwardRun& fwd, const ReverseOptions& opt) {
  const auto K = fwd.times.size() - 1;
  if (K < 2) throw Error("reversed_flow needs a forward run with at least two steps");
  const auto& g = fwd.grid;
  const double h = g.h();
  const double T = fwd.times.back();
  const double dt = fwd.times[1] - fwd.times[0];
  Transporter move(g, opt);
  ReversedRun run;
  auto f = fwd.densities.back().cdf();
  auto record = [&](double s, const std::vector<double>& cdf) {
    run.times.push_back(s);
    run.densities.emplace_back(g, density_from_cdf(cdf, h), T - s, false);
  };
  record(0.0, f);
  auto heat_velocity = [&](const std::vector<double>& cdf) {
    SpectralDensity p(g, density_from_cdf(cdf, h));
    auto xi = score(p).values();
    for (auto& x : xi) x *= 0.5;
    return xi;
  };
  std::vector<double> va(g.n), vb(g.n);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const auto j = K - k;  // forward index of T − s_k
    const auto& a = fwd.scores[j];
    const auto& b = fwd.scores[j - 1];
    for (std::size_t i = 0; i < g.n; ++i) {
      va[i] = -(0.75 * a[i] + 0.25 * b[i]);
      vb[i] = -(0.25 * a[i] + 0.75 * b[i]);
    }
    f = move(f, va, 0.5 * dt);
    const auto v0 = heat_velocity(f);
    const auto half = move(f, v0, 0.5 * dt);
    const auto v1 = heat_velocity(half);
    f = move(f, v1, dt);
    f = move(f, vb, 0.5 * dt);
    record(dt * static_cast<double>(k + 1), f);
  }
  run.substeps = move.substeps;
  return run;
}

}  // namespace freesde
