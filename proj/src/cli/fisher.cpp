#include <cmath>

#include "freesde/cli.hpp"

namespace freesde {

namespace {

struct FisherPoint {
  double phi, dirichlet;
};

FisherPoint fisher_point(const InitialLaw& law, double t, const FlowOptions& opt) {
  const auto p = free_heat_flow(law, t, opt);
  const auto xi = score(p);
  return {fisher_info(p, xi), dirichlet_norm(p, xi)};
}

// ∫_{t0}^{t1} ‖∂ξ_u‖² du by Simpson's rule in v = log u
double dirichlet_integral(const InitialLaw& law, double t0, double t1, std::size_t m, const FlowOptions& opt,
                          double d0, double d1) {
  const double v0 = std::log(t0), h = (std::log(t1) - v0) / static_cast<double>(m);
  double sum = d0 * t0 + d1 * t1;
  for (std::size_t i = 1; i < m; ++i) {
    const double u = std::exp(v0 + h * static_cast<double>(i));
    sum += (i % 2 ? 4.0 : 2.0) * fisher_point(law, u, opt).dirichlet * u;
  }
  return sum * h / 3.0;
}

}  // namespace

FisherResult run_fisher(const FisherParams& p) {
  const auto law = law_from_json(p.law);
  FlowOptions opt;
  opt.n = p.n;
  FisherResult r;
  r.semicircular = law.kind() == InitialLaw::Kind::semicircle || (law.atomic() && law.variance() == 0.0);
  const double m2 = law.second_moment();
  for (double t : p.times) {
    const auto f = fisher_point(law, t, opt);
    r.rows.push_back({t, f.phi, f.dirichlet, 1.0 / (m2 + t), 1.0 / t});
  }
  const double tol = p.relative_tolerance;
  for (std::size_t k = 0; k < r.rows.size(); ++k) {
    const auto& row = r.rows[k];
    if (p.bounds && (row.phi < row.lower * (1 - tol) || row.phi > row.upper * (1 + tol))) r.bounds_pass = false;
    if (p.bounds && k > 0 && row.phi > r.rows[k - 1].phi * (1 + tol)) r.monotone_pass = false;
  }
  if (p.subintervals > 0) {
    for (std::size_t k = 0; k + 1 < r.rows.size(); ++k) {
      const auto &a = r.rows[k], &b = r.rows[k + 1];
      FisherInterval iv{a.t, b.t, a.phi - b.phi, 0.0, 0.0};
      iv.integral = dirichlet_integral(law, a.t, b.t, p.subintervals, opt, a.dirichlet, b.dirichlet);
      iv.gap = iv.phi_drop - iv.integral;
      if (iv.gap < -p.gap_tolerance) r.gap_pass = false;
      if (r.semicircular && std::abs(iv.gap) > tol * std::abs(iv.phi_drop)) r.equality_pass = false;
      r.intervals.push_back(iv);
    }
  }
  return r;
}

}  // namespace freesde
