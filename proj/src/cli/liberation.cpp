#include <cmath>

#include "freesde/cli.hpp"
#include "freesde/rewrite.hpp"
#include "freesde/text.hpp"

namespace freesde {

std::vector<SymbolicCheck> liberation_correction_terms() {
  Alphabet names;
  const Letter r = names.add("r"), j = names.add("j"), P = names.add("P");
  // r_T P_T = r_T = P_T r_T and r_T, P_T idempotent
  const RewriteSystem rules{{{r, P}, {r}}, {{P, r}, {r}}, {{r, r}, {r}}, {{P, P}, {P}}};
  const auto w = [](Word x) { return word_poly<QComplex>(std::move(x)); };
  const NCPoly commutator = w({j, P}) - w({P, j});
  const std::pair<std::string, NCPoly> terms[] = {
      {"tau(r.[j,P])", w({r}) * commutator},
      {"tau(r.P.r.[j,P])", w({r, P, r}) * commutator},
  };
  std::vector<SymbolicCheck> out;
  for (const auto& [label, poly] : terms) {
    const auto nf = trace_normal_form(poly, rules);
    auto text = to_text(nf, names);
    if (!text.empty() && text.back() == '\n') text.pop_back();
    out.push_back({label, text, nf.empty()});
  }
  return out;
}

namespace {

struct LiberationTrial {
  std::size_t rank = 0;
  std::vector<double> f;
  double slope = 0.0;
};

// least squares F(s) ≈ Σ_{k=1..d} c_k s^k; returns c_1
double fitted_slope(const std::vector<double>& s, const std::vector<double>& f, unsigned degree) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(s.size()), degree);
  Eigen::VectorXd b(static_cast<Eigen::Index>(s.size()));
  const double scale = s.back();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (unsigned k = 0; k < degree; ++k) a(row, k) = std::pow(s[i] / scale, k + 1);
    b(row) = f[i];
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
  return c(0) / scale;
}

LiberationTrial liberation_trial(const LiberationParams& p, std::uint64_t seed, std::size_t trial) {
  auto rng = trial_rng(seed, trial);
  LiberationOptions opt;
  opt.overlap = Overlap::independent;
  const auto path = liberation_traj(p.trace_p, p.trace_q, p.N, p.T, p.steps, rng, opt);
  const auto& P = path.frames[path.process("P")];
  const auto& Q = path.frames[path.process("Q")];
  const auto K = P.size() - 1;
  const auto wedge = wedge_projection(P[K], Q[K]);
  LiberationTrial out;
  out.rank = wedge.rank;
  const Mat& r = wedge.p;
  for (std::size_t k = 0; k <= p.window; ++k) {
    const Mat d = r * P[K - k] * r - r;
    out.f.push_back(ntr_product(d, d).real());
  }
  return out;
}

}  // namespace

LiberationResult run_liberation(const LiberationParams& p, std::uint64_t seed, unsigned threads) {
  LiberationResult r;
  r.symbolic = liberation_correction_terms();
  r.symbolic_pass = true;
  for (const auto& c : r.symbolic) r.symbolic_pass = r.symbolic_pass && c.zero;

  std::vector<LiberationTrial> trials(p.trials);
  parallel_trials(p.trials, threads, [&](std::size_t t) { trials[t] = liberation_trial(p, seed, t); });
  const double dt = p.T / static_cast<double>(p.steps);
  for (std::size_t k = 0; k <= p.window; ++k) r.s.push_back(dt * static_cast<double>(k));

  r.trivial = true;
  std::vector<double> slopes;
  for (auto& t : trials) {
    r.ranks.push_back(t.rank);
    r.trivial = r.trivial && t.rank == 0;
    slopes.push_back(t.rank == 0 ? 0.0 : fitted_slope(r.s, t.f, p.fit_degree));
  }
  for (std::size_t k = 0; k <= p.window; ++k) {
    std::vector<double> xs;
    for (const auto& t : trials) xs.push_back(t.f[k]);
    r.f.push_back(mean_se(xs));
  }
  r.slope = mean_se(slopes);
  r.slope_pass = r.trivial || std::abs(r.slope.mean) <= p.z_bound * r.slope.se;
  return r;
}

}  // namespace freesde
