#include "freesde/generator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "freesde/text.hpp"

namespace freesde {

NCPolyD Drift::at(double s) const {
  NCPolyD q = constant;
  if (!singular.empty()) q += singular * cplx(clock(s));
  return q;
}

GeneratorSpec GeneratorSpec::brownian(std::vector<Letter> xs, double covariance) {
  GeneratorSpec g;
  g.kind = Kind::brownian;
  g.generators = std::move(xs);
  g.covariance = covariance;
  return g;
}

GeneratorSpec GeneratorSpec::liberation(std::uint16_t n, double covariance) {
  GeneratorSpec g;
  g.kind = Kind::liberation;
  for (std::uint16_t k = 1; k <= n; ++k) g.families.push_back(k);
  g.covariance = covariance;
  return g;
}

Derivation GeneratorSpec::derivation(std::size_t i) const {
  return kind == Kind::brownian ? Derivation::free_diff(generators.at(i))
                                : Derivation::liberation(families.at(i));
}

const Drift* GeneratorSpec::drift(std::size_t i) const {
  if (i >= drifts.size() || drifts[i].empty()) return nullptr;
  return &drifts[i];
}

bool GeneratorSpec::has_drift() const {
  return std::any_of(drifts.begin(), drifts.end(), [](const Drift& d) { return !d.empty(); });
}

namespace {

bool self_adjoint(const NCPolyD& p) {
  auto diff = p - adjoint(p);
  for (const auto& [k, c] : diff.terms()) {
    if (std::abs(c) > 1e-12) return false;
  }
  return true;
}

}  // namespace

void GeneratorSpec::validate() const {
  if (kind == Kind::brownian) {
    for (const auto& x : generators) {
      if (x.kind != LetterKind::self_adjoint) throw ConfigError("brownian generators must be self-adjoint");
    }
  }
  if (drifts.size() > n()) throw ConfigError("more drifts than derivations");
  for (const auto& d : drifts) {
    if (!self_adjoint(d.constant) || !self_adjoint(d.singular)) {
      throw ConfigError("drift polynomials must be self-adjoint");
    }
  }
  if (!(covariance > 0)) throw ConfigError("covariance must be positive");
}

nlohmann::json GeneratorSpec::to_json(const Alphabet& names) const {
  nlohmann::json j;
  j["kind"] = kind == Kind::brownian ? "brownian" : "liberation";
  if (kind == Kind::brownian) {
    j["generators"] = nlohmann::json::array();
    for (const auto& x : generators) j["generators"].push_back(names.name(x));
  } else {
    j["families"] = families;
  }
  j["covariance"] = covariance;
  j["drifts"] = nlohmann::json::array();
  for (const auto& d : drifts) {
    j["drifts"].push_back({{"constant", to_text(d.constant, names)},
                           {"singular", to_text(d.singular, names)},
                           {"offset", d.offset},
                           {"horizon", d.horizon}});
  }
  return j;
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j, const Alphabet& names) {
  GeneratorSpec g;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "brownian") {
    g.kind = Kind::brownian;
    for (const auto& x : j.at("generators")) g.generators.push_back(names[x.get<std::string>()]);
  } else if (kind == "liberation") {
    g.kind = Kind::liberation;
    g.families = j.at("families").get<std::vector<std::uint16_t>>();
  } else {
    throw ConfigError("unknown generator kind '" + kind + "'");
  }
  g.covariance = j.value("covariance", 1.0);
  if (j.contains("drifts")) {
    for (const auto& d : j.at("drifts")) {
      Drift dr;
      dr.constant = parse_poly<cplx>(d.value("constant", std::string{}), names);
      dr.singular = parse_poly<cplx>(d.value("singular", std::string{}), names);
      dr.offset = d.value("offset", 0.0);
      dr.horizon = d.value("horizon", 0.0);
      g.drifts.push_back(std::move(dr));
    }
  }
  g.validate();
  return g;
}

NCPolyD apply_generator(const GeneratorSpec& g, const MomentState& s, const NCPolyD& p,
                        double time) {
  NCPolyD out;
  for (std::size_t i = 0; i < g.n(); ++i) {
    const auto d = g.derivation(i);
    if (const auto* q = g.drift(i)) out += sharp(derive(p, d), q->at(time));
    out += middle_trace(second_order(p, d), s) * cplx(0.5 * g.covariance);
  }
  return out;
}

WordIndex::WordIndex(std::vector<Word> ws, RewriteSystem rel)
    : words(std::move(ws)), relations(std::move(rel)) {
  for (std::size_t k = 0; k < words.size(); ++k) index.emplace(words[k], k);
}

std::optional<std::size_t> WordIndex::find(const Word& w) const {
  auto it = index.find(reduce_word(w, relations));
  if (it == index.end()) return std::nullopt;
  return it->second;
}

std::size_t WordIndex::at(const Word& w) const {
  auto k = find(w);
  if (!k) throw DegreeOverflow("word outside the truncated basis");
  return *k;
}

CompiledGenerator::CompiledGenerator(const GeneratorSpec& g, std::shared_ptr<const WordIndex> moments,
                                     const std::vector<Word>& seeds)
    : spec_(g), moments_(std::move(moments)) {
  const auto& rel = moments_->relations;
  std::vector<Word> local;
  std::map<Word, std::size_t> index;
  auto intern = [&](const Word& w) -> std::uint32_t {
    Word r = reduce_word(w, rel);
    if (!moments_->find(r)) {
      throw DegreeOverflow("generator does not close on the truncation degree");
    }
    auto [it, inserted] = index.try_emplace(r, local.size());
    if (inserted) local.push_back(r);
    return static_cast<std::uint32_t>(it->second);
  };
  for (const auto& w : seeds) intern(w);
  const cplx half(0.5 * g.covariance);
  for (std::size_t k = 0; k < local.size(); ++k) {
    const Word w = local[k];
    const auto src = static_cast<std::uint32_t>(k);
    const auto poly = word_poly<cplx>(w);
    for (std::size_t i = 0; i < g.n(); ++i) {
      const auto d = g.derivation(i);
      for (const auto& [key, c] : second_order(poly, d).terms()) {
        const Word outer = concat(key[0], key[2]);
        const auto mid = moments_->find(key[1]);
        if (!mid) throw DegreeOverflow("middle word outside the truncated basis");
        quad_.push_back({src, static_cast<std::uint32_t>(*mid), intern(outer), c * half});
      }
      if (const auto* q = g.drift(i)) {
        const auto first = derive(poly, d);
        for (const auto& [key, c] : sharp(first, q->constant).terms()) {
          lin_.push_back({src, intern(key[0]), static_cast<std::uint32_t>(i), false, c});
        }
        for (const auto& [key, c] : sharp(first, q->singular).terms()) {
          lin_.push_back({src, intern(key[0]), static_cast<std::uint32_t>(i), true, c});
        }
      }
    }
  }
  // re-index in key order for deterministic output
  std::vector<std::uint32_t> perm(local.size());
  std::vector<Word> sorted = local;
  std::sort(sorted.begin(), sorted.end());
  local_ = WordIndex(sorted, rel);
  for (std::size_t k = 0; k < local.size(); ++k) perm[k] = static_cast<std::uint32_t>(local_.index.at(local[k]));
  for (auto& q : quad_) {
    q.src = perm[q.src];
    q.outer = perm[q.outer];
  }
  for (auto& l : lin_) {
    l.src = perm[l.src];
    l.out = perm[l.out];
  }
  local_to_moment_.resize(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) local_to_moment_[k] = *moments_->find(sorted[k]);
}

double CompiledGenerator::clock(std::uint32_t drift, bool singular, double t) const {
  return singular ? spec_.drifts[drift].clock(t) : 1.0;
}

void CompiledGenerator::apply(double t, const std::vector<cplx>& m, const std::vector<cplx>& k,
                              std::vector<cplx>& out) const {
  out.assign(local_.size(), cplx{});
  for (const auto& q : quad_) {
    const cplx v = k[q.src];
    if (v != cplx{}) out[q.outer] += q.c * m[q.mid] * v;
  }
  for (const auto& l : lin_) {
    const cplx v = k[l.src];
    if (v != cplx{}) out[l.out] += l.c * clock(l.drift, l.singular, t) * v;
  }
}

void CompiledGenerator::traced(double t, const std::vector<cplx>& m, std::vector<cplx>& out) const {
  out.assign(local_.size(), cplx{});
  for (const auto& q : quad_) out[q.src] += q.c * m[q.mid] * m[local_to_moment_[q.outer]];
  for (const auto& l : lin_) {
    out[l.src] += l.c * clock(l.drift, l.singular, t) * m[local_to_moment_[l.out]];
  }
}

MomentState MomentTrajectory::state(std::size_t k) const {
  MomentState s(letters_, degree_);
  for (std::size_t j = 0; j < basis_->size(); ++j) s.set(basis_->words[j], values_[k][j]);
  return s;
}

std::size_t MomentTrajectory::index_of(double s) const {
  for (std::size_t k = 0; k < times_.size(); ++k) {
    if (std::abs(times_[k] - s) <= 1e-9 * std::max(1.0, std::abs(s))) return k;
  }
  throw Error("time " + format_double(s) + " is not on the trajectory grid");
}

std::string MomentTrajectory::to_csv(const Alphabet& names, const std::vector<Word>& words) const {
  std::vector<std::size_t> idx;
  if (words.empty()) {
    for (std::size_t j = 0; j < basis_->size(); ++j) idx.push_back(j);
  } else {
    for (const auto& w : words) idx.push_back(basis_->at(w));
  }
  std::ostringstream out;
  out << "t,word,re,im\n";
  for (std::size_t k = 0; k < times_.size(); ++k) {
    for (auto j : idx) {
      const auto& v = values_[k][j];
      out << format_double(times_[k]) << ',' << names.word_name(basis_->words[j]) << ','
          << format_double(v.real()) << ',' << format_double(v.imag()) << '\n';
    }
  }
  return out.str();
}

std::size_t recommended_steps(double T, std::size_t degree) {
  const double h = 1e-3 / static_cast<double>(std::max<std::size_t>(degree, 1));
  return static_cast<std::size_t>(std::ceil(T / h));
}

MomentTrajectory evolve_moments(const GeneratorSpec& g, const MomentState& s0, double T,
                                std::size_t steps, const EvolveOptions& opt) {
  if (steps < 1) throw Error("evolve_moments needs at least one step");
  if (!(T > 0)) throw Error("evolve_moments needs T > 0");
  g.validate();
  const auto words = s0.basis();
  auto basis = std::make_shared<const WordIndex>(words, s0.relations());
  CompiledGenerator cg(g, basis, words);
  if (cg.local().size() != basis->size()) throw Error("internal: basis mismatch");

  MomentTrajectory traj(s0.letters(), s0.degree_bound(), basis);
  const auto n = basis->size();
  std::vector<cplx> y(n);
  for (std::size_t j = 0; j < n; ++j) y[j] = s0.moment(basis->words[j]);
  traj.push(opt.t0, y);

  const double h = T / static_cast<double>(steps);
  const std::size_t every = std::max<std::size_t>(1, steps / std::max<std::size_t>(opt.psd_checkpoints, 1));
  std::vector<cplx> k1, k2, k3, k4, tmp(n);
  auto axpy = [&](const std::vector<cplx>& k, double a) {
    for (std::size_t j = 0; j < n; ++j) tmp[j] = y[j] + a * k[j];
  };
  for (std::size_t step = 0; step < steps; ++step) {
    const double t = opt.t0 + h * static_cast<double>(step);
    cg.traced(t, y, k1);
    axpy(k1, 0.5 * h);
    cg.traced(t + 0.5 * h, tmp, k2);
    axpy(k2, 0.5 * h);
    cg.traced(t + 0.5 * h, tmp, k3);
    axpy(k3, h);
    cg.traced(t + h, tmp, k4);
    for (std::size_t j = 0; j < n; ++j) y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    traj.push(opt.t0 + h * static_cast<double>(step + 1), y);
    if ((step + 1) % every == 0 || step + 1 == steps) {
      const auto r = psd_check(traj.state(traj.size() - 1), opt.psd_tolerance);
      if (!r.pass) {
        throw PsdViolation("moment matrix lost positivity at t=" + format_double(traj.times().back()) +
                           " (min eigenvalue " + format_double(r.min_eigenvalue) + ")");
      }
    }
  }
  return traj;
}

namespace {

// Weights for ∫_{t_k}^{t_{k+1}} of the Lagrange interpolant through up to four nodes.
struct CellRule {
  std::size_t first;
  std::size_t count;
  double w[4];
};

CellRule cell_rule(const std::vector<double>& t, std::size_t k, std::size_t last) {
  CellRule r{};
  r.count = std::min<std::size_t>(4, last + 1);
  std::size_t first = k > 0 ? k - 1 : 0;
  if (first + r.count > last + 1) first = last + 1 - r.count;
  r.first = first;
  const double a = t[k], b = t[k + 1];
  const double g = 0.5 / std::sqrt(3.0);
  const double xs[2] = {0.5 * (a + b) - g * (b - a), 0.5 * (a + b) + g * (b - a)};
  for (std::size_t j = 0; j < r.count; ++j) {
    double wj = 0.0;
    for (double x : xs) {
      double l = 1.0;
      for (std::size_t m = 0; m < r.count; ++m) {
        if (m != j) l *= (x - t[first + m]) / (t[first + j] - t[first + m]);
      }
      wj += 0.5 * (b - a) * l;
    }
    r.w[j] = wj;
  }
  return r;
}

std::vector<cplx> to_vector(const NCPolyD& p, const WordIndex& local) {
  std::vector<cplx> v(local.size());
  for (const auto& [key, c] : p.terms()) v[local.at(key[0])] += c;
  return v;
}

NCPolyD to_poly(const std::vector<cplx>& v, const WordIndex& local) {
  NCPolyD p;
  for (std::size_t j = 0; j < v.size(); ++j) p.add_term({local.words[j]}, v[j]);
  return p;
}

// Increments at round-off level relative to the input's coefficients count as zero: with several
// liberation families the cancellation of Δ against N is exact only up to floating-point error.
bool all_zero(const std::vector<std::vector<cplx>>& vs, double scale) {
  const double tol = 1e-15 * scale;
  for (const auto& v : vs) {
    for (const auto& c : v) {
      if (std::abs(c) > tol) return false;
    }
  }
  return true;
}

std::vector<Word> support(const NCPolyD& p) {
  std::vector<Word> ws;
  for (const auto& [key, c] : p.terms()) ws.push_back(key[0]);
  return ws;
}

// grading[j]: liberation degree of local word j (0 when not graded)
PolyPath iterate(const GeneratorSpec& g, const MomentTrajectory& traj, std::size_t ks,
                 const NCPolyD& p, int sign, bool reversed_clock, bool graded) {
  const auto& t = traj.times();
  CompiledGenerator cg(g, traj.basis_ptr(), support(p));
  const auto& local = cg.local();
  const auto nw = local.size();
  std::vector<double> grade(nw, 0.0);
  if (graded) {
    const auto maxfam = static_cast<std::uint16_t>(g.n());
    for (std::size_t j = 0; j < nw; ++j) grade[j] = static_cast<double>(graded_degree(local.words[j], maxfam));
  }
  const std::size_t last = traj.size() - 1;
  auto time_index = [&](std::size_t k) { return reversed_clock ? last - k : k; };

  const auto pv = to_vector(p, local);
  std::vector<std::vector<cplx>> inc(ks + 1, pv);
  if (graded) {
    for (std::size_t k = 0; k <= ks; ++k) {
      for (std::size_t j = 0; j < nw; ++j) inc[k][j] *= std::exp(-grade[j] * (t[ks] - t[k]));
    }
  }
  auto total = inc;
  PolyPath out;
  const std::size_t max_passes = 2 * std::max<std::size_t>(p.degree(), 1) + 2;
  double scale = 1.0;
  for (const auto& [key, c] : p.terms()) scale = std::max(scale, std::abs(c));
  std::vector<std::vector<cplx>> f(ks + 1);
  bool done = false;
  for (std::size_t pass = 1; pass <= max_passes; ++pass) {
    for (std::size_t k = 0; k <= ks; ++k) {
      const auto ti = time_index(k);
      cg.apply(t[ti], traj.values(ti), inc[k], f[k]);
      if (graded) {
        for (std::size_t j = 0; j < nw; ++j) f[k][j] += grade[j] * inc[k][j];
      }
    }
    if (all_zero(f, scale)) {
      done = true;
      break;
    }
    std::vector<cplx> acc(nw);
    inc[ks].assign(nw, cplx{});
    for (std::size_t k = ks; k-- > 0;) {
      const auto rule = cell_rule(t, k, ks);
      for (std::size_t j = 0; j < nw; ++j) {
        const double decay = graded ? std::exp(-grade[j] * (t[k + 1] - t[k])) : 1.0;
        cplx cell{};
        for (std::size_t m = 0; m < rule.count; ++m) {
          const auto node = rule.first + m;
          const double factor = graded ? std::exp(-grade[j] * (t[node] - t[k])) : 1.0;
          cell += rule.w[m] * factor * f[node][j];
        }
        acc[j] = cell + decay * acc[j];
      }
      inc[k] = acc;
      for (std::size_t j = 0; j < nw; ++j) inc[k][j] *= static_cast<double>(sign);
    }
    for (std::size_t k = 0; k <= ks; ++k) {
      for (std::size_t j = 0; j < nw; ++j) total[k][j] += inc[k][j];
    }
    out.passes = pass;
  }
  if (!done) throw ConvergenceError("backward recursion did not reach a fixed point");
  for (std::size_t k = 0; k <= ks; ++k) {
    out.times.push_back(t[k]);
    out.values.push_back(to_poly(total[k], local));
  }
  return out;
}

}  // namespace

PolyPath backward_solve(const GeneratorSpec& g, const MomentTrajectory& traj, double s,
                        const NCPolyD& p) {
  if (g.kind != GeneratorSpec::Kind::brownian) throw Error("backward_solve expects the brownian kind");
  return iterate(g, traj, traj.index_of(s), p, +1, false, false);
}

PolyPath backward_solve_graded(const GeneratorSpec& g, const MomentTrajectory& traj, double s,
                               const NCPolyD& p) {
  if (g.kind != GeneratorSpec::Kind::liberation) {
    throw Error("backward_solve_graded expects the liberation kind");
  }
  if (g.has_drift()) throw Error("graded recursion requires Q = 0");
  for (const auto& [key, c] : p.terms()) {
    for (const auto& l : key[0]) {
      if (l.kind == LetterKind::unitary || l.kind == LetterKind::unitary_adjoint) {
        throw Error("graded recursion is not degree-lowering on unitary letters");
      }
    }
  }
  return iterate(g, traj, traj.index_of(s), p, +1, false, true);
}

PolyPath forward_dual_solve(const GeneratorSpec& g, const MomentTrajectory& traj, double s,
                            const NCPolyD& p) {
  return iterate(g, traj, traj.index_of(s), p, -1, true, false);
}

double duality_residual(const MomentTrajectory& traj, const PolyPath& k, const NCPolyD& p) {
  const auto ks = k.values.size() - 1;
  const auto state_s = traj.state(ks);
  const cplx target = state_s.eval(p);
  double worst = 0.0;
  for (std::size_t j = 0; j <= ks; ++j) {
    cplx v{};
    for (const auto& [key, c] : k.values[j].terms()) v += c * traj.moment(j, key[0]);
    worst = std::max(worst, std::abs(v - target));
  }
  return worst;
}

NCPolyD voiculescu_dstar(const BiPolyD& u, const NCPolyD& xi, const Derivation& d,
                         const MomentState& s) {
  NCPolyD out;
  for (const auto& [key, c] : u.terms()) {
    const auto a = word_poly<cplx>(key[0]);
    const auto b = word_poly<cplx>(key[1]);
    NCPolyD term = mul(mul(a, xi), b);
    term -= mul(trace_right(derive(a, d), s), b);
    term -= mul(a, trace_left(derive(b, d), s));
    out += term * c;
  }
  return out;
}

NCPolyD laplacian(const NCPolyD& p, const std::vector<NCPolyD>& xi, const GeneratorSpec& g,
                  const MomentState& s) {
  if (xi.size() != g.n()) throw Error("one conjugate variable per derivation required");
  NCPolyD out;
  for (std::size_t i = 0; i < g.n(); ++i) {
    const auto d = g.derivation(i);
    out += sharp(derive(p, d), xi[i]);
    out -= middle_trace(second_order(p, d), s);
  }
  return out;
}

std::vector<NCPolyD> conjugate_polys(const GeneratorSpec& g, const ConjugateLaw& law, double t) {
  if (g.kind != GeneratorSpec::Kind::brownian) throw Error("closed-form conjugate variables need the brownian kind");
  std::vector<NCPolyD> xi;
  for (const auto& x : g.generators) {
    switch (law.kind) {
      case ConjugateLaw::Kind::semicircular:
        if (!(law.sigma2 + t > 0)) throw Error("conjugate variable undefined at σ²+t = 0");
        xi.push_back(letter_poly<cplx>(x, cplx(1.0 / (law.sigma2 + t))));
        break;
      case ConjugateLaw::Kind::formal_zero:
        xi.emplace_back();
        break;
      case ConjugateLaw::Kind::general:
        throw Error("conjugate variable is not polynomial for this initial law");
    }
  }
  return xi;
}

GeneratorSpec reversed_drift(const GeneratorSpec& g, const ConjugateLaw& law, double T) {
  if (g.kind != GeneratorSpec::Kind::brownian) throw Error("reversed drift needs the brownian kind");
  if (law.kind == ConjugateLaw::Kind::general) {
    throw Error("unsupported initial law: conjugate variable is not polynomial");
  }
  if (law.kind == ConjugateLaw::Kind::semicircular && g.has_drift()) {
    throw Error("closed-form conjugate variable requires Q = 0");
  }
  GeneratorSpec r = g;
  r.drifts.assign(g.n(), Drift{});
  for (std::size_t i = 0; i < g.n(); ++i) {
    if (const auto* q = g.drift(i)) {
      if (!q->singular.empty()) throw Error("time-dependent forward drift is not supported");
      r.drifts[i].constant = -q->constant;
    }
    if (law.kind == ConjugateLaw::Kind::semicircular) {
      r.drifts[i].singular = -letter_poly<cplx>(g.generators[i]);
      r.drifts[i].offset = law.sigma2;
      r.drifts[i].horizon = T;
    }
  }
  return r;
}

}  // namespace freesde
