#include <cstdio>

#include "freesde/cli.hpp"
#include "schema.hpp"

#ifndef FREESDE_GIT_REV
#define FREESDE_GIT_REV "unknown"
#endif

namespace freesde {

using detail::Section;

namespace {

const char* const kCommands[] = {"moments", "reverse", "fisher", "liberation"};

void positive(double v, const std::string& what) {
  if (!(v > 0)) throw ConfigError(what + " must be positive");
}

void at_least(std::size_t v, std::size_t lo, const std::string& what) {
  if (v < lo) throw ConfigError(what + " must be at least " + std::to_string(lo));
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  Section s(j, "config");
  RunConfig c;
  c.command = s.require<std::string>("command");
  bool known = false;
  for (const char* name : kCommands) known = known || c.command == name;
  if (!known) throw ConfigError("unknown command '" + c.command + "'");
  c.seed = s.get<std::uint64_t>("seed", 0);
  c.threads = s.get<unsigned>("threads", 1);
  if (c.threads == 0) throw ConfigError("threads must be at least 1");
  c.out = s.get<std::string>("out", "");
  c.params = s.has(c.command) ? s.raw(c.command) : nlohmann::json::object();
  if (!c.params.is_object()) throw ConfigError("config." + c.command + " must be an object");
  s.finish();
  return c;
}

std::string config_hash(const RunConfig& c) {
  const std::string text = nlohmann::json{{"command", c.command}, {"seed", c.seed}, {"params", c.params}}.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string git_revision() { return FREESDE_GIT_REV; }

InitialLaw law_from_json(const nlohmann::json& j) {
  Section s(j, "law");
  const auto type = s.require<std::string>("type");
  InitialLaw law;
  if (type == "point_mass") {
    law = InitialLaw::point_mass(s.get("x", 0.0));
  } else if (type == "atoms") {
    auto x = s.require<std::vector<double>>("positions");
    auto w = s.require<std::vector<double>>("weights");
    if (x.empty() || x.size() != w.size()) throw ConfigError("law.positions and law.weights must match");
    law = InitialLaw::atoms(std::move(x), std::move(w));
  } else if (type == "uniform") {
    const double lo = s.get("lo", -1.0), hi = s.get("hi", 1.0);
    if (!(lo < hi)) throw ConfigError("law.lo must be below law.hi");
    law = InitialLaw::uniform(lo, hi);
  } else if (type == "semicircle") {
    const double var = s.get("variance", 1.0);
    positive(var, "law.variance");
    law = InitialLaw::semicircle(s.get("mean", 0.0), var);
  } else {
    throw ConfigError("unknown law type '" + type + "'");
  }
  s.finish();
  return law;
}

ReverseParams ReverseParams::from_json(const nlohmann::json& j) {
  Section s(j, "reverse");
  ReverseParams p;
  p.N = s.get("N", p.N);
  p.T = s.get("T", p.T);
  p.steps = s.get("steps", p.steps);
  p.trials = s.get("trials", p.trials);
  p.x0_variance = s.get("x0_variance", p.x0_variance);
  p.times = s.get("times", p.times);
  p.max_degree = s.get("max_degree", p.max_degree);
  p.levy_points = s.get("levy_points", p.levy_points);
  p.negative_control = s.get("negative_control", p.negative_control);
  p.z_bound = s.get("z_bound", p.z_bound);
  p.negative_z = s.get("negative_z", p.negative_z);
  p.min_exponent = s.get("min_exponent", p.min_exponent);
  p.marginal_floor = s.get("marginal_floor", p.marginal_floor);
  if (s.has("identity")) {
    auto id = s.child("identity");
    p.identity = id.get("enabled", p.identity);
    p.identity_N = id.get("N", p.identity_N);
    p.identity_trials = id.get("trials", p.identity_trials);
    p.meshes = id.get("meshes", p.meshes);
    p.identity_u = id.get("u", p.identity_u);
    p.identity_v = id.get("v", p.identity_v);
    p.min_order = id.get("min_order", p.min_order);
    p.max_terminal = id.get("max_terminal", p.max_terminal);
    id.finish();
  }
  s.finish();

  positive(p.T, "reverse.T");
  if (p.x0_variance < 0) throw ConfigError("reverse.x0_variance must be non-negative");
  at_least(p.N, 2, "reverse.N");
  at_least(p.steps, 2, "reverse.steps");
  at_least(p.trials, 2, "reverse.trials");
  at_least(p.levy_points, 3, "reverse.levy_points");
  if (p.max_degree == 0) throw ConfigError("reverse.max_degree must be at least 1");
  const double dt = p.T / static_cast<double>(p.steps);
  for (double t : p.times) {
    if (!(t > 0 && t < p.T - 4.5 * dt)) throw ConfigError("reverse.times must lie in (0, T − 5dt]");
  }
  if (p.steps % p.levy_points != 0) throw ConfigError("reverse.levy_points must divide reverse.steps");
  if (p.identity) {
    at_least(p.identity_N, 2, "reverse.identity.N");
    at_least(p.identity_trials, 2, "reverse.identity.trials");
    at_least(p.meshes.size(), 2, "reverse.identity.meshes");
    for (std::size_t k = 0; k < p.meshes.size(); ++k) {
      if (p.meshes[k] == 0 || p.meshes.back() % p.meshes[k] != 0 || (k > 0 && p.meshes[k] <= p.meshes[k - 1])) {
        throw ConfigError("reverse.identity.meshes must increase and divide the finest mesh");
      }
    }
    if (!(0 <= p.identity_u && p.identity_u < p.identity_v && p.identity_v < p.T)) {
      throw ConfigError("reverse.identity needs 0 ≤ u < v < T");
    }
  }
  return p;
}

FisherParams FisherParams::from_json(const nlohmann::json& j) {
  Section s(j, "fisher");
  FisherParams p;
  if (s.has("law")) p.law = s.raw("law");
  p.times = s.require<std::vector<double>>("times");
  p.subintervals = s.get("subintervals", p.subintervals);
  p.n = s.get("n", p.n);
  p.gap_tolerance = s.get("gap_tolerance", p.gap_tolerance);
  p.relative_tolerance = s.get("relative_tolerance", p.relative_tolerance);
  p.bounds = s.get("bounds", p.bounds);
  s.finish();

  const auto law = law_from_json(p.law);
  if (p.times.empty()) throw ConfigError("fisher.times must not be empty");
  for (std::size_t k = 0; k < p.times.size(); ++k) {
    if (!(p.times[k] > 0) || (k > 0 && p.times[k] <= p.times[k - 1])) {
      throw ConfigError("fisher.times must be positive and increasing");
    }
  }
  if (law.atomic() && p.times.front() < kScoreTimeFloor) {
    throw ConfigError("fisher.times below t_min = " + std::to_string(kScoreTimeFloor) + " for an atomic law");
  }
  if (p.subintervals % 2 != 0) throw ConfigError("fisher.subintervals must be even");
  at_least(p.n, 101, "fisher.n");
  return p;
}

LiberationParams LiberationParams::from_json(const nlohmann::json& j) {
  Section s(j, "liberation");
  LiberationParams p;
  p.trace_p = s.get("trace_p", p.trace_p);
  p.trace_q = s.get("trace_q", p.trace_q);
  p.N = s.get("N", p.N);
  p.T = s.get("T", p.T);
  p.steps = s.get("steps", p.steps);
  p.trials = s.get("trials", p.trials);
  p.window = s.get("window", p.window);
  p.fit_degree = s.get("fit_degree", p.fit_degree);
  p.z_bound = s.get("z_bound", p.z_bound);
  s.finish();

  if (!(p.trace_p > 0 && p.trace_p < 1 && p.trace_q > 0 && p.trace_q < 1)) {
    throw ConfigError("liberation traces must lie in (0,1)");
  }
  positive(p.T, "liberation.T");
  at_least(p.N, 2, "liberation.N");
  at_least(p.trials, 2, "liberation.trials");
  if (p.fit_degree == 0) throw ConfigError("liberation.fit_degree must be at least 1");
  if (p.window <= p.fit_degree || p.window > p.steps) {
    throw ConfigError("liberation.window must exceed fit_degree and not exceed steps");
  }
  return p;
}

}  // namespace freesde
