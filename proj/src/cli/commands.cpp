#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "freesde/cli.hpp"
#include "freesde/text.hpp"
#include "schema.hpp"

namespace freesde {

using detail::Section;

namespace {

std::string fmt(double v) { return format_double(v); }

nlohmann::json report_header(const RunConfig& c) {
  return {{"command", c.command}, {"seed", c.seed}, {"config_hash", config_hash(c)}, {"git_rev", git_revision()}};
}

void finish_report(CommandResult& r, bool pass) {
  r.exit_code = pass ? kExitPass : kExitCheckFailure;
  r.report["pass"] = pass;
}

LetterKind parse_kind(const std::string& k) {
  if (k == "self_adjoint") return LetterKind::self_adjoint;
  if (k == "projection") return LetterKind::projection;
  if (k == "unitary") return LetterKind::unitary;
  throw ConfigError("unknown letter kind '" + k + "'");
}

MomentState initial_state(Section s, const Alphabet& names, const std::vector<Letter>& letters, std::size_t d) {
  const auto type = s.require<std::string>("type");
  MomentState out;
  if (type == "semicircle") {
    const double v = s.get("variance", 0.0);
    if (v < 0) throw ConfigError("moments.initial.variance must be non-negative");
    bool first = true;
    for (const auto& l : letters) {
      if (l.kind != LetterKind::self_adjoint) throw ConfigError("semicircle initial state needs self-adjoint letters");
      auto one = semicircle_state(v, d, l);
      out = first ? one : free_join(out, one, d);
      first = false;
    }
  } else if (type == "projections") {
    const auto traces = s.require<std::map<std::string, double>>("traces");
    const auto coupling = s.get<std::string>("coupling", "free");
    std::vector<std::pair<Letter, double>> ps;
    for (const auto& l : letters) {
      auto it = traces.find(names.name(l));
      if (l.kind != LetterKind::projection || it == traces.end()) {
        throw ConfigError("projection initial state needs a trace for every letter, all projections");
      }
      if (!(it->second >= 0 && it->second <= 1)) throw ConfigError("projection traces must lie in [0,1]");
      ps.emplace_back(l, it->second);
    }
    if (traces.size() != ps.size()) throw ConfigError("moments.initial.traces names unknown letters");
    if (coupling == "free") {
      for (std::size_t i = 0; i < ps.size(); ++i) {
        auto one = projection_state(ps[i].second, d, ps[i].first);
        out = i == 0 ? one : free_join(out, one, d);
      }
    } else if (coupling == "nested") {
      // commuting diagonal projections 1_{[0, τ_k)} on [0,1]
      std::vector<double> cuts{0.0, 1.0};
      for (const auto& [l, t] : ps) cuts.push_back(t);
      std::sort(cuts.begin(), cuts.end());
      std::vector<std::vector<cplx>> values;
      std::vector<double> weights;
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        if (cuts[i + 1] <= cuts[i]) continue;
        std::vector<cplx> v;
        for (const auto& [l, t] : ps) v.emplace_back(cuts[i] < t ? 1.0 : 0.0);
        values.push_back(std::move(v));
        weights.push_back(cuts[i + 1] - cuts[i]);
      }
      out = commuting_state(letters, values, weights, d);
    } else {
      throw ConfigError("moments.initial.coupling must be 'free' or 'nested'");
    }
  } else if (type == "state") {
    try {
      out = MomentState::from_json(s.raw("state"), names);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("moments.initial.state: ") + e.what());
    }
  } else {
    throw ConfigError("unknown initial state type '" + type + "'");
  }
  s.finish();
  return out;
}

std::string marginals_csv(const ReverseResult& r) {
  std::ostringstream o;
  o << "s,degree,reversed_mean,reversed_se,forward_mean,forward_se,pass\n";
  for (const auto& m : r.marginals) {
    o << fmt(m.s) << ',' << m.degree << ',' << fmt(m.reversed.mean) << ',' << fmt(m.reversed.se) << ','
      << fmt(m.forward.mean) << ',' << fmt(m.forward.se) << ',' << (m.pass ? 1 : 0) << '\n';
  }
  return o.str();
}

std::string identity_csv(const ReverseResult& r) {
  std::ostringstream o;
  o << "biprocess,steps,residual_mean,residual_se\n";
  for (const auto& i : r.identity) {
    o << i.biprocess << ',' << i.steps << ',' << fmt(i.residual.mean) << ',' << fmt(i.residual.se) << '\n';
  }
  return o.str();
}

}  // namespace

CommandResult cmd_moments(const RunConfig& c) {
  Section s(c.params, "moments");
  Alphabet names;
  std::vector<Letter> letters;
  const nlohmann::json default_letters = nlohmann::json::array({{{"name", "X"}}});
  const auto& lj = s.has("letters") ? s.raw("letters") : default_letters;
  if (!lj.is_array() || lj.empty()) throw ConfigError("moments.letters must be a non-empty array");
  for (const auto& l : lj) {
    Section ls(l, "moments.letters[]");
    const auto name = ls.require<std::string>("name");
    const auto kind = parse_kind(ls.get<std::string>("kind", "self_adjoint"));
    const auto family = ls.get<std::uint16_t>("family", 0);
    ls.finish();
    if (names.contains(name)) throw ConfigError("duplicate letter '" + name + "'");
    letters.push_back(names.add(name, kind, family));
  }
  GeneratorSpec g;
  if (s.has("generator")) {
    try {
      g = GeneratorSpec::from_json(s.raw("generator"), names);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("moments.generator: ") + e.what());
    }
  } else {
    g = GeneratorSpec::brownian(letters);
  }
  const auto degree = s.get<std::size_t>("degree", 6);
  const double T = s.get("T", 1.0);
  if (!(T > 0)) throw ConfigError("moments.T must be positive");
  auto steps = s.get<std::size_t>("steps", 0);
  if (steps == 0) steps = recommended_steps(T, degree);
  const nlohmann::json default_initial{{"type", "semicircle"}, {"variance", 0.0}};
  auto s0 = initial_state(s.has("initial") ? s.child("initial") : Section(default_initial, "moments.initial"), names,
                          letters, degree);
  std::vector<Word> words;
  bool all_words = true;
  if (s.has("words")) {
    all_words = false;
    for (const auto& w : s.require<std::vector<std::string>>("words")) words.push_back(names.parse_word(w));
  }
  s.finish();

  const auto traj = evolve_moments(g, s0, T, steps);
  CommandResult r;
  r.primary = "moments.csv";
  if (all_words || !words.empty()) {
    r.files[r.primary] = traj.to_csv(names, words);
  } else {
    r.files[r.primary] = "t,word,re,im\n";
  }
  r.report = report_header(c);
  r.report["degree"] = degree;
  r.report["steps"] = steps;
  r.report["T"] = T;
  r.report["generator"] = g.to_json(names);
  finish_report(r, true);
  return r;
}

CommandResult cmd_reverse(const RunConfig& c) {
  const auto p = ReverseParams::from_json(c.params);
  const auto res = run_reverse(p, c.seed, c.threads);
  CommandResult r;
  r.primary = "marginals.csv";
  r.files["marginals.csv"] = marginals_csv(res);
  r.files["identity.csv"] = identity_csv(res);
  nlohmann::json levy{{"constructed", res.levy.to_json()}, {"negative_control", res.negative.to_json()}};
  r.files["levy.json"] = levy.dump(2) + "\n";
  r.report = report_header(c);
  nlohmann::json fits = nlohmann::json::array();
  for (const auto& f : res.fits) {
    fits.push_back({{"biprocess", f.biprocess}, {"order", f.order}, {"terminal", f.terminal}, {"pass", f.pass}});
  }
  r.report["checks"] = {{"marginals", res.marginals_pass},
                        {"levy", res.levy_pass},
                        {"negative_control_rejected", res.negative_pass},
                        {"identity", res.identity_pass}};
  r.report["negative_control_mode"] = p.negative_control;
  r.report["levy"] = levy;
  r.report["identity_fits"] = fits;
  finish_report(r, res.pass());
  return r;
}

CommandResult cmd_fisher(const RunConfig& c) {
  const auto p = FisherParams::from_json(c.params);
  const auto res = run_fisher(p);
  CommandResult r;
  r.primary = "fisher.csv";
  std::ostringstream f, iv;
  f << "t,phi,dirichlet,lower,upper\n";
  for (const auto& row : res.rows) {
    f << fmt(row.t) << ',' << fmt(row.phi) << ',' << fmt(row.dirichlet) << ',' << fmt(row.lower) << ','
      << fmt(row.upper) << '\n';
  }
  iv << "t0,t1,phi_drop,integral,gap\n";
  for (const auto& i : res.intervals) {
    iv << fmt(i.t0) << ',' << fmt(i.t1) << ',' << fmt(i.phi_drop) << ',' << fmt(i.integral) << ',' << fmt(i.gap)
       << '\n';
  }
  r.files["fisher.csv"] = f.str();
  r.files["intervals.csv"] = iv.str();
  r.report = report_header(c);
  r.report["semicircular"] = res.semicircular;
  r.report["checks"] = {{"bounds", res.bounds_pass},
                        {"monotone", res.monotone_pass},
                        {"gap", res.gap_pass},
                        {"equality", res.equality_pass}};
  finish_report(r, res.pass());
  return r;
}

CommandResult cmd_liberation(const RunConfig& c) {
  const auto p = LiberationParams::from_json(c.params);
  const auto res = run_liberation(p, c.seed, c.threads);
  CommandResult r;
  r.primary = "liberation.csv";
  std::ostringstream o;
  o << "s,F_mean,F_se\n";
  for (std::size_t k = 0; k < res.s.size(); ++k) {
    o << fmt(res.s[k]) << ',' << fmt(res.f[k].mean) << ',' << fmt(res.f[k].se) << '\n';
  }
  r.files["liberation.csv"] = o.str();
  r.report = report_header(c);
  nlohmann::json sym = nlohmann::json::array();
  for (const auto& t : res.symbolic) sym.push_back({{"term", t.term}, {"normal_form", t.normal_form}, {"zero", t.zero}});
  r.report["symbolic"] = sym;
  r.report["trivial"] = res.trivial;
  r.report["ranks"] = res.ranks;
  r.report["slope"] = {{"mean", res.slope.mean}, {"se", res.slope.se}};
  r.report["checks"] = {{"symbolic", res.symbolic_pass}, {"slope", res.slope_pass}};
  finish_report(r, res.pass());
  return r;
}

CommandResult run_command(const RunConfig& c) {
  if (c.command == "moments") return cmd_moments(c);
  if (c.command == "reverse") return cmd_reverse(c);
  if (c.command == "fisher") return cmd_fisher(c);
  if (c.command == "liberation") return cmd_liberation(c);
  throw ConfigError("unknown command '" + c.command + "'");
}

void write_outputs(const CommandResult& r, const RunConfig& c, std::ostream& out) {
  if (c.out.empty()) {
    out << r.files.at(r.primary);
    return;
  }
  namespace fs = std::filesystem;
  const fs::path dir(c.out);
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw Error("cannot write " + (dir / name).string());
    f << text;
  };
  for (const auto& [name, text] : r.files) write(name, text);
  write("report.json", r.report.dump(2) + "\n");
}

int execute(const RunConfig& c, std::ostream& out, std::ostream& err) {
  try {
    const auto r = run_command(c);
    write_outputs(r, c, out);
    if (r.exit_code == kExitCheckFailure) err << c.command << ": check failed\n";
    return r.exit_code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const AlphabetError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const PsdViolation& e) {
    err << "check failed: " << e.what() << '\n';
    return kExitCheckFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace freesde
