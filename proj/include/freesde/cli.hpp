#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "freesde/matrixmc.hpp"
#include "freesde/spectral.hpp"

namespace freesde {

enum ExitCode : int { kExitPass = 0, kExitRuntime = 1, kExitCheckFailure = 2, kExitConfig = 3 };

struct RunConfig {
  std::string command;        // moments | reverse | fisher | liberation
  nlohmann::json params;      // command section, validated by the command
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out;            // output directory ("" = stdout)
};

// {"command": ..., "seed": ..., "threads": ..., "<command>": {...}}; unknown keys throw ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
// FNV-1a 64 over the canonical dump of the command section plus seed, as 16 hex digits.
std::string config_hash(const RunConfig& c);
std::string git_revision();

struct CommandResult {
  int exit_code = kExitPass;
  std::string primary;                        // name of the main CSV in files
  std::map<std::string, std::string> files;   // file name → contents
  nlohmann::json report;
};

CommandResult cmd_moments(const RunConfig& c);
CommandResult cmd_reverse(const RunConfig& c);
CommandResult cmd_fisher(const RunConfig& c);
CommandResult cmd_liberation(const RunConfig& c);
CommandResult run_command(const RunConfig& c);

// Writes every file and report.json into c.out, or the primary CSV to `out` when c.out is empty.
void write_outputs(const CommandResult& r, const RunConfig& c, std::ostream& out);
// run_command plus write_outputs; errors are reported on `err` and mapped to exit codes.
int execute(const RunConfig& c, std::ostream& out, std::ostream& err);

// Reversal pipeline: forward GUE path, constructed S̄, fresh reversed Euler run, Lévy tests and the
// reversal identity. Defaults are the acceptance sizes.
struct ReverseParams {
  std::size_t N = 512;
  double T = 1.0;
  std::size_t steps = 800;
  std::size_t trials = 100;
  double x0_variance = 0.0;                 // X_0 GUE of this variance (0: X_0 = 0)
  std::vector<double> times{0.2, 0.5, 0.8}; // reversed times for the marginal comparison
  unsigned max_degree = 4;
  std::size_t levy_points = 10;             // S̄ sampled at s = kT/levy_points, k < levy_points
  bool negative_control = false;            // verdict taken from the +ξ̄ construction
  double z_bound = 3.0;
  double negative_z = 5.0;
  double min_exponent = 1.4;
  double marginal_floor = 0.02;
  bool identity = true;
  std::size_t identity_N = 64;
  std::size_t identity_trials = 4;
  std::vector<std::size_t> meshes{400, 800, 1600};
  double identity_u = 0.2, identity_v = 0.8;
  double min_order = 0.4;
  double max_terminal = 0.05;

  static ReverseParams from_json(const nlohmann::json& j);
};

struct MarginalRow {
  double s;
  unsigned degree;
  MeanSe reversed, forward;
  bool pass;
};

struct IdentityRow {
  std::string biprocess;
  std::size_t steps;
  MeanSe residual;
};

struct IdentityFit {
  std::string biprocess;
  double order;
  double terminal;
  bool pass;
};

struct ReverseResult {
  std::vector<MarginalRow> marginals;
  LevyReport levy, negative;
  std::vector<IdentityRow> identity;
  std::vector<IdentityFit> fits;
  bool negative_control = false;
  bool marginals_pass = false, levy_pass = false, negative_pass = false, identity_pass = false;
  // with negative_control the verdict is the Lévy test of the +ξ̄ construction
  bool pass() const;
};

ReverseResult run_reverse(const ReverseParams& p, std::uint64_t seed, unsigned threads);

// Free Fisher information along the heat flow and the gap
// Φ*(X_t) − Φ*(X_s) − ∫_t^s ‖∂ξ_u‖² du on consecutive sample times.
struct FisherParams {
  nlohmann::json law = {{"type", "point_mass"}};
  std::vector<double> times;                // sample times, increasing
  std::size_t subintervals = 40;            // Simpson subintervals per tested interval
  std::size_t n = 4001;
  double gap_tolerance = 1e-3;
  double relative_tolerance = 1e-3;
  bool bounds = true;                       // check the two Fisher bounds and monotonicity

  static FisherParams from_json(const nlohmann::json& j);
};

InitialLaw law_from_json(const nlohmann::json& j);

struct FisherRow {
  double t, phi, dirichlet, lower, upper;
};

struct FisherInterval {
  double t0, t1, phi_drop, integral, gap;
};

struct FisherResult {
  std::vector<FisherRow> rows;
  std::vector<FisherInterval> intervals;
  bool semicircular = false;
  bool bounds_pass = true, monotone_pass = true, gap_pass = true, equality_pass = true;
  bool pass() const { return bounds_pass && monotone_pass && gap_pass && equality_pass; }
};

FisherResult run_fisher(const FisherParams& p);

// Check of F̄_T(s) = τ((r_T P_{T−s} r_T − r_T)²) near s = 0 with r_T = P_T ∧ Q.
struct LiberationParams {
  double trace_p = 0.7, trace_q = 0.6;
  std::size_t N = 96;
  double T = 1.0;
  std::size_t steps = 400;
  std::size_t trials = 24;
  std::size_t window = 40;    // reversed-time samples s_k = k·dt, k ≤ window
  unsigned fit_degree = 3;
  double z_bound = 3.0;

  static LiberationParams from_json(const nlohmann::json& j);
};

struct SymbolicCheck {
  std::string term;
  std::string normal_form;
  bool zero;
};

struct LiberationResult {
  std::vector<SymbolicCheck> symbolic;
  std::vector<double> s;
  std::vector<MeanSe> f;
  std::vector<std::size_t> ranks;   // rank of r_T per trial
  bool trivial = false;             // r_T = 0 in every trial
  MeanSe slope;                     // fitted F̄′(0) across trials
  bool symbolic_pass = false, slope_pass = false;
  bool pass() const { return symbolic_pass && slope_pass; }
};

std::vector<SymbolicCheck> liberation_correction_terms();
LiberationResult run_liberation(const LiberationParams& p, std::uint64_t seed, unsigned threads);

}  // namespace freesde
