#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "freesde/generator.hpp"
#include "freesde/spectral.hpp"

namespace freesde {

using Mat = Eigen::MatrixXcd;
using Rng = std::mt19937_64;

// splitmix64 of (master, trial); the per-trial stream never depends on scheduling
std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial);
inline Rng trial_rng(std::uint64_t master, std::uint64_t trial) { return Rng(trial_seed(master, trial)); }

// Runs body(trial) for trial = 0..trials−1 on up to `threads` workers; the first exception is rethrown.
void parallel_trials(std::size_t trials, unsigned threads, const std::function<void(std::size_t)>& body);

// normalized trace tr_N
cplx ntr(const Mat& a);
// tr_N(ab) in O(N²)
cplx ntr_product(const Mat& a, const Mat& b);
double hermitian_defect(const Mat& a);
double unitary_defect(const Mat& u);
void symmetrize(Mat& a);
// exp(iH)
Mat expi(const Mat& h);
// Newton–Schulz polar iteration; returns the final defect
double restore_unitary(Mat& u, double target = 1e-13);

// Entries i<j complex Gaussian with E|z|² = dt/N, diagonal real with variance dt/N.
Mat gue_increment(std::size_t N, double dt, Rng& rng);
void add_gue_increment(Mat& target, double dt, Rng& rng);

// Matrices substituted for letters; an unbound unitary adjoint letter uses the adjoint of its letter.
using Bindings = std::map<Letter, Mat>;
Mat eval_matrix(const NCPolyD& p, const Bindings& b, std::size_t N);

struct MatrixPath {
  std::size_t N = 0;
  std::uint64_t seed = 0;
  std::vector<double> times;
  std::vector<std::string> names;
  std::vector<std::vector<Mat>> frames;  // frames[process][k]

  std::size_t process(std::string_view name) const;
  const Mat& frame(std::string_view name, std::size_t k) const { return frames[process(name)][k]; }
  void add_process(std::string name) {
    names.push_back(std::move(name));
    frames.emplace_back();
  }
  // little endian: u64 N, u64 #times, u64 #processes, doubles times, then per process and time
  // an N×N row-major block of (re, im) doubles
  void write_binary(std::ostream& out) const;
  static MatrixPath read_binary(std::istream& in);
};

struct EulerOptions {
  std::size_t record_every = 1;
  bool record_noise = false;   // adds processes "S1".. with the driving noise
  double blowup = 1e6;         // |tr_N X| guard
};

// X_{k+1} = X_k + Q(s_k, X_k) dt + ΔS_k for brownian-kind specs (letters = g.generators).
MatrixPath euler_forward(const GeneratorSpec& g, const std::vector<Mat>& x0, double T, std::size_t steps,
                         Rng& rng, const EulerOptions& opt = {});

enum class UnitaryStep : std::uint8_t { exponential, euler_polar };

struct UnitaryOptions {
  UnitaryStep step = UnitaryStep::exponential;
  std::size_t record_every = 1;
  double max_defect = 1e-8;
};

// U_{k+1} = exp(iΔS_k) U_k, or (1 + iΔS_k − dt/2) U_k followed by a polar restoration.
MatrixPath free_unitary_bm(std::size_t N, double T, std::size_t steps, Rng& rng, const UnitaryOptions& opt = {});

enum class Overlap : std::uint8_t { nested, independent };

struct LiberationOptions {
  UnitaryOptions unitary;
  Overlap overlap = Overlap::nested;
};

// Diagonal projections P, Q; P_t = U_t P U_t^*. Processes "P", "Q", "U".
MatrixPath liberation_traj(double trace_p, double trace_q, std::size_t N, double T, std::size_t steps, Rng& rng,
                           const LiberationOptions& opt = {});
Mat diagonal_projection(std::size_t N, std::size_t rank, std::size_t offset = 0);

// Σ_k a_k ΔS_k b_k with U = Σ a⊗b evaluated on values observed no later than each cell's left end.
class ItoIntegral {
 public:
  explicit ItoIntegral(std::size_t N);
  void add(const BiPolyD& u, const Bindings& values, double observed_at, double t0, double t1, const Mat& ds);
  const Mat& value() const { return sum_; }
  // Σ dt Σ_ij tr(a_i^* a_j) tr(b_j b_i^*)
  double isometry_rhs() const { return rhs_; }

 private:
  std::size_t N_;
  Mat sum_;
  double rhs_ = 0.0;
};

// Path form: cell k uses frame eval_frame[k] of the bound processes; eval_frame[k] > k is rejected.
Mat stochastic_integral(const BiPolyD& u, const MatrixPath& path, std::string_view noise,
                        const std::map<Letter, std::string>& letters, const std::vector<std::size_t>& eval_frame);

// Σ (X_{k+1}−X_k)(Y_{k+1}−Y_k) over frames taken every `stride`
Mat quadratic_variation(const MatrixPath& path, std::string_view x, std::string_view y, std::size_t stride = 1);
struct QvPoint {
  double mesh;
  cplx trace;
};
std::vector<QvPoint> qv_refinement(const MatrixPath& path, std::string_view x, std::string_view y, std::size_t levels);
// Σ tr(ΔS b ΔS d)
cplx sandwiched_qv(const MatrixPath& path, std::string_view s, const Mat& b, const Mat& d, std::size_t stride = 1);

// Matrix form of δ*(a⊗b) = aξb − Σ a₁ tr(a₂) b − Σ a tr(b₁) b₂ for the free difference quotient in x.
Mat matrix_dstar(const BiPolyD& u, Letter x, const Bindings& b, const Mat& xi);

// Reversed SDE dX̄ = (−ξ̄ − Q) ds + dS̄ with fresh noise, from X̄_0 = x_T; stops at s = T − dt.
MatrixPath reversed_euler(const GeneratorSpec& forward, const ConjugateLaw& law, double T, std::size_t steps,
                          const std::vector<Mat>& x_T, Rng& rng, const EulerOptions& opt = {});
// One variable, Q = 0, drift −ξ_{T−s} from the spectral run applied by functional calculus.
MatrixPath reversed_euler(const ForwardRun& spectral, const Mat& x_T, Rng& rng, const EulerOptions& opt = {});

// Streaming construction of S̄ from a forward path with ξ_w = X_w/(σ²+w):
// A(v) = S_v − sign·∫_0^v ξ_w dw on piecewise-linear X, and S̄_{T−v} = A(v) − A(T).
// sign = −1 gives the +ξ̄ negative control.
class ReversedNoise {
 public:
  ReversedNoise(std::size_t N, double sigma2, double sign = 1.0);
  // forward cell [w0, w1]; x0, x1 the process at both ends, s1 the noise at w1
  void step(double w0, double w1, const Mat& x0, const Mat& x1, const Mat& s1);
  const Mat& A() const { return a_; }

 private:
  double sigma2_, sign_;
  Mat j_, a_;
};

struct LevyTrial {
  std::vector<double> times;           // increasing
  std::vector<Mat> z;                  // candidate at each time
  std::vector<std::vector<Mat>> past;  // observables known at each time (at least one)
};

// Per-trial statistics:
// martingale: tr((Z_{k+1}−Z_k) M_k) for every observable M_k;
// fourth: tr((Z_k−Z_0)^4) for k ≥ 1;
// covariance: tr(ΔZ A ΔZ A) − Δt tr(A)² with A = M_k + 1 for the first observable.
struct LevyStatistics {
  std::vector<double> martingale, fourth, lags, covariance;
};
LevyStatistics levy_statistics(const LevyTrial& t);

struct LevyCondition {
  std::string name;
  double worst_z = 0.0;    // max |mean|/SE over the statistics of the condition
  double value = 0.0;      // fitted exponent for the fourth-moment condition
  bool pass = false;
};

struct LevyReport {
  LevyCondition martingale, fourth_moment, covariance;
  bool pass() const { return martingale.pass && fourth_moment.pass && covariance.pass; }
  nlohmann::json to_json() const;
};

LevyReport levy_test(const std::vector<LevyStatistics>& trials, double z_bound = 3.0, double min_exponent = 1.4);

// ∫_u^v U#dS̄ + ∫_{T−v}^{T−u} U_{T−s}#dS − ∫_u^v δ*_s(U_s) ds on one forward path, streamed over forward cells.
// U is a biprocess in the letter x evaluated at X̄_s = X_{T−s}; ξ at forward time w is X_w/(σ²+w).
class ReversalIdentity {
 public:
  ReversalIdentity(BiPolyD u, Letter x, double T, double u0, double v0, double sigma2, std::size_t N);
  // forward cell [w0,w1]: X at both ends, dS = ΔS and dA = ΔA from ReversedNoise
  void step(double w0, double w1, const Mat& x0, const Mat& x1, const Mat& ds, const Mat& da);
  Mat residual_matrix() const { return reversed_ + forward_ - dstar_; }
  // sqrt tr_N(R^* R)
  double residual() const;

 private:
  BiPolyD u_;
  Letter x_;
  double T_, u0_, v0_, sigma2_;
  Mat reversed_, forward_, dstar_;
};

struct Projection {
  Mat p;
  std::size_t rank = 0;
  double gap = 0.0;          // smallest kept-out eigenvalue of 2 − A − B
  bool ill_conditioned = false;
};

// Projection onto range(A) ∩ range(B) from the null space of 2 − A − B.
Projection wedge_projection(const Mat& a, const Mat& b, double tol = 1e-8);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
MeanSe mean_se(const std::vector<double>& xs);

}  // namespace freesde
