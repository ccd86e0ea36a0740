#include "freesde/matrixmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include <boost/random/normal_distribution.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "freesde/error.hpp"
#include "freesde/text.hpp"

namespace freesde {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Mat identity(std::size_t N) { return Mat::Identity(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N)); }

const Mat& bound(const Bindings& b, const Letter& l) {
  auto it = b.find(l);
  if (it != b.end()) return it->second;
  throw Error("no matrix bound for letter " + default_letter_name(l));
}

Mat eval_word(const Word& w, const Bindings& b, std::size_t N) {
  if (w.empty()) return identity(N);
  auto value = [&](const Letter& l) -> Mat {
    auto it = b.find(l);
    if (it != b.end()) return it->second;
    if (l.kind == LetterKind::unitary_adjoint || l.kind == LetterKind::unitary) return bound(b, adjoint(l)).adjoint();
    return bound(b, l);
  };
  Mat out = value(w[0]);
  for (std::size_t i = 1; i < w.size(); ++i) out = out * value(w[i]);
  return out;
}

struct EvaluatedTerm {
  Mat a, b;
};

std::vector<EvaluatedTerm> eval_bi(const BiPolyD& u, const Bindings& b, std::size_t N) {
  std::vector<EvaluatedTerm> out;
  for (const auto& [k, c] : u.terms()) out.push_back({eval_word(k[0], b, N) * c, eval_word(k[1], b, N)});
  return out;
}

Mat sharp_matrix(const std::vector<EvaluatedTerm>& terms, const Mat& ds) {
  Mat out = Mat::Zero(ds.rows(), ds.cols());
  for (const auto& t : terms) out.noalias() += t.a * ds * t.b;
  return out;
}

void check_trace(const Mat& x, double blowup) {
  const cplx t = ntr(x);
  if (!std::isfinite(t.real()) || !std::isfinite(t.imag()) || std::abs(t) > blowup) {
    throw Error("trace blow-up: |tr X| = " + format_double(std::abs(t)));
  }
}

using DriftFn = std::function<void(double s, const std::vector<Mat>& x, std::vector<Mat>& out)>;

// Euler–Maruyama from time 0 for `steps` steps of size dt
MatrixPath euler_run(const DriftFn& drift, std::vector<Mat> x, double dt, std::size_t steps, Rng& rng,
                     const EulerOptions& opt, const std::vector<std::string>& names) {
  MatrixPath path;
  path.N = static_cast<std::size_t>(x.at(0).rows());
  for (const auto& n : names) path.add_process(n);
  const std::size_t n = x.size();
  if (opt.record_noise) {
    for (std::size_t i = 0; i < n; ++i) path.add_process("S" + std::to_string(i + 1));
  }
  std::vector<Mat> noise(opt.record_noise ? n : 0, Mat::Zero(x[0].rows(), x[0].cols()));
  std::vector<Mat> q(n);
  auto record = [&](double t) {
    path.times.push_back(t);
    for (std::size_t i = 0; i < n; ++i) path.frames[i].push_back(x[i]);
    for (std::size_t i = 0; i < noise.size(); ++i) path.frames[n + i].push_back(noise[i]);
  };
  record(0.0);
  const auto every = std::max<std::size_t>(opt.record_every, 1);
  for (std::size_t k = 0; k < steps; ++k) {
    const double s = dt * static_cast<double>(k);
    drift(s, x, q);
    for (std::size_t i = 0; i < n; ++i) {
      if (q[i].size() != 0) x[i].noalias() += q[i] * dt;
      if (opt.record_noise) {
        Mat d = gue_increment(path.N, dt, rng);
        x[i] += d;
        noise[i] += d;
      } else {
        add_gue_increment(x[i], dt, rng);
      }
      symmetrize(x[i]);
      check_trace(x[i], opt.blowup);
    }
    if ((k + 1) % every == 0 || k + 1 == steps) record(dt * static_cast<double>(k + 1));
  }
  return path;
}

DriftFn spec_drift(const GeneratorSpec& g) {
  if (g.kind != GeneratorSpec::Kind::brownian) throw ConfigError("euler_forward needs a brownian-kind generator");
  return [g](double s, const std::vector<Mat>& x, std::vector<Mat>& out) {
    const auto N = static_cast<std::size_t>(x.at(0).rows());
    // affine drifts are evaluated straight from the state; others go through bindings
    auto affine = [&](const NCPolyD& q, Mat& dst) {
      for (const auto& [k, c] : q.terms()) {
        if (k[0].size() > 1) return false;
      }
      dst.setZero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
      for (const auto& [k, c] : q.terms()) {
        if (k[0].empty()) {
          dst.diagonal().array() += c;
          continue;
        }
        const auto it = std::find(g.generators.begin(), g.generators.end(), k[0][0]);
        if (it == g.generators.end()) throw Error("drift letter is not a generator");
        dst += c * x[static_cast<std::size_t>(it - g.generators.begin())];
      }
      return true;
    };
    std::optional<Bindings> b;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Drift* d = g.drift(i);
      if (!d || d->empty()) {
        out[i] = Mat();
        continue;
      }
      const auto q = d->at(s);
      if (affine(q, out[i])) continue;
      if (!b) {
        b.emplace();
        for (std::size_t j = 0; j < g.generators.size(); ++j) (*b)[g.generators[j]] = x[j];
      }
      out[i] = eval_matrix(q, *b, N);
    }
  };
}

std::vector<std::string> process_names(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("X" + std::to_string(i + 1));
  return names;
}

}  // namespace

std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial) {
  return splitmix64(master ^ splitmix64(trial + 0x632be59bd9b4e019ULL));
}

void parallel_trials(std::size_t trials, unsigned threads, const std::function<void(std::size_t)>& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(trials, 1))));
  if (threads == 1) {
    for (std::size_t t = 0; t < trials; ++t) body(t);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t t = next++; t < trials; t = next++) {
        try {
          body(t);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
          next = trials;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

cplx ntr(const Mat& a) { return a.trace() / static_cast<double>(a.rows()); }

cplx ntr_product(const Mat& a, const Mat& b) {
  // Σ_ij a_ij b_ji
  return (a.array() * b.transpose().array()).sum() / static_cast<double>(a.rows());
}

double hermitian_defect(const Mat& a) { return (a - a.adjoint()).cwiseAbs().maxCoeff(); }

double unitary_defect(const Mat& u) { return (u.adjoint() * u - identity(u.rows())).cwiseAbs().maxCoeff(); }

Mat expi(const Mat& h) { return (cplx(0, 1) * h).exp(); }

void symmetrize(Mat& a) {
  // blocked in place so both triangles stay in cache
  const Eigen::Index n = a.rows(), B = 32;
  for (Eigen::Index j0 = 0; j0 < n; j0 += B) {
    for (Eigen::Index i0 = j0; i0 < n; i0 += B) {
      const Eigen::Index i1 = std::min(i0 + B, n), j1 = std::min(j0 + B, n);
      for (Eigen::Index j = j0; j < j1; ++j) {
        for (Eigen::Index i = std::max(i0, j); i < i1; ++i) {
          const cplx v = 0.5 * (a(i, j) + std::conj(a(j, i)));
          a(i, j) = v;
          a(j, i) = std::conj(v);
        }
      }
    }
  }
}

double restore_unitary(Mat& u, double target) {
  const auto N = static_cast<std::size_t>(u.rows());
  double defect = 0.0;
  for (int it = 0; it < 30; ++it) {
    Mat g = u.adjoint() * u;
    defect = (g - identity(N)).cwiseAbs().maxCoeff();
    if (defect <= target) return defect;
    if (defect >= 1.0) break;
    u = (u * (3.0 * identity(N) - g) * 0.5).eval();
  }
  return defect;
}

void add_gue_increment(Mat& target, double dt, Rng& rng) {
  if (!(dt > 0)) throw Error("gue_increment needs dt > 0");
  const auto N = target.rows();
  boost::random::normal_distribution<double> normal;
  const double sd = std::sqrt(dt / static_cast<double>(N));
  const double off = sd / std::sqrt(2.0);
  for (Eigen::Index j = 0; j < N; ++j) {
    target(j, j) += sd * normal(rng);
    for (Eigen::Index i = j + 1; i < N; ++i) {
      const double re = off * normal(rng);
      const double im = off * normal(rng);
      target(i, j) += cplx(re, im);
      target(j, i) += cplx(re, -im);
    }
  }
}

Mat gue_increment(std::size_t N, double dt, Rng& rng) {
  Mat m = Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  add_gue_increment(m, dt, rng);
  return m;
}

Mat eval_matrix(const NCPolyD& p, const Bindings& b, std::size_t N) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  for (const auto& [k, c] : p.terms()) {
    const Word& w = k[0];
    if (w.empty()) {
      out.diagonal().array() += c;
    } else if (w.size() == 1 && b.count(w[0])) {
      out += c * b.at(w[0]);
    } else {
      out += c * eval_word(w, b, N);
    }
  }
  return out;
}

std::size_t MatrixPath::process(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw Error("path has no process " + std::string(name));
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("truncated path dump");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  const auto v = get_u64(in);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void MatrixPath::write_binary(std::ostream& out) const {
  put_u64(out, N);
  put_u64(out, times.size());
  put_u64(out, frames.size());
  for (double t : times) put_f64(out, t);
  for (const auto& proc : frames) {
    if (proc.size() != times.size()) throw Error("process frame count differs from the time grid");
    for (const auto& m : proc) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
          put_f64(out, m(i, j).real());
          put_f64(out, m(i, j).imag());
        }
      }
    }
  }
}

MatrixPath MatrixPath::read_binary(std::istream& in) {
  MatrixPath p;
  p.N = get_u64(in);
  const auto nt = get_u64(in), np = get_u64(in);
  for (std::uint64_t k = 0; k < nt; ++k) p.times.push_back(get_f64(in));
  const auto N = static_cast<Eigen::Index>(p.N);
  for (std::uint64_t q = 0; q < np; ++q) {
    p.add_process("P" + std::to_string(q));
    for (std::uint64_t k = 0; k < nt; ++k) {
      Mat m(N, N);
      for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j < N; ++j) {
          const double re = get_f64(in);
          m(i, j) = cplx(re, get_f64(in));
        }
      }
      p.frames.back().push_back(std::move(m));
    }
  }
  return p;
}

MatrixPath euler_forward(const GeneratorSpec& g, const std::vector<Mat>& x0, double T, std::size_t steps, Rng& rng,
                         const EulerOptions& opt) {
  if (!(T > 0) || steps == 0) throw ConfigError("euler_forward needs T > 0 and steps > 0");
  if (x0.size() != g.n()) throw ConfigError("initial condition count differs from the generator");
  return euler_run(spec_drift(g), x0, T / static_cast<double>(steps), steps, rng, opt, process_names(x0.size()));
}

MatrixPath reversed_euler(const GeneratorSpec& forward, const ConjugateLaw& law, double T, std::size_t steps,
                          const std::vector<Mat>& x_T, Rng& rng, const EulerOptions& opt) {
  if (steps < 2) throw ConfigError("reversed_euler needs at least two steps");
  const auto rev = reversed_drift(forward, law, T);
  // the last cell ends at s = T − dt, where ξ̄ is still finite
  return euler_run(spec_drift(rev), x_T, T / static_cast<double>(steps), steps - 1, rng, opt,
                   process_names(x_T.size()));
}

MatrixPath reversed_euler(const ForwardRun& spectral, const Mat& x_T, Rng& rng, const EulerOptions& opt) {
  const auto K = spectral.times.size() - 1;
  if (K < 2) throw ConfigError("spectral forward run too short");
  const double T = spectral.times.back();
  const double dt = T / static_cast<double>(K);
  DriftFn drift = [&](double s, const std::vector<Mat>& x, std::vector<Mat>& out) {
    // forward time T − s lies in [t_j, t_{j+1}]; scores at t_0 may be absent
    const double t = T - s;
    auto j = static_cast<std::size_t>(std::floor(t / dt + 1e-9));
    j = std::clamp<std::size_t>(j, 1, K - 1);
    const double f = std::clamp((t - spectral.times[j]) / dt, 0.0, 1.0);
    ScoreFunction a(spectral.grid, spectral.scores[j]), b(spectral.grid, spectral.scores[j + 1]);
    Eigen::SelfAdjointEigenSolver<Mat> es(x[0]);
    Eigen::VectorXd v(es.eigenvalues().size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double lam = es.eigenvalues()[i];
      v[i] = -((1 - f) * a.at(lam) + f * b.at(lam));
    }
    out[0] = es.eigenvectors() * v.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
  };
  return euler_run(drift, {x_T}, dt, K - 1, rng, opt, {"X1"});
}

MatrixPath free_unitary_bm(std::size_t N, double T, std::size_t steps, Rng& rng, const UnitaryOptions& opt) {
  if (!(T > 0) || steps == 0) throw ConfigError("free_unitary_bm needs T > 0 and steps > 0");
  const double dt = T / static_cast<double>(steps);
  MatrixPath path;
  path.N = N;
  path.add_process("U");
  Mat u = identity(N);
  const cplx i(0, 1);
  auto record = [&](double t) {
    const double defect = unitary_defect(u);
    if (defect > opt.max_defect) throw Error("unitarity drift " + format_double(defect) + " at t=" + format_double(t));
    if (defect > 1e-12) restore_unitary(u);
    path.times.push_back(t);
    path.frames[0].push_back(u);
  };
  record(0.0);
  const auto every = std::max<std::size_t>(opt.record_every, 1);
  for (std::size_t k = 0; k < steps; ++k) {
    Mat h = gue_increment(N, dt, rng);
    if (opt.step == UnitaryStep::exponential) {
      Mat e = (i * h).exp();
      u = (e * u).eval();
    } else {
      Mat step = i * h;
      step.diagonal().array() -= 0.5 * dt;
      u += step * u;
      restore_unitary(u);
    }
    if ((k + 1) % every == 0 || k + 1 == steps) record(dt * static_cast<double>(k + 1));
  }
  return path;
}

Mat diagonal_projection(std::size_t N, std::size_t rank, std::size_t offset) {
  if (rank + offset > N) throw ConfigError("projection rank exceeds the dimension");
  Mat p = Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  for (std::size_t i = offset; i < offset + rank; ++i) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 1.0;
  return p;
}

MatrixPath liberation_traj(double trace_p, double trace_q, std::size_t N, double T, std::size_t steps, Rng& rng,
                           const LiberationOptions& opt) {
  if (!(trace_p > 0 && trace_p < 1 && trace_q > 0 && trace_q < 1)) throw ConfigError("projection traces must lie in (0,1)");
  const auto rp = static_cast<std::size_t>(std::lround(trace_p * static_cast<double>(N)));
  const auto rq = static_cast<std::size_t>(std::lround(trace_q * static_cast<double>(N)));
  Mat p = diagonal_projection(N, rp);
  Mat q;
  if (opt.overlap == Overlap::nested) {
    q = diagonal_projection(N, rq);
  } else {
    // overlap rank ≈ trace_p·trace_q·N, the rest of Q placed after P
    const auto common = std::min({rp, rq, static_cast<std::size_t>(std::lround(trace_p * trace_q * static_cast<double>(N)))});
    if (rp + rq - common > N) throw ConfigError("independent coupling does not fit in dimension N");
    q = diagonal_projection(N, common) + diagonal_projection(N, rq - common, rp);
  }
  auto upath = free_unitary_bm(N, T, steps, rng, opt.unitary);
  MatrixPath path;
  path.N = N;
  path.times = upath.times;
  path.add_process("P");
  path.add_process("Q");
  path.add_process("U");
  for (auto& u : upath.frames[0]) {
    Mat pt = u * p * u.adjoint();
    symmetrize(pt);
    path.frames[0].push_back(std::move(pt));
    path.frames[1].push_back(q);
    path.frames[2].push_back(std::move(u));
  }
  return path;
}

ItoIntegral::ItoIntegral(std::size_t N)
    : N_(N), sum_(Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N))) {}

void ItoIntegral::add(const BiPolyD& u, const Bindings& values, double observed_at, double t0, double t1,
                      const Mat& ds) {
  if (observed_at > t0 + 1e-12) {
    throw AdaptednessError("integrand observed at t=" + format_double(observed_at) + " for the cell starting at " +
                           format_double(t0));
  }
  const auto terms = eval_bi(u, values, N_);
  sum_ += sharp_matrix(terms, ds);
  double r = 0.0;
  for (const auto& x : terms) {
    for (const auto& y : terms) r += (ntr_product(x.a.adjoint(), y.a) * ntr_product(y.b, x.b.adjoint())).real();
  }
  rhs_ += (t1 - t0) * r;
}

Mat stochastic_integral(const BiPolyD& u, const MatrixPath& path, std::string_view noise,
                        const std::map<Letter, std::string>& letters, const std::vector<std::size_t>& eval_frame) {
  const auto& s = path.frames[path.process(noise)];
  if (eval_frame.size() + 1 != s.size()) throw Error("one evaluation frame per cell required");
  ItoIntegral integral(path.N);
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    if (eval_frame[k] > k) {
      throw AdaptednessError("cell " + std::to_string(k) + " reads frame " + std::to_string(eval_frame[k]));
    }
    Bindings b;
    for (const auto& [l, name] : letters) b[l] = path.frame(name, eval_frame[k]);
    integral.add(u, b, path.times[eval_frame[k]], path.times[k], path.times[k + 1], s[k + 1] - s[k]);
  }
  return integral.value();
}

Mat quadratic_variation(const MatrixPath& path, std::string_view x, std::string_view y, std::size_t stride) {
  const auto& a = path.frames[path.process(x)];
  const auto& b = path.frames[path.process(y)];
  Mat qv = Mat::Zero(static_cast<Eigen::Index>(path.N), static_cast<Eigen::Index>(path.N));
  for (std::size_t k = 0; k + stride < a.size(); k += stride) qv.noalias() += (a[k + stride] - a[k]) * (b[k + stride] - b[k]);
  return qv;
}

std::vector<QvPoint> qv_refinement(const MatrixPath& path, std::string_view x, std::string_view y, std::size_t levels) {
  const auto& a = path.frames[path.process(x)];
  const auto& b = path.frames[path.process(y)];
  std::vector<QvPoint> out;
  for (std::size_t l = 0, stride = 1 << (levels - 1); l < levels; ++l, stride /= 2) {
    cplx tr = 0.0;
    for (std::size_t k = 0; k + stride < a.size(); k += stride) tr += ntr_product(a[k + stride] - a[k], b[k + stride] - b[k]);
    out.push_back({path.times[stride] - path.times[0], tr});
  }
  return out;
}

cplx sandwiched_qv(const MatrixPath& path, std::string_view s, const Mat& b, const Mat& d, std::size_t stride) {
  const auto& f = path.frames[path.process(s)];
  cplx total = 0.0;
  for (std::size_t k = 0; k + stride < f.size(); k += stride) {
    const Mat ds = f[k + stride] - f[k];
    total += ntr_product(ds * b, ds * d);
  }
  return total;
}

Mat matrix_dstar(const BiPolyD& u, Letter x, const Bindings& b, const Mat& xi) {
  const auto N = static_cast<std::size_t>(xi.rows());
  Mat out = Mat::Zero(xi.rows(), xi.cols());
  for (const auto& [k, c] : u.terms()) {
    const Word& a = k[0];
    const Word& bw = k[1];
    const Mat A = eval_word(a, b, N), B = eval_word(bw, b, N);
    Mat term = A * xi * B;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] != x) continue;
      term -= eval_word(slice(a, 0, i), b, N) * ntr(eval_word(slice(a, i + 1, a.size()), b, N)) * B;
    }
    for (std::size_t i = 0; i < bw.size(); ++i) {
      if (bw[i] != x) continue;
      term -= A * ntr(eval_word(slice(bw, 0, i), b, N)) * eval_word(slice(bw, i + 1, bw.size()), b, N);
    }
    out += c * term;
  }
  return out;
}

ReversedNoise::ReversedNoise(std::size_t N, double sigma2, double sign)
    : sigma2_(sigma2),
      sign_(sign),
      j_(Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N))),
      a_(j_) {}

void ReversedNoise::step(double w0, double w1, const Mat& x0, const Mat& x1, const Mat& s1) {
  const double h = w1 - w0;
  const double c0 = sigma2_ + w0, c1 = sigma2_ + w1;
  // ∫ (x0 + (x1−x0)(w−w0)/h)/(σ²+w) dw over the cell
  if (c0 <= 0.0) {
    if (x0.cwiseAbs().maxCoeff() > 0) throw Error("ξ = X/w is singular at w = 0 unless X_0 = 0");
    j_ += sign_ * x1;
  } else {
    const double L = std::log(c1 / c0);
    j_ += sign_ * (x0 * L + (x1 - x0) * ((h - c0 * L) / h));
  }
  a_ = s1 - j_;
}

LevyStatistics levy_statistics(const LevyTrial& t) {
  const auto K = t.times.size();
  if (K < 3 || t.z.size() != K || t.past.size() != K) throw Error("levy_statistics: inconsistent trial data");
  LevyStatistics s;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const Mat dz = t.z[k + 1] - t.z[k];
    for (const auto& m : t.past[k]) s.martingale.push_back(ntr_product(dz, m).real());
    Mat a = t.past[k].at(0);
    a.diagonal().array() += 1.0;
    const Mat b = dz * a;
    const double tra = ntr(a).real();
    s.covariance.push_back(ntr_product(b, b).real() - (t.times[k + 1] - t.times[k]) * tra * tra);
  }
  for (std::size_t k = 1; k < K; ++k) {
    const Mat dz = t.z[k] - t.z[0];
    const Mat sq = dz * dz;
    s.fourth.push_back(ntr_product(sq, sq).real());
    s.lags.push_back(t.times[k] - t.times[0]);
  }
  return s;
}

MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe r;
  if (xs.empty()) return r;
  double sum = 0.0;
  for (double x : xs) sum += x;
  r.mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  return r;
}

namespace {

double worst_z(const std::vector<LevyStatistics>& trials, std::vector<double> LevyStatistics::*field) {
  double worst = 0.0;
  const auto n = (trials.front().*field).size();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> xs;
    for (const auto& t : trials) xs.push_back((t.*field).at(i));
    const auto m = mean_se(xs);
    const double z = m.se > 0 ? std::abs(m.mean) / m.se : (m.mean == 0.0 ? 0.0 : INFINITY);
    worst = std::max(worst, z);
  }
  return worst;
}

}  // namespace

LevyReport levy_test(const std::vector<LevyStatistics>& trials, double z_bound, double min_exponent) {
  if (trials.size() < 2) throw Error("levy_test needs at least two trials");
  LevyReport r;
  r.martingale.name = "martingale";
  r.martingale.worst_z = worst_z(trials, &LevyStatistics::martingale);
  r.martingale.pass = r.martingale.worst_z <= z_bound;
  r.covariance.name = "covariance";
  r.covariance.worst_z = worst_z(trials, &LevyStatistics::covariance);
  r.covariance.pass = r.covariance.worst_z <= z_bound;
  // least-squares slope of log E tr(ΔZ⁴) against log lag
  const auto& lags = trials.front().lags;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(lags.size());
  for (std::size_t i = 0; i < lags.size(); ++i) {
    std::vector<double> xs;
    for (const auto& t : trials) xs.push_back(t.fourth.at(i));
    const double x = std::log(lags[i]), y = std::log(mean_se(xs).mean);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  r.fourth_moment.name = "fourth_moment";
  r.fourth_moment.value = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  r.fourth_moment.pass = r.fourth_moment.value >= min_exponent;
  return r;
}

nlohmann::json LevyReport::to_json() const {
  auto one = [](const LevyCondition& c) {
    return nlohmann::json{{"name", c.name}, {"worst_z", c.worst_z}, {"value", c.value}, {"pass", c.pass}};
  };
  return {{"martingale", one(martingale)}, {"fourth_moment", one(fourth_moment)}, {"covariance", one(covariance)},
          {"pass", pass()}};
}

ReversalIdentity::ReversalIdentity(BiPolyD u, Letter x, double T, double u0, double v0, double sigma2, std::size_t N)
    : u_(std::move(u)),
      x_(x),
      T_(T),
      u0_(u0),
      v0_(v0),
      sigma2_(sigma2),
      reversed_(Mat::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N))),
      forward_(reversed_),
      dstar_(reversed_) {
  if (!(0 <= u0 && u0 < v0 && v0 <= T)) throw ConfigError("reversal_identity needs 0 ≤ u < v ≤ T");
}

void ReversalIdentity::step(double w0, double w1, const Mat& x0, const Mat& x1, const Mat& ds, const Mat& da) {
  constexpr double eps = 1e-12;
  if (w0 < T_ - v0_ - eps || w1 > T_ - u0_ + eps) return;
  const auto N = static_cast<std::size_t>(x0.rows());
  // reversed cell [T−w1, T−w0]: left end reads X̄ = X_{w1}, and ΔS̄ = −ΔA
  const Bindings at1{{x_, x1}};
  reversed_ -= sharp_matrix(eval_bi(u_, at1, N), da);
  forward_ += sharp_matrix(eval_bi(u_, Bindings{{x_, x0}}, N), ds);
  dstar_ += matrix_dstar(u_, x_, at1, x1 / (sigma2_ + w1)) * (w1 - w0);
}

double ReversalIdentity::residual() const {
  const Mat r = residual_matrix();
  return std::sqrt(std::max(0.0, ntr_product(r.adjoint(), r).real()));
}

Projection wedge_projection(const Mat& a, const Mat& b, double tol) {
  for (const Mat* m : {&a, &b}) {
    if (hermitian_defect(*m) > 1e-8 || (*m * *m - *m).cwiseAbs().maxCoeff() > 1e-8) {
      throw Error("wedge_projection inputs must be projections to 1e-8");
    }
  }
  const auto N = a.rows();
  Mat m = 2.0 * Mat::Identity(N, N) - a - b;
  symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  const auto& ev = es.eigenvalues();
  Projection r;
  Eigen::Index k = 0;
  while (k < N && ev[k] < tol) ++k;
  r.rank = static_cast<std::size_t>(k);
  r.gap = k < N ? ev[k] : INFINITY;
  for (Eigen::Index i = 0; i < N; ++i) {
    if (ev[i] >= tol * 1e-2 && ev[i] < tol * 1e2) r.ill_conditioned = true;
  }
  const Mat v = es.eigenvectors().leftCols(k);
  r.p = v * v.adjoint();
  return r;
}

}  // namespace freesde
