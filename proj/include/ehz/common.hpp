#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ehz {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotSymplectic : Error {
  explicit NotSymplectic(const std::string& m) : Error("NotSymplectic: " + m) {}
};
struct SingularMatrix : Error {
  explicit SingularMatrix(const std::string& m) : Error("SingularMatrix: " + m) {}
};
struct NoZeroFound : Error {
  explicit NoZeroFound(const std::string& m) : Error("NoZeroFound: " + m) {}
};
struct BodyWithoutInteriorOrigin : Error {
  explicit BodyWithoutInteriorOrigin(const std::string& m) : Error("BodyWithoutInteriorOrigin: " + m) {}
};
struct ZeroDirection : Error {
  explicit ZeroDirection(const std::string& m) : Error("ZeroDirection: " + m) {}
};
struct InvalidExponent : Error {
  explicit InvalidExponent(const std::string& m) : Error("InvalidExponent: " + m) {}
};
struct NoFixedInteriorPoint : Error {
  explicit NoFixedInteriorPoint(const std::string& m) : Error("NoFixedInteriorPoint: " + m) {}
};
struct CarrierValidationFailed : Error {
  explicit CarrierValidationFailed(const std::string& m) : Error("CarrierValidationFailed: " + m) {}
};
struct DegenerateRay : Error {
  explicit DegenerateRay(const std::string& m) : Error("DegenerateRay: " + m) {}
};
struct TangentialImpact : Error {
  explicit TangentialImpact(const std::string& m) : Error("TangentialImpact: " + m) {}
};
struct HypothesisViolated : Error {
  explicit HypothesisViolated(const std::string& m) : Error("HypothesisViolated: " + m) {}
};
struct LiftValidationFailed : Error {
  explicit LiftValidationFailed(const std::string& m) : Error("LiftValidationFailed: " + m) {}
};
struct BadInput : Error {
  explicit BadInput(const std::string& m) : Error("BadInput: " + m) {}
};

// Counter-based stream: next() hashes key + step so draws never depend on
// how many values a sibling stream consumed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(mix(key + kGamma)) {}

  std::uint64_t next_u64() { return mix(key_ + kGamma * ++ctr_); }

  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * uniform());
  }

  Vec normal_vec(int d) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + int(next_u64() % std::uint64_t(hi - lo + 1));
  }

  RngStream child(std::uint64_t tag) const { return RngStream(key_ ^ mix(tag + 0x632be59bd9b4e019ULL)); }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

inline Mat standard_J(int two_n) {
  if (two_n <= 0 || two_n % 2 != 0) throw BadInput("standard_J needs even positive dimension");
  const int n = two_n / 2;
  Mat J = Mat::Zero(two_n, two_n);
  J.topRightCorner(n, n) = -Mat::Identity(n, n);
  J.bottomLeftCorner(n, n) = Mat::Identity(n, n);
  return J;
}

// J(q,p) = (-p, q)
inline Vec applyJ(const Vec& z) {
  const int n = int(z.size()) / 2;
  Vec r(z.size());
  r.head(n) = -z.tail(n);
  r.tail(n) = z.head(n);
  return r;
}

inline Vec apply_negJ(const Vec& z) {
  const int n = int(z.size()) / 2;
  Vec r(z.size());
  r.head(n) = z.tail(n);
  r.tail(n) = -z.head(n);
  return r;
}

// e^{sJ} = cos(s) I + sin(s) J
inline Mat exp_sJ(int two_n, double s) {
  return std::cos(s) * Mat::Identity(two_n, two_n) + std::sin(s) * standard_J(two_n);
}

// Deterministic unit directions; d=1,2 exact, higher d seeded Gaussian.
inline std::vector<Vec> sphere_grid(int d, int count) {
  std::vector<Vec> dirs;
  if (d == 1) {
    dirs.push_back(Vec::Constant(1, 1.0));
    dirs.push_back(Vec::Constant(1, -1.0));
    return dirs;
  }
  if (d == 2) {
    dirs.reserve(count);
    for (int k = 0; k < count; ++k) {
      const double a = 2.0 * kPi * k / count;
      Vec u(2);
      u << std::cos(a), std::sin(a);
      dirs.push_back(u);
    }
    return dirs;
  }
  RngStream rng(0x5bd1e995u ^ std::uint64_t(d));
  dirs.reserve(count);
  while (int(dirs.size()) < count) {
    Vec g = rng.normal_vec(d);
    const double nrm = g.norm();
    if (nrm > 1e-12) dirs.push_back(g / nrm);
  }
  return dirs;
}

inline int worker_count() {
  if (const char* e = std::getenv("EHZ_WORKERS")) {
    const int w = std::atoi(e);
    if (w >= 1) return w;
  }
  return 1;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ehz
