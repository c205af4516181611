#pragma once

// Seeded random streams. Each concern (init, envs, action sampling, noise,
// minibatch shuffling, replay sampling) gets its own generator derived from
// the run seed, so an algorithm variant that draws extra noise never
// perturbs the draws of any other concern.

#include <cmath>
#include <cstdint>
#include <random>

#include "noisymarl/tensor.hpp"

namespace noisymarl {

enum class RngStream : std::uint32_t {
  kInit = 0x11,
  kEnv = 0x22,
  kAction = 0x33,
  kNoise = 0x44,
  kShuffle = 0x55,
  kReplay = 0x66,
};

inline std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline double draw_normal(std::mt19937_64& g) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(g);
}

inline double draw_uniform(std::mt19937_64& g) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  return d(g);
}

inline int draw_int(std::mt19937_64& g, int n) {
  std::uniform_int_distribution<int> d(0, n - 1);
  return d(g);
}

// Inverse-CDF draw over an explicit probability row.
inline int sample_categorical(const double* probs, int n, double u) {
  double acc = 0.0;
  for (int a = 0; a < n; ++a) {
    acc += probs[a];
    if (u < acc) return a;
  }
  return n - 1;
}

// Row-major rows x cols matrix with orthonormal columns (rows >= cols) or
// orthonormal rows (rows < cols), via Householder QR of a Gaussian draw with
// the usual sign fix on diag(R).
inline std::vector<double> orthogonal_matrix(int rows, int cols, std::mt19937_64& g) {
  const bool transposed = rows < cols;
  const int n = transposed ? cols : rows;
  const int m = transposed ? rows : cols;

  std::vector<double> a(static_cast<std::size_t>(n) * m);
  for (double& v : a) v = draw_normal(g);

  std::vector<std::vector<double>> hh(m);
  std::vector<double> rdiag(m, 0.0);
  for (int k = 0; k < m; ++k) {
    double norm = 0.0;
    for (int i = k; i < n; ++i) norm += a[i * m + k] * a[i * m + k];
    norm = std::sqrt(norm);
    double x0 = a[k * m + k];
    double alpha = (x0 >= 0.0) ? -norm : norm;
    std::vector<double> v(n - k, 0.0);
    for (int i = k; i < n; ++i) v[i - k] = a[i * m + k];
    v[0] -= alpha;
    double vnorm = 0.0;
    for (double x : v) vnorm += x * x;
    vnorm = std::sqrt(vnorm);
    if (vnorm > 1e-300) {
      for (double& x : v) x /= vnorm;
      for (int j = k; j < m; ++j) {
        double dot = 0.0;
        for (int i = k; i < n; ++i) dot += v[i - k] * a[i * m + j];
        for (int i = k; i < n; ++i) a[i * m + j] -= 2.0 * v[i - k] * dot;
      }
    }
    hh[k] = std::move(v);
    rdiag[k] = a[k * m + k];
  }

  // Accumulate Q = H_0 ... H_{m-1} [I_m; 0].
  std::vector<double> q(static_cast<std::size_t>(n) * m, 0.0);
  for (int j = 0; j < m; ++j) q[j * m + j] = 1.0;
  for (int k = m - 1; k >= 0; --k) {
    const auto& v = hh[k];
    if (v.empty()) continue;
    for (int j = 0; j < m; ++j) {
      double dot = 0.0;
      for (int i = k; i < n; ++i) dot += v[i - k] * q[i * m + j];
      for (int i = k; i < n; ++i) q[i * m + j] -= 2.0 * v[i - k] * dot;
    }
  }
  for (int j = 0; j < m; ++j)
    if (rdiag[j] < 0.0)
      for (int i = 0; i < n; ++i) q[i * m + j] = -q[i * m + j];

  if (!transposed) return q;
  std::vector<double> qt(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) qt[i * cols + j] = q[j * m + i];
  return qt;
}

}  // namespace noisymarl
