#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace clta::testkit {

BruteMetrics brute_metrics(const Matrix& a) {
  BruteMetrics out;
  const std::size_t n = a.size();
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j <= k; ++j) s += a[k][j];
    out.a_k.push_back(s / static_cast<double>(k + 1));
  }
  double s = 0.0;
  for (double v : out.a_k) s += v;
  out.acc_inc = n ? s / static_cast<double>(n) : 0.0;
  out.acc_final = n ? out.a_k.back() : 0.0;

  out.f_k.assign(n, 0.0);
  double fsum = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      // Historical maximum of column j before task k, scanned from the top.
      double best = -1.0;
      for (std::size_t l = 0; l < k; ++l) {
        if (l >= j && a[l][j] > best) best = a[l][j];
      }
      sum += best - a[k][j];
    }
    out.f_k[k] = sum / static_cast<double>(k);
    fsum += out.f_k[k];
  }
  out.forg_inc = n > 1 ? fsum / static_cast<double>(n - 1) : 0.0;
  out.forg_final = n ? out.f_k.back() : 0.0;
  return out;
}

namespace {

std::vector<double> softmax(const std::vector<double>& z, double temperature) {
  std::vector<double> out(z.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] / temperature);
    denom += out[i];
  }
  for (auto& v : out) v /= denom;
  return out;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

double oracle_soft_ce(const Matrix& student, const Matrix& teacher, double temperature) {
  double total = 0.0;
  for (std::size_t b = 0; b < student.size(); ++b) {
    const auto p = softmax(teacher[b], temperature);
    const auto q = softmax(student[b], temperature);
    for (std::size_t i = 0; i < p.size(); ++i) total -= p[i] * std::log(q[i]);
  }
  return total / static_cast<double>(student.size());
}

double oracle_kl(const Matrix& student, const Matrix& teacher, double temperature) {
  double total = 0.0;
  for (std::size_t b = 0; b < student.size(); ++b) {
    const auto p = softmax(teacher[b], temperature);
    const auto q = softmax(student[b], temperature);
    for (std::size_t i = 0; i < p.size(); ++i) total += p[i] * std::log(p[i] / q[i]);
  }
  return total / static_cast<double>(student.size());
}

double oracle_mkd(const Matrix& student, const Matrix& teacher) {
  double total = 0.0;
  for (std::size_t b = 0; b < student.size(); ++b) {
    for (std::size_t i = 0; i < student[b].size(); ++i) {
      total -= sigmoid(teacher[b][i]) * std::log(sigmoid(student[b][i]));
    }
  }
  return total / static_cast<double>(student.size());
}

namespace {

Matrix centered_gram(const Matrix& x) {
  const std::size_t n = x.size();
  Matrix k(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < x[i].size(); ++c) k[i][j] += x[i][c] * x[j][c];
    }
  }
  // H K H with H = I - 11^T / n
  std::vector<double> row_mean(n, 0.0), col_mean(n, 0.0);
  double all = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      row_mean[i] += k[i][j] / n;
      col_mean[j] += k[i][j] / n;
      all += k[i][j] / (static_cast<double>(n) * n);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) k[i][j] = k[i][j] - row_mean[i] - col_mean[j] + all;
  }
  return k;
}

double frob_inner(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) s += a[i][j] * b[i][j];
  }
  return s;
}

}  // namespace

double oracle_cka(const Matrix& x, const Matrix& y) {
  const auto kx = centered_gram(x);
  const auto ky = centered_gram(y);
  return frob_inner(kx, ky) / std::sqrt(frob_inner(kx, kx) * frob_inner(ky, ky));
}

double oracle_gaussian_kl(double mu_a, double var_a, double mu_b, double var_b) {
  const double sa = std::sqrt(var_a), sb = std::sqrt(var_b);
  return std::log(sb / sa) + (var_a + (mu_a - mu_b) * (mu_a - mu_b)) / (2.0 * var_b) - 0.5;
}

std::pair<std::vector<double>, std::vector<double>> column_moments(const Matrix& m) {
  const std::size_t cols = m.empty() ? 0 : m[0].size();
  std::vector<double> mean(cols, 0.0), var(cols, 0.0);
  for (const auto& row : m) {
    for (std::size_t c = 0; c < cols; ++c) mean[c] += row[c];
  }
  for (auto& v : mean) v /= static_cast<double>(m.size());
  for (const auto& row : m) {
    for (std::size_t c = 0; c < cols; ++c) var[c] += (row[c] - mean[c]) * (row[c] - mean[c]);
  }
  for (auto& v : var) v /= static_cast<double>(m.size());
  return {mean, var};
}

}  // namespace clta::testkit
