#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "tegaarec/data.hpp"
#include "tegaarec/tensor.hpp"

// Shared test utilities: rngs, finite differences, loop oracles.

namespace testutil {

inline std::vector<tegaarec::Event> random_events(std::size_t n_users, std::size_t n_items,
                                                  std::size_t n_weeks, std::size_t n_events,
                                                  std::mt19937_64& g) {
  std::uniform_int_distribution<std::int64_t> user(0, static_cast<std::int64_t>(n_users) - 1);
  std::uniform_int_distribution<std::int64_t> item(1, static_cast<std::int64_t>(n_items));
  std::uniform_int_distribution<std::int64_t> ts(0, static_cast<std::int64_t>(n_weeks) * 604800 - 1);
  std::vector<tegaarec::Event> events(n_events);
  for (auto& e : events) e = {user(g), item(g), ts(g)};
  return events;
}

inline std::set<tegaarec::Edge> random_edges(std::size_t n_users, double p, std::mt19937_64& g) {
  std::bernoulli_distribution flip(p);
  std::set<tegaarec::Edge> edges;
  for (std::int64_t a = 0; a < static_cast<std::int64_t>(n_users); ++a)
    for (std::int64_t b = a + 1; b < static_cast<std::int64_t>(n_users); ++b)
      if (flip(g)) edges.insert({a, b});
  return edges;
}

inline tegaarec::SessionStore random_store(std::size_t n_users, std::size_t n_items,
                                           std::size_t n_weeks, std::size_t n_events,
                                           double edge_prob, std::mt19937_64& g) {
  return tegaarec::segment_weekly(random_events(n_users, n_items, n_weeks, n_events, g),
                                  random_edges(n_users, edge_prob, g));
}

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& g, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = dist(g);
  return v;
}

inline tegaarec::Tensor random_tensor(tegaarec::Shape shape, std::mt19937_64& g,
                                      bool requires_grad = false, double scale = 1.0) {
  auto v = random_values(tegaarec::shape_numel(shape), g, scale);
  return tegaarec::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central finite differences against analytic grads already stored in the
// params' grad buffers. loss_fn must recompute the loss from current values
// without recording. Returns the max relative error over all entries.
template <typename F>
double fd_max_rel_err(std::span<tegaarec::Tensor> params, F&& loss_fn, double h = 1e-5,
                      double denom_floor = 1e-6) {
  double worst = 0.0;
  for (auto& p : params) {
    auto vals = p.values_mut();
    auto an = p.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double up = loss_fn();
      vals[i] = keep - h;
      const double dn = loss_fn();
      vals[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(an[i]), denom_floor});
      worst = std::max(worst, std::abs(fd - an[i]) / denom);
    }
  }
  return worst;
}

// naive triple-loop matmul oracle
inline std::vector<double> matmul_oracle(std::span<const double> a, std::span<const double> b,
                                         std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t l = 0; l < k; ++l) out[i * n + j] += a[i * k + l] * b[l * n + j];
  return out;
}

// extended-precision softmax oracle
inline std::vector<double> softmax_oracle_ld(std::span<const double> row) {
  long double sum = 0.0L;
  std::vector<long double> e(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    e[i] = expl(static_cast<long double>(row[i]));
    sum += e[i];
  }
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(e[i] / sum);
  return out;
}

inline double cross_entropy_oracle_ld(std::span<const double> logits_row, std::size_t target) {
  long double sum = 0.0L;
  for (double v : logits_row) sum += expl(static_cast<long double>(v));
  return static_cast<double>(logl(sum) - static_cast<long double>(logits_row[target]));
}

}  // namespace testutil
