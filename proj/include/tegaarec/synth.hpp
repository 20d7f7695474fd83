#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tegaarec/data.hpp"
#include "tegaarec/rng.hpp"

namespace tegaarec {

struct SynthSpec {
  std::size_t n_users = 200;
  std::size_t n_items = 50;
  std::size_t n_clusters = 4;
  std::size_t sessions_per_user = 6;
  std::size_t session_len_min = 4;
  std::size_t session_len_max = 8;
  std::size_t edges_per_user = 5;
  std::size_t pool_overlap = 0;  // items shared between adjacent cluster pools
  double alpha = 0.9;            // own-pool draw probability
  double beta = 0.2;             // cross-cluster edge probability
  std::uint64_t seed = 1;

  void validate() const {
    if (n_clusters < 1) throw ConfigError("synth needs at least 1 cluster");
    if (n_users < 1 || n_items < n_clusters) throw ConfigError("synth users/items too small");
    if (!(alpha > 0.0) || alpha > 1.0) throw ConfigError("alpha must be in (0, 1]");
    if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must be in [0, 1]");
    if (session_len_min < 1 || session_len_max < session_len_min)
      throw ConfigError("bad session length range");
    if (sessions_per_user < 1) throw ConfigError("sessions_per_user must be >= 1");
  }

  std::size_t cluster_of(std::size_t user) const { return user % n_clusters; }

  // cluster pools: contiguous item ranges, optionally extended into the
  // neighbouring cluster's range by pool_overlap items
  std::vector<std::int64_t> pool_of(std::size_t cluster) const {
    const std::size_t base = n_items / n_clusters;
    const std::size_t lo = cluster * base + 1;
    const std::size_t hi = (cluster + 1 == n_clusters) ? n_items : (cluster + 1) * base;
    std::vector<std::int64_t> pool;
    for (std::size_t i = lo; i <= hi; ++i) pool.push_back(static_cast<std::int64_t>(i));
    for (std::size_t k = 0; k < pool_overlap; ++k) {
      const std::size_t ext = hi + 1 + k;
      pool.push_back(static_cast<std::int64_t>(ext > n_items ? (ext - n_items) : ext));
    }
    return pool;
  }
};

struct SynthData {
  std::string events_tsv;
  std::string edges_tsv;
  std::string clusters_tsv;
};

inline SynthData generate(const SynthSpec& spec) {
  spec.validate();
  auto g = make_rng(mix_seed(spec.seed, 0x5117ULL));

  std::vector<std::vector<std::int64_t>> pools(spec.n_clusters);
  std::vector<std::vector<std::int64_t>> complements(spec.n_clusters);
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    pools[c] = spec.pool_of(c);
    std::set<std::int64_t> own(pools[c].begin(), pools[c].end());
    for (std::int64_t i = 1; i <= static_cast<std::int64_t>(spec.n_items); ++i)
      if (!own.count(i)) complements[c].push_back(i);
  }

  std::string events;
  std::uniform_int_distribution<std::size_t> len_dist(spec.session_len_min, spec.session_len_max);
  std::bernoulli_distribution own_pool(spec.alpha);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    const std::size_t c = spec.cluster_of(u);
    std::uniform_int_distribution<std::size_t> own_pick(0, pools[c].size() - 1);
    for (std::size_t w = 0; w < spec.sessions_per_user; ++w) {
      const std::size_t len = len_dist(g);
      for (std::size_t j = 0; j < len; ++j) {
        std::int64_t item;
        if (complements[c].empty() || own_pool(g)) {
          item = pools[c][own_pick(g)];
        } else {
          std::uniform_int_distribution<std::size_t> other(0, complements[c].size() - 1);
          item = complements[c][other(g)];
        }
        const std::int64_t ts = static_cast<std::int64_t>(w) * kSecondsPerWeek +
                                static_cast<std::int64_t>(j) * 60;
        events += std::to_string(u) + "\t" + std::to_string(item) + "\t" + std::to_string(ts) + "\n";
      }
    }
  }

  std::set<Edge> edges;
  std::bernoulli_distribution cross(spec.beta);
  std::uniform_int_distribution<std::size_t> any_user(0, spec.n_users - 1);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    for (std::size_t e = 0; e < spec.edges_per_user; ++e) {
      const bool want_cross = spec.n_clusters > 1 && cross(g);
      std::size_t v = u;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        v = any_user(g);
        if (v == u) continue;
        const bool is_cross = spec.cluster_of(v) != spec.cluster_of(u);
        if (is_cross == want_cross) break;
        v = u;
      }
      if (v != u) edges.insert(norm_edge(static_cast<std::int64_t>(u), static_cast<std::int64_t>(v)));
    }
  }
  std::string edges_tsv;
  for (const auto& [a, b] : edges)
    edges_tsv += std::to_string(a) + "\t" + std::to_string(b) + "\n";

  std::string clusters;
  for (std::size_t u = 0; u < spec.n_users; ++u)
    clusters += std::to_string(u) + "\t" + std::to_string(spec.cluster_of(u)) + "\n";

  return {std::move(events), std::move(edges_tsv), std::move(clusters)};
}

}  // namespace tegaarec
