#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "tegaarec/data.hpp"

namespace tegaarec {

struct ItemUserIndex {
  struct Occ {
    std::int64_t user = 0;
    int t = 0;
    std::int64_t week = 0;
  };
  std::map<std::int64_t, std::vector<Occ>> by_item;  // occs ordered by (user, t)

  static ItemUserIndex build(const SessionStore& store) {
    ItemUserIndex idx;
    for (const auto& [u, q] : store.sessions) {
      for (const Session& s : q) {
        std::set<std::int64_t> distinct(s.items.begin(), s.items.end());
        for (std::int64_t item : distinct) idx.by_item[item].push_back({u, s.t, s.week});
      }
    }
    return idx;
  }
};

// distinct shared-item counts per candidate (Def. 1 predicate with week cutoff)
inline std::map<std::int64_t, int> lmp_candidate_counts(const ItemUserIndex& index,
                                                        std::int64_t target,
                                                        std::int64_t cutoff_week,
                                                        const std::vector<std::int64_t>& current) {
  std::map<std::int64_t, int> counts;
  std::set<std::int64_t> distinct(current.begin(), current.end());
  for (std::int64_t item : distinct) {
    auto it = index.by_item.find(item);
    if (it == index.by_item.end()) continue;
    std::int64_t prev = -1;
    for (const auto& occ : it->second) {
      if (occ.user == target || occ.week >= cutoff_week) continue;
      if (occ.user == prev) continue;  // one hit per (item, user)
      prev = occ.user;
      ++counts[occ.user];
    }
  }
  return counts;
}

inline std::set<std::int64_t> lmp_candidates(const ItemUserIndex& index, std::int64_t target,
                                             std::int64_t cutoff_week,
                                             const std::vector<std::int64_t>& current) {
  std::set<std::int64_t> out;
  for (const auto& [u, c] : lmp_candidate_counts(index, target, cutoff_week, current))
    out.insert(u);
  return out;
}

inline std::set<std::int64_t> friend_candidates(const SessionStore& store, std::int64_t target,
                                                std::int64_t cutoff_week) {
  std::set<std::int64_t> out;
  for (std::int64_t u : store.friends_of(target))
    if (store.latest_before(u, cutoff_week) != nullptr) out.insert(u);
  return out;
}

inline std::vector<std::int64_t> sample_fixed(const std::set<std::int64_t>& candidates,
                                              std::size_t L, std::mt19937_64& rng) {
  std::vector<std::int64_t> out;
  if (candidates.empty()) return out;
  std::vector<std::int64_t> pool(candidates.begin(), candidates.end());
  if (pool.size() >= L) {
    std::sample(pool.begin(), pool.end(), std::back_inserter(out), L, rng);
    return out;
  }
  out = pool;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  while (out.size() < L) out.push_back(pool[pick(rng)]);
  return out;
}

// weighted variant: sequential draws without replacement, then weighted duplicates
inline std::vector<std::int64_t> sample_weighted(const std::map<std::int64_t, int>& counts,
                                                 std::size_t L, std::mt19937_64& rng) {
  std::vector<std::int64_t> out;
  if (counts.empty()) return out;
  std::vector<std::int64_t> users;
  std::vector<double> w;
  for (const auto& [u, c] : counts) {
    users.push_back(u);
    w.push_back(static_cast<double>(c));
  }
  if (users.size() <= L) {
    out = users;
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    while (out.size() < L) out.push_back(users[pick(rng)]);
    return out;
  }
  std::vector<bool> taken(users.size(), false);
  for (std::size_t k = 0; k < L; ++k) {
    std::vector<double> wk(users.size());
    for (std::size_t i = 0; i < users.size(); ++i) wk[i] = taken[i] ? 0.0 : w[i];
    std::discrete_distribution<std::size_t> pick(wk.begin(), wk.end());
    std::size_t chosen = pick(rng);
    taken[chosen] = true;
    out.push_back(users[chosen]);
  }
  return out;
}

struct NeighbourFlags {
  bool no_lmp = false;
  bool no_sf = false;
  bool volume_weighted = false;
  bool all_concat_history = false;  // also fill concatenated full histories
};

struct NeighbourSample {
  std::int64_t target_user = 0;
  std::vector<std::int64_t> lmp;
  std::vector<std::int64_t> friends;
  std::vector<const Session*> lmp_hist;     // parallel to lmp
  std::vector<const Session*> friend_hist;  // parallel to friends
  std::vector<std::vector<std::int64_t>> lmp_concat;     // filled in all_concat mode
  std::vector<std::vector<std::int64_t>> friend_concat;
  std::size_t width() const { return lmp.size() + friends.size(); }
};

inline NeighbourSample build_sample(const SessionStore& store, const ItemUserIndex& index,
                                    std::int64_t target, std::int64_t cutoff_week,
                                    const std::vector<std::int64_t>& current, std::size_t L_l,
                                    std::size_t L_s, std::mt19937_64& rng,
                                    const NeighbourFlags& flags = {}) {
  NeighbourSample out;
  out.target_user = target;
  if (!flags.no_lmp) {
    auto counts = lmp_candidate_counts(index, target, cutoff_week, current);
    if (flags.volume_weighted) {
      out.lmp = sample_weighted(counts, L_l, rng);
    } else {
      std::set<std::int64_t> cands;
      for (const auto& [u, c] : counts) cands.insert(u);
      out.lmp = sample_fixed(cands, L_l, rng);
    }
  }
  if (!flags.no_sf) out.friends = sample_fixed(friend_candidates(store, target, cutoff_week), L_s, rng);
  for (std::int64_t u : out.lmp) out.lmp_hist.push_back(store.latest_before(u, cutoff_week));
  for (std::int64_t u : out.friends) out.friend_hist.push_back(store.latest_before(u, cutoff_week));
  for (const Session* s : out.lmp_hist)
    if (!s) throw StateError("sampled LMP neighbour has no history before cutoff");
  for (const Session* s : out.friend_hist)
    if (!s) throw StateError("sampled friend has no history before cutoff");
  if (flags.all_concat_history) {
    auto concat_history = [&](std::int64_t u) {
      std::vector<std::int64_t> items;
      auto it = store.sessions.find(u);
      if (it != store.sessions.end())
        for (const Session& s : it->second)
          if (s.week < cutoff_week) items.insert(items.end(), s.items.begin(), s.items.end());
      return items;
    };
    for (std::int64_t u : out.lmp) out.lmp_concat.push_back(concat_history(u));
    for (std::int64_t u : out.friends) out.friend_concat.push_back(concat_history(u));
  }
  return out;
}

}  // namespace tegaarec
