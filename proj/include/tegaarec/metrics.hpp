#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "tegaarec/masking.hpp"
#include "tegaarec/model.hpp"
#include "tegaarec/neighbours.hpp"

namespace tegaarec {

inline int recall_at_k(const std::vector<std::int64_t>& ranking, std::int64_t target,
                       std::size_t k) {
  const std::size_t limit = std::min(k, ranking.size());
  for (std::size_t i = 0; i < limit; ++i)
    if (ranking[i] == target) return 1;
  return 0;
}

inline double ndcg_at_k(const std::vector<std::int64_t>& ranking, std::int64_t target,
                        std::size_t k) {
  const std::size_t limit = std::min(k, ranking.size());
  for (std::size_t i = 0; i < limit; ++i)
    if (ranking[i] == target)
      return 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return 0.0;
}

struct EvalResult {
  std::map<std::size_t, double> recall;  // K -> mean recall
  double ndcg20 = 0.0;
  std::size_t count = 0;  // scored (instance, k) pairs
};

struct EvalOptions {
  std::vector<std::size_t> recall_ks = {10, 20};
  std::size_t ndcg_k = 20;
  bool last_prefix_only = false;  // eval_prefixes: all|last
  std::size_t L_l = 15;
  std::size_t L_s = 25;
  NeighbourFlags flags;
  std::uint64_t seed = 1;
};

struct EvalRecord {
  std::int64_t user = 0;
  int t = 0;
  int k = 0;  // prefix length of the sub-instance
  std::int64_t target = 0;
  const ScoredRanking* ranking = nullptr;
  const NeighbourSample* sample = nullptr;
};

using EvalObserver = std::function<void(const EvalRecord&)>;

inline EvalResult evaluate(const SessionStore& train, const ItemUserIndex& index,
                           const std::vector<EvalInstance>& part, const ModelParams& params,
                           const EvalOptions& opts, const EvalObserver& observer = {}) {
  EvalResult res;
  for (std::size_t k : opts.recall_ks) res.recall[k] = 0.0;
  std::size_t top_k = opts.ndcg_k;
  for (std::size_t k : opts.recall_ks) top_k = std::max(top_k, k);

  for (const EvalInstance& inst : part) {
    auto rng = make_rng(mix_seed(opts.seed, static_cast<std::uint64_t>(inst.user),
                                 static_cast<std::uint64_t>(inst.t)));
    NeighbourFlags flags = opts.flags;
    flags.all_concat_history = params.config.neighbour_history == NeighbourHistory::all_concat;
    NeighbourSample sample = build_sample(train, index, inst.user, inst.cutoff_week, inst.items,
                                          opts.L_l, opts.L_s, rng, flags);
    auto masked = expand_session(inst.items, params.config.max_session_len);
    const std::size_t first = opts.last_prefix_only ? masked.size() - 1 : 0;
    for (std::size_t m = first; m < masked.size(); ++m) {
      auto fwd = forward_instance(masked[m], sample, params, top_k);
      for (std::size_t k : opts.recall_ks)
        res.recall[k] += recall_at_k(fwd.ranking.top, masked[m].target, k);
      res.ndcg20 += ndcg_at_k(fwd.ranking.top, masked[m].target, opts.ndcg_k);
      ++res.count;
      if (observer) {
        EvalRecord rec;
        rec.user = inst.user;
        rec.t = inst.t;
        rec.k = masked[m].true_len;
        rec.target = masked[m].target;
        rec.ranking = &fwd.ranking;
        rec.sample = &sample;
        observer(rec);
      }
    }
  }
  if (res.count > 0) {
    for (auto& [k, v] : res.recall) v /= static_cast<double>(res.count);
    res.ndcg20 /= static_cast<double>(res.count);
  }
  return res;
}

// item ids ranked by training frequency, ties to the lower id
inline std::vector<std::int64_t> popularity_ranking(const SessionStore& train) {
  std::map<std::int64_t, std::size_t> freq;
  for (std::int64_t item : train.items) freq[item] = 0;
  for (const auto& [u, q] : train.sessions)
    for (const Session& s : q)
      for (std::int64_t item : s.items) ++freq[item];
  std::vector<std::int64_t> ids;
  for (const auto& [item, c] : freq) ids.push_back(item);
  std::sort(ids.begin(), ids.end(), [&](std::int64_t a, std::int64_t b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return a < b;
  });
  return ids;
}

inline EvalResult evaluate_popularity(const SessionStore& train,
                                      const std::vector<EvalInstance>& part,
                                      const EvalOptions& opts, std::size_t max_session_len = 50) {
  auto ranking = popularity_ranking(train);
  EvalResult res;
  for (std::size_t k : opts.recall_ks) res.recall[k] = 0.0;
  for (const EvalInstance& inst : part) {
    auto masked = expand_session(inst.items, max_session_len);
    const std::size_t first = opts.last_prefix_only ? masked.size() - 1 : 0;
    for (std::size_t m = first; m < masked.size(); ++m) {
      for (std::size_t k : opts.recall_ks)
        res.recall[k] += recall_at_k(ranking, masked[m].target, k);
      res.ndcg20 += ndcg_at_k(ranking, masked[m].target, opts.ndcg_k);
      ++res.count;
    }
  }
  if (res.count > 0) {
    for (auto& [k, v] : res.recall) v /= static_cast<double>(res.count);
    res.ndcg20 /= static_cast<double>(res.count);
  }
  return res;
}

}  // namespace tegaarec
