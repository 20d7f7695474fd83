#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tegaarec/rng.hpp"
#include "tegaarec/tensor.hpp"

namespace tegaarec {

inline constexpr std::int64_t kSecondsPerWeek = 604800;
inline constexpr std::int64_t kPadItem = 0;

inline std::int64_t week_of(std::int64_t timestamp) { return timestamp / kSecondsPerWeek; }

struct Event {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  std::int64_t timestamp = 0;
};

struct Session {
  std::int64_t user = 0;
  int t = 0;  // 1-based position in the owner's chronology
  std::int64_t week = 0;
  std::vector<std::int64_t> items;
};

using Edge = std::pair<std::int64_t, std::int64_t>;

inline Edge norm_edge(std::int64_t a, std::int64_t b) { return {std::min(a, b), std::max(a, b)}; }

struct SessionStore {
  std::map<std::int64_t, std::vector<Session>> sessions;
  std::set<Edge> edges;  // normalized, no self-loops
  std::set<std::int64_t> items;

  bool has_edge(std::int64_t a, std::int64_t b) const {
    return a != b && edges.count(norm_edge(a, b)) > 0;
  }

  std::vector<std::int64_t> friends_of(std::int64_t u) const {
    std::vector<std::int64_t> out;
    for (const auto& [a, b] : edges) {
      if (a == u) out.push_back(b);
      else if (b == u) out.push_back(a);
    }
    return out;
  }

  // most recent session in a week strictly before `week`, or nullptr
  const Session* latest_before(std::int64_t user, std::int64_t week) const {
    auto it = sessions.find(user);
    if (it == sessions.end()) return nullptr;
    const Session* best = nullptr;
    for (const Session& s : it->second) {
      if (s.week < week) best = &s;
      else break;
    }
    return best;
  }

  std::size_t session_count() const {
    std::size_t n = 0;
    for (const auto& [u, q] : sessions) n += q.size();
    return n;
  }

  void check_invariants() const {
    for (const auto& [u, q] : sessions) {
      for (std::size_t i = 0; i < q.size(); ++i) {
        const Session& s = q[i];
        if (s.user != u) throw StateError("session owner mismatch for user " + std::to_string(u));
        if (s.t != static_cast<int>(i) + 1)
          throw StateError("session indices not consecutive for user " + std::to_string(u));
        if (s.items.empty()) throw StateError("empty session for user " + std::to_string(u));
        if (i > 0 && q[i - 1].week > s.week)
          throw StateError("weeks decrease for user " + std::to_string(u));
        for (std::int64_t it2 : s.items)
          if (!items.count(it2))
            throw StateError("session item " + std::to_string(it2) + " missing from vocabulary");
      }
    }
    for (const auto& [a, b] : edges)
      if (a >= b) throw StateError("edge not normalized or self-loop");
  }
};

struct ParsedData {
  std::vector<Event> events;
  std::set<Edge> edges;
};

namespace detail {

inline std::int64_t parse_int_field(std::string_view field, const char* file_kind,
                                    std::size_t line, std::size_t column) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw IngestError(std::string(file_kind) + " line " + std::to_string(line) + ", column " +
                      std::to_string(column) + ": expected integer, got '" + std::string(field) +
                      "'");
  }
  return value;
}

template <typename LineFn>
void for_each_line(std::string_view text, LineFn&& fn) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = (nl == std::string_view::npos) ? text.substr(pos)
                                                           : text.substr(pos, nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    fn(line_no, line);
  }
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t tab = line.find('\t', pos);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
}

}  // namespace detail

inline ParsedData parse_events(std::string_view event_text, std::string_view edge_text) {
  ParsedData out;
  detail::for_each_line(event_text, [&](std::size_t line_no, std::string_view line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 3) {
      throw IngestError("events line " + std::to_string(line_no) +
                        ": expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    }
    Event e;
    e.user_id = detail::parse_int_field(fields[0], "events", line_no, 1);
    e.item_id = detail::parse_int_field(fields[1], "events", line_no, 2);
    e.timestamp = detail::parse_int_field(fields[2], "events", line_no, 3);
    if (e.user_id < 0)
      throw IngestError("events line " + std::to_string(line_no) + ": user id must be >= 0");
    if (e.item_id < 1)
      throw IngestError("events line " + std::to_string(line_no) +
                        ": item id must be >= 1 (0 is the padding id)");
    if (e.timestamp < 0)
      throw IngestError("events line " + std::to_string(line_no) + ": timestamp must be >= 0");
    out.events.push_back(e);
  });
  detail::for_each_line(edge_text, [&](std::size_t line_no, std::string_view line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 2) {
      throw IngestError("edges line " + std::to_string(line_no) +
                        ": expected 2 tab-separated fields, got " + std::to_string(fields.size()));
    }
    std::int64_t a = detail::parse_int_field(fields[0], "edges", line_no, 1);
    std::int64_t b = detail::parse_int_field(fields[1], "edges", line_no, 2);
    if (a < 0 || b < 0)
      throw IngestError("edges line " + std::to_string(line_no) + ": user id must be >= 0");
    if (a == b) return;  // self-loops carry no social signal
    out.edges.insert(norm_edge(a, b));
  });
  return out;
}

inline SessionStore segment_weekly(std::vector<Event> events, std::set<Edge> edges = {}) {
  SessionStore store;
  store.edges = std::move(edges);
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return std::tie(a.user_id, a.timestamp, a.item_id) < std::tie(b.user_id, b.timestamp, b.item_id);
  });
  for (std::size_t i = 0; i < events.size();) {
    const std::int64_t user = events[i].user_id;
    auto& q = store.sessions[user];
    while (i < events.size() && events[i].user_id == user) {
      const std::int64_t week = week_of(events[i].timestamp);
      Session s;
      s.user = user;
      s.week = week;
      s.t = static_cast<int>(q.size()) + 1;
      while (i < events.size() && events[i].user_id == user &&
             week_of(events[i].timestamp) == week) {
        s.items.push_back(events[i].item_id);
        store.items.insert(events[i].item_id);
        ++i;
      }
      q.push_back(std::move(s));
    }
  }
  return store;
}

struct EvalInstance {
  std::int64_t user = 0;
  int t = 0;  // session index in the full (pre-split) chronology
  std::vector<std::int64_t> items;
  std::int64_t cutoff_week = 0;
};

struct DatasetSplit {
  SessionStore train;
  std::vector<EvalInstance> valid;
  std::vector<EvalInstance> test;
  int holdout_weeks = 0;
  std::int64_t holdout_start_week = 0;
};

inline DatasetSplit split_holdout(const SessionStore& store, int s, std::uint64_t seed) {
  if (s < 1) throw ConfigError("holdout weeks must be >= 1, got " + std::to_string(s));
  std::int64_t w_max = -1;
  for (const auto& [u, q] : store.sessions)
    for (const Session& sess : q) w_max = std::max(w_max, sess.week);
  if (w_max < 0) throw ConfigError("cannot split an empty session store");
  const std::int64_t holdout_start = w_max - s + 1;

  DatasetSplit split;
  split.holdout_weeks = s;
  split.holdout_start_week = holdout_start;
  split.train.edges = store.edges;
  std::vector<EvalInstance> pool;
  for (const auto& [u, q] : store.sessions) {
    std::vector<Session> kept;
    for (const Session& sess : q) {
      if (sess.week < holdout_start) {
        kept.push_back(sess);
        for (std::int64_t it : sess.items) split.train.items.insert(it);
      } else {
        EvalInstance inst;
        inst.user = u;
        inst.t = sess.t;
        inst.items = sess.items;
        inst.cutoff_week = holdout_start;
        pool.push_back(std::move(inst));
      }
    }
    if (!kept.empty()) split.train.sessions.emplace(u, std::move(kept));
  }
  if (split.train.sessions.empty())
    throw ConfigError("holdout of " + std::to_string(s) + " weeks leaves the training set empty");

  std::vector<EvalInstance> filtered;
  for (EvalInstance& inst : pool) {
    std::vector<std::int64_t> seen;
    for (std::int64_t it : inst.items)
      if (split.train.items.count(it)) seen.push_back(it);
    if (seen.size() < 2) continue;  // need >= 1 input + 1 target
    if (!split.train.sessions.count(inst.user)) continue;  // zero history
    inst.items = std::move(seen);
    filtered.push_back(std::move(inst));
  }
  auto g = make_rng(mix_seed(seed, 0x5e5510ULL, filtered.size()));
  std::shuffle(filtered.begin(), filtered.end(), g);
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    (i % 2 == 0 ? split.valid : split.test).push_back(std::move(filtered[i]));
  }
  auto by_user_t = [](const EvalInstance& a, const EvalInstance& b) {
    return std::tie(a.user, a.t) < std::tie(b.user, b.t);
  };
  std::sort(split.valid.begin(), split.valid.end(), by_user_t);
  std::sort(split.test.begin(), split.test.end(), by_user_t);
  return split;
}

struct IdMaps {
  std::map<std::int64_t, std::int64_t> user_to_id;
  std::map<std::int64_t, std::int64_t> item_to_id;
  std::vector<std::int64_t> user_from_id;
  std::vector<std::int64_t> item_from_id;  // slot 0 is the padding id
};

inline std::pair<SessionStore, IdMaps> reindex(const SessionStore& store) {
  IdMaps maps;
  maps.item_from_id.push_back(kPadItem);
  for (const auto& [u, q] : store.sessions) {
    maps.user_to_id.emplace(u, static_cast<std::int64_t>(maps.user_from_id.size()));
    maps.user_from_id.push_back(u);
  }
  for (const auto& [a, b] : store.edges) {
    for (std::int64_t u : {a, b}) {
      if (!maps.user_to_id.count(u)) {
        maps.user_to_id.emplace(u, static_cast<std::int64_t>(maps.user_from_id.size()));
        maps.user_from_id.push_back(u);
      }
    }
  }
  for (std::int64_t it : store.items) {
    maps.item_to_id.emplace(it, static_cast<std::int64_t>(maps.item_from_id.size()));
    maps.item_from_id.push_back(it);
  }

  SessionStore out;
  for (const auto& [u, q] : store.sessions) {
    std::vector<Session> mapped;
    mapped.reserve(q.size());
    for (const Session& s : q) {
      Session m = s;
      m.user = maps.user_to_id.at(u);
      for (std::int64_t& it : m.items) it = maps.item_to_id.at(it);
      mapped.push_back(std::move(m));
    }
    out.sessions.emplace(maps.user_to_id.at(u), std::move(mapped));
  }
  for (const auto& [a, b] : store.edges)
    out.edges.insert(norm_edge(maps.user_to_id.at(a), maps.user_to_id.at(b)));
  for (const auto& [raw, id] : maps.item_to_id) out.items.insert(id);
  return {std::move(out), std::move(maps)};
}

}  // namespace tegaarec
