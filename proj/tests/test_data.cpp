#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "helpers.hpp"
#include "tegaarec/data.hpp"

using namespace tegaarec;

TEST_CASE("parse_events basics") {
  auto parsed = parse_events("3\t7\t1000", "");
  REQUIRE(parsed.events.size() == 1);
  CHECK(parsed.events[0].user_id == 3);
  CHECK(parsed.events[0].item_id == 7);
  CHECK(parsed.events[0].timestamp == 1000);

  auto dup = parse_events("", "1\t2\n2\t1\n");
  CHECK(dup.edges.size() == 1);
  CHECK(dup.edges.count({1, 2}) == 1);

  CHECK_THROWS_AS(parse_events("3\tx\t9", ""), IngestError);
  try {
    parse_events("1\t2\t3\n3\tx\t9", "");
  } catch (const IngestError& e) {
    std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_events("1\t2", ""), IngestError);
  CHECK_THROWS_AS(parse_events("1\t0\t5", ""), IngestError);   // padding id reserved
  CHECK_THROWS_AS(parse_events("-1\t2\t5", ""), IngestError);  // negative user
  CHECK_THROWS_AS(parse_events("1\t2\t-5", ""), IngestError);  // negative timestamp
  CHECK_THROWS_AS(parse_events("", "1\tz"), IngestError);

  auto self_loop = parse_events("", "4\t4");
  CHECK(self_loop.edges.empty());

  auto crlf = parse_events("1\t2\t3\r\n\n2\t3\t4\r\n", "");
  CHECK(crlf.events.size() == 2);
}

TEST_CASE("segment_weekly boundaries and ordering") {
  auto one = segment_weekly({{1, 5, 0}, {1, 6, 604800}});
  REQUIRE(one.sessions.at(1).size() == 2);
  CHECK(one.sessions.at(1)[0].items == std::vector<std::int64_t>{5});
  CHECK(one.sessions.at(1)[1].items == std::vector<std::int64_t>{6});
  CHECK(one.sessions.at(1)[0].week == 0);
  CHECK(one.sessions.at(1)[1].week == 1);

  auto three = segment_weekly({{1, 9, 200}, {1, 7, 0}, {1, 8, 100}});
  REQUIRE(three.sessions.at(1).size() == 1);
  CHECK(three.sessions.at(1)[0].items == std::vector<std::int64_t>{7, 8, 9});
  CHECK(three.sessions.at(1)[0].t == 1);
}

TEST_CASE("segment_weekly equals group-by oracle on random events") {
  auto g = testutil::rng(42);
  auto events = testutil::random_events(20, 40, 8, 1000, g);
  auto store = segment_weekly(events);
  store.check_invariants();

  // brute-force group-by (user, week), then timestamp order
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::pair<std::int64_t, std::int64_t>>>
      groups;
  for (const Event& e : events)
    groups[{e.user_id, week_of(e.timestamp)}].push_back({e.timestamp, e.item_id});
  for (auto& [key, v] : groups) std::sort(v.begin(), v.end());

  std::size_t seen = 0;
  for (const auto& [user, q] : store.sessions) {
    for (const Session& s : q) {
      auto it = groups.find({user, s.week});
      REQUIRE(it != groups.end());
      REQUIRE(it->second.size() == s.items.size());
      for (std::size_t i = 0; i < s.items.size(); ++i) CHECK(s.items[i] == it->second[i].second);
      ++seen;
    }
  }
  CHECK(seen == groups.size());
}

TEST_CASE("segment_weekly is order-insensitive") {
  auto g = testutil::rng(43);
  auto events = testutil::random_events(10, 20, 5, 300, g);
  auto a = segment_weekly(events);
  std::shuffle(events.begin(), events.end(), g);
  auto b = segment_weekly(events);
  REQUIRE(a.sessions.size() == b.sessions.size());
  for (const auto& [u, q] : a.sessions) {
    const auto& q2 = b.sessions.at(u);
    REQUIRE(q.size() == q2.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(q[i].items == q2[i].items);
      CHECK(q[i].week == q2[i].week);
    }
  }
}

TEST_CASE("split_holdout pools, filters, errors") {
  // all sessions inside the holdout window -> empty train
  auto tiny = segment_weekly({{1, 2, 0}, {1, 3, 100}});
  CHECK_THROWS_AS(split_holdout(tiny, 1, 7), ConfigError);
  CHECK_THROWS_AS(split_holdout(tiny, 0, 7), ConfigError);

  // pool of 10 eval sessions -> 5/5
  std::vector<Event> events;
  for (int u = 0; u < 10; ++u) {
    events.push_back({u, 1, 0});
    events.push_back({u, 2, 100});
    events.push_back({u, 1, 604800});  // week 1: eval pool
    events.push_back({u, 2, 604900});
  }
  auto split = split_holdout(segment_weekly(events), 1, 99);
  CHECK(split.valid.size() == 5);
  CHECK(split.test.size() == 5);
  CHECK(split.holdout_start_week == 1);
  std::set<std::pair<std::int64_t, int>> vkeys, tkeys;
  for (const auto& i : split.valid) vkeys.insert({i.user, i.t});
  for (const auto& i : split.test) tkeys.insert({i.user, i.t});
  for (const auto& k : vkeys) CHECK(tkeys.count(k) == 0);

  // unseen-item filter: c never appears in train
  std::vector<Event> ev2 = {
      {0, 1, 0}, {0, 2, 50},                                  // train: [1,2]
      {0, 1, 604800}, {0, 2, 604850}, {0, 99, 604900},        // eval: [1,2,99] -> [1,2]
  };
  auto sp2 = split_holdout(segment_weekly(ev2), 1, 5);
  REQUIRE(sp2.valid.size() + sp2.test.size() == 1);
  const EvalInstance& inst = sp2.valid.empty() ? sp2.test[0] : sp2.valid[0];
  CHECK(inst.items == std::vector<std::int64_t>{1, 2});
  CHECK(inst.cutoff_week == 1);

  // eval session reduced below 2 is dropped; user with no history dropped
  std::vector<Event> ev3 = {
      {0, 1, 0},
      {0, 1, 604800}, {0, 98, 604850},  // reduces to [1], dropped
      {1, 1, 604800}, {1, 1, 604850},   // user 1 has no train history, dropped
  };
  auto sp3 = split_holdout(segment_weekly(ev3), 1, 5);
  CHECK(sp3.valid.empty());
  CHECK(sp3.test.empty());
}

TEST_CASE("split_holdout invariants on random stores") {
  auto g = testutil::rng(44);
  for (int rep = 0; rep < 20; ++rep) {
    auto store = testutil::random_store(15, 30, 6, 400, 0.2, g);
    DatasetSplit split;
    try {
      split = split_holdout(store, 2, 1000 + rep);
    } catch (const ConfigError&) {
      continue;
    }
    split.train.check_invariants();
    auto check = [&](const std::vector<EvalInstance>& pool) {
      for (const EvalInstance& inst : pool) {
        CHECK(inst.items.size() >= 2);
        for (std::int64_t it : inst.items) CHECK(split.train.items.count(it) == 1);
        CHECK(split.train.sessions.count(inst.user) == 1);
        for (const Session& s : split.train.sessions.at(inst.user))
          CHECK(s.week < split.holdout_start_week);
      }
    };
    check(split.valid);
    check(split.test);
    CHECK(std::llabs(static_cast<long long>(split.valid.size()) -
                     static_cast<long long>(split.test.size())) <= 1);
    // same seed reproduces the partition
    auto again = split_holdout(store, 2, 1000 + rep);
    REQUIRE(again.valid.size() == split.valid.size());
    for (std::size_t i = 0; i < again.valid.size(); ++i) {
      CHECK(again.valid[i].user == split.valid[i].user);
      CHECK(again.valid[i].t == split.valid[i].t);
    }
  }
}

TEST_CASE("reindex densifies ids and round-trips") {
  auto store = segment_weekly({{7, 10, 0}, {7, 99, 100}, {3, 99, 50}}, {{3, 7}});
  auto [dense, maps] = reindex(store);
  CHECK(maps.item_to_id.at(10) == 1);
  CHECK(maps.item_to_id.at(99) == 2);
  CHECK(maps.user_to_id.at(3) == 0);
  CHECK(maps.user_to_id.at(7) == 1);
  CHECK(maps.item_from_id[0] == kPadItem);
  for (const auto& [raw, id] : maps.item_to_id) {
    CHECK(id >= 1);
    CHECK(maps.item_from_id[static_cast<std::size_t>(id)] == raw);
  }
  for (const auto& [raw, id] : maps.user_to_id)
    CHECK(maps.user_from_id[static_cast<std::size_t>(id)] == raw);
  dense.check_invariants();
  CHECK(dense.has_edge(0, 1));
  CHECK(dense.sessions.at(1)[0].items == std::vector<std::int64_t>{1, 2});
  CHECK(dense.sessions.at(0)[0].items == std::vector<std::int64_t>{2});
}
