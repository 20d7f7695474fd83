#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tegaarec/data.hpp"
#include "tegaarec/trainer.hpp"

namespace tegaarec {

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("failed writing " + path);
}

inline std::string fmt_fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

// percentage with two decimals
inline std::string pct2(double v) { return fmt_fixed(100.0 * v, 2); }

namespace detail {

template <typename T>
T artifact_int(std::string_view text, const std::string& name, std::size_t line_no) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw IoError(name + " line " + std::to_string(line_no) + ": expected integer, got '" +
                  std::string(text) + "'");
  return value;
}

inline std::vector<std::int64_t> parse_item_csv(std::string_view text, const std::string& name,
                                                std::size_t line_no) {
  std::vector<std::int64_t> items;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string_view::npos) comma = text.size();
    items.push_back(artifact_int<std::int64_t>(text.substr(start, comma - start), name, line_no));
    start = comma + 1;
    if (comma == text.size()) break;
  }
  return items;
}

inline std::string item_csv(const std::vector<std::int64_t>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(items[i]);
  }
  return out;
}

}  // namespace detail

// session store: one session per line, `user  t  week  items_csv`
inline std::string store_to_tsv(const SessionStore& store) {
  std::string out;
  for (const auto& [u, q] : store.sessions)
    for (const Session& s : q)
      out += std::to_string(u) + "\t" + std::to_string(s.t) + "\t" + std::to_string(s.week) +
             "\t" + detail::item_csv(s.items) + "\n";
  return out;
}

inline SessionStore store_from_tsv(const std::string& text, std::set<Edge> edges,
                                   const std::string& name) {
  SessionStore store;
  store.edges = std::move(edges);
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 4)
      throw IoError(name + " line " + std::to_string(line_no) + ": expected 4 fields, got " +
                    std::to_string(fields.size()));
    Session s;
    s.user = detail::artifact_int<std::int64_t>(fields[0], name, line_no);
    s.t = detail::artifact_int<int>(fields[1], name, line_no);
    s.week = detail::artifact_int<std::int64_t>(fields[2], name, line_no);
    s.items = detail::parse_item_csv(fields[3], name, line_no);
    for (std::int64_t item : s.items) store.items.insert(item);
    store.sessions[s.user].push_back(std::move(s));
  });
  store.check_invariants();
  return store;
}

inline std::string edges_to_tsv(const std::set<Edge>& edges) {
  std::string out;
  for (const auto& [a, b] : edges) out += std::to_string(a) + "\t" + std::to_string(b) + "\n";
  return out;
}

// split manifest: `user  t  split` per kept eval instance; items live in eval_sessions.tsv
inline std::string eval_manifest_tsv(const DatasetSplit& split) {
  std::string out;
  for (const EvalInstance& inst : split.valid)
    out += std::to_string(inst.user) + "\t" + std::to_string(inst.t) + "\tvalid\n";
  for (const EvalInstance& inst : split.test)
    out += std::to_string(inst.user) + "\t" + std::to_string(inst.t) + "\ttest\n";
  return out;
}

inline std::string eval_sessions_tsv(const DatasetSplit& split) {
  std::map<std::pair<std::int64_t, int>, const EvalInstance*> rows;
  for (const EvalInstance& inst : split.valid) rows[{inst.user, inst.t}] = &inst;
  for (const EvalInstance& inst : split.test) rows[{inst.user, inst.t}] = &inst;
  std::string out;
  for (const auto& [key, inst] : rows)
    out += std::to_string(key.first) + "\t" + std::to_string(key.second) + "\t" +
           detail::item_csv(inst->items) + "\n";
  return out;
}

inline void load_eval_split(const std::string& manifest_text, const std::string& sessions_text,
                            std::int64_t cutoff_week, DatasetSplit& split) {
  std::map<std::pair<std::int64_t, int>, std::vector<std::int64_t>> sessions;
  detail::for_each_line(sessions_text, [&](std::size_t line_no, std::string_view line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 3)
      throw IoError("eval_sessions.tsv line " + std::to_string(line_no) +
                    ": expected 3 fields, got " + std::to_string(fields.size()));
    auto user = detail::artifact_int<std::int64_t>(fields[0], "eval_sessions.tsv", line_no);
    auto t = detail::artifact_int<int>(fields[1], "eval_sessions.tsv", line_no);
    sessions[{user, t}] = detail::parse_item_csv(fields[2], "eval_sessions.tsv", line_no);
  });
  detail::for_each_line(manifest_text, [&](std::size_t line_no, std::string_view line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 3)
      throw IoError("eval.tsv line " + std::to_string(line_no) + ": expected 3 fields, got " +
                    std::to_string(fields.size()));
    EvalInstance inst;
    inst.user = detail::artifact_int<std::int64_t>(fields[0], "eval.tsv", line_no);
    inst.t = detail::artifact_int<int>(fields[1], "eval.tsv", line_no);
    inst.cutoff_week = cutoff_week;
    auto it = sessions.find({inst.user, inst.t});
    if (it == sessions.end())
      throw IoError("eval.tsv line " + std::to_string(line_no) + ": no session for user " +
                    std::to_string(inst.user) + " t " + std::to_string(inst.t));
    inst.items = it->second;
    if (fields[2] == "valid")
      split.valid.push_back(std::move(inst));
    else if (fields[2] == "test")
      split.test.push_back(std::move(inst));
    else
      throw IoError("eval.tsv line " + std::to_string(line_no) + ": unknown split tag '" +
                    std::string(fields[2]) + "'");
  });
}

inline std::string maps_to_tsv(const std::map<std::int64_t, std::int64_t>& to_id) {
  std::string out;
  for (const auto& [orig, dense] : to_id)
    out += std::to_string(orig) + "\t" + std::to_string(dense) + "\n";
  return out;
}

inline std::map<std::int64_t, std::int64_t> maps_from_tsv(const std::string& text,
                                                          const std::string& name) {
  std::map<std::int64_t, std::int64_t> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 2)
      throw IoError(name + " line " + std::to_string(line_no) + ": expected 2 fields, got " +
                    std::to_string(fields.size()));
    out[detail::artifact_int<std::int64_t>(fields[0], name, line_no)] =
        detail::artifact_int<std::int64_t>(fields[1], name, line_no);
  });
  return out;
}

inline std::string meta_to_tsv(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + "\t" + v + "\n";
  return out;
}

inline std::map<std::string, std::string> meta_from_tsv(const std::string& text) {
  std::map<std::string, std::string> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    auto fields = detail::split_tabs(line);
    if (fields.size() != 2)
      throw IoError("meta.tsv line " + std::to_string(line_no) + ": expected 2 fields, got " +
                    std::to_string(fields.size()));
    out[std::string(fields[0])] = std::string(fields[1]);
  });
  return out;
}

inline std::int64_t meta_int(const std::map<std::string, std::string>& meta,
                             const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw IoError("meta.tsv is missing key '" + key + "'");
  return detail::artifact_int<std::int64_t>(it->second, "meta.tsv " + key, 1);
}

// train report: `# config:` echo, header, one row per epoch (metrics as percentages)
inline std::string report_to_tsv(const std::string& config_echo,
                                 const std::vector<EpochRecord>& epochs) {
  std::string out = "# config: " + config_echo + "\n";
  out += "epoch\tloss\tlr\tval_r20\tval_n20\n";
  for (const EpochRecord& rec : epochs)
    out += std::to_string(rec.epoch) + "\t" + fmt_fixed(rec.loss, 6) + "\t" +
           fmt_fixed(rec.lr, 6) + "\t" + pct2(rec.val_r20) + "\t" + pct2(rec.val_n20) + "\n";
  return out;
}

struct PreparedData {
  DatasetSplit split;
  std::map<std::string, std::string> meta;
};

inline PreparedData load_prepared(const std::string& workdir) {
  PreparedData data;
  data.meta = meta_from_tsv(read_text_file(workdir + "/meta.tsv"));
  auto edges = parse_events("", read_text_file(workdir + "/edges.tsv")).edges;
  try {
    data.split.train =
        store_from_tsv(read_text_file(workdir + "/train_store.tsv"), std::move(edges),
                       "train_store.tsv");
  } catch (const StateError& e) {
    throw IoError("train_store.tsv is inconsistent: " + std::string(e.what()));
  }
  data.split.holdout_weeks = static_cast<int>(meta_int(data.meta, "holdout_weeks"));
  data.split.holdout_start_week = meta_int(data.meta, "holdout_start_week");
  load_eval_split(read_text_file(workdir + "/eval.tsv"),
                  read_text_file(workdir + "/eval_sessions.tsv"), data.split.holdout_start_week,
                  data.split);
  return data;
}

}  // namespace tegaarec
