#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "tegaarec/artifacts.hpp"
#include "tegaarec/checkpoint.hpp"
#include "tegaarec/synth.hpp"

using namespace tegaarec;
namespace fs = std::filesystem;

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string trim_copy(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

// CLI11 processes config files only on the top-level app, never on a
// subcommand, so --config is expanded here into --key=value tokens before
// parsing. Keys already present on the command line are skipped: the
// command-line value wins.
std::vector<std::string> expand_config_args(const CLI::App& app, int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  for (const auto& a : args) {
    if (a == "--help" || a == "-h") return args;
  }
  CLI::App* sub = nullptr;
  std::size_t sub_pos = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!args[i].empty() && args[i][0] != '-') {
      sub = app.get_subcommand_no_throw(args[i]);
      sub_pos = i;
      break;
    }
  }
  if (sub == nullptr) return args;

  std::string path;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      break;
    }
  }
  if (path.empty()) return args;

  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot open config file: " + path);
  }

  std::vector<std::string> keys;
  std::map<std::string, std::string> values;  // later lines win
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const std::string entry = trim_copy(line);
    if (entry.empty() || entry[0] == '#') return;
    const auto where = [&] {
      return "config file " + path + " line " + std::to_string(line_no) + ": ";
    };
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected key=value");
    const std::string key = trim_copy(std::string_view(entry).substr(0, eq));
    const std::string value = trim_copy(std::string_view(entry).substr(eq + 1));
    if (key.empty()) throw ConfigError(where() + "empty key");
    if (key == "config" || key == "help") {
      throw ConfigError(where() + "key '" + key + "' is not allowed in a config file");
    }
    if (sub->get_option_no_throw("--" + key) == nullptr) {
      throw ConfigError(where() + "unknown key '" + key + "' for subcommand '" +
                        sub->get_name() + "'");
    }
    auto it = values.find(key);
    if (it == values.end()) {
      keys.push_back(key);
      values.emplace(key, value);
    } else {
      it->second = value;
    }
  });

  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1);
  for (const auto& key : keys) {
    const std::string bare = "--" + key;
    const std::string assigned = bare + "=";
    bool overridden = false;
    for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
      if (args[i] == bare || args[i].rfind(assigned, 0) == 0) {
        overridden = true;
        break;
      }
    }
    if (!overridden) out.push_back(assigned + values.at(key));
  }
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, args.end());
  return out;
}

struct ModelOpts {
  std::size_t dim = 128;
  std::size_t heads = 8;
  std::size_t layers = 1;
  std::size_t ff_mult = 4;
  std::size_t max_session_len = 50;
  std::string neighbour_history = "last";
  std::vector<std::string> ablation;

  bool has(const std::string& flag) const {
    return std::find(ablation.begin(), ablation.end(), flag) != ablation.end();
  }

  ModelConfig to_config(std::size_t n_items, std::size_t n_users) const {
    ModelConfig mc;
    mc.n_items = n_items;
    mc.n_users = n_users;
    mc.d = dim;
    mc.heads = heads;
    mc.layers = layers;
    mc.ff_mult = ff_mult;
    mc.max_session_len = max_session_len;
    mc.with_pe = has("with_pe");
    mc.no_uli = has("no_uli") || has("no_ali");  // no_ali implies no_uli
    mc.no_ali = has("no_ali");
    mc.no_gal = has("no_gal");
    mc.neighbour_history = neighbour_history == "all_concat" ? NeighbourHistory::all_concat
                                                             : NeighbourHistory::last;
    return mc;
  }
};

struct SampleOpts {
  std::size_t lmp = 15;
  std::size_t social = 25;
  bool volume_weighted = false;
};

void add_model_options(CLI::App* cmd, ModelOpts& mo) {
  cmd->add_option("--dim", mo.dim, "embedding width")->capture_default_str();
  cmd->add_option("--heads", mo.heads, "attention heads")->capture_default_str();
  cmd->add_option("--layers", mo.layers, "transformer encoder layers")->capture_default_str();
  cmd->add_option("--ff-mult", mo.ff_mult, "feed-forward width multiplier")->capture_default_str();
  cmd->add_option("--max-session-len", mo.max_session_len, "session truncation length")
      ->capture_default_str();
  cmd->add_option("--neighbour-history", mo.neighbour_history,
                  "neighbour session encoding: last|all_concat")
      ->check(CLI::IsMember({"last", "all_concat"}))
      ->capture_default_str();
  cmd->add_option("--ablation", mo.ablation,
                  "model variants: no_lmp, no_sf, no_gal, with_pe, no_uli, no_ali")
      ->delimiter(',')
      ->check(CLI::IsMember({"no_lmp", "no_sf", "no_gal", "with_pe", "no_uli", "no_ali"}));
}

void add_sample_options(CLI::App* cmd, SampleOpts& so) {
  cmd->add_option("--lmp-neighbours", so.lmp, "sampled LMP neighbours per instance")
      ->capture_default_str();
  cmd->add_option("--social-neighbours", so.social, "sampled social friends per instance")
      ->capture_default_str();
  cmd->add_flag("--volume-weighted", so.volume_weighted,
                "weight LMP sampling by shared-item count");
}

NeighbourFlags to_flags(const ModelOpts& mo, const SampleOpts& so) {
  NeighbourFlags flags;
  flags.no_lmp = mo.has("no_lmp");
  flags.no_sf = mo.has("no_sf");
  flags.volume_weighted = so.volume_weighted;
  return flags;
}

std::string ablation_echo(const std::vector<std::string>& ablation) {
  if (ablation.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < ablation.size(); ++i) {
    if (i) out += ',';
    out += ablation[i];
  }
  return out;
}

std::string config_echo(const TrainConfig& cfg, const ModelConfig& mc,
                        const std::vector<std::string>& ablation) {
  std::string out;
  out += "lr=" + fmt_g(cfg.lr);
  out += " lmp_neighbours=" + std::to_string(cfg.L_l);
  out += " social_neighbours=" + std::to_string(cfg.L_s);
  out += " dim=" + std::to_string(mc.d);
  out += " heads=" + std::to_string(mc.heads);
  out += " layers=" + std::to_string(mc.layers);
  out += " ff_mult=" + std::to_string(mc.ff_mult);
  out += " max_session_len=" + std::to_string(mc.max_session_len);
  out += std::string(" neighbour_history=") +
         (mc.neighbour_history == NeighbourHistory::all_concat ? "all_concat" : "last");
  out += " warmup_steps=" + std::to_string(cfg.warmup_steps);
  out += std::string(" warmup_per_epoch=") + (cfg.warmup_per_epoch ? "1" : "0");
  out += " tolerance=" + std::to_string(cfg.tolerance);
  out += " batch_size=" + std::to_string(cfg.batch_size);
  out += " max_epochs=" + std::to_string(cfg.max_epochs);
  out += " seed=" + std::to_string(cfg.seed);
  out += " eval_seed=" + std::to_string(cfg.eval_seed);
  out += " grad_clip=" + fmt_g(cfg.grad_clip);
  out += std::string(" volume_weighted=") + (cfg.flags.volume_weighted ? "1" : "0");
  out += " ablation=" + ablation_echo(ablation);
  return out;
}

struct SynthOpts {
  std::string workdir = ".";
  SynthSpec spec;
};

void run_synth(const SynthOpts& opts) {
  auto data = generate(opts.spec);
  fs::create_directories(opts.workdir);
  write_text_file(opts.workdir + "/events.tsv", data.events_tsv);
  write_text_file(opts.workdir + "/edges.tsv", data.edges_tsv);
  write_text_file(opts.workdir + "/clusters.tsv", data.clusters_tsv);
  std::size_t events = 0;
  for (char ch : data.events_tsv)
    if (ch == '\n') ++events;
  std::cout << "users\t" << opts.spec.n_users << "\n"
            << "items\t" << opts.spec.n_items << "\n"
            << "clusters\t" << opts.spec.n_clusters << "\n"
            << "events\t" << events << "\n"
            << "wrote\t" << opts.workdir << "/events.tsv, edges.tsv, clusters.tsv\n";
}

struct PrepareOpts {
  std::string events;
  std::string edges;
  std::string workdir = ".";
  int holdout_weeks = 1;
  std::uint64_t seed = 42;
};

void run_prepare(const PrepareOpts& opts) {
  auto parsed = parse_events(read_text_file(opts.events),
                             opts.edges.empty() ? std::string() : read_text_file(opts.edges));
  auto full = segment_weekly(std::move(parsed.events), std::move(parsed.edges));
  auto [dense, maps] = reindex(full);
  auto split = split_holdout(dense, opts.holdout_weeks, opts.seed);

  std::size_t n_sessions = 0, n_events = 0, n_train_sessions = 0;
  for (const auto& [u, q] : dense.sessions) {
    n_sessions += q.size();
    for (const Session& s : q) n_events += s.items.size();
  }
  for (const auto& [u, q] : split.train.sessions) n_train_sessions += q.size();
  const double avg_len =
      n_sessions ? static_cast<double>(n_events) / static_cast<double>(n_sessions) : 0.0;

  std::map<std::string, std::string> meta;
  meta["holdout_weeks"] = std::to_string(split.holdout_weeks);
  meta["holdout_start_week"] = std::to_string(split.holdout_start_week);
  meta["split_seed"] = std::to_string(opts.seed);
  meta["n_users"] = std::to_string(maps.user_from_id.size());
  meta["n_items"] = std::to_string(maps.item_from_id.size() - 1);
  meta["n_events"] = std::to_string(n_events);
  meta["n_sessions"] = std::to_string(n_sessions);
  meta["avg_session_len"] = fmt_fixed(avg_len, 4);
  meta["n_train_sessions"] = std::to_string(n_train_sessions);
  meta["n_valid_instances"] = std::to_string(split.valid.size());
  meta["n_test_instances"] = std::to_string(split.test.size());

  fs::create_directories(opts.workdir);
  write_text_file(opts.workdir + "/train_store.tsv", store_to_tsv(split.train));
  write_text_file(opts.workdir + "/edges.tsv", edges_to_tsv(split.train.edges));
  write_text_file(opts.workdir + "/eval.tsv", eval_manifest_tsv(split));
  write_text_file(opts.workdir + "/eval_sessions.tsv", eval_sessions_tsv(split));
  write_text_file(opts.workdir + "/user_map.tsv", maps_to_tsv(maps.user_to_id));
  write_text_file(opts.workdir + "/item_map.tsv", maps_to_tsv(maps.item_to_id));
  write_text_file(opts.workdir + "/meta.tsv", meta_to_tsv(meta));

  std::cout << "users\t" << meta["n_users"] << "\n"
            << "items\t" << meta["n_items"] << "\n"
            << "events\t" << meta["n_events"] << "\n"
            << "sessions\t" << meta["n_sessions"] << "\n"
            << "avg_session_len\t" << meta["avg_session_len"] << "\n"
            << "train_sessions\t" << meta["n_train_sessions"] << "\n"
            << "valid_instances\t" << meta["n_valid_instances"] << "\n"
            << "test_instances\t" << meta["n_test_instances"] << "\n"
            << "holdout_start_week\t" << meta["holdout_start_week"] << "\n";
}

struct TrainOpts {
  std::string workdir = ".";
  ModelOpts model;
  SampleOpts sample;
  TrainConfig cfg;
  bool resume = false;
};

void run_train(const TrainOpts& opts) {
  auto prepared = load_prepared(opts.workdir);
  TrainConfig cfg = opts.cfg;
  cfg.L_l = opts.sample.lmp;
  cfg.L_s = opts.sample.social;
  cfg.flags = to_flags(opts.model, opts.sample);
  cfg.layers = opts.model.layers;

  ModelParams params;
  TrainerState state;
  if (opts.resume) {
    params = load_checkpoint(opts.workdir + "/checkpoint_last.bin", &state);
  } else {
    ModelConfig mc = opts.model.to_config(
        static_cast<std::size_t>(meta_int(prepared.meta, "n_items")),
        static_cast<std::size_t>(meta_int(prepared.meta, "n_users")));
    mc.validate();
    params = ModelParams::init(mc, cfg.seed);
  }

  const std::string echo = config_echo(cfg, params.config, opts.model.ablation);
  auto report = fit(prepared.split.train, prepared.split, params, state, cfg,
                    [&](const EpochRecord& rec) {
                      save_checkpoint(opts.workdir + "/checkpoint_last.bin", params, &state);
                      std::cout << "epoch " << rec.epoch << "\tloss " << fmt_fixed(rec.loss, 6)
                                << "\tlr " << fmt_fixed(rec.lr, 6) << "\tR@20 "
                                << pct2(rec.val_r20) << "\tN@20 " << pct2(rec.val_n20) << "\n";
                    });
  save_checkpoint(opts.workdir + "/checkpoint.bin", params, &state);
  write_text_file(opts.workdir + "/report.tsv", report_to_tsv(echo, report.epochs));

  std::cout << "stop\t" << report.stop_reason << " after epoch " << state.epoch_done << "\n"
            << "best\tepoch " << report.best_epoch << " R@20 " << pct2(report.best_r20)
            << " N@20 " << pct2(report.best_n20) << "\n"
            << "checkpoint\t" << opts.workdir << "/checkpoint.bin\n"
            << "report\t" << opts.workdir << "/report.tsv\n";
}

struct GridOpts {
  TrainOpts train;
  std::vector<double> grid_lr;
  std::vector<std::size_t> grid_lmp, grid_social, grid_layers, grid_warmup, grid_tolerance;
};

void run_grid(const GridOpts& opts) {
  auto prepared = load_prepared(opts.train.workdir);
  TrainConfig base = opts.train.cfg;
  base.L_l = opts.train.sample.lmp;
  base.L_s = opts.train.sample.social;
  base.flags = to_flags(opts.train.model, opts.train.sample);
  base.layers = opts.train.model.layers;
  base.grid_lr = opts.grid_lr;
  base.grid_L_l = opts.grid_lmp;
  base.grid_L_s = opts.grid_social;
  base.grid_layers = opts.grid_layers;
  base.grid_warmup = opts.grid_warmup;
  base.grid_tolerance = opts.grid_tolerance;

  ModelConfig mc = opts.train.model.to_config(
      static_cast<std::size_t>(meta_int(prepared.meta, "n_items")),
      static_cast<std::size_t>(meta_int(prepared.meta, "n_users")));
  mc.validate();

  auto result = grid_search(prepared.split.train, prepared.split, mc, base);

  std::string summary =
      "cell\tlr\tlmp\tsocial\tlayers\twarmup\ttolerance\tbest_epoch\tbest_r20\tbest_n20\t"
      "selected\n";
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const GridCell& cell = result.cells[i];
    ModelConfig cell_mc = mc;
    cell_mc.layers = cell.cfg.layers;
    write_text_file(opts.train.workdir + "/report_cell_" + std::to_string(i) + ".tsv",
                    report_to_tsv(config_echo(cell.cfg, cell_mc, opts.train.model.ablation),
                                  cell.report.epochs));
    summary += std::to_string(i) + "\t" + fmt_g(cell.cfg.lr) + "\t" +
               std::to_string(cell.cfg.L_l) + "\t" + std::to_string(cell.cfg.L_s) + "\t" +
               std::to_string(cell.cfg.layers) + "\t" + std::to_string(cell.cfg.warmup_steps) +
               "\t" + std::to_string(cell.cfg.tolerance) + "\t" +
               std::to_string(cell.report.best_epoch) + "\t" + pct2(cell.report.best_r20) + "\t" +
               pct2(cell.report.best_n20) + "\t" + (i == result.best_index ? "1" : "0") + "\n";
  }
  write_text_file(opts.train.workdir + "/grid.tsv", summary);

  // retrain the winning cell so the persisted checkpoint matches it
  const GridCell& best = result.cells[result.best_index];
  ModelConfig best_mc = mc;
  best_mc.layers = best.cfg.layers;
  ModelParams params = ModelParams::init(best_mc, best.cfg.seed);
  TrainerState state;
  auto report = fit(prepared.split.train, prepared.split, params, state, best.cfg,
                    [&](const EpochRecord&) {
                      save_checkpoint(opts.train.workdir + "/checkpoint_last.bin", params, &state);
                    });
  save_checkpoint(opts.train.workdir + "/checkpoint.bin", params, &state);
  write_text_file(opts.train.workdir + "/report.tsv",
                  report_to_tsv(config_echo(best.cfg, best_mc, opts.train.model.ablation),
                                report.epochs));

  std::cout << "cells\t" << result.cells.size() << "\n"
            << "best_cell\t" << result.best_index << " (lr " << fmt_g(best.cfg.lr) << ", R@20 "
            << pct2(best.report.best_r20) << ")\n"
            << "grid\t" << opts.train.workdir << "/grid.tsv\n"
            << "checkpoint\t" << opts.train.workdir << "/checkpoint.bin\n";
}

struct EvaluateOpts {
  std::string workdir = ".";
  std::string checkpoint;
  std::string split = "valid";
  std::vector<std::size_t> recall_ks = {10, 20};
  std::size_t ndcg_k = 20;
  std::uint64_t eval_seed = 1;
  bool last_prefix_only = false;
  ModelOpts model;  // only the ablation list matters here
  SampleOpts sample;
  std::string export_neighbours;
  std::string export_rankings;
  std::string out;
};

std::vector<EvalInstance> train_split_instances(const SessionStore& train) {
  std::vector<EvalInstance> out;
  for (const auto& [u, q] : train.sessions)
    for (const Session& s : q)
      if (s.t >= 2 && s.items.size() >= 2)
        out.push_back({u, s.t, s.items, s.week});
  return out;
}

void run_evaluate(const EvaluateOpts& opts) {
  auto prepared = load_prepared(opts.workdir);
  const std::string ckpt =
      opts.checkpoint.empty() ? opts.workdir + "/checkpoint.bin" : opts.checkpoint;
  ModelParams params = load_checkpoint(ckpt);

  const std::vector<EvalInstance>* part = nullptr;
  std::vector<EvalInstance> train_part;
  if (opts.split == "valid") {
    part = &prepared.split.valid;
  } else if (opts.split == "test") {
    part = &prepared.split.test;
  } else {
    train_part = train_split_instances(prepared.split.train);
    part = &train_part;
  }

  EvalOptions eval_opts;
  eval_opts.recall_ks = opts.recall_ks;
  eval_opts.ndcg_k = opts.ndcg_k;
  eval_opts.last_prefix_only = opts.last_prefix_only;
  eval_opts.L_l = opts.sample.lmp;
  eval_opts.L_s = opts.sample.social;
  eval_opts.flags = to_flags(opts.model, opts.sample);
  eval_opts.seed = opts.eval_seed;

  std::string neighbours_dump, rankings_dump;
  std::pair<std::int64_t, int> dumped{-1, -1};
  EvalObserver observer;
  if (!opts.export_neighbours.empty() || !opts.export_rankings.empty()) {
    observer = [&](const EvalRecord& rec) {
      if (!opts.export_neighbours.empty() && std::pair{rec.user, rec.t} != dumped) {
        dumped = {rec.user, rec.t};
        const std::string head = std::to_string(rec.user) + "\t" + std::to_string(rec.t) + "\t";
        for (std::int64_t v : rec.sample->lmp)
          neighbours_dump += head + "lmp\t" + std::to_string(v) + "\n";
        for (std::int64_t v : rec.sample->friends)
          neighbours_dump += head + "sf\t" + std::to_string(v) + "\n";
      }
      if (!opts.export_rankings.empty()) {
        for (std::size_t r = 0; r < rec.ranking->top.size(); ++r) {
          const std::int64_t item = rec.ranking->top[r];
          rankings_dump += std::to_string(rec.user) + "\t" + std::to_string(rec.t) + "\t" +
                           std::to_string(rec.k) + "\t" + std::to_string(r + 1) + "\t" +
                           std::to_string(item) + "\t" +
                           fmt_fixed(rec.ranking->scores[static_cast<std::size_t>(item - 1)], 6) +
                           "\n";
        }
      }
    };
  }

  auto index = ItemUserIndex::build(prepared.split.train);
  EvalResult res = evaluate(prepared.split.train, index, *part, params, eval_opts, observer);

  if (!opts.export_neighbours.empty())
    write_text_file(opts.export_neighbours, neighbours_dump);
  if (!opts.export_rankings.empty()) write_text_file(opts.export_rankings, rankings_dump);

  std::string ks_echo;
  for (std::size_t i = 0; i < opts.recall_ks.size(); ++i)
    ks_echo += (i ? "," : "") + std::to_string(opts.recall_ks[i]);
  std::string echo = "checkpoint=" + ckpt + " split=" + opts.split + " eval_seed=" +
                     std::to_string(opts.eval_seed) + " recall_ks=" + ks_echo + " ndcg_k=" +
                     std::to_string(opts.ndcg_k) +
                     " last_prefix_only=" + (opts.last_prefix_only ? "1" : "0") +
                     " lmp_neighbours=" + std::to_string(opts.sample.lmp) +
                     " social_neighbours=" + std::to_string(opts.sample.social) +
                     " volume_weighted=" + (opts.sample.volume_weighted ? "1" : "0") +
                     " ablation=" + ablation_echo(opts.model.ablation);

  std::string header = "split\tcount";
  std::string row = opts.split + "\t" + std::to_string(res.count);
  for (const auto& [k, v] : res.recall) {
    header += "\trecall@" + std::to_string(k);
    row += "\t" + pct2(v);
  }
  header += "\tndcg@" + std::to_string(opts.ndcg_k);
  row += "\t" + pct2(res.ndcg20);
  const std::string out_path =
      opts.out.empty() ? opts.workdir + "/eval_" + opts.split + ".tsv" : opts.out;
  write_text_file(out_path, "# config: " + echo + "\n" + header + "\n" + row + "\n");

  std::cout << "split " << opts.split << ": " << res.count << " sub-instances\n";
  for (const auto& [k, v] : res.recall)
    std::cout << "Recall@" << k << "\t" << pct2(v) << "\n";
  std::cout << "NDCG@" << opts.ndcg_k << "\t" << pct2(res.ndcg20) << "\n"
            << "results\t" << out_path << "\n";
}

struct RecommendOpts {
  std::string workdir = ".";
  std::string checkpoint;
  std::int64_t user = 0;
  std::vector<std::int64_t> items;
  std::size_t k = 20;
  int session_index = 0;  // 0 = derive from the user's training history
  std::uint64_t eval_seed = 1;
  ModelOpts model;
  SampleOpts sample;
  std::string out;
};

void run_recommend(const RecommendOpts& opts) {
  auto prepared = load_prepared(opts.workdir);
  const std::string ckpt =
      opts.checkpoint.empty() ? opts.workdir + "/checkpoint.bin" : opts.checkpoint;
  ModelParams params = load_checkpoint(ckpt);
  auto user_map = maps_from_tsv(read_text_file(opts.workdir + "/user_map.tsv"), "user_map.tsv");
  auto item_map = maps_from_tsv(read_text_file(opts.workdir + "/item_map.tsv"), "item_map.tsv");

  if (opts.items.empty()) throw ConfigError("recommend needs at least one session item");
  auto user_it = user_map.find(opts.user);
  if (user_it == user_map.end())
    throw ConfigError("unknown user id " + std::to_string(opts.user));
  const std::int64_t user = user_it->second;
  std::vector<std::int64_t> items;
  for (std::int64_t item : opts.items) {
    auto it = item_map.find(item);
    if (it == item_map.end()) throw ConfigError("unknown item id " + std::to_string(item));
    items.push_back(it->second);
  }
  std::map<std::int64_t, std::int64_t> item_back;
  for (const auto& [orig, dense] : item_map) item_back[dense] = orig;

  const SessionStore& train = prepared.split.train;
  int t = opts.session_index;
  if (t < 1) {
    auto it = train.sessions.find(user);
    t = 1 + static_cast<int>(it == train.sessions.end() ? 0 : it->second.size());
  }

  NeighbourFlags flags = to_flags(opts.model, opts.sample);
  flags.all_concat_history = params.config.neighbour_history == NeighbourHistory::all_concat;
  auto rng = make_rng(mix_seed(opts.eval_seed, static_cast<std::uint64_t>(user),
                               static_cast<std::uint64_t>(t)));
  auto index = ItemUserIndex::build(train);
  NeighbourSample sample =
      build_sample(train, index, user, prepared.split.holdout_start_week, items,
                   opts.sample.lmp, opts.sample.social, rng, flags);

  const std::size_t max_len = params.config.max_session_len;
  std::vector<std::int64_t> input = items.size() > max_len
                                        ? std::vector<std::int64_t>(items.end() - max_len,
                                                                    items.end())
                                        : items;
  Tensor h = encode_instance(input, static_cast<int>(input.size()), sample, params);
  const std::size_t k = std::min(opts.k, params.config.n_items);
  ScoredRanking ranking = score_items(h, params, k);

  std::string rows;
  for (std::size_t r = 0; r < ranking.top.size(); ++r) {
    const std::int64_t dense = ranking.top[r];
    rows += std::to_string(opts.user) + "\t" + std::to_string(r + 1) + "\t" +
            std::to_string(item_back.at(dense)) + "\t" +
            fmt_fixed(ranking.scores[static_cast<std::size_t>(dense - 1)], 6) + "\n";
  }
  std::cout << rows;
  if (!opts.out.empty()) write_text_file(opts.out, rows);
}

void add_train_options(CLI::App* cmd, TrainOpts& to) {
  cmd->add_option("--workdir", to.workdir, "prepared working directory")->capture_default_str();
  add_model_options(cmd, to.model);
  add_sample_options(cmd, to.sample);
  cmd->add_option("--lr", to.cfg.lr, "peak learning rate")->capture_default_str();
  cmd->add_option("--warmup-steps", to.cfg.warmup_steps, "linear warm-up steps")
      ->capture_default_str();
  cmd->add_flag("--warmup-per-epoch", to.cfg.warmup_per_epoch,
                "apply warm-up per epoch instead of per step");
  cmd->add_option("--tolerance", to.cfg.tolerance, "early-stop patience in epochs")
      ->capture_default_str();
  cmd->add_option("--batch-size", to.cfg.batch_size, "masked instances per batch")
      ->capture_default_str();
  cmd->add_option("--max-epochs", to.cfg.max_epochs, "epoch budget")->capture_default_str();
  cmd->add_option("--seed", to.cfg.seed, "training seed")->capture_default_str();
  cmd->add_option("--eval-seed", to.cfg.eval_seed, "validation sampling seed")
      ->capture_default_str();
  cmd->add_option("--grad-clip", to.cfg.grad_clip, "global gradient-norm clip, 0 disables")
      ->capture_default_str();
  cmd->add_flag("--eval-last-prefix-only", to.cfg.eval_last_prefix_only,
                "validate on the last prefix of each eval session only");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"session-based social recommendation pipeline"};
  app.require_subcommand(1);
  std::string config_file;

  SynthOpts synth_opts;
  auto* synth_cmd = app.add_subcommand("synth", "generate a clustered synthetic dataset");
  synth_cmd->add_option("--config", config_file,
                        "flat key=value config file; command-line flags override it");
  synth_cmd->add_option("--workdir", synth_opts.workdir, "output directory")
      ->capture_default_str();
  synth_cmd->add_option("--users", synth_opts.spec.n_users, "number of users")
      ->capture_default_str();
  synth_cmd->add_option("--items", synth_opts.spec.n_items, "number of items")
      ->capture_default_str();
  synth_cmd->add_option("--clusters", synth_opts.spec.n_clusters, "number of interest clusters")
      ->capture_default_str();
  synth_cmd->add_option("--sessions-per-user", synth_opts.spec.sessions_per_user,
                        "weekly sessions per user")
      ->capture_default_str();
  synth_cmd->add_option("--len-min", synth_opts.spec.session_len_min, "minimum session length")
      ->capture_default_str();
  synth_cmd->add_option("--len-max", synth_opts.spec.session_len_max, "maximum session length")
      ->capture_default_str();
  synth_cmd->add_option("--edges-per-user", synth_opts.spec.edges_per_user,
                        "social edges drawn per user")
      ->capture_default_str();
  synth_cmd->add_option("--pool-overlap", synth_opts.spec.pool_overlap,
                        "items shared with the next cluster's pool")
      ->capture_default_str();
  synth_cmd->add_option("--alpha", synth_opts.spec.alpha, "own-pool draw probability")
      ->capture_default_str();
  synth_cmd->add_option("--beta", synth_opts.spec.beta, "cross-cluster edge probability")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth_opts.spec.seed, "generation seed")
      ->capture_default_str();
  synth_cmd->callback([&] { run_synth(synth_opts); });

  PrepareOpts prepare_opts;
  auto* prepare_cmd = app.add_subcommand("prepare", "ingest, segment, reindex, and split");
  prepare_cmd->add_option("--config", config_file,
                          "flat key=value config file; command-line flags override it");
  prepare_cmd->add_option("--events", prepare_opts.events, "events TSV (user, item, timestamp)")
      ->required()
      ->check(CLI::ExistingFile);
  prepare_cmd->add_option("--edges", prepare_opts.edges, "social edges TSV (user, user)")
      ->check(CLI::ExistingFile);
  prepare_cmd->add_option("--workdir", prepare_opts.workdir, "output directory")
      ->capture_default_str();
  prepare_cmd->add_option("--holdout-weeks", prepare_opts.holdout_weeks,
                          "trailing weeks held out for valid/test")
      ->capture_default_str();
  prepare_cmd->add_option("--seed", prepare_opts.seed, "valid/test shuffle seed")
      ->capture_default_str();
  prepare_cmd->callback([&] { run_prepare(prepare_opts); });

  TrainOpts train_opts;
  auto* train_cmd = app.add_subcommand("train", "train a model on a prepared workdir");
  train_cmd->add_option("--config", config_file,
                        "flat key=value config file; command-line flags override it");
  add_train_options(train_cmd, train_opts);
  train_cmd->add_flag("--resume", train_opts.resume,
                      "continue from <workdir>/checkpoint_last.bin");
  train_cmd->callback([&] { run_train(train_opts); });

  GridOpts grid_opts;
  auto* grid_cmd = app.add_subcommand("grid", "grid search over training hyperparameters");
  grid_cmd->add_option("--config", config_file,
                       "flat key=value config file; command-line flags override it");
  add_train_options(grid_cmd, grid_opts.train);
  grid_cmd->add_option("--grid-lr", grid_opts.grid_lr, "learning-rate grid")->delimiter(',');
  grid_cmd->add_option("--grid-lmp", grid_opts.grid_lmp, "LMP neighbour-count grid")
      ->delimiter(',');
  grid_cmd->add_option("--grid-social", grid_opts.grid_social, "social neighbour-count grid")
      ->delimiter(',');
  grid_cmd->add_option("--grid-layers", grid_opts.grid_layers, "encoder layer grid")
      ->delimiter(',');
  grid_cmd->add_option("--grid-warmup", grid_opts.grid_warmup, "warm-up step grid")
      ->delimiter(',');
  grid_cmd->add_option("--grid-tolerance", grid_opts.grid_tolerance, "early-stop patience grid")
      ->delimiter(',');
  grid_cmd->callback([&] { run_grid(grid_opts); });

  EvaluateOpts eval_opts;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a split");
  eval_cmd->add_option("--config", config_file,
                       "flat key=value config file; command-line flags override it");
  eval_cmd->add_option("--workdir", eval_opts.workdir, "prepared working directory")
      ->capture_default_str();
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint,
                       "checkpoint path (default <workdir>/checkpoint.bin)");
  eval_cmd->add_option("--split", eval_opts.split, "split to score")
      ->check(CLI::IsMember({"train", "valid", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--recall-ks", eval_opts.recall_ks, "recall cutoffs")->delimiter(',');
  eval_cmd->add_option("--ndcg-k", eval_opts.ndcg_k, "NDCG cutoff")->capture_default_str();
  eval_cmd->add_option("--eval-seed", eval_opts.eval_seed, "neighbour sampling seed")
      ->capture_default_str();
  eval_cmd->add_flag("--last-prefix-only", eval_opts.last_prefix_only,
                     "score only the last prefix of each session");
  eval_cmd->add_option("--ablation", eval_opts.model.ablation,
                       "neighbour ablations to mirror training: no_lmp, no_sf")
      ->delimiter(',')
      ->check(CLI::IsMember({"no_lmp", "no_sf", "no_gal", "with_pe", "no_uli", "no_ali"}));
  add_sample_options(eval_cmd, eval_opts.sample);
  eval_cmd->add_option("--export-neighbours", eval_opts.export_neighbours,
                       "write sampled neighbour sets to this TSV");
  eval_cmd->add_option("--export-rankings", eval_opts.export_rankings,
                       "write per-instance top-K rankings to this TSV");
  eval_cmd->add_option("--out", eval_opts.out,
                       "results TSV path (default <workdir>/eval_<split>.tsv)");
  eval_cmd->callback([&] { run_evaluate(eval_opts); });

  RecommendOpts rec_opts;
  auto* rec_cmd = app.add_subcommand("recommend", "top-K next items for a session");
  rec_cmd->add_option("--config", config_file,
                      "flat key=value config file; command-line flags override it");
  rec_cmd->add_option("--workdir", rec_opts.workdir, "prepared working directory")
      ->capture_default_str();
  rec_cmd->add_option("--checkpoint", rec_opts.checkpoint,
                      "checkpoint path (default <workdir>/checkpoint.bin)");
  rec_cmd->add_option("--user", rec_opts.user, "user id (original id space)")->required();
  rec_cmd->add_option("--items", rec_opts.items, "session items so far (original ids)")
      ->required()
      ->delimiter(',');
  rec_cmd->add_option("--k", rec_opts.k, "list length")->capture_default_str();
  rec_cmd->add_option("--session-index", rec_opts.session_index,
                      "session index for sampling; 0 derives it from training history")
      ->capture_default_str();
  rec_cmd->add_option("--eval-seed", rec_opts.eval_seed, "neighbour sampling seed")
      ->capture_default_str();
  rec_cmd->add_option("--ablation", rec_opts.model.ablation,
                      "neighbour ablations to mirror training: no_lmp, no_sf")
      ->delimiter(',')
      ->check(CLI::IsMember({"no_lmp", "no_sf", "no_gal", "with_pe", "no_uli", "no_ali"}));
  add_sample_options(rec_cmd, rec_opts.sample);
  rec_cmd->add_option("--out", rec_opts.out, "also write the rows to this file");
  rec_cmd->callback([&] { run_recommend(rec_opts); });

  try {
    std::vector<std::string> args = expand_config_args(app, argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
