#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tegaarec/artifacts.hpp"
#include "tegaarec/checkpoint.hpp"

using namespace tegaarec;
namespace fs = std::filesystem;

namespace {

const fs::path& scratch_root() {
  static struct Root {
    fs::path p;
    Root() : p(fs::temp_directory_path() / "tegaarec_cli_tests") {
      fs::remove_all(p);
      fs::create_directories(p);
    }
    ~Root() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } root;
  return root.p;
}

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run_cli(const std::string& args) {
  static int seq = 0;
  const std::string out_path = (scratch_root() / ("stdout_" + std::to_string(seq))).string();
  const std::string err_path = (scratch_root() / ("stderr_" + std::to_string(seq))).string();
  ++seq;
  const std::string cmd =
      std::string(TEGAAREC_BIN) + " " + args + " >" + out_path + " 2>" + err_path;
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_text_file(out_path);
  r.err = read_text_file(err_path);
  return r;
}

std::string slurp(const std::string& path) { return read_text_file(path); }

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  detail::for_each_line(text, [&](std::size_t, std::string_view line) { out.emplace_back(line); });
  return out;
}

constexpr const char* kTrainFlags =
    " --dim 8 --heads 2 --lmp-neighbours 4 --social-neighbours 4 --batch-size 64"
    " --warmup-steps 5 --seed 11";

struct SharedEnv {
  std::string data, wd;

  SharedEnv() {
    data = (scratch_root() / "shared_data").string();
    wd = (scratch_root() / "shared_wd").string();
    must(run_cli("synth --workdir " + data +
                 " --users 30 --items 24 --clusters 3 --sessions-per-user 5 --len-min 3"
                 " --len-max 6 --edges-per-user 3 --alpha 0.9 --beta 0.2 --seed 4"));
    must(run_cli("prepare --events " + data + "/events.tsv --edges " + data +
                 "/edges.tsv --workdir " + wd + " --holdout-weeks 1 --seed 4"));
    must(run_cli("train --workdir " + wd + kTrainFlags + " --max-epochs 2"));
  }

  static void must(const RunResult& r) {
    if (r.code != 0) throw std::runtime_error("cli setup failed: " + r.out + r.err);
  }
};

const SharedEnv& shared_env() {
  static SharedEnv env;
  return env;
}

std::string copy_prepared(const std::string& tag) {
  const SharedEnv& env = shared_env();
  const fs::path dst = scratch_root() / tag;
  fs::create_directories(dst);
  for (const char* name : {"train_store.tsv", "edges.tsv", "eval.tsv", "eval_sessions.tsv",
                           "user_map.tsv", "item_map.tsv", "meta.tsv"}) {
    fs::copy_file(fs::path(env.wd) / name, dst / name, fs::copy_options::overwrite_existing);
  }
  return dst.string();
}

void add_session(std::string& events, std::int64_t user, std::int64_t week,
                 const std::vector<std::int64_t>& items) {
  std::int64_t off = 0;
  for (std::int64_t item : items) {
    events += std::to_string(user) + "\t" + std::to_string(item) + "\t" +
              std::to_string(week * 604800 + off++) + "\n";
  }
}

// every session opens with anchor item 11, so the LMP candidate set is the
// same for every prefix of an eval session and recommend can reproduce the
// rankings evaluate exported for that session
struct AnchorData {
  std::string wd;
  std::map<std::int64_t, std::int64_t> user_back, item_back;  // dense -> original

  AnchorData() {
    const fs::path dir = scratch_root() / "anchor";
    fs::create_directories(dir);
    std::string events;
    for (std::int64_t i = 0; i < 6; ++i) {
      const std::int64_t u = 101 + i;
      add_session(events, u, 0, {11, 12 + i % 3, 15 + i % 2});
      add_session(events, u, 1, {11, 17 + i % 2, 12 + (i + 1) % 3});
      add_session(events, u, 2, {11, 12 + i % 4, 16 + i % 3});
    }
    const std::string events_path = (dir / "events.tsv").string();
    const std::string edges_path = (dir / "edges.tsv").string();
    write_text_file(events_path, events);
    write_text_file(edges_path, "101\t102\n103\t104\n105\t106\n");
    wd = (dir / "wd").string();
    SharedEnv::must(run_cli("prepare --events " + events_path + " --edges " + edges_path +
                            " --workdir " + wd + " --holdout-weeks 1 --seed 2"));
    SharedEnv::must(run_cli("train --workdir " + wd +
                            " --dim 8 --heads 2 --lmp-neighbours 3 --social-neighbours 3"
                            " --batch-size 32 --warmup-steps 3 --seed 11 --max-epochs 1"));
    for (const auto& [orig, dense] : maps_from_tsv(slurp(wd + "/user_map.tsv"), "user_map.tsv"))
      user_back[dense] = orig;
    for (const auto& [orig, dense] : maps_from_tsv(slurp(wd + "/item_map.tsv"), "item_map.tsv"))
      item_back[dense] = orig;
  }
};

const AnchorData& anchor_data() {
  static AnchorData data;
  return data;
}

struct RankRow {
  std::int64_t user, t, k, rank, item;
  std::string score;
};

std::vector<RankRow> parse_rankings(const std::string& text) {
  std::vector<RankRow> rows;
  detail::for_each_line(text, [&](std::size_t, std::string_view line) {
    auto f = detail::split_tabs(line);
    REQUIRE(f.size() == 6);
    rows.push_back(RankRow{std::stoll(std::string(f[0])), std::stoll(std::string(f[1])),
                           std::stoll(std::string(f[2])), std::stoll(std::string(f[3])),
                           std::stoll(std::string(f[4])), std::string(f[5])});
  });
  return rows;
}

std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::int64_t>> parse_eval_sessions(
    const std::string& text) {
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::int64_t>> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    auto f = detail::split_tabs(line);
    REQUIRE(f.size() == 3);
    out[{std::stoll(std::string(f[0])), std::stoll(std::string(f[1]))}] =
        detail::parse_item_csv(f[2], "eval_sessions.tsv", line_no);
  });
  return out;
}

}  // namespace

TEST_CASE("cli rejects bad usage and prints help") {
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("trian").code == 2);
  CHECK(run_cli("evaluate --workdir x --split bogus").code == 2);

  RunResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(contains(help.out, "synth"));
  CHECK(contains(help.out, "recommend"));
}

TEST_CASE("cli synth is deterministic per seed") {
  const std::string a = (scratch_root() / "synth_a").string();
  const std::string b = (scratch_root() / "synth_b").string();
  const std::string c = (scratch_root() / "synth_c").string();
  const std::string flags =
      " --users 12 --items 10 --clusters 2 --sessions-per-user 3 --len-min 2 --len-max 4"
      " --edges-per-user 2";
  REQUIRE(run_cli("synth --workdir " + a + flags + " --seed 9").code == 0);
  REQUIRE(run_cli("synth --workdir " + b + flags + " --seed 9").code == 0);
  REQUIRE(run_cli("synth --workdir " + c + flags + " --seed 10").code == 0);
  for (const char* name : {"events.tsv", "edges.tsv", "clusters.tsv"})
    CHECK(slurp(a + "/" + name) == slurp(b + "/" + name));
  CHECK(slurp(a + "/events.tsv") != slurp(c + "/events.tsv"));
}

TEST_CASE("cli prepare is byte-stable and reports stats") {
  const SharedEnv& env = shared_env();
  const std::string wd2 = (scratch_root() / "prep_again").string();
  RunResult r = run_cli("prepare --events " + env.data + "/events.tsv --edges " + env.data +
                        "/edges.tsv --workdir " + wd2 + " --holdout-weeks 1 --seed 4");
  REQUIRE(r.code == 0);
  for (const char* name : {"train_store.tsv", "edges.tsv", "eval.tsv", "eval_sessions.tsv",
                           "user_map.tsv", "item_map.tsv", "meta.tsv"})
    CHECK(slurp(env.wd + "/" + name) == slurp(wd2 + "/" + name));
  CHECK(contains(r.out, "users\t30"));
  CHECK(contains(r.out, "train_sessions\t"));
  CHECK(contains(r.out, "holdout_start_week\t"));

  RunResult missing = run_cli("prepare --events " + env.data + "/no_such.tsv --workdir " + wd2);
  CHECK(missing.code == 2);
  CHECK(contains(missing.err, "no_such.tsv"));
}

TEST_CASE("cli train writes checkpoints and echoes its config") {
  const SharedEnv& env = shared_env();
  CHECK(fs::exists(env.wd + "/checkpoint.bin"));
  CHECK(fs::exists(env.wd + "/checkpoint_last.bin"));

  auto rows = lines_of(slurp(env.wd + "/report.tsv"));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].rfind("# config: ", 0) == 0);
  CHECK(contains(rows[0], "dim=8"));
  CHECK(contains(rows[0], "max_epochs=2"));
  CHECK(contains(rows[0], "ablation=none"));
  CHECK(rows[1] == "epoch\tloss\tlr\tval_r20\tval_n20");
  CHECK(rows[2].rfind("1\t", 0) == 0);
  CHECK(rows[3].rfind("2\t", 0) == 0);

  const std::string awd = copy_prepared("ablation_wd");
  RunResult r = run_cli("train --workdir " + awd + kTrainFlags +
                        " --max-epochs 1 --ablation no_lmp,no_sf");
  REQUIRE(r.code == 0);
  CHECK(contains(lines_of(slurp(awd + "/report.tsv"))[0], "ablation=no_lmp,no_sf"));

  RunResult bad = run_cli("train --workdir " + awd + " --ablation nonsense");
  CHECK(bad.code == 2);
}

TEST_CASE("cli config file fills unset flags and the command line wins") {
  const std::string wd = copy_prepared("config_wd");
  const std::string cfg = (scratch_root() / "train.cfg").string();
  write_text_file(cfg,
                  "# hyperparameters\nlr = 0.25\nmax-epochs=1\ndim=8\nheads=2\n"
                  "lmp-neighbours=3\nsocial-neighbours=3\nbatch-size=64\n");

  REQUIRE(run_cli("train --workdir " + wd + " --config " + cfg).code == 0);
  std::string echo = lines_of(slurp(wd + "/report.tsv"))[0];
  CHECK(contains(echo, "lr=0.25"));
  CHECK(contains(echo, "dim=8"));
  CHECK(contains(echo, "max_epochs=1"));

  REQUIRE(run_cli("train --workdir " + wd + " --config " + cfg + " --lr 0.5").code == 0);
  echo = lines_of(slurp(wd + "/report.tsv"))[0];
  CHECK(contains(echo, "lr=0.5"));
  CHECK(contains(echo, "dim=8"));

  const std::string bad_key = (scratch_root() / "bad_key.cfg").string();
  write_text_file(bad_key, "bogus-flag=3\n");
  RunResult bad = run_cli("train --workdir " + wd + " --config " + bad_key);
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "bogus-flag"));

  const std::string malformed = (scratch_root() / "malformed.cfg").string();
  write_text_file(malformed, "lr 0.25\n");
  RunResult mal = run_cli("train --workdir " + wd + " --config " + malformed);
  CHECK(mal.code == 2);
  CHECK(contains(mal.err, "line 1"));

  RunResult gone = run_cli("train --workdir " + wd + " --config " + wd + "/no_such.cfg");
  CHECK(gone.code == 2);
  CHECK(contains(gone.err, "no_such.cfg"));
}

TEST_CASE("cli resume continues exactly where a full run goes") {
  const std::string full = copy_prepared("resume_full");
  const std::string part = copy_prepared("resume_part");
  REQUIRE(run_cli("train --workdir " + full + kTrainFlags + " --max-epochs 3").code == 0);
  REQUIRE(run_cli("train --workdir " + part + kTrainFlags + " --max-epochs 1").code == 0);
  REQUIRE(run_cli("train --workdir " + part + kTrainFlags + " --max-epochs 3 --resume").code ==
          0);

  auto full_rows = lines_of(slurp(full + "/report.tsv"));
  auto part_rows = lines_of(slurp(part + "/report.tsv"));
  REQUIRE(full_rows.size() == 5);
  REQUIRE(part_rows.size() == 4);
  CHECK(part_rows[0] == full_rows[0]);
  CHECK(part_rows[2] == full_rows[3]);
  CHECK(part_rows[3] == full_rows[4]);
  CHECK(slurp(part + "/checkpoint.bin") == slurp(full + "/checkpoint.bin"));
}

TEST_CASE("cli evaluate is deterministic and exports neighbour samples") {
  const SharedEnv& env = shared_env();
  const std::string o1 = (scratch_root() / "ev1.tsv").string();
  const std::string o2 = (scratch_root() / "ev2.tsv").string();
  const std::string nb = (scratch_root() / "nb.tsv").string();
  const std::string rk = (scratch_root() / "rk.tsv").string();

  REQUIRE(run_cli("evaluate --workdir " + env.wd + " --split valid --out " + o1 +
                  " --export-neighbours " + nb + " --export-rankings " + rk)
              .code == 0);
  REQUIRE(run_cli("evaluate --workdir " + env.wd + " --split valid --out " + o2).code == 0);
  CHECK(slurp(o1) == slurp(o2));

  const std::string neighbours = slurp(nb);
  CHECK(contains(neighbours, "\tlmp\t"));
  CHECK(contains(neighbours, "\tsf\t"));
  CHECK(!slurp(rk).empty());

  auto rows = lines_of(slurp(o1));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].rfind("# config: ", 0) == 0);
  CHECK(rows[1] == "split\tcount\trecall@10\trecall@20\tndcg@20");
  CHECK(rows[2].rfind("valid\t", 0) == 0);
}

TEST_CASE("cli evaluate scores a rigged checkpoint perfectly") {
  // every eval target is item 7 and the checkpoint's constant hidden state
  // puts dense item 7 first for any input, so every metric must be 100.00
  const fs::path dir = scratch_root() / "stub";
  fs::create_directories(dir);
  std::string events;
  for (std::int64_t u = 1; u <= 8; ++u) {
    add_session(events, u, 0, {1 + u % 5, 6, 7});
    add_session(events, u, 1, {1 + (u + 2) % 5, 7});
  }
  const std::string events_path = (dir / "events.tsv").string();
  const std::string edges_path = (dir / "edges.tsv").string();
  write_text_file(events_path, events);
  write_text_file(edges_path, "1\t2\n3\t4\n");
  const std::string wd = (dir / "wd").string();
  REQUIRE(run_cli("prepare --events " + events_path + " --edges " + edges_path + " --workdir " +
                  wd + " --holdout-weeks 1 --seed 3")
              .code == 0);

  auto meta = meta_from_tsv(slurp(wd + "/meta.tsv"));
  REQUIRE(meta_int(meta, "n_items") == 7);
  REQUIRE(meta_int(meta, "n_users") == 8);
  const std::int64_t n_valid = meta_int(meta, "n_valid_instances");
  const std::int64_t n_test = meta_int(meta, "n_test_instances");
  CHECK(n_valid + n_test == 8);

  ModelConfig mc;
  mc.n_items = 7;
  mc.n_users = 8;
  mc.d = 4;
  mc.heads = 2;
  mc.ff_mult = 1;
  mc.max_session_len = 10;
  mc.no_gal = true;
  ModelParams params = ModelParams::init(mc, 1);
  params.concat_w = Tensor::zeros({2 * mc.d, mc.d}, true);
  std::vector<double> bias(mc.d, 0.0);
  bias[0] = 1.0;
  params.concat_b = Tensor({1, mc.d}, std::move(bias), true);
  std::vector<double> table((mc.n_items + 1) * mc.d, 0.0);
  table[7 * mc.d] = 100.0;
  params.item_table = Tensor({mc.n_items + 1, mc.d}, std::move(table), true);
  save_checkpoint(wd + "/stub.bin", params);

  for (const std::string split : {"valid", "test"}) {
    RunResult r =
        run_cli("evaluate --workdir " + wd + " --checkpoint " + wd + "/stub.bin --split " + split);
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "Recall@20\t100.00"));
    CHECK(contains(r.out, "NDCG@20\t100.00"));
    auto rows = lines_of(slurp(wd + "/eval_" + split + ".tsv"));
    REQUIRE(rows.size() == 3);
    const std::int64_t count = split == "valid" ? n_valid : n_test;
    CHECK(rows[2] == split + "\t" + std::to_string(count) + "\t100.00\t100.00\t100.00");
  }
}

TEST_CASE("cli recommend reproduces exported eval rankings") {
  const AnchorData& ad = anchor_data();
  const std::string rv = (scratch_root() / "anchor_rv.tsv").string();
  const std::string rt = (scratch_root() / "anchor_rt.tsv").string();
  REQUIRE(run_cli("evaluate --workdir " + ad.wd + " --split valid --export-rankings " + rv)
              .code == 0);
  REQUIRE(run_cli("evaluate --workdir " + ad.wd + " --split test --export-rankings " + rt)
              .code == 0);

  auto rows = parse_rankings(slurp(rv) + slurp(rt));
  auto sessions = parse_eval_sessions(slurp(ad.wd + "/eval_sessions.tsv"));
  REQUIRE(rows.size() == 6 * 2 * 8);  // 6 users x 2 prefixes x full 8-item ranking

  for (std::size_t g = 0; g < 3; ++g) {  // first three exported instances
    const RankRow& head = rows[g * 8];
    std::string csv;
    const auto& items = sessions.at({head.user, head.t});
    for (std::int64_t i = 0; i < head.k; ++i)
      csv += (i ? "," : "") + std::to_string(ad.item_back.at(items[static_cast<std::size_t>(i)]));

    RunResult rec = run_cli("recommend --workdir " + ad.wd + " --user " +
                            std::to_string(ad.user_back.at(head.user)) + " --items " + csv +
                            " --session-index " + std::to_string(head.t) + " --k 8");
    REQUIRE(rec.code == 0);
    auto rec_rows = lines_of(rec.out);
    REQUIRE(rec_rows.size() == 8);
    for (std::size_t r = 0; r < 8; ++r) {
      const RankRow& want = rows[g * 8 + r];
      REQUIRE(want.rank == static_cast<std::int64_t>(r + 1));
      auto f = detail::split_tabs(rec_rows[r]);
      REQUIRE(f.size() == 4);
      CHECK(std::string(f[1]) == std::to_string(r + 1));
      CHECK(std::string(f[2]) == std::to_string(ad.item_back.at(want.item)));
      CHECK(std::string(f[3]) == want.score);
    }
  }
}

TEST_CASE("cli recommend validates ids and caps k") {
  const AnchorData& ad = anchor_data();
  RunResult bad_user = run_cli("recommend --workdir " + ad.wd + " --user 999 --items 11");
  CHECK(bad_user.code == 2);
  CHECK(contains(bad_user.err, "999"));

  RunResult bad_item = run_cli("recommend --workdir " + ad.wd + " --user 101 --items 998");
  CHECK(bad_item.code == 2);
  CHECK(contains(bad_item.err, "998"));

  RunResult big_k = run_cli("recommend --workdir " + ad.wd + " --user 101 --items 11 --k 9999");
  REQUIRE(big_k.code == 0);
  CHECK(lines_of(big_k.out).size() == 8);  // capped at the item count
}

TEST_CASE("cli grid writes per-cell reports and retrains the winner") {
  const std::string wd = copy_prepared("grid_wd");
  RunResult r = run_cli("grid --workdir " + wd +
                        " --dim 8 --heads 2 --lmp-neighbours 2 --social-neighbours 2"
                        " --batch-size 64 --warmup-steps 5 --seed 11 --max-epochs 1"
                        " --grid-lr 0.0,0.05 --grid-warmup 1,5");
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "cells\t4"));

  auto grid_rows = lines_of(slurp(wd + "/grid.tsv"));
  REQUIRE(grid_rows.size() == 5);
  CHECK(grid_rows[0] ==
        "cell\tlr\tlmp\tsocial\tlayers\twarmup\ttolerance\tbest_epoch\tbest_r20\tbest_n20\t"
        "selected");
  int selected = 0;
  for (std::size_t i = 1; i < grid_rows.size(); ++i) {
    auto f = detail::split_tabs(grid_rows[i]);
    REQUIRE(f.size() == 11);
    if (f[10] == "1") ++selected;
  }
  CHECK(selected == 1);
  for (int c = 0; c < 4; ++c)
    CHECK(fs::exists(wd + "/report_cell_" + std::to_string(c) + ".tsv"));
  CHECK(fs::exists(wd + "/checkpoint.bin"));
  CHECK(fs::exists(wd + "/report.tsv"));
}

TEST_CASE("cli broken workdir artifacts exit 3") {
  const std::string wd = copy_prepared("broken_store");
  write_text_file(wd + "/train_store.tsv", "not\ta\tstore\n");
  RunResult store = run_cli("train --workdir " + wd + kTrainFlags + " --max-epochs 1");
  CHECK(store.code == 3);
  CHECK(contains(store.err, "train_store.tsv"));

  const std::string wd2 = copy_prepared("broken_meta");
  write_text_file(wd2 + "/meta.tsv", "n_users\t5\n");
  RunResult meta = run_cli("evaluate --workdir " + wd2 + " --split valid");
  CHECK(meta.code == 3);
  CHECK(contains(meta.err, "meta.tsv"));

  RunResult ckpt =
      run_cli("evaluate --workdir " + shared_env().wd + " --checkpoint /no/such/ckpt.bin");
  CHECK(ckpt.code == 3);
}

TEST_CASE("cli exploding training exits 4") {
  const std::string wd = copy_prepared("explode_wd");
  RunResult r = run_cli("train --workdir " + wd + kTrainFlags + " --max-epochs 1 --lr 1e300");
  CHECK(r.code == 4);
  CHECK(contains(r.err, "non-finite loss"));
}
