#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tegaarec/data.hpp"
#include "tegaarec/masking.hpp"
#include "tegaarec/metrics.hpp"
#include "tegaarec/model.hpp"
#include "tegaarec/neighbours.hpp"
#include "tegaarec/optim.hpp"
#include "tegaarec/tensor.hpp"

namespace tegaarec {

struct TrainConfig {
  double lr = 0.005;
  std::size_t L_l = 15;
  std::size_t L_s = 25;
  std::size_t layers = 1;  // forwarded into the model per grid cell
  std::size_t warmup_steps = 10;
  std::size_t tolerance = 10;  // early-stop patience in epochs
  std::size_t batch_size = 50;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 42;
  std::uint64_t eval_seed = 1;
  bool warmup_per_epoch = false;
  bool eval_last_prefix_only = false;
  double grad_clip = 0.0;  // 0 disables
  NeighbourFlags flags;

  // nonempty lists widen the corresponding axis of the grid search
  std::vector<double> grid_lr;
  std::vector<std::size_t> grid_L_l, grid_L_s, grid_layers, grid_warmup, grid_tolerance;

  void validate() const {
    if (lr < 0.0) throw ConfigError("learning rate must be >= 0");
    if (L_l < 1 || L_s < 1) throw ConfigError("neighbour counts must be >= 1");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
    if (tolerance < 1) throw ConfigError("tolerance must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  }

  EvalOptions eval_options() const {
    EvalOptions opts;
    opts.L_l = L_l;
    opts.L_s = L_s;
    opts.flags = flags;
    opts.seed = eval_seed;
    opts.last_prefix_only = eval_last_prefix_only;
    return opts;
  }
};

struct TrainInstance {
  std::int64_t user = 0;
  int t = 0;
  const Session* current = nullptr;
};

// every session with at least one historical session and length >= 2
inline std::vector<TrainInstance> training_instances(const SessionStore& store) {
  std::vector<TrainInstance> out;
  for (const auto& [u, q] : store.sessions)
    for (const Session& s : q)
      if (s.t >= 2 && s.items.size() >= 2) out.push_back({u, s.t, &s});
  return out;
}

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t batches = 0;
  std::size_t rows = 0;
  double last_lr = 0.0;
};

inline EpochStats run_epoch(const SessionStore& store, const ItemUserIndex& index,
                            const std::vector<TrainInstance>& instances, ModelParams& params,
                            std::vector<Tensor>& opt_params, AdamState& opt,
                            const TrainConfig& cfg, std::size_t epoch_no,
                            std::size_t& global_step) {
  std::vector<TrainInstance> order = instances;
  auto shuffle_rng = make_rng(mix_seed(cfg.seed, 0xE70CULL, epoch_no));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  NeighbourFlags flags = cfg.flags;
  flags.all_concat_history = params.config.neighbour_history == NeighbourHistory::all_concat;

  std::vector<MaskedInstance> masked;
  std::vector<std::shared_ptr<const NeighbourSample>> samples;
  for (const TrainInstance& inst : order) {
    auto rng = make_rng(mix_seed(cfg.seed, 0x5A3BULL, epoch_no,
                                 static_cast<std::uint64_t>(inst.user),
                                 static_cast<std::uint64_t>(inst.t)));
    auto sample = std::make_shared<const NeighbourSample>(
        build_sample(store, index, inst.user, inst.current->week, inst.current->items, cfg.L_l,
                     cfg.L_s, rng, flags));
    for (MaskedInstance& m : expand_session(inst.current->items, params.config.max_session_len)) {
      masked.push_back(std::move(m));
      samples.push_back(sample);
    }
  }

  EpochStats st;
  double loss_sum = 0.0;
  for (const MaskedBatch& batch : assemble_batch(masked, samples, cfg.batch_size)) {
    Tape tape;
    double batch_loss = 0.0;
    {
      TapeScope scope(tape);
      std::vector<Tensor> hs;
      hs.reserve(batch.size());
      for (std::size_t r = 0; r < batch.size(); ++r)
        hs.push_back(encode_instance(batch.inputs[r], batch.lengths[r], *batch.samples[r], params));
      Tensor logits = score_logits(stack_rows(hs), params);
      std::vector<std::int64_t> targets(batch.targets.size());
      for (std::size_t r = 0; r < targets.size(); ++r) targets[r] = batch.targets[r] - 1;
      Tensor loss = cross_entropy(logits, targets);
      batch_loss = loss.item();
      ++global_step;
      const double lr = warmup_lr(
          static_cast<std::int64_t>(cfg.warmup_per_epoch ? epoch_no : global_step),
          static_cast<std::int64_t>(cfg.warmup_steps), cfg.lr);
      if (!std::isfinite(batch_loss)) {
        char lr_buf[32];
        std::snprintf(lr_buf, sizeof(lr_buf), "%.6g", lr);
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch_no) + ", batch " +
                           std::to_string(st.batches + 1) + ", lr " + lr_buf);
      }
      backward(loss, tape);
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const Tensor& p : opt_params)
          for (double gv : p.grad()) sq += gv * gv;
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          const double scale_by = cfg.grad_clip / norm;
          for (Tensor& p : opt_params)
            for (double& gv : p.grad()) gv *= scale_by;
        }
      }
      adam_step(opt_params, opt, lr);
      st.last_lr = lr;
    }
    for (Tensor& p : opt_params) p.zero_grad();
    loss_sum += batch_loss * static_cast<double>(batch.size());
    ++st.batches;
    st.rows += batch.size();
  }
  st.mean_loss = st.rows > 0 ? loss_sum / static_cast<double>(st.rows) : 0.0;
  return st;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_r20 = 0.0;
  double val_n20 = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_r20 = 0.0;
  double best_n20 = 0.0;
  std::string stop_reason;
  EvalResult final_valid;
};

struct TrainerState {
  AdamState opt;
  std::size_t epoch_done = 0;
  std::size_t global_step = 0;
  std::size_t best_epoch = 0;
  double best_r20 = -1.0;
  double best_n20 = -1.0;
  std::vector<std::vector<double>> best_values;
};

namespace detail {

inline std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params)
    out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

inline void restore(std::vector<Tensor>& params, const std::vector<std::vector<double>>& snap) {
  if (snap.size() != params.size()) throw StateError("parameter snapshot size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto vals = params[i].values_mut();
    if (vals.size() != snap[i].size()) throw StateError("parameter snapshot shape mismatch");
    std::copy(snap[i].begin(), snap[i].end(), vals.begin());
  }
}

}  // namespace detail

// on_epoch runs after each epoch's bookkeeping, before any early-stop restore,
// so callers can checkpoint the live end-of-epoch weights
inline TrainReport fit(const SessionStore& train, const DatasetSplit& split, ModelParams& params,
                       TrainerState& state, const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  auto index = ItemUserIndex::build(train);
  auto instances = training_instances(train);
  auto opt_params = params.parameters();
  if (state.opt.m.empty()) state.opt = AdamState::for_params(opt_params);

  TrainReport report;
  report.best_epoch = state.best_epoch;
  report.best_r20 = state.best_r20;
  report.best_n20 = state.best_n20;
  report.stop_reason = "max_epochs";
  for (std::size_t epoch = state.epoch_done + 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochStats st = run_epoch(train, index, instances, params, opt_params, state.opt, cfg, epoch,
                              state.global_step);
    EvalResult val = evaluate(train, index, split.valid, params, cfg.eval_options());
    EpochRecord rec{epoch, st.mean_loss, val.recall.count(20) ? val.recall.at(20) : 0.0,
                    val.ndcg20, st.last_lr};
    report.epochs.push_back(rec);
    state.epoch_done = epoch;
    bool stop = false;
    if (rec.val_r20 > state.best_r20) {
      state.best_r20 = rec.val_r20;
      state.best_n20 = rec.val_n20;
      state.best_epoch = epoch;
      state.best_values = detail::snapshot(opt_params);
      report.best_epoch = epoch;
      report.best_r20 = rec.val_r20;
      report.best_n20 = rec.val_n20;
    } else if (epoch - state.best_epoch >= cfg.tolerance) {
      report.stop_reason = "early_stop";
      stop = true;
    }
    if (on_epoch) on_epoch(rec);
    if (stop) break;
  }
  if (!state.best_values.empty()) detail::restore(opt_params, state.best_values);
  report.final_valid = evaluate(train, index, split.valid, params, cfg.eval_options());
  return report;
}

struct GridCell {
  TrainConfig cfg;
  TrainReport report;
};

struct GridResult {
  std::size_t best_index = 0;
  std::vector<GridCell> cells;
};

inline GridResult grid_search(const SessionStore& train, const DatasetSplit& split,
                              const ModelConfig& base_model, const TrainConfig& base) {
  auto lrs = base.grid_lr.empty() ? std::vector<double>{base.lr} : base.grid_lr;
  auto lls = base.grid_L_l.empty() ? std::vector<std::size_t>{base.L_l} : base.grid_L_l;
  auto lss = base.grid_L_s.empty() ? std::vector<std::size_t>{base.L_s} : base.grid_L_s;
  auto lays = base.grid_layers.empty() ? std::vector<std::size_t>{base.layers} : base.grid_layers;
  auto warms = base.grid_warmup.empty() ? std::vector<std::size_t>{base.warmup_steps} : base.grid_warmup;
  auto tols = base.grid_tolerance.empty() ? std::vector<std::size_t>{base.tolerance} : base.grid_tolerance;

  GridResult result;
  std::size_t cell_index = 0;
  for (double lr : lrs)
    for (std::size_t ll : lls)
      for (std::size_t ls : lss)
        for (std::size_t lay : lays)
          for (std::size_t warm : warms)
            for (std::size_t tol : tols) {
              TrainConfig cfg = base;
              cfg.lr = lr;
              cfg.L_l = ll;
              cfg.L_s = ls;
              cfg.layers = lay;
              cfg.warmup_steps = warm;
              cfg.tolerance = tol;
              cfg.seed = mix_seed(base.seed, 0x981DULL, cell_index);
              cfg.grid_lr.clear();
              cfg.grid_L_l.clear();
              cfg.grid_L_s.clear();
              cfg.grid_layers.clear();
              cfg.grid_warmup.clear();
              cfg.grid_tolerance.clear();
              ModelConfig mc = base_model;
              mc.layers = lay;
              ModelParams params = ModelParams::init(mc, cfg.seed);
              TrainerState state;
              GridCell cell;
              cell.cfg = cfg;
              cell.report = fit(train, split, params, state, cfg);
              result.cells.push_back(std::move(cell));
              ++cell_index;
            }

  for (std::size_t i = 1; i < result.cells.size(); ++i) {
    const TrainReport& a = result.cells[i].report;
    const TrainReport& b = result.cells[result.best_index].report;
    const bool better = a.best_r20 > b.best_r20 ||
                        (a.best_r20 == b.best_r20 && a.best_n20 > b.best_n20) ||
                        (a.best_r20 == b.best_r20 && a.best_n20 == b.best_n20 &&
                         result.cells[i].cfg.lr < result.cells[result.best_index].cfg.lr);
    if (better) result.best_index = i;
  }
  return result;
}

}  // namespace tegaarec
