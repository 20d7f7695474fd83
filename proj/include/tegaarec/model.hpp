#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tegaarec/masking.hpp"
#include "tegaarec/neighbours.hpp"
#include "tegaarec/tensor.hpp"

namespace tegaarec {

enum class NeighbourHistory { last, all_concat };

struct ModelConfig {
  std::size_t n_items = 0;  // real items; the embedding table has n_items+1 rows
  std::size_t n_users = 0;
  std::size_t d = 128;
  std::size_t heads = 8;
  std::size_t layers = 1;
  std::size_t ff_mult = 4;
  std::size_t max_session_len = 50;
  double ln_eps = 1e-5;
  bool with_pe = false;
  bool no_uli = false;  // drop the target's long-term embedding
  bool no_ali = false;  // drop every long-term embedding
  bool no_gal = false;  // mean-pool + linear instead of the social attention layer
  NeighbourHistory neighbour_history = NeighbourHistory::last;

  std::size_t dk() const { return d / heads; }
  void validate() const {
    if (n_items < 1) throw ConfigError("model needs at least 1 item");
    if (n_users < 1) throw ConfigError("model needs at least 1 user");
    if (heads < 1 || layers < 1 || d < 1) throw ConfigError("d, heads, layers must be >= 1");
    if (d % heads != 0)
      throw ConfigError("d=" + std::to_string(d) + " not divisible by heads=" +
                        std::to_string(heads));
    if (max_session_len < 1) throw ConfigError("max_session_len must be >= 1");
  }
};

struct MhgatParams {
  Tensor wq, wk, wo, bo;
};

struct EncoderLayerParams {
  Tensor wq, wk, wv, wo, ff1, ff2, ln1_g, ln1_b, ln2_g, ln2_b;
};

struct FusionParams {
  Tensor wf, bf;
};

inline Tensor sinusoidal_pe(std::size_t max_len, std::size_t d) {
  std::vector<double> v(max_len * d);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      v[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({max_len, d}, std::move(v));
}

struct ModelParams {
  ModelConfig config;
  Tensor item_table;  // [n_items+1 x d], row 0 = padding
  Tensor user_table;  // [n_users x d]
  std::vector<EncoderLayerParams> encoder;
  MhgatParams tegaa_gat;
  FusionParams fusion;
  MhgatParams social_gat;       // unused when no_gal
  Tensor concat_w, concat_b;    // used only when no_gal
  Tensor pe;                    // constant, not trained

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);
  std::vector<Tensor> parameters() const;
};

namespace detail {

inline Tensor xavier(Shape shape, std::mt19937_64& g) {
  const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(g);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor gauss(Shape shape, double sd, std::mt19937_64& g) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(g);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor fill(Shape shape, double value) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), true);
}

inline MhgatParams init_mhgat(std::size_t d, std::mt19937_64& g) {
  MhgatParams p;
  p.wq = xavier({d, d}, g);
  p.wk = xavier({d, d}, g);
  p.wo = xavier({d, d}, g);
  p.bo = fill({1, d}, 0.0);
  return p;
}

}  // namespace detail

inline ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto g = make_rng(mix_seed(seed, 0x1417ULL));
  const std::size_t d = config.d, ff = config.ff_mult * d;
  ModelParams p;
  p.config = config;
  p.item_table = detail::gauss({config.n_items + 1, d}, 0.1, g);
  for (std::size_t j = 0; j < d; ++j) p.item_table.values_mut()[j] = 0.0;  // padding row
  p.user_table = detail::gauss({config.n_users, d}, 0.1, g);
  for (std::size_t l = 0; l < config.layers; ++l) {
    EncoderLayerParams e;
    e.wq = detail::xavier({d, d}, g);
    e.wk = detail::xavier({d, d}, g);
    e.wv = detail::xavier({d, d}, g);
    e.wo = detail::xavier({d, d}, g);
    e.ff1 = detail::xavier({d, ff}, g);
    e.ff2 = detail::xavier({ff, d}, g);
    e.ln1_g = detail::fill({1, d}, 1.0);
    e.ln1_b = detail::fill({1, d}, 0.0);
    e.ln2_g = detail::fill({1, d}, 1.0);
    e.ln2_b = detail::fill({1, d}, 0.0);
    p.encoder.push_back(std::move(e));
  }
  p.tegaa_gat = detail::init_mhgat(d, g);
  p.fusion.wf = detail::xavier({2 * d, d}, g);
  p.fusion.bf = detail::fill({1, d}, 0.0);
  if (config.no_gal) {
    p.concat_w = detail::xavier({2 * d, d}, g);
    p.concat_b = detail::fill({1, d}, 0.0);
  } else {
    p.social_gat = detail::init_mhgat(d, g);
  }
  p.pe = sinusoidal_pe(config.max_session_len, d);
  return p;
}

inline std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out{item_table, user_table};
  for (const auto& e : encoder) {
    for (const Tensor& t : {e.wq, e.wk, e.wv, e.wo, e.ff1, e.ff2, e.ln1_g, e.ln1_b, e.ln2_g, e.ln2_b})
      out.push_back(t);
  }
  for (const Tensor& t : {tegaa_gat.wq, tegaa_gat.wk, tegaa_gat.wo, tegaa_gat.bo}) out.push_back(t);
  out.push_back(fusion.wf);
  out.push_back(fusion.bf);
  if (config.no_gal) {
    out.push_back(concat_w);
    out.push_back(concat_b);
  } else {
    for (const Tensor& t : {social_gat.wq, social_gat.wk, social_gat.wo, social_gat.bo})
      out.push_back(t);
  }
  return out;
}

// multi-head attention where the value rows stay unprojected and each head
// reads its own d_k-wide column slice of them
inline Tensor mhgat(const Tensor& query, const Tensor& h, const MhgatParams& p, std::size_t heads) {
  if (h.rank() != 2 || h.rows() < 1)
    throw ContractError("mhgat needs at least one neighbour row, got " + shape_str(h.shape()));
  if (query.rank() != 2 || query.rows() != 1 || query.cols() != h.cols())
    throw ContractError("mhgat query must be [1 x d] matching rows " + shape_str(h.shape()));
  const std::size_t d = h.cols(), dk = d / heads;
  if (d % heads != 0) throw ContractError("mhgat width not divisible by head count");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor q_all = matmul(query, p.wq);  // [1 x d]
  Tensor k_all = matmul(h, p.wk);      // [m x d]
  Tensor out;
  for (std::size_t i = 0; i < heads; ++i) {
    Tensor qi = slice_cols(q_all, i * dk, (i + 1) * dk);
    Tensor ki = slice_cols(k_all, i * dk, (i + 1) * dk);
    Tensor vi = slice_cols(h, i * dk, (i + 1) * dk);
    Tensor att = row_softmax(scale(matmul(qi, transpose(ki)), inv_sqrt_dk));  // [1 x m]
    Tensor head = matmul(att, vi);                                            // [1 x dk]
    out = out.defined() ? concat_last(out, head) : head;
  }
  return add(matmul(out, p.wo), p.bo);
}

inline Tensor tensor_fusion(const Tensor& h_s, const Tensor& emb_u, const FusionParams& p) {
  return relu(add(matmul(concat_last(h_s, emb_u), p.wf), p.bf));
}

inline Tensor multi_head_self_attention(const Tensor& x, const EncoderLayerParams& p,
                                        std::size_t heads) {
  const std::size_t d = x.cols(), dk = d / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor q_all = matmul(x, p.wq);
  Tensor k_all = matmul(x, p.wk);
  Tensor v_all = matmul(x, p.wv);
  Tensor out;
  for (std::size_t i = 0; i < heads; ++i) {
    Tensor qi = slice_cols(q_all, i * dk, (i + 1) * dk);
    Tensor ki = slice_cols(k_all, i * dk, (i + 1) * dk);
    Tensor vi = slice_cols(v_all, i * dk, (i + 1) * dk);
    Tensor att = row_softmax(scale(matmul(qi, transpose(ki)), inv_sqrt_dk));
    Tensor head = matmul(att, vi);
    out = out.defined() ? concat_last(out, head) : head;
  }
  return matmul(out, p.wo);
}

// encodes the true_len prefix; rows past true_len come back as zeros, so padded
// positions can never leak into attention
inline Tensor transformer_encoder(std::span<const std::int64_t> items, int true_len,
                                  const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (true_len < 1) throw ContractError("transformer_encoder needs true_len >= 1");
  if (static_cast<std::size_t>(true_len) > items.size())
    throw ContractError("true_len " + std::to_string(true_len) + " exceeds row count " +
                        std::to_string(items.size()));
  const std::size_t n = static_cast<std::size_t>(true_len);
  if (cfg.with_pe && n > cfg.max_session_len)
    throw ContractError("session longer than the positional table");
  Tensor x = embedding_lookup(params.item_table, items.subspan(0, n));
  if (cfg.with_pe) x = add(x, slice_rows(params.pe, 0, n));
  for (const EncoderLayerParams& layer : params.encoder) {
    Tensor att = multi_head_self_attention(x, layer, cfg.heads);
    x = layer_norm_rows(add(x, att), layer.ln1_g, layer.ln1_b, cfg.ln_eps);
    Tensor ff = matmul(relu(matmul(x, layer.ff1)), layer.ff2);
    x = layer_norm_rows(add(x, ff), layer.ln2_g, layer.ln2_b, cfg.ln_eps);
  }
  if (items.size() > n) x = pad_rows(x, items.size());
  return x;
}

// dynamic + long-term interest code for one (user, item sequence) pair
inline Tensor tegaa_encode(std::int64_t user_id, std::span<const std::int64_t> items, int true_len,
                           const ModelParams& params, bool is_target) {
  const ModelConfig& cfg = params.config;
  if (true_len < 1) throw ContractError("tegaa_encode needs a nonempty item sequence");
  Tensor emb_u;
  if (cfg.no_ali || (cfg.no_uli && is_target)) {
    emb_u = Tensor::zeros({1, cfg.d});
  } else {
    const std::int64_t ids[1] = {user_id};
    emb_u = embedding_lookup(params.user_table, ids);
  }
  Tensor tokens = transformer_encoder(items, true_len, params);
  if (tokens.rows() != static_cast<std::size_t>(true_len))
    tokens = slice_rows(tokens, 0, static_cast<std::size_t>(true_len));
  Tensor h_s = mhgat(emb_u, tokens, params.tegaa_gat, cfg.heads);
  return tensor_fusion(h_s, emb_u, params.fusion);
}

// social aggregation over neighbour codes with the target appended as the
// last row; empty neighbourhood degenerates to self-attention over one row
inline Tensor aggregate(const Tensor& target_code, const std::vector<Tensor>& neighbour_codes,
                        const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (cfg.no_gal) {
    Tensor pooled = neighbour_codes.empty()
                        ? Tensor::zeros({1, cfg.d})
                        : mean_rows(stack_rows(neighbour_codes));
    return add(matmul(concat_last(pooled, target_code), params.concat_w), params.concat_b);
  }
  std::vector<Tensor> rows = neighbour_codes;
  rows.push_back(target_code);
  return mhgat(target_code, stack_rows(rows), params.social_gat, cfg.heads);
}

inline std::vector<std::int64_t> neighbour_items(const NeighbourSample& sample, bool is_lmp,
                                                 std::size_t i, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  std::vector<std::int64_t> items;
  if (cfg.neighbour_history == NeighbourHistory::all_concat) {
    const auto& cat = is_lmp ? sample.lmp_concat : sample.friend_concat;
    if (i < cat.size()) items = cat[i];
  } else {
    const Session* s = is_lmp ? sample.lmp_hist[i] : sample.friend_hist[i];
    if (s) items = s->items;
  }
  if (items.size() > cfg.max_session_len)
    items.erase(items.begin(), items.end() - static_cast<std::ptrdiff_t>(cfg.max_session_len));
  return items;
}

// fused social-aware code h' for one masked instance
inline Tensor encode_instance(std::span<const std::int64_t> input, int true_len,
                              const NeighbourSample& sample, const ModelParams& params) {
  Tensor target_code = tegaa_encode(sample.target_user, input, true_len, params, true);
  std::vector<Tensor> codes;
  for (std::size_t i = 0; i < sample.lmp.size(); ++i) {
    auto items = neighbour_items(sample, true, i, params);
    if (items.empty()) continue;
    codes.push_back(tegaa_encode(sample.lmp[i], items, static_cast<int>(items.size()), params, false));
  }
  for (std::size_t i = 0; i < sample.friends.size(); ++i) {
    auto items = neighbour_items(sample, false, i, params);
    if (items.empty()) continue;
    codes.push_back(
        tegaa_encode(sample.friends[i], items, static_cast<int>(items.size()), params, false));
  }
  return aggregate(target_code, codes, params);
}

// logits over real items; item id j lands in column j-1
inline Tensor score_logits(const Tensor& h, const ModelParams& params) {
  Tensor real = slice_rows(params.item_table, 1, params.config.n_items + 1);
  return matmul(h, transpose(real));
}

struct ScoredRanking {
  std::vector<double> scores;      // index j holds the score of item id j+1
  std::vector<std::int64_t> top;   // item ids, best first
};

inline ScoredRanking score_items(const Tensor& h, const ModelParams& params, std::size_t k) {
  Tensor logits = score_logits(h, params);
  ScoredRanking r;
  r.scores.assign(logits.values().begin(), logits.values().end());
  std::vector<std::size_t> order(r.scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (r.scores[a] != r.scores[b]) return r.scores[a] > r.scores[b];
    return a < b;  // lower item id wins ties
  });
  const std::size_t take = std::min(k, order.size());
  r.top.reserve(take);
  for (std::size_t i = 0; i < take; ++i) r.top.push_back(static_cast<std::int64_t>(order[i]) + 1);
  return r;
}

struct InstanceResult {
  ScoredRanking ranking;
  double target_prob = 0.0;
};

inline InstanceResult forward_instance(const MaskedInstance& inst, const NeighbourSample& sample,
                                       const ModelParams& params, std::size_t k) {
  Tensor h = encode_instance(inst.input, inst.true_len, sample, params);
  InstanceResult res;
  res.ranking = score_items(h, params, k);
  // softmax over real items in extended precision
  long double mx = *std::max_element(res.ranking.scores.begin(), res.ranking.scores.end());
  long double denom = 0.0L;
  for (double s : res.ranking.scores) denom += expl(static_cast<long double>(s) - mx);
  const std::size_t tgt = static_cast<std::size_t>(inst.target) - 1;
  if (tgt >= res.ranking.scores.size())
    throw IndexError("target item " + std::to_string(inst.target) + " outside the vocabulary");
  res.target_prob = static_cast<double>(
      expl(static_cast<long double>(res.ranking.scores[tgt]) - mx) / denom);
  return res;
}

}  // namespace tegaarec
