#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tegaarec/model.hpp"
#include "tegaarec/tensor.hpp"
#include "tegaarec/trainer.hpp"

namespace tegaarec {

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{
      {"n_items", cfg.n_items},
      {"n_users", cfg.n_users},
      {"d", cfg.d},
      {"heads", cfg.heads},
      {"layers", cfg.layers},
      {"ff_mult", cfg.ff_mult},
      {"max_session_len", cfg.max_session_len},
      {"ln_eps", cfg.ln_eps},
      {"with_pe", cfg.with_pe},
      {"no_uli", cfg.no_uli},
      {"no_ali", cfg.no_ali},
      {"no_gal", cfg.no_gal},
      {"neighbour_history",
       cfg.neighbour_history == NeighbourHistory::all_concat ? "all_concat" : "last"},
  };
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.n_items = j.at("n_items").get<std::size_t>();
  cfg.n_users = j.at("n_users").get<std::size_t>();
  cfg.d = j.at("d").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.ff_mult = j.at("ff_mult").get<std::size_t>();
  cfg.max_session_len = j.at("max_session_len").get<std::size_t>();
  cfg.ln_eps = j.at("ln_eps").get<double>();
  cfg.with_pe = j.at("with_pe").get<bool>();
  cfg.no_uli = j.at("no_uli").get<bool>();
  cfg.no_ali = j.at("no_ali").get<bool>();
  cfg.no_gal = j.at("no_gal").get<bool>();
  cfg.neighbour_history = j.at("neighbour_history").get<std::string>() == "all_concat"
                              ? NeighbourHistory::all_concat
                              : NeighbourHistory::last;
  return cfg;
}

namespace detail {

constexpr char kCheckpointMagic[4] = {'T', 'G', 'R', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  return value;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("checkpoint truncated");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const TrainerState* state = nullptr) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(detail::kCheckpointMagic, 4);
  detail::write_pod(out, detail::kCheckpointVersion);
  const std::string cfg = config_to_json(params.config).dump();
  detail::write_pod<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  auto tensors = params.parameters();
  detail::write_pod<std::uint64_t>(out, tensors.size());
  for (const Tensor& t : tensors) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) detail::write_pod<std::uint64_t>(out, dim);
    std::vector<double> vals(t.values().begin(), t.values().end());
    detail::write_doubles(out, vals);
  }

  detail::write_pod<std::uint8_t>(out, state ? 1 : 0);
  if (state) {
    detail::write_pod<std::uint64_t>(out, state->opt.step);
    detail::write_pod(out, state->opt.beta1);
    detail::write_pod(out, state->opt.beta2);
    detail::write_pod(out, state->opt.epsilon);
    detail::write_pod<std::uint64_t>(out, state->opt.m.size());
    for (const auto& m : state->opt.m) detail::write_doubles(out, m);
    for (const auto& v : state->opt.v) detail::write_doubles(out, v);
    detail::write_pod<std::uint64_t>(out, state->epoch_done);
    detail::write_pod<std::uint64_t>(out, state->global_step);
    detail::write_pod<std::uint64_t>(out, state->best_epoch);
    detail::write_pod(out, state->best_r20);
    detail::write_pod(out, state->best_n20);
    detail::write_pod<std::uint64_t>(out, state->best_values.size());
    for (const auto& v : state->best_values) detail::write_doubles(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint " + path);
}

inline ModelParams load_checkpoint(const std::string& path, TrainerState* state = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != detail::kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = detail::read_pod<std::uint64_t>(in);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw IoError("checkpoint truncated");
  ModelConfig cfg = config_from_json(nlohmann::json::parse(cfg_text));

  ModelParams params = ModelParams::init(cfg, 0);
  auto tensors = params.parameters();
  const auto n_tensors = detail::read_pod<std::uint64_t>(in);
  if (n_tensors != tensors.size())
    throw IoError("checkpoint has " + std::to_string(n_tensors) + " tensors, model expects " +
                  std::to_string(tensors.size()));
  for (Tensor& t : tensors) {
    const auto rank = detail::read_pod<std::uint32_t>(in);
    if (rank != t.rank()) throw IoError("checkpoint tensor rank mismatch");
    Shape shape(rank);
    for (auto& dim : shape) dim = detail::read_pod<std::uint64_t>(in);
    if (shape != t.shape())
      throw IoError("checkpoint tensor shape " + shape_str(shape) + " does not match model " +
                    shape_str(t.shape()));
    auto vals = detail::read_doubles(in);
    if (vals.size() != t.numel()) throw IoError("checkpoint tensor size mismatch");
    std::copy(vals.begin(), vals.end(), t.values_mut().begin());
  }

  const auto has_state = detail::read_pod<std::uint8_t>(in);
  if (has_state && state) {
    state->opt.step = detail::read_pod<std::uint64_t>(in);
    state->opt.beta1 = detail::read_pod<double>(in);
    state->opt.beta2 = detail::read_pod<double>(in);
    state->opt.epsilon = detail::read_pod<double>(in);
    const auto n = detail::read_pod<std::uint64_t>(in);
    state->opt.m.clear();
    state->opt.v.clear();
    for (std::uint64_t i = 0; i < n; ++i) state->opt.m.push_back(detail::read_doubles(in));
    for (std::uint64_t i = 0; i < n; ++i) state->opt.v.push_back(detail::read_doubles(in));
    state->epoch_done = detail::read_pod<std::uint64_t>(in);
    state->global_step = detail::read_pod<std::uint64_t>(in);
    state->best_epoch = detail::read_pod<std::uint64_t>(in);
    state->best_r20 = detail::read_pod<double>(in);
    state->best_n20 = detail::read_pod<double>(in);
    const auto nb = detail::read_pod<std::uint64_t>(in);
    state->best_values.clear();
    for (std::uint64_t i = 0; i < nb; ++i) state->best_values.push_back(detail::read_doubles(in));
  } else if (!has_state && state) {
    *state = TrainerState{};
  }
  return params;
}

}  // namespace tegaarec
