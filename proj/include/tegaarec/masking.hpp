#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "tegaarec/data.hpp"
#include "tegaarec/neighbours.hpp"

namespace tegaarec {

struct MaskedInstance {
  std::vector<std::int64_t> input;  // padded with 0
  int true_len = 0;
  std::int64_t target = 0;
};

inline std::vector<MaskedInstance> expand_session(const std::vector<std::int64_t>& items,
                                                  std::size_t max_len = 50) {
  const std::size_t n = items.size();
  if (n < 2)
    throw ContractError("expand_session needs at least 2 items, got " + std::to_string(n));
  const std::size_t width = std::min(n - 1, max_len);
  std::vector<MaskedInstance> out;
  out.reserve(n - 1);
  for (std::size_t k = 1; k < n; ++k) {
    MaskedInstance inst;
    const std::size_t keep = std::min(k, max_len);  // oldest items fall off
    inst.input.assign(items.begin() + static_cast<std::ptrdiff_t>(k - keep),
                      items.begin() + static_cast<std::ptrdiff_t>(k));
    inst.input.resize(width, kPadItem);
    inst.true_len = static_cast<int>(keep);
    inst.target = items[k];
    out.push_back(std::move(inst));
  }
  return out;
}

inline std::vector<MaskedInstance> expand_session(const Session& s, std::size_t max_len = 50) {
  return expand_session(s.items, max_len);
}

struct MaskedBatch {
  std::size_t n_max = 0;
  std::vector<std::vector<std::int64_t>> inputs;  // each row has size n_max
  std::vector<int> lengths;
  std::vector<std::int64_t> targets;
  std::vector<std::shared_ptr<const NeighbourSample>> samples;
  std::size_t size() const { return inputs.size(); }
};

inline std::vector<MaskedBatch> assemble_batch(
    const std::vector<MaskedInstance>& instances,
    const std::vector<std::shared_ptr<const NeighbourSample>>& samples, std::size_t batch_size) {
  if (instances.size() != samples.size())
    throw ContractError("assemble_batch: " + std::to_string(instances.size()) + " instances vs " +
                        std::to_string(samples.size()) + " samples");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<MaskedBatch> out;
  for (std::size_t start = 0; start < instances.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, instances.size());
    MaskedBatch b;
    for (std::size_t i = start; i < end; ++i)
      b.n_max = std::max(b.n_max, static_cast<std::size_t>(instances[i].true_len));
    for (std::size_t i = start; i < end; ++i) {
      std::vector<std::int64_t> row(instances[i].input.begin(),
                                    instances[i].input.begin() + instances[i].true_len);
      row.resize(b.n_max, kPadItem);
      b.inputs.push_back(std::move(row));
      b.lengths.push_back(instances[i].true_len);
      b.targets.push_back(instances[i].target);
      b.samples.push_back(samples[i]);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace tegaarec
