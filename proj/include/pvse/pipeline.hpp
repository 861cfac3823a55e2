#ifndef PVSE_PIPELINE_HPP_
#define PVSE_PIPELINE_HPP_

#include <cstdint>
#include <string>

#include "pvse/dataset.hpp"
#include "pvse/embedding.hpp"
#include "pvse/loss.hpp"
#include "pvse/train.hpp"

namespace pvse {

struct ModelShape {
  std::size_t embedding_dim = 128;  // KL
  FrequencyScope frequency_scope = FrequencyScope::kDataset;
  double init_gain = kDefaultInitGain;
};

// Randomly initialised model sized for the dataset.
inline ModelParams InitModelForDataset(const Dataset& ds, const ModelShape& shape, std::uint64_t seed) {
  return InitModelParams(ds.scheme, ds.vocab, shape.embedding_dim, ds.feature_dim, ds.grid_rows, ds.grid_cols, seed,
                         shape.frequency_scope, shape.init_gain);
}

inline TrainResult TrainOnDataset(const Dataset& ds, const ModelShape& shape, const TrainConfig& tcfg,
                                  const LossConfig& lcfg) {
  ModelParams params = InitModelForDataset(ds, shape, tcfg.seed);
  std::vector<TrainingSample> samples = MakeTrainingSamples(ds, params);
  return Train(std::move(params), samples, tcfg, lcfg);
}

}  // namespace pvse

#endif  // PVSE_PIPELINE_HPP_
