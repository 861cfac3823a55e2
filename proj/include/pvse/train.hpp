#ifndef PVSE_TRAIN_HPP_
#define PVSE_TRAIN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pvse/embedding.hpp"
#include "pvse/error.hpp"
#include "pvse/linalg.hpp"
#include "pvse/loss.hpp"

namespace pvse {

// One (image, tag set) positive pair. The image is held as its part-pooled
// features (L x D), which is all the image branch needs from the grid.
struct TrainingSample {
  Matrix pooled;
  std::vector<std::size_t> tags;
};

inline TrainingSample MakeTrainingSample(const GridFeatureTensor& feat, const GridWeightMap& gwm,
                                         std::vector<std::size_t> tags) {
  if (tags.empty()) throw ArgumentError("training sample without tags");
  return {PoolPartFeatures(feat, gwm), std::move(tags)};
}

// N positive pairs; in-batch negatives come from the other pairs.
struct Batch {
  std::vector<const TrainingSample*> samples;
  std::size_t size() const { return samples.size(); }
};

struct ParamGradients {
  double loss = 0.0;
  std::vector<Matrix> image_proj;  // per part, D x K
  Matrix tag_proj;                 // H x KL
};

namespace detail {

// Tag counts N_t for one sample under the configured scope.
inline std::vector<double> SampleTagCounts(const TrainingSample& s, const ModelParams& params,
                                           const std::map<std::size_t, double>& batch_counts) {
  if (params.frequency_scope == FrequencyScope::kDataset) return DatasetCounts(s.tags, params.vocab);
  std::vector<double> c;
  for (std::size_t t : s.tags) c.push_back(batch_counts.at(t));
  return c;
}

// d/dx of the loss given d/dx_hat, through x_hat = x / ||x||. Zero vectors
// have zero gradient.
inline void BackpropNormalize(std::span<const double> raw, std::span<const double> g_unit, std::span<double> g_raw) {
  const double n = Norm(raw);
  if (n == 0.0) {
    std::fill(g_raw.begin(), g_raw.end(), 0.0);
    return;
  }
  double proj = 0.0;
  for (std::size_t k = 0; k < raw.size(); ++k) proj += raw[k] * g_unit[k];
  proj /= n * n;
  for (std::size_t k = 0; k < raw.size(); ++k) g_raw[k] = (g_unit[k] - raw[k] * proj) / n;
}

}  // namespace detail

struct BatchEmbeddings {
  Matrix images;  // raw x, N x KL
  Matrix tags;    // raw v, N x KL
  std::vector<std::vector<double>> tag_weights;
};

inline BatchEmbeddings EmbedBatch(const Batch& batch, const ModelParams& params) {
  const std::size_t N = batch.size(), KL = params.embedding_dim();
  std::map<std::size_t, double> batch_counts;
  for (const auto* s : batch.samples)
    for (std::size_t t : s->tags) batch_counts[t] += 1.0;
  BatchEmbeddings e{Matrix(N, KL), Matrix(N, KL), {}};
  for (std::size_t n = 0; n < N; ++n) {
    const TrainingSample& s = *batch.samples[n];
    EmbeddingVector x = ProjectPooled(s.pooled, params);
    std::copy(x.values().begin(), x.values().end(), e.images.row(n).begin());
    std::vector<double> counts = detail::SampleTagCounts(s, params, batch_counts);
    EmbeddingVector v = EmbedTagSet(s.tags, params, counts);
    std::copy(v.values().begin(), v.values().end(), e.tags.row(n).begin());
    e.tag_weights.push_back(TagWeights(counts));
  }
  return e;
}

// Loss of the batch under cfg (embeddings normalised first).
inline double BatchLoss(const Batch& batch, const ModelParams& params, const LossConfig& cfg) {
  BatchEmbeddings e = EmbedBatch(batch, params);
  return EvaluateLoss(NormalizeRows(e.images), NormalizeRows(e.tags), cfg);
}

// Exact gradient of the configured loss with respect to every W_I,l and W_T
// entry, through normalisation, GWAP projection and tag weighting.
inline ParamGradients LossGradients(const Batch& batch, const ModelParams& params, const LossConfig& cfg) {
  cfg.validate();
  params.check_shapes();
  const std::size_t N = batch.size(), K = params.dims_per_part, L = params.num_parts(), D = params.feature_dim;
  const std::size_t KL = K * L;
  if (N == 0) throw ArgumentError("empty batch");
  for (const auto* s : batch.samples)
    if (s->pooled.rows() != L || s->pooled.cols() != D) throw ArgumentError("sample pooled shape mismatch");

  BatchEmbeddings e = EmbedBatch(batch, params);
  Matrix xs = NormalizeRows(e.images), vs = NormalizeRows(e.tags);
  Matrix gx(N, KL), gv(N, KL);
  ParamGradients out;
  out.loss = EvaluateLoss(xs, vs, cfg, &gx, &gv);
  out.image_proj.assign(L, Matrix(D, K));
  out.tag_proj = Matrix(params.vocab_size(), KL);

  std::vector<double> g_raw(KL);
  for (std::size_t n = 0; n < N; ++n) {
    const TrainingSample& s = *batch.samples[n];
    detail::BackpropNormalize(e.images.row(n), gx.row(n), g_raw);
    for (std::size_t l = 0; l < L; ++l) {
      std::span<const double> g_block(g_raw.data() + l * K, K);
      auto pooled = s.pooled.row(l);
      for (std::size_t d = 0; d < D; ++d)
        if (pooled[d] != 0.0) Axpy(pooled[d], g_block, out.image_proj[l].row(d));
    }
    detail::BackpropNormalize(e.tags.row(n), gv.row(n), g_raw);
    for (std::size_t t = 0; t < s.tags.size(); ++t) Axpy(e.tag_weights[n][t], g_raw, out.tag_proj.row(s.tags[t]));
  }
  return out;
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr0 = 0.01;
  std::size_t halve_every = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0 || batch_size == 0 || halve_every == 0 || !(lr0 > 0.0))
      throw ArgumentError("training configuration values must be positive");
  }

  double learning_rate(std::size_t epoch) const {
    return lr0 * std::pow(0.5, static_cast<double>(epoch / halve_every));
  }
};

struct TraceRow {
  std::size_t epoch;
  std::size_t batch;
  double lr;
  double loss;
};

struct TrainResult {
  ModelParams params;
  std::vector<TraceRow> trace;
  std::vector<double> epoch_mean_loss;
};

// Batches of one epoch: a seeded shuffle cut into batch_size chunks; a trailing
// chunk with fewer than two pairs is dropped.
inline std::vector<std::vector<std::size_t>> EpochBatches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size) {
    std::size_t end = std::min(n, b + batch_size);
    if (end - b < 2) break;
    batches.emplace_back(order.begin() + static_cast<long>(b), order.begin() + static_cast<long>(end));
  }
  return batches;
}

// Plain SGD with a step-halving schedule.
inline TrainResult Train(ModelParams params, const std::vector<TrainingSample>& data, const TrainConfig& tcfg,
                         const LossConfig& lcfg) {
  tcfg.validate();
  lcfg.validate();
  params.check_shapes();
  if (data.size() < 2) throw ArgumentError("training needs at least two samples");
  for (const auto& s : data) {
    if (s.pooled.rows() != params.num_parts() || s.pooled.cols() != params.feature_dim)
      throw ArgumentError("training sample shape does not match model");
    for (std::size_t t : s.tags)
      if (t >= params.vocab_size()) throw ArgumentError("training sample tag out of vocabulary");
  }

  TrainResult result;
  std::mt19937_64 rng(tcfg.seed);
  std::size_t global_batch = 0;
  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = tcfg.learning_rate(epoch);
    double epoch_sum = 0.0;
    auto batches = EpochBatches(data.size(), tcfg.batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b, ++global_batch) {
      Batch batch;
      for (std::size_t idx : batches[b]) batch.samples.push_back(&data[idx]);
      ParamGradients g = LossGradients(batch, params, lcfg);
      if (!std::isfinite(g.loss)) throw TrainingError("non-finite loss", static_cast<long>(global_batch));
      for (std::size_t l = 0; l < params.num_parts(); ++l) Axpy(-lr, g.image_proj[l].data(), params.image_proj[l].data());
      Axpy(-lr, g.tag_proj.data(), params.tag_proj.data());
      result.trace.push_back({epoch, b, lr, g.loss});
      epoch_sum += g.loss;
    }
    result.epoch_mean_loss.push_back(batches.empty() ? 0.0 : epoch_sum / static_cast<double>(batches.size()));
  }
  result.params = std::move(params);
  return result;
}

}  // namespace pvse

#endif  // PVSE_TRAIN_HPP_
