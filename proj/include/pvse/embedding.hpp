#ifndef PVSE_EMBEDDING_HPP_
#define PVSE_EMBEDDING_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pvse/binary_io.hpp"
#include "pvse/error.hpp"
#include "pvse/linalg.hpp"
#include "pvse/part_scheme.hpp"
#include "pvse/partmap.hpp"

namespace pvse {

// Tag strings in a fixed order with their training-set attachment counts.
class TagVocabulary {
 public:
  TagVocabulary() = default;
  TagVocabulary(std::vector<std::string> tags, std::vector<std::uint64_t> frequencies)
      : tags_(std::move(tags)), frequencies_(std::move(frequencies)) {
    if (tags_.size() != frequencies_.size()) throw ArgumentError("vocabulary: tag/frequency length mismatch");
    for (std::size_t t = 0; t < tags_.size(); ++t) {
      if (tags_[t].empty()) throw ArgumentError("vocabulary: empty tag");
      if (frequencies_[t] < 1) throw ArgumentError("vocabulary: tag '" + tags_[t] + "' has zero frequency");
      if (!index_.emplace(tags_[t], t).second) throw ArgumentError("vocabulary: duplicate tag '" + tags_[t] + "'");
    }
  }

  // Sorted (bytewise) vocabulary with counts taken from per-image tag lists.
  static TagVocabulary FromTagLists(const std::vector<std::vector<std::string>>& tag_lists) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& list : tag_lists)
      for (const auto& t : list) ++counts[t];
    std::vector<std::string> tags;
    std::vector<std::uint64_t> freq;
    for (const auto& [t, c] : counts) {
      tags.push_back(t);
      freq.push_back(c);
    }
    return TagVocabulary(std::move(tags), std::move(freq));
  }

  std::size_t size() const { return tags_.size(); }
  const std::vector<std::string>& tags() const { return tags_; }
  const std::vector<std::uint64_t>& frequencies() const { return frequencies_; }
  const std::string& tag(std::size_t t) const { return tags_.at(t); }

  bool contains(const std::string& tag) const { return index_.count(tag) != 0; }

  std::size_t index_of(const std::string& tag) const {
    auto it = index_.find(tag);
    if (it == index_.end()) throw NotFoundError(NotFoundError::Kind::kTag, tag);
    return it->second;
  }

  std::vector<std::size_t> indices_of(const std::vector<std::string>& tags) const {
    std::vector<std::size_t> out;
    out.reserve(tags.size());
    for (const auto& t : tags) out.push_back(index_of(t));
    return out;
  }

  bool operator==(const TagVocabulary& o) const { return tags_ == o.tags_ && frequencies_ == o.frequencies_; }

 private:
  std::vector<std::string> tags_;
  std::vector<std::uint64_t> frequencies_;
  std::map<std::string, std::size_t> index_;
};

// I x J grid of D-dimensional backbone features, stored [i][j][d].
struct GridFeatureTensor {
  std::size_t rows = 0, cols = 0, dim = 0;
  std::vector<double> values;

  GridFeatureTensor() = default;
  GridFeatureTensor(std::size_t i, std::size_t j, std::size_t d) : rows(i), cols(j), dim(d), values(i * j * d, 0.0) {}

  std::span<double> cell(std::size_t i, std::size_t j) { return {values.data() + (i * cols + j) * dim, dim}; }
  std::span<const double> cell(std::size_t i, std::size_t j) const {
    return {values.data() + (i * cols + j) * dim, dim};
  }

  bool operator==(const GridFeatureTensor&) const = default;
};

enum class FrequencyScope { kDataset, kMinibatch };

inline std::string ToString(FrequencyScope s) { return s == FrequencyScope::kDataset ? "dataset" : "minibatch"; }

inline FrequencyScope ParseFrequencyScope(const std::string& s) {
  if (s == "dataset") return FrequencyScope::kDataset;
  if (s == "minibatch") return FrequencyScope::kMinibatch;
  throw ArgumentError("unknown frequency scope: " + s);
}

// Trainable state: one D x K projection per part and the H x KL tag matrix.
struct ModelParams {
  PartScheme scheme;
  TagVocabulary vocab;
  std::size_t dims_per_part = 0;  // K
  std::size_t feature_dim = 0;    // D
  std::size_t grid_rows = 0, grid_cols = 0;
  std::vector<Matrix> image_proj;  // L matrices, D x K
  Matrix tag_proj;                 // H x KL
  FrequencyScope frequency_scope = FrequencyScope::kDataset;
  std::uint64_t seed = 0;

  std::size_t num_parts() const { return scheme.num_parts(); }
  std::size_t embedding_dim() const { return dims_per_part * num_parts(); }
  std::size_t vocab_size() const { return vocab.size(); }

  void check_shapes() const {
    const std::size_t L = num_parts();
    if (image_proj.size() != L) throw ArgumentError("model: expected one projection per part");
    for (const auto& w : image_proj)
      if (w.rows() != feature_dim || w.cols() != dims_per_part) throw ArgumentError("model: projection shape mismatch");
    if (tag_proj.rows() != vocab.size() || tag_proj.cols() != embedding_dim())
      throw ArgumentError("model: tag matrix shape mismatch");
  }
};

inline constexpr double kDefaultInitGain = 0.1;

// Scaled-uniform initialisation on [-a, a], a = gain * sqrt(6 / (fan_in + fan_out)).
// KL must be a multiple of the part count.
inline ModelParams InitModelParams(PartScheme scheme, TagVocabulary vocab, std::size_t embedding_dim,
                                   std::size_t feature_dim, std::size_t grid_rows, std::size_t grid_cols,
                                   std::uint64_t seed, FrequencyScope scope = FrequencyScope::kDataset,
                                   double gain = kDefaultInitGain) {
  if (!(gain > 0.0)) throw ArgumentError("init gain must be positive");
  const std::size_t L = scheme.num_parts();
  if (embedding_dim == 0 || embedding_dim % L != 0)
    throw ArgumentError("embedding dim " + std::to_string(embedding_dim) + " not divisible by part count " +
                        std::to_string(L));
  if (feature_dim == 0 || vocab.size() == 0) throw ArgumentError("model needs D > 0 and a non-empty vocabulary");
  ModelParams p;
  p.dims_per_part = embedding_dim / L;
  p.feature_dim = feature_dim;
  p.grid_rows = grid_rows;
  p.grid_cols = grid_cols;
  p.frequency_scope = scope;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  const double a_img = gain * std::sqrt(6.0 / static_cast<double>(feature_dim + p.dims_per_part));
  std::uniform_real_distribution<double> img(-a_img, a_img);
  for (std::size_t l = 0; l < L; ++l) {
    Matrix w(feature_dim, p.dims_per_part);
    for (double& v : w.data()) v = img(rng);
    p.image_proj.push_back(std::move(w));
  }
  const double a_tag = gain * std::sqrt(6.0 / static_cast<double>(vocab.size() + embedding_dim));
  std::uniform_real_distribution<double> tag(-a_tag, a_tag);
  p.tag_proj = Matrix(vocab.size(), embedding_dim);
  for (double& v : p.tag_proj.data()) v = tag(rng);
  p.scheme = std::move(scheme);
  p.vocab = std::move(vocab);
  return p;
}

// KL-dimensional vector partitioned into L blocks of K dims.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  EmbeddingVector(std::size_t dims_per_part, std::size_t parts)
      : k_(dims_per_part), l_(parts), values_(dims_per_part * parts, 0.0) {}
  EmbeddingVector(std::size_t dims_per_part, std::size_t parts, std::vector<double> values)
      : k_(dims_per_part), l_(parts), values_(std::move(values)) {
    if (values_.size() != k_ * l_) throw ArgumentError("embedding: value count does not match K*L");
  }

  std::size_t dims_per_part() const { return k_; }
  std::size_t num_parts() const { return l_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> block(std::size_t l) { return {values_.data() + l * k_, k_}; }
  std::span<const double> block(std::size_t l) const { return {values_.data() + l * k_, k_}; }
  std::pair<std::size_t, std::size_t> block_range(std::size_t l) const { return {l * k_, (l + 1) * k_}; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::size_t k_ = 0;
  std::size_t l_ = 0;
  std::vector<double> values_;
};

inline void CheckFeatureShapes(const GridFeatureTensor& feat, const GridWeightMap& gwm, const ModelParams& params) {
  if (feat.rows != gwm.rows || feat.cols != gwm.cols)
    throw ArgumentError("feature grid " + std::to_string(feat.rows) + "x" + std::to_string(feat.cols) +
                        " does not match weight map " + std::to_string(gwm.rows) + "x" + std::to_string(gwm.cols));
  if (feat.dim != params.feature_dim)
    throw ArgumentError("feature dim " + std::to_string(feat.dim) + " does not match model D " +
                        std::to_string(params.feature_dim));
  if (gwm.parts != params.num_parts()) throw ArgumentError("weight map part count does not match model");
  if (feat.values.size() != feat.rows * feat.cols * feat.dim) throw ArgumentError("feature tensor size mismatch");
}

// Global weighted average pooling: row l is sum_ij g_(i,j),l * f_(i,j).
inline Matrix PoolPartFeatures(const GridFeatureTensor& feat, const GridWeightMap& gwm) {
  if (feat.rows != gwm.rows || feat.cols != gwm.cols) throw ArgumentError("feature grid does not match weight map");
  Matrix pooled(gwm.parts, feat.dim);
  for (std::size_t l = 0; l < gwm.parts; ++l) {
    if (!gwm.present[l]) continue;
    for (std::size_t i = 0; i < feat.rows; ++i)
      for (std::size_t j = 0; j < feat.cols; ++j) {
        double g = gwm.weight(l, i, j);
        if (g != 0.0) Axpy(g, feat.cell(i, j), pooled.row(l));
      }
  }
  return pooled;
}

// x_l = W_I,l^T pooled_l, concatenated in part order.
inline EmbeddingVector ProjectPooled(const Matrix& pooled, const ModelParams& params) {
  const std::size_t L = params.num_parts(), K = params.dims_per_part, D = params.feature_dim;
  if (pooled.rows() != L || pooled.cols() != D) throw ArgumentError("pooled feature shape mismatch");
  EmbeddingVector x(K, L);
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix& w = params.image_proj[l];
    auto out = x.block(l);
    auto in = pooled.row(l);
    for (std::size_t d = 0; d < D; ++d) {
      if (in[d] == 0.0) continue;
      Axpy(in[d], w.row(d), out);
    }
  }
  return x;
}

inline EmbeddingVector EmbedImage(const GridFeatureTensor& feat, const GridWeightMap& gwm, const ModelParams& params) {
  CheckFeatureShapes(feat, gwm, params);
  return ProjectPooled(PoolPartFeatures(feat, gwm), params);
}

inline EmbeddingVector EmbedSingleTag(std::size_t tag_index, const ModelParams& params) {
  if (tag_index >= params.vocab_size())
    throw ArgumentError("tag index " + std::to_string(tag_index) + " out of range (H=" +
                        std::to_string(params.vocab_size()) + ")");
  auto row = params.tag_proj.row(tag_index);
  return EmbeddingVector(params.dims_per_part, params.num_parts(), std::vector<double>(row.begin(), row.end()));
}

// Rare tags weigh more: w_t proportional to 1 / ln(N_t + 1), normalised to 1.
inline std::vector<double> TagWeights(std::span<const double> counts) {
  if (counts.empty()) throw ArgumentError("tag weights of an empty tag list");
  std::vector<double> w(counts.size());
  double total = 0.0;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    if (!(counts[t] >= 1.0)) throw ArgumentError("tag frequency must be >= 1");
    w[t] = 1.0 / std::log(counts[t] + 1.0);
    total += w[t];
  }
  for (double& v : w) v /= total;
  return w;
}

// Counts N_t for the given tags under the dataset scope.
inline std::vector<double> DatasetCounts(std::span<const std::size_t> tags, const TagVocabulary& vocab) {
  std::vector<double> counts;
  counts.reserve(tags.size());
  for (std::size_t t : tags) counts.push_back(static_cast<double>(vocab.frequencies().at(t)));
  return counts;
}

// Weighted sum of tag rows with explicit per-tag counts.
inline EmbeddingVector EmbedTagSet(std::span<const std::size_t> tags, const ModelParams& params,
                                   std::span<const double> counts) {
  if (tags.empty()) throw ArgumentError("empty tag set");
  if (counts.size() != tags.size()) throw ArgumentError("tag/count length mismatch");
  std::vector<double> w = TagWeights(counts);
  EmbeddingVector v(params.dims_per_part, params.num_parts());
  for (std::size_t t = 0; t < tags.size(); ++t) {
    if (tags[t] >= params.vocab_size()) throw ArgumentError("tag index out of range");
    Axpy(w[t], params.tag_proj.row(tags[t]), v.values());
  }
  return v;
}

inline EmbeddingVector EmbedTagSet(std::span<const std::size_t> tags, const ModelParams& params) {
  return EmbedTagSet(tags, params, DatasetCounts(tags, params.vocab));
}

inline EmbeddingVector EmbedTagSet(const std::vector<std::string>& tags, const ModelParams& params) {
  std::vector<std::size_t> idx = params.vocab.indices_of(tags);
  return EmbedTagSet(std::span<const std::size_t>(idx), params);
}

// Zero vectors come back unchanged.
inline std::vector<double> Normalized(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  double n = Norm(v);
  if (n > 0.0)
    for (double& x : out) x /= n;
  return out;
}

inline EmbeddingVector Normalize(const EmbeddingVector& e) {
  return EmbeddingVector(e.dims_per_part(), e.num_parts(), Normalized(e.values()));
}

// Cosine similarity; 0 when either side has zero norm.
inline double CosineSimilarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ArgumentError("cosine: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double na = Norm(a), nb = Norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return Dot(a, b) / (na * nb);
}

inline double CosineSimilarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return CosineSimilarity(a.values(), b.values());
}

inline constexpr std::string_view kFeatureMagic = "PVSEF1";

inline void WriteFeatures(const GridFeatureTensor& feat, const std::string& path) {
  auto out = io::OpenOut(path);
  io::WriteMagic(out, kFeatureMagic);
  io::WriteU32(out, static_cast<std::uint32_t>(feat.rows));
  io::WriteU32(out, static_cast<std::uint32_t>(feat.cols));
  io::WriteU32(out, static_cast<std::uint32_t>(feat.dim));
  for (double v : feat.values) io::WriteF32(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing " + path);
}

inline GridFeatureTensor ReadFeatures(const std::string& path) {
  auto in = io::OpenIn(path);
  io::ExpectMagic(in, kFeatureMagic, path);
  std::uint32_t i = io::ReadU32(in, path), j = io::ReadU32(in, path), d = io::ReadU32(in, path);
  if (i == 0 || j == 0 || d == 0) throw IngestError(path, "zero feature dimension");
  GridFeatureTensor feat(i, j, d);
  for (double& v : feat.values) {
    float f = io::ReadF32(in, path);
    if (!std::isfinite(f)) throw IngestError(path, "non-finite feature value");
    v = f;
  }
  io::ExpectEof(in, path);
  return feat;
}

}  // namespace pvse

#endif  // PVSE_EMBEDDING_HPP_
