#ifndef PVSE_QUERY_HPP_
#define PVSE_QUERY_HPP_

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pvse/embedding.hpp"
#include "pvse/error.hpp"
#include "pvse/partmap.hpp"

namespace pvse {

struct IndexEntry {
  std::string id;
  GridFeatureTensor features;
  GridWeightMap weights;
  GridPartFractions fractions;
  std::vector<std::string> tags;
};

// Immutable table of embedded images. Embeddings are kept un-normalised;
// every score is a cosine so the stored scale does not matter.
class EmbeddingIndex {
 public:
  EmbeddingIndex(std::vector<IndexEntry> entries, const ModelParams& params)
      : dims_per_part_(params.dims_per_part), parts_(params.num_parts()), entries_(std::move(entries)) {
    embeddings_ = Matrix(entries_.size(), params.embedding_dim());
    for (std::size_t n = 0; n < entries_.size(); ++n) {
      const auto& e = entries_[n];
      if (!position_.emplace(e.id, n).second) throw ArgumentError("duplicate image id " + e.id);
      EmbeddingVector x = EmbedImage(e.features, e.weights, params);
      std::copy(x.values().begin(), x.values().end(), embeddings_.row(n).begin());
    }
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t dims_per_part() const { return dims_per_part_; }
  std::size_t num_parts() const { return parts_; }
  const std::string& id(std::size_t n) const { return entries_[n].id; }
  const IndexEntry& entry(std::size_t n) const { return entries_[n]; }
  std::span<const double> embedding(std::size_t n) const { return embeddings_.row(n); }

  bool contains(const std::string& id) const { return position_.count(id) != 0; }

  std::size_t position(const std::string& id) const {
    auto it = position_.find(id);
    if (it == position_.end()) throw NotFoundError(NotFoundError::Kind::kImage, id);
    return it->second;
  }

  bool has_tag(std::size_t n, const std::string& tag) const {
    const auto& t = entries_[n].tags;
    return std::find(t.begin(), t.end(), tag) != t.end();
  }

 private:
  std::size_t dims_per_part_;
  std::size_t parts_;
  std::vector<IndexEntry> entries_;
  std::map<std::string, std::size_t> position_;
  Matrix embeddings_;
};

// Selected parts and the union K_q of their dimension blocks.
struct PartMask {
  std::vector<std::size_t> parts;  // sorted, unique
  std::vector<bool> dims;          // KL flags

  static PartMask FromParts(std::vector<std::size_t> parts, std::size_t dims_per_part, std::size_t num_parts) {
    if (parts.empty()) throw ArgumentError("empty part mask");
    std::sort(parts.begin(), parts.end());
    parts.erase(std::unique(parts.begin(), parts.end()), parts.end());
    PartMask m{std::move(parts), std::vector<bool>(dims_per_part * num_parts, false)};
    for (std::size_t l : m.parts) {
      if (l >= num_parts) throw ArgumentError("part index " + std::to_string(l) + " out of range");
      std::fill(m.dims.begin() + static_cast<long>(l * dims_per_part),
                m.dims.begin() + static_cast<long>((l + 1) * dims_per_part), true);
    }
    return m;
  }

  static PartMask FromNames(const std::vector<std::string>& names, const ModelParams& params) {
    std::vector<std::size_t> idx;
    for (const auto& n : names) idx.push_back(params.scheme.part_index(n));
    return FromParts(std::move(idx), params.dims_per_part, params.num_parts());
  }

  static PartMask All(std::size_t dims_per_part, std::size_t num_parts) {
    std::vector<std::size_t> all(num_parts);
    for (std::size_t l = 0; l < num_parts; ++l) all[l] = l;
    return FromParts(std::move(all), dims_per_part, num_parts);
  }

  std::vector<double> slice(std::span<const double> v) const {
    std::vector<double> out;
    for (std::size_t k = 0; k < dims.size(); ++k)
      if (dims[k]) out.push_back(v[k]);
    return out;
  }
};

struct RankedItem {
  std::string id;
  double score;
  bool operator==(const RankedItem&) const = default;
};

// Descending score; equal scores ordered by ascending id.
inline void SortRanking(std::vector<RankedItem>& items) {
  std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

inline std::vector<RankedItem> TopM(std::vector<RankedItem> items, std::size_t top_m) {
  SortRanking(items);
  if (top_m != 0 && items.size() > top_m) items.resize(top_m);
  return items;
}

// Scores every index image against a query vector by cosine similarity.
inline std::vector<RankedItem> RankByCosine(const EmbeddingIndex& index, std::span<const double> query,
                                            std::size_t top_m, std::optional<std::size_t> exclude = std::nullopt) {
  std::vector<RankedItem> items;
  items.reserve(index.size());
  for (std::size_t n = 0; n < index.size(); ++n) {
    if (exclude && *exclude == n) continue;
    items.push_back({index.id(n), CosineSimilarity(query, index.embedding(n))});
  }
  return TopM(std::move(items), top_m);
}

struct RetrieveOptions {
  std::size_t top_m = 5;
  bool exclude_query = true;
};

// argmax_x s(x_q + v_pos - v_neg, x). Missing tag sets count as zero vectors.
inline std::vector<RankedItem> Retrieve(const EmbeddingIndex& index, const ModelParams& params,
                                        const std::string& query_id, const std::vector<std::string>& pos_tags,
                                        const std::vector<std::string>& neg_tags, RetrieveOptions opts = {}) {
  const std::size_t q = index.position(query_id);
  auto pos_idx = params.vocab.indices_of(pos_tags);
  auto neg_idx = params.vocab.indices_of(neg_tags);
  std::vector<double> query(index.embedding(q).begin(), index.embedding(q).end());
  if (!pos_idx.empty()) Axpy(1.0, EmbedTagSet(std::span<const std::size_t>(pos_idx), params).values(), query);
  if (!neg_idx.empty()) Axpy(-1.0, EmbedTagSet(std::span<const std::size_t>(neg_idx), params).values(), query);
  return RankByCosine(index, query, opts.top_m, opts.exclude_query ? std::optional(q) : std::nullopt);
}

// Part-focused retrieval: the positive tag vector (plain mean of the tag rows)
// is kept only inside the mask's dims, the query image only outside them.
inline std::vector<RankedItem> RetrievePartMasked(const EmbeddingIndex& index, const ModelParams& params,
                                                  const std::string& query_id,
                                                  const std::vector<std::string>& pos_tags, const PartMask& mask,
                                                  RetrieveOptions opts = {}) {
  if (mask.parts.empty()) throw ArgumentError("empty part mask");
  if (pos_tags.empty()) throw ArgumentError("part-masked retrieval requires a positive tag");
  if (mask.dims.size() != params.embedding_dim()) throw ArgumentError("mask width does not match model");
  const std::size_t q = index.position(query_id);
  auto pos_idx = params.vocab.indices_of(pos_tags);

  std::vector<double> v_pos(params.embedding_dim(), 0.0);
  for (std::size_t t : pos_idx) Axpy(1.0 / static_cast<double>(pos_idx.size()), params.tag_proj.row(t), v_pos);

  std::vector<double> query(index.embedding(q).begin(), index.embedding(q).end());
  for (std::size_t k = 0; k < query.size(); ++k) query[k] = mask.dims[k] ? v_pos[k] : query[k];
  return RankByCosine(index, query, opts.top_m, opts.exclude_query ? std::optional(q) : std::nullopt);
}

struct ReorderOptions {
  std::optional<PartMask> mask;  // all parts when empty
  bool restrict_to_tagged = true;
  std::size_t top_m = 0;         // 0 = everything
};

// Relevance of each candidate to one tag, measured only on the mask's dims.
inline std::vector<RankedItem> Reorder(const EmbeddingIndex& index, const ModelParams& params, const std::string& tag,
                                       const ReorderOptions& opts = {}) {
  const std::size_t t = params.vocab.index_of(tag);
  PartMask mask = opts.mask ? *opts.mask : PartMask::All(params.dims_per_part, params.num_parts());
  if (mask.dims.size() != params.embedding_dim()) throw ArgumentError("mask width does not match model");
  std::vector<double> tag_slice = mask.slice(params.tag_proj.row(t));
  std::vector<RankedItem> items;
  for (std::size_t n = 0; n < index.size(); ++n) {
    if (opts.restrict_to_tagged && !index.has_tag(n, tag)) continue;
    items.push_back({index.id(n), CosineSimilarity(mask.slice(index.embedding(n)), tag_slice)});
  }
  return TopM(std::move(items), opts.top_m);
}

struct AamGrid {
  std::size_t rows = 0, cols = 0;
  std::vector<double> scores;  // [i][j]
  double at(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }
};

// Attribute activation map of an arbitrary tag vector over one image:
// per cell, cosine between sum_l g'_l W_I,l^T f and sum_l g'_l v_l.
inline AamGrid ComputeAam(const GridFeatureTensor& feat, const GridPartFractions& frac,
                          std::span<const double> tag_vector, const ModelParams& params) {
  const std::size_t K = params.dims_per_part, L = params.num_parts(), D = params.feature_dim;
  if (feat.rows != frac.rows || feat.cols != frac.cols || feat.dim != D || frac.parts != L ||
      tag_vector.size() != K * L)
    throw ArgumentError("AAM input shapes disagree with the model");
  AamGrid out{frac.rows, frac.cols, std::vector<double>(frac.rows * frac.cols, 0.0)};
  std::vector<double> x(K), v(K);
  for (std::size_t i = 0; i < frac.rows; ++i)
    for (std::size_t j = 0; j < frac.cols; ++j) {
      std::fill(x.begin(), x.end(), 0.0);
      std::fill(v.begin(), v.end(), 0.0);
      auto f = feat.cell(i, j);
      for (std::size_t l = 0; l < L; ++l) {
        double g = frac.fraction(i, j, l);
        if (g == 0.0) continue;
        const Matrix& w = params.image_proj[l];
        for (std::size_t d = 0; d < D; ++d)
          if (f[d] != 0.0) Axpy(g * f[d], w.row(d), x);
        Axpy(g, tag_vector.subspan(l * K, K), v);
      }
      out.scores[i * frac.cols + j] = CosineSimilarity(x, v);
    }
  return out;
}

inline AamGrid ComputeAam(const EmbeddingIndex& index, const ModelParams& params, const std::string& image_id,
                          const std::string& tag) {
  const std::size_t t = params.vocab.index_of(tag);
  const IndexEntry& e = index.entry(index.position(image_id));
  return ComputeAam(e.features, e.fractions, params.tag_proj.row(t), params);
}

}  // namespace pvse

#endif  // PVSE_QUERY_HPP_
