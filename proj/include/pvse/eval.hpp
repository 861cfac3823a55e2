#ifndef PVSE_EVAL_HPP_
#define PVSE_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "pvse/dataset.hpp"
#include "pvse/embedding.hpp"
#include "pvse/error.hpp"
#include "pvse/pipeline.hpp"
#include "pvse/query.hpp"

namespace pvse {

inline void CheckDepth(const std::vector<bool>& ranked, std::size_t m) {
  if (m == 0) throw ArgumentError("M must be positive");
  if (ranked.size() < m)
    throw ArgumentError("ranked list of " + std::to_string(ranked.size()) + " shorter than M=" + std::to_string(m));
}

inline double PrecisionAtM(const std::vector<bool>& ranked, std::size_t m) {
  CheckDepth(ranked, m);
  return static_cast<double>(std::count(ranked.begin(), ranked.begin() + static_cast<long>(m), true)) /
         static_cast<double>(m);
}

// Binary-relevance NDCG; the ideal ranking puts min(M, total_relevant) hits
// first. Zero when the pool holds no relevant item.
inline double NdcgAtM(const std::vector<bool>& ranked, std::size_t m, std::size_t total_relevant) {
  CheckDepth(ranked, m);
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double discount = 1.0 / std::log2(static_cast<double>(i) + 2.0);
    if (ranked[i]) dcg += discount;
    if (i < total_relevant) idcg += discount;
  }
  return idcg == 0.0 ? 0.0 : dcg / idcg;
}

struct TrialSpec {
  std::string tag;
  std::vector<std::size_t> m_values = {5, 10, 15};
  std::size_t negative_ratio = 10;
  std::size_t repeats = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (negative_ratio < 1 || repeats < 1 || m_values.empty()) throw ArgumentError("invalid trial spec");
  }
};

struct TrialResult {
  std::string tag;
  std::vector<std::size_t> m_values;
  std::vector<std::vector<double>> precision;  // [repeat][m]
  std::vector<std::vector<double>> ndcg;       // [repeat][m]
  std::vector<double> mean_precision;          // [m]
  std::vector<double> mean_ndcg;               // [m]
};

class InsufficientDataError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

// Pool = every image carrying the tag plus negative_ratio times as many
// sampled without replacement from the rest, re-drawn each repeat. Images are
// ranked by cosine to the single-tag embedding.
inline TrialResult TagRetrievalTrial(const EmbeddingIndex& index, const ModelParams& params, const TrialSpec& spec) {
  spec.validate();
  const std::size_t t = params.vocab.index_of(spec.tag);
  std::span<const double> tag_vec = params.tag_proj.row(t);
  std::vector<std::size_t> pos, neg;
  for (std::size_t n = 0; n < index.size(); ++n) (index.has_tag(n, spec.tag) ? pos : neg).push_back(n);
  const std::size_t max_m = *std::max_element(spec.m_values.begin(), spec.m_values.end());
  const std::size_t want_neg = spec.negative_ratio * pos.size();
  if (pos.size() < max_m || neg.size() < want_neg)
    throw InsufficientDataError("tag '" + spec.tag + "': " + std::to_string(pos.size()) + " positives (need >= " +
                                std::to_string(max_m) + "), " + std::to_string(neg.size()) +
                                " negatives (need >= " + std::to_string(want_neg) + ")");

  std::vector<double> scores(index.size());
  for (std::size_t n = 0; n < index.size(); ++n) scores[n] = CosineSimilarity(index.embedding(n), tag_vec);

  TrialResult r{spec.tag, spec.m_values, {}, {}, std::vector<double>(spec.m_values.size(), 0.0),
                std::vector<double>(spec.m_values.size(), 0.0)};
  std::mt19937_64 rng(spec.seed);
  for (std::size_t rep = 0; rep < spec.repeats; ++rep) {
    std::vector<std::size_t> pool_neg = neg;
    std::shuffle(pool_neg.begin(), pool_neg.end(), rng);
    pool_neg.resize(want_neg);
    std::vector<std::size_t> pool = pos;
    pool.insert(pool.end(), pool_neg.begin(), pool_neg.end());
    std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return index.id(a) < index.id(b);
    });
    std::vector<bool> ranked(pool.size());
    for (std::size_t k = 0; k < pool.size(); ++k) ranked[k] = index.has_tag(pool[k], spec.tag);
    std::vector<double> p, nd;
    for (std::size_t m : spec.m_values) {
      p.push_back(PrecisionAtM(ranked, m));
      nd.push_back(NdcgAtM(ranked, m, pos.size()));
    }
    r.precision.push_back(p);
    r.ndcg.push_back(nd);
  }
  for (std::size_t k = 0; k < spec.m_values.size(); ++k) {
    for (std::size_t rep = 0; rep < spec.repeats; ++rep) {
      r.mean_precision[k] += r.precision[rep][k];
      r.mean_ndcg[k] += r.ndcg[rep][k];
    }
    r.mean_precision[k] /= static_cast<double>(spec.repeats);
    r.mean_ndcg[k] /= static_cast<double>(spec.repeats);
  }
  return r;
}

struct TagTable {
  std::vector<std::size_t> m_values;
  std::vector<TrialResult> rows;
  std::vector<double> mean_precision;
  std::vector<double> mean_ndcg;
};

// Runs the trial for each tag (seed offset by position) and averages.
inline TagTable TagRetrievalTable(const EmbeddingIndex& index, const ModelParams& params,
                                  const std::vector<std::string>& tags, TrialSpec base) {
  if (tags.empty()) throw ArgumentError("no tags to evaluate");
  TagTable table{base.m_values, {}, std::vector<double>(base.m_values.size(), 0.0),
                 std::vector<double>(base.m_values.size(), 0.0)};
  const std::uint64_t seed = base.seed;
  for (std::size_t k = 0; k < tags.size(); ++k) {
    base.tag = tags[k];
    base.seed = seed + k;
    table.rows.push_back(TagRetrievalTrial(index, params, base));
  }
  for (std::size_t k = 0; k < base.m_values.size(); ++k) {
    for (const auto& row : table.rows) {
      table.mean_precision[k] += row.mean_precision[k];
      table.mean_ndcg[k] += row.mean_ndcg[k];
    }
    table.mean_precision[k] /= static_cast<double>(tags.size());
    table.mean_ndcg[k] /= static_cast<double>(tags.size());
  }
  return table;
}

struct RegionCategory {
  std::string name;
  std::vector<std::size_t> parts;
  std::vector<std::string> tags;
};

struct RegionEvalSpec {
  std::vector<RegionCategory> categories;
  std::size_t m = 5;
};

struct RegionCategoryResult {
  std::string name;
  double precision = 0.0;
  double ndcg = 0.0;
  std::size_t evaluated = 0;  // (tag, image) pairs scored
  std::size_t skipped = 0;    // tagged images without any foreground cell
};

// For each (tag, tagged image): rank grid cells by AAM score (ties by
// row-major cell order) and count a cell relevant when its dominant
// foreground part belongs to the tag's category. Averages run over pairs.
inline std::vector<RegionCategoryResult> RegionAttentionTrial(const EmbeddingIndex& index, const ModelParams& params,
                                                              const RegionEvalSpec& spec) {
  std::vector<RegionCategoryResult> out;
  for (const auto& cat : spec.categories) {
    RegionCategoryResult res{cat.name};
    for (const auto& tag : cat.tags) {
      const std::size_t t = params.vocab.index_of(tag);
      for (std::size_t n = 0; n < index.size(); ++n) {
        if (!index.has_tag(n, tag)) continue;
        const IndexEntry& e = index.entry(n);
        const GridPartFractions& frac = e.fractions;
        std::vector<std::size_t> cells(frac.rows * frac.cols);
        std::iota(cells.begin(), cells.end(), 0);
        std::vector<bool> relevant(cells.size());
        bool any_foreground = false;
        for (std::size_t c = 0; c < cells.size(); ++c) {
          long dom = frac.dominant_part(c / frac.cols, c % frac.cols);
          any_foreground |= dom >= 0;
          relevant[c] = dom >= 0 && std::find(cat.parts.begin(), cat.parts.end(),
                                              static_cast<std::size_t>(dom)) != cat.parts.end();
        }
        if (!any_foreground) {
          ++res.skipped;
          continue;
        }
        if (cells.size() < spec.m) throw ArgumentError("grid has fewer cells than M");
        AamGrid aam = ComputeAam(e.features, frac, params.tag_proj.row(t), params);
        std::stable_sort(cells.begin(), cells.end(),
                         [&](std::size_t a, std::size_t b) { return aam.scores[a] > aam.scores[b]; });
        std::vector<bool> r(cells.size());
        std::size_t total = 0;
        for (std::size_t k = 0; k < cells.size(); ++k) {
          r[k] = relevant[cells[k]];
          total += relevant[k];
        }
        res.precision += PrecisionAtM(r, spec.m);
        res.ndcg += NdcgAtM(r, spec.m, total);
        ++res.evaluated;
      }
    }
    if (res.evaluated > 0) {
      res.precision /= static_cast<double>(res.evaluated);
      res.ndcg /= static_cast<double>(res.evaluated);
    }
    out.push_back(res);
  }
  return out;
}

// Region spec for a synthetic dataset: each coarse category gets the
// concrete tags planted on its parts.
inline RegionEvalSpec SyntheticRegionSpec(const Dataset& ds, std::size_t m = 5) {
  RegionEvalSpec spec;
  spec.m = m;
  for (auto& [name, parts] : CoarseCategories(ds.scheme)) {
    RegionCategory cat{name, parts, {}};
    for (const auto& tag : ds.concrete_tags) {
      const auto& tp = ds.tag_parts.at(tag);
      if (tp.size() == 1 && std::find(parts.begin(), parts.end(), tp[0]) != parts.end()) cat.tags.push_back(tag);
    }
    spec.categories.push_back(std::move(cat));
  }
  return spec;
}

// Control: every category keeps its parts but scores the tags of the next
// category, so no tag is matched with the region it was planted on.
inline RegionEvalSpec PermutedTagSpec(const RegionEvalSpec& spec) {
  RegionEvalSpec out = spec;
  const std::size_t C = spec.categories.size();
  for (std::size_t c = 0; c < C; ++c) out.categories[c].tags = spec.categories[(c + 1) % C].tags;
  return out;
}

// Fraction of grid cells whose dominant part falls in the category, averaged
// over the index.
inline double CategoryAreaFraction(const EmbeddingIndex& index, const std::vector<std::size_t>& parts) {
  double sum = 0.0;
  for (std::size_t n = 0; n < index.size(); ++n) {
    const auto& f = index.entry(n).fractions;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < f.rows; ++i)
      for (std::size_t j = 0; j < f.cols; ++j) {
        long d = f.dominant_part(i, j);
        if (d >= 0 && std::find(parts.begin(), parts.end(), static_cast<std::size_t>(d)) != parts.end()) ++hits;
      }
    sum += static_cast<double>(hits) / static_cast<double>(f.rows * f.cols);
  }
  return index.size() ? sum / static_cast<double>(index.size()) : 0.0;
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  bool degenerate = false;  // both samples had zero variance
};

// Welch's unequal-variance t-test, two-sided.
inline WelchResult WelchTTest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ArgumentError("welch t-test needs at least two values per sample");
  auto moments = [](std::span<const double> x) {
    double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / static_cast<double>(x.size() - 1)};
  };
  auto [ma, va] = moments(a);
  auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  WelchResult r;
  if (sa + sb == 0.0) {
    r.degenerate = true;
    r.df = na + nb - 2.0;
    if (ma == mb) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  boost::math::students_t_distribution<double> dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

struct AblationRow {
  LossVariant variant;
  TagTable table;
};

// Trains one model per loss variant from the same seed and evaluates each on
// the same tag set.
inline std::vector<AblationRow> LossAblation(const Dataset& ds, const ModelShape& shape, const TrainConfig& tcfg,
                                             const LossConfig& base, const std::vector<LossVariant>& variants,
                                             const std::vector<std::string>& tags, const TrialSpec& trial) {
  std::vector<AblationRow> rows;
  for (LossVariant v : variants) {
    LossConfig cfg = base;
    cfg.variant = v;
    TrainResult trained = TrainOnDataset(ds, shape, tcfg, cfg);
    EmbeddingIndex index = BuildIndex(ds, trained.params);
    rows.push_back({v, TagRetrievalTable(index, trained.params, tags, trial)});
  }
  return rows;
}

// CSV writers follow the published table layouts: one P@M column per M, then
// one N@M column per M.
inline void WriteTagTableCsv(std::ostream& out, const TagTable& table) {
  out << "tag";
  for (auto m : table.m_values) out << ",P@" << m;
  for (auto m : table.m_values) out << ",N@" << m;
  out << '\n';
  auto row = [&](const std::string& label, const std::vector<double>& p, const std::vector<double>& n) {
    out << label;
    for (double v : p) out << ',' << v;
    for (double v : n) out << ',' << v;
    out << '\n';
  };
  for (const auto& r : table.rows) row(r.tag, r.mean_precision, r.mean_ndcg);
  row("mean", table.mean_precision, table.mean_ndcg);
}

inline void WriteRegionCsv(std::ostream& out, const std::vector<RegionCategoryResult>& rows, std::size_t m) {
  out << "category,P@" << m << ",N@" << m << ",pairs,skipped\n";
  for (const auto& r : rows) out << r.name << ',' << r.precision << ',' << r.ndcg << ',' << r.evaluated << ',' << r.skipped << '\n';
}

inline void WriteAblationCsv(std::ostream& out, const std::vector<AblationRow>& rows) {
  if (rows.empty()) return;
  out << "loss";
  for (auto m : rows.front().table.m_values) out << ",P@" << m;
  for (auto m : rows.front().table.m_values) out << ",N@" << m;
  out << '\n';
  for (const auto& r : rows) {
    out << ToString(r.variant);
    for (double v : r.table.mean_precision) out << ',' << v;
    for (double v : r.table.mean_ndcg) out << ',' << v;
    out << '\n';
  }
}

inline nlohmann::json ToJson(const TagTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows)
    rows.push_back({{"tag", r.tag}, {"precision", r.mean_precision}, {"ndcg", r.mean_ndcg}});
  return {{"m", table.m_values}, {"rows", rows}, {"mean_precision", table.mean_precision},
          {"mean_ndcg", table.mean_ndcg}};
}

inline nlohmann::json ToJson(const std::vector<RegionCategoryResult>& rows, std::size_t m) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"category", r.name}, {"precision", r.precision}, {"ndcg", r.ndcg}, {"pairs", r.evaluated},
                   {"skipped", r.skipped}});
  return {{"m", m}, {"categories", out}};
}

inline nlohmann::json ToJson(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back({{"loss", ToString(r.variant)}, {"table", ToJson(r.table)}});
  return out;
}

}  // namespace pvse

#endif  // PVSE_EVAL_HPP_
