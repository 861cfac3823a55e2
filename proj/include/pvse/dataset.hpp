#ifndef PVSE_DATASET_HPP_
#define PVSE_DATASET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvse/embedding.hpp"
#include "pvse/error.hpp"
#include "pvse/part_scheme.hpp"
#include "pvse/partmap.hpp"
#include "pvse/query.hpp"
#include "pvse/train.hpp"

namespace pvse {

namespace fs = std::filesystem;

struct DatasetImage {
  std::string id;
  GridFeatureTensor features;
  SegmentationMap segmentation;
  std::vector<std::string> tags;
};

// In-memory dataset: validated images plus the derived vocabulary.
struct Dataset {
  std::string name;
  PartScheme scheme;
  std::size_t grid_rows = 0, grid_cols = 0, feature_dim = 0;
  std::size_t height = 0, width = 0;
  std::vector<DatasetImage> images;
  TagVocabulary vocab;
  // Synthetic sets only: the part(s) each planted tag is bound to.
  std::map<std::string, std::vector<std::size_t>> tag_parts;
  std::set<std::string> concrete_tags;

  std::size_t find(const std::string& id) const {
    for (std::size_t n = 0; n < images.size(); ++n)
      if (images[n].id == id) return n;
    throw NotFoundError(NotFoundError::Kind::kImage, id);
  }
};

// Every problem found while loading, each tied to a file.
class DatasetError : public IngestError {
 public:
  explicit DatasetError(std::vector<IngestError> issues)
      : IngestError(issues.empty() ? "" : issues.front().path(), Summarize(issues)), issues_(std::move(issues)) {}

  const std::vector<IngestError>& issues() const { return issues_; }

 private:
  static std::string Summarize(const std::vector<IngestError>& issues) {
    std::string s = std::to_string(issues.size()) + " dataset problem(s)";
    for (std::size_t k = 0; k < issues.size() && k < 5; ++k) s += "; " + std::string(issues[k].what());
    return s;
  }
  std::vector<IngestError> issues_;
};

namespace detail {

inline nlohmann::json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(path.string(), "missing");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

inline void WriteJsonFile(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace detail

// Writes manifest.json, partscheme.json, tags.json and the per-image feature
// and segmentation files.
inline void WriteDataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (!ec) fs::create_directories(dir / "segmentation", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json images = nlohmann::json::array();
  nlohmann::json tags = nlohmann::json::object();
  for (const auto& img : ds.images) {
    const std::string feat = "features/" + img.id + ".f32";
    const std::string seg = "segmentation/" + img.id + ".seg";
    WriteFeatures(img.features, (dir / feat).string());
    WriteSegmentation(img.segmentation, (dir / seg).string());
    images.push_back({{"id", img.id}, {"features", feat}, {"segmentation", seg}});
    tags[img.id] = img.tags;
  }
  nlohmann::json manifest = {
      {"name", ds.name},
      {"partscheme", "partscheme.json"},
      {"tags", "tags.json"},
      {"grid", {{"I", ds.grid_rows}, {"J", ds.grid_cols}, {"D", ds.feature_dim}}},
      {"pixels", {{"height", ds.height}, {"width", ds.width}}},
      {"images", images},
  };
  if (!ds.tag_parts.empty()) {
    nlohmann::json truth = nlohmann::json::object();
    for (const auto& [tag, parts] : ds.tag_parts)
      truth[tag] = {{"parts", parts}, {"concrete", ds.concrete_tags.count(tag) != 0}};
    manifest["synthetic_truth"] = truth;
  }
  detail::WriteJsonFile(dir / "manifest.json", manifest);
  detail::WriteJsonFile(dir / "partscheme.json", ToJson(ds.scheme));
  detail::WriteJsonFile(dir / "tags.json", tags);
}

// Loads and validates a dataset directory. Validation is all-or-nothing: any
// problem raises DatasetError listing every failing file.
inline Dataset LoadDataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IngestError(manifest_path.string(), "manifest missing");
  nlohmann::json manifest = detail::ReadJsonFile(manifest_path);

  Dataset ds;
  std::vector<IngestError> issues;
  nlohmann::json tag_doc;
  try {
    ds.name = manifest.at("name").get<std::string>();
    ds.grid_rows = manifest.at("grid").at("I").get<std::size_t>();
    ds.grid_cols = manifest.at("grid").at("J").get<std::size_t>();
    ds.feature_dim = manifest.at("grid").at("D").get<std::size_t>();
    ds.height = manifest.at("pixels").at("height").get<std::size_t>();
    ds.width = manifest.at("pixels").at("width").get<std::size_t>();
    const fs::path scheme_path = dir / manifest.at("partscheme").get<std::string>();
    ds.scheme = PartSchemeFromJson(detail::ReadJsonFile(scheme_path), scheme_path.string());
    tag_doc = detail::ReadJsonFile(dir / manifest.at("tags").get<std::string>());
    if (manifest.contains("synthetic_truth"))
      for (const auto& [tag, info] : manifest["synthetic_truth"].items()) {
        ds.tag_parts[tag] = info.at("parts").get<std::vector<std::size_t>>();
        if (info.at("concrete").get<bool>()) ds.concrete_tags.insert(tag);
      }
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(manifest_path.string(), std::string("malformed manifest: ") + e.what());
  }
  if (ds.grid_rows == 0 || ds.grid_cols == 0 || ds.feature_dim == 0 || ds.grid_rows > ds.height ||
      ds.grid_cols > ds.width)
    throw IngestError(manifest_path.string(), "inconsistent grid/pixel dimensions");

  std::set<std::string> seen;
  for (const auto& entry : manifest.at("images")) {
    DatasetImage img;
    std::string feat_path, seg_path;
    try {
      img.id = entry.at("id").get<std::string>();
      feat_path = (dir / entry.at("features").get<std::string>()).string();
      seg_path = (dir / entry.at("segmentation").get<std::string>()).string();
    } catch (const nlohmann::json::exception& e) {
      issues.emplace_back(manifest_path.string(), std::string("bad image entry: ") + e.what());
      continue;
    }
    if (img.id.empty() || !seen.insert(img.id).second) {
      issues.emplace_back(manifest_path.string(), "empty or duplicate image id '" + img.id + "'");
      continue;
    }
    try {
      img.features = ReadFeatures(feat_path);
      if (img.features.rows != ds.grid_rows || img.features.cols != ds.grid_cols || img.features.dim != ds.feature_dim)
        issues.emplace_back(feat_path, "feature dims do not match manifest");
    } catch (const IngestError& e) {
      issues.push_back(e);
    }
    try {
      img.segmentation = ReadSegmentation(seg_path);
      if (img.segmentation.height != ds.height || img.segmentation.width != ds.width)
        issues.emplace_back(seg_path, "segmentation dims do not match manifest");
      ValidateLabels(img.segmentation, ds.scheme, seg_path);
    } catch (const IngestError& e) {
      issues.push_back(e);
    }
    const std::string tags_path = (dir / manifest.at("tags").get<std::string>()).string();
    if (!tag_doc.contains(img.id)) {
      issues.emplace_back(tags_path, "no tag list for image " + img.id);
    } else {
      try {
        img.tags = tag_doc[img.id].get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception&) {
        issues.emplace_back(tags_path, "tag list of " + img.id + " is not a string array");
      }
      for (const auto& t : img.tags)
        if (t.empty()) issues.emplace_back(tags_path, "empty tag on image " + img.id);
    }
    ds.images.push_back(std::move(img));
  }
  if (ds.images.empty() && issues.empty()) issues.emplace_back(manifest_path.string(), "dataset has no images");
  if (!issues.empty()) throw DatasetError(std::move(issues));

  std::vector<std::vector<std::string>> lists;
  for (const auto& img : ds.images) lists.push_back(img.tags);
  ds.vocab = TagVocabulary::FromTagLists(lists);
  return ds;
}

struct SynthSpec {
  std::size_t images = 512;
  std::string scheme = "pvse4";
  std::size_t tags_per_part = 16;
  std::size_t abstract_tags = 4;
  double sigma = 0.1;
  std::uint64_t seed = 1;
  std::size_t grid_rows = 8, grid_cols = 8, feature_dim = 32;
  std::size_t height = 64, width = 64;

  void validate() const {
    if (images == 0 || tags_per_part == 0 || grid_rows == 0 || grid_cols == 0 || feature_dim == 0 || height == 0 ||
        width == 0)
      throw ArgumentError("synthetic spec values must be positive");
    if (!(sigma >= 0.0)) throw ArgumentError("sigma must be >= 0");
    if (grid_rows > height || grid_cols > width) throw ArgumentError("grid finer than pixel raster");
  }
};

inline std::string ConcreteTagName(const PartScheme& scheme, std::size_t part, std::size_t c) {
  std::string p = scheme.parts()[part];
  std::transform(p.begin(), p.end(), p.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  std::string num = std::to_string(c);
  return p + "-" + (num.size() < 2 ? "0" + num : num);
}

inline std::string AbstractTagName(std::size_t a) {
  std::string num = std::to_string(a);
  return "abstract-" + (num.size() < 2 ? "0" + num : num);
}

// Planted-structure dataset. Part l fills the horizontal band of rows
// [l*H/L, (l+1)*H/L) between a background margin of W/8 columns on each
// side. Each image draws one concrete tag per part (balanced counts); a grid
// cell's feature is sum_l g'_l * prototype(l, tag_l) + N(0, sigma^2) noise.
// Abstract tag a fires when part a%L and part (a+1)%L both carry a tag from a
// designated quarter of their tag sets.
inline Dataset GenerateSynthetic(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.name = "synthetic-" + spec.scheme + "-" + std::to_string(spec.seed);
  ds.scheme = PresetScheme(spec.scheme);
  ds.grid_rows = spec.grid_rows;
  ds.grid_cols = spec.grid_cols;
  ds.feature_dim = spec.feature_dim;
  ds.height = spec.height;
  ds.width = spec.width;
  const std::size_t L = ds.scheme.num_parts(), T = spec.tags_per_part, D = spec.feature_dim;
  if (spec.height < L) throw ArgumentError("pixel height smaller than part count");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<std::vector<double>>> proto(L, std::vector<std::vector<double>>(T, std::vector<double>(D)));
  for (auto& part : proto)
    for (auto& p : part) {
      for (double& v : p) v = gauss(rng);
      p = Normalized(p);
    }

  std::vector<std::vector<std::size_t>> assign(L, std::vector<std::size_t>(spec.images));
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t n = 0; n < spec.images; ++n) assign[l][n] = n % T;
    std::shuffle(assign[l].begin(), assign[l].end(), rng);
  }

  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t c = 0; c < T; ++c) {
      std::string name = ConcreteTagName(ds.scheme, l, c);
      ds.tag_parts[name] = {l};
      ds.concrete_tags.insert(name);
    }
  const std::size_t quarter = std::max<std::size_t>(1, T / 4);
  auto designated = [&](std::size_t a, std::size_t c) { return (c + T - (a * quarter) % T) % T < quarter; };
  for (std::size_t a = 0; a < spec.abstract_tags; ++a) {
    const std::string name = AbstractTagName(a);
    std::vector<std::size_t> parts = {a % L, (a + 1) % L};
    std::sort(parts.begin(), parts.end());
    parts.erase(std::unique(parts.begin(), parts.end()), parts.end());
    ds.tag_parts[name] = parts;
  }

  SegmentationMap layout(spec.height, spec.width, ds.scheme.background_label().value_or(0));
  const std::size_t margin = spec.width / 8;
  for (std::size_t l = 0; l < L; ++l) {
    Label label = ds.scheme.representative_label(l);
    for (std::size_t r = l * spec.height / L; r < (l + 1) * spec.height / L; ++r)
      for (std::size_t c = margin; c < spec.width - margin; ++c) layout.at(r, c) = label;
  }
  GridPartFractions frac = ComputeGridPartFractions(layout, ds.scheme, spec.grid_rows, spec.grid_cols);

  const std::size_t id_width = std::max<std::size_t>(5, std::to_string(spec.images - 1).size());
  for (std::size_t n = 0; n < spec.images; ++n) {
    DatasetImage img;
    std::string num = std::to_string(n);
    img.id = "img" + std::string(id_width - num.size(), '0') + num;
    img.segmentation = layout;
    img.features = GridFeatureTensor(spec.grid_rows, spec.grid_cols, D);
    for (std::size_t i = 0; i < spec.grid_rows; ++i)
      for (std::size_t j = 0; j < spec.grid_cols; ++j) {
        auto cell = img.features.cell(i, j);
        for (std::size_t l = 0; l < L; ++l) {
          double g = frac.fraction(i, j, l);
          if (g > 0.0) Axpy(g, proto[l][assign[l][n]], cell);
        }
        for (double& v : cell) v += spec.sigma * gauss(rng);
      }
    // Stored features are 32-bit; round now so the in-memory copy matches disk.
    for (double& v : img.features.values) v = static_cast<float>(v);
    for (std::size_t l = 0; l < L; ++l) img.tags.push_back(ConcreteTagName(ds.scheme, l, assign[l][n]));
    for (std::size_t a = 0; a < spec.abstract_tags; ++a) {
      std::size_t pa = a % L, pb = (a + 1) % L;
      if (designated(a, assign[pa][n]) && designated(a, assign[pb][n])) {
        img.tags.push_back(AbstractTagName(a));
      }
    }
    ds.images.push_back(std::move(img));
  }
  for (auto it = ds.tag_parts.begin(); it != ds.tag_parts.end();) {
    bool used = false;
    for (const auto& img : ds.images)
      if (std::find(img.tags.begin(), img.tags.end(), it->first) != img.tags.end()) {
        used = true;
        break;
      }
    it = used ? std::next(it) : ds.tag_parts.erase(it);
  }
  std::vector<std::vector<std::string>> lists;
  for (const auto& img : ds.images) lists.push_back(img.tags);
  ds.vocab = TagVocabulary::FromTagLists(lists);
  return ds;
}

inline Dataset GenerateSynthetic(const SynthSpec& spec, const fs::path& dir) {
  Dataset ds = GenerateSynthetic(spec);
  WriteDataset(ds, dir);
  return ds;
}

struct CompatReport {
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty(); }
};

// D, I, J, part scheme and vocabulary agreement. Dataset tags must all be in
// the model vocabulary, in the same relative order.
inline CompatReport ValidateModelDatasetCompat(const ModelParams& model, const Dataset& ds) {
  CompatReport r;
  auto dim = [&](const char* what, std::size_t m, std::size_t d) {
    if (m != d)
      r.mismatches.push_back(std::string(what) + ": model " + std::to_string(m) + " vs dataset " + std::to_string(d));
  };
  dim("D", model.feature_dim, ds.feature_dim);
  dim("I", model.grid_rows, ds.grid_rows);
  dim("J", model.grid_cols, ds.grid_cols);
  if (!(model.scheme == ds.scheme))
    r.mismatches.push_back("part scheme: model " + model.scheme.name() + " vs dataset " + ds.scheme.name());
  long last = -1;
  bool order_ok = true;
  for (const auto& t : ds.vocab.tags()) {
    if (!model.vocab.contains(t)) {
      r.mismatches.push_back("vocabulary: dataset tag '" + t + "' unknown to model");
      continue;
    }
    long idx = static_cast<long>(model.vocab.index_of(t));
    if (idx < last) order_ok = false;
    last = idx;
  }
  if (!order_ok) r.mismatches.push_back("vocabulary: tag order differs between model and dataset");
  return r;
}

inline std::vector<TrainingSample> MakeTrainingSamples(const Dataset& ds, const ModelParams& params) {
  std::vector<TrainingSample> out;
  for (const auto& img : ds.images) {
    if (img.tags.empty()) continue;
    GridWeightMap gwm = ComputeGridWeightMap(img.segmentation, params.scheme, params.grid_rows, params.grid_cols);
    CheckFeatureShapes(img.features, gwm, params);
    out.push_back(MakeTrainingSample(img.features, gwm, params.vocab.indices_of(img.tags)));
  }
  return out;
}

inline EmbeddingIndex BuildIndex(const Dataset& ds, const ModelParams& params) {
  std::vector<IndexEntry> entries;
  for (const auto& img : ds.images)
    entries.push_back({img.id, img.features,
                       ComputeGridWeightMap(img.segmentation, params.scheme, params.grid_rows, params.grid_cols),
                       ComputeGridPartFractions(img.segmentation, params.scheme, params.grid_rows, params.grid_cols),
                       img.tags});
  return EmbeddingIndex(std::move(entries), params);
}

}  // namespace pvse

#endif  // PVSE_DATASET_HPP_
