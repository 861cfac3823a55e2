#ifndef PVSE_SERVICE_HPP_
#define PVSE_SERVICE_HPP_

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvse/dataset.hpp"
#include "pvse/embedding.hpp"
#include "pvse/error.hpp"
#include "pvse/query.hpp"

namespace pvse {

// Immutable model + dataset + index, built once before serving.
struct ServiceSnapshot {
  ModelParams params;
  Dataset dataset;
  EmbeddingIndex index;

  static std::shared_ptr<const ServiceSnapshot> Build(ModelParams params, Dataset dataset) {
    CompatReport report = ValidateModelDatasetCompat(params, dataset);
    if (!report.ok()) {
      std::string msg = "model/dataset mismatch";
      for (const auto& m : report.mismatches) msg += "; " + m;
      throw ArgumentError(msg);
    }
    EmbeddingIndex index = BuildIndex(dataset, params);
    return std::make_shared<const ServiceSnapshot>(
        ServiceSnapshot{std::move(params), std::move(dataset), std::move(index)});
  }
};

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

inline nlohmann::json RankedJson(const std::string& query, const std::vector<RankedItem>& items) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& it : items) results.push_back({{"id", it.id}, {"score", it.score}});
  return {{"query", query}, {"results", results}};
}

inline nlohmann::json AamJson(const std::string& image_id, const std::string& tag, const AamGrid& grid) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < grid.rows; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < grid.cols; ++j) row.push_back(grid.at(i, j));
    rows.push_back(row);
  }
  return {{"image_id", image_id}, {"tag", tag}, {"I", grid.rows}, {"J", grid.cols}, {"scores", rows}};
}

// JSON-over-HTTP routing, independent of any socket layer. Every response
// body is a JSON object; failures carry {error, field}.
class ApiRouter {
 public:
  explicit ApiRouter(std::shared_ptr<const ServiceSnapshot> snapshot) : snap_(std::move(snapshot)) {}

  ApiResponse Handle(const ApiRequest& req) const {
    try {
      return Dispatch(req);
    } catch (const NotFoundError& e) {
      switch (e.kind()) {
        case NotFoundError::Kind::kTag: return Error(404, "unknown_tag", "tag", e.name());
        case NotFoundError::Kind::kImage: return Error(404, "unknown_image", "image_id", e.name());
        case NotFoundError::Kind::kPart: return Error(400, "unknown_part", "parts", e.name());
      }
      return Error(404, "not_found", "", e.what());
    } catch (const BadField& e) {
      return Error(400, e.code, e.field, e.detail);
    } catch (const nlohmann::json::exception& e) {
      return Error(400, "malformed_body", "", e.what());
    } catch (const ArgumentError& e) {
      return Error(400, "invalid_argument", "", e.what());
    }
  }

 private:
  struct BadField {
    std::string code, field, detail;
  };

  static ApiResponse Error(int status, const std::string& code, const std::string& field, const std::string& detail) {
    return {status, {{"error", code}, {"field", field}, {"detail", detail}}};
  }

  static std::vector<std::string> SplitPath(const std::string& path) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= path.size()) {
      std::size_t end = path.find('/', start);
      if (end == std::string::npos) end = path.size();
      if (end > start) parts.push_back(path.substr(start, end - start));
      start = end + 1;
    }
    return parts;
  }

  static nlohmann::json ParseBody(const std::string& body) {
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw BadField{"malformed_body", "", "request body must be a JSON object"};
    return j;
  }

  template <typename T>
  static T Field(const nlohmann::json& j, const std::string& name, std::optional<T> fallback = std::nullopt) {
    if (!j.contains(name) || j[name].is_null()) {
      if (fallback) return *fallback;
      throw BadField{"missing_field", name, "required field"};
    }
    try {
      return j[name].get<T>();
    } catch (const nlohmann::json::exception&) {
      throw BadField{"invalid_field", name, "wrong type"};
    }
  }

  static std::size_t TopM(const nlohmann::json& j, std::size_t fallback) {
    if (!j.contains("top_m")) return fallback;
    if (!j["top_m"].is_number_integer() || j["top_m"].get<long>() < 1) throw BadField{"invalid_field", "top_m", "must be >= 1"};
    return j["top_m"].get<std::size_t>();
  }

  ApiResponse Dispatch(const ApiRequest& req) const {
    const auto seg = SplitPath(req.path);
    if (seg.empty() || seg[0] != "api") return Error(404, "no_route", "", req.path);
    const ServiceSnapshot& s = *snap_;
    if (req.method == "GET" && seg.size() == 2 && seg[1] == "meta") return Meta();
    if (req.method == "GET" && seg.size() == 4 && seg[1] == "images" && seg[3] == "tags") {
      const auto& img = s.dataset.images[s.dataset.find(seg[2])];
      return {200, {{"id", img.id}, {"tags", img.tags}}};
    }
    if (req.method == "POST" && seg.size() == 2 && seg[1] == "retrieve") return RetrieveRoute(ParseBody(req.body));
    if (req.method == "POST" && seg.size() == 2 && seg[1] == "reorder") return ReorderRoute(ParseBody(req.body));
    if (req.method == "GET" && seg.size() == 3 && seg[1] == "aam") {
      auto it = req.query.find("tag");
      if (it == req.query.end() || it->second.empty()) throw BadField{"missing_field", "tag", "query parameter"};
      return {200, AamJson(seg[2], it->second, ComputeAam(s.index, s.params, seg[2], it->second))};
    }
    if (req.method == "GET" && seg.size() == 3 && seg[1] == "segmentation") return Segmentation(seg[2]);
    return Error(404, "no_route", "", req.method + " " + req.path);
  }

  ApiResponse Meta() const {
    const ServiceSnapshot& s = *snap_;
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& img : s.dataset.images) ids.push_back(img.id);
    return {200,
            {{"scheme", ToJson(s.params.scheme)},
             {"parts", s.params.scheme.parts()},
             {"vocab", s.params.vocab.tags()},
             {"image_ids", ids},
             {"K", s.params.dims_per_part},
             {"L", s.params.num_parts()},
             {"I", s.params.grid_rows},
             {"J", s.params.grid_cols}}};
  }

  ApiResponse RetrieveRoute(const nlohmann::json& body) const {
    const ServiceSnapshot& s = *snap_;
    auto query = Field<std::string>(body, "query_image_id");
    auto pos = Field<std::vector<std::string>>(body, "pos_tags", std::vector<std::string>{});
    auto neg = Field<std::vector<std::string>>(body, "neg_tags", std::vector<std::string>{});
    auto parts = Field<std::vector<std::string>>(body, "parts", std::vector<std::string>{});
    RetrieveOptions opts{TopM(body, 5), true};
    if (parts.empty()) return {200, RankedJson(query, Retrieve(s.index, s.params, query, pos, neg, opts))};
    if (pos.empty()) throw BadField{"missing_field", "pos_tags", "part-masked retrieval needs a positive tag"};
    if (!neg.empty()) throw BadField{"invalid_field", "neg_tags", "negative tags are not used with parts"};
    PartMask mask = PartMask::FromNames(parts, s.params);
    return {200, RankedJson(query, RetrievePartMasked(s.index, s.params, query, pos, mask, opts))};
  }

  ApiResponse ReorderRoute(const nlohmann::json& body) const {
    const ServiceSnapshot& s = *snap_;
    auto tag = Field<std::string>(body, "tag");
    auto parts = Field<std::vector<std::string>>(body, "parts", std::vector<std::string>{});
    ReorderOptions opts;
    opts.restrict_to_tagged = Field<bool>(body, "restrict_to_tagged", true);
    opts.top_m = TopM(body, 0);
    if (!parts.empty()) opts.mask = PartMask::FromNames(parts, s.params);
    return {200, RankedJson(tag, Reorder(s.index, s.params, tag, opts))};
  }

  ApiResponse Segmentation(const std::string& id) const {
    const ServiceSnapshot& s = *snap_;
    const auto& img = s.dataset.images[s.dataset.find(id)];
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < img.segmentation.height; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t c = 0; c < img.segmentation.width; ++c) row.push_back(img.segmentation.at(r, c));
      rows.push_back(row);
    }
    return {200,
            {{"id", id},
             {"height", img.segmentation.height},
             {"width", img.segmentation.width},
             {"labels", rows},
             {"label_to_part", ToJson(s.params.scheme)["label_to_part"]}}};
  }

  std::shared_ptr<const ServiceSnapshot> snap_;
};

}  // namespace pvse

#endif  // PVSE_SERVICE_HPP_
