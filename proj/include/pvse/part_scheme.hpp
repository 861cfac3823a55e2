#ifndef PVSE_PART_SCHEME_HPP_
#define PVSE_PART_SCHEME_HPP_

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pvse/error.hpp"

namespace pvse {

using Label = std::uint8_t;

// Ordered set of body parts and the mapping from raw segmentation labels onto
// them. A label mapped to std::nullopt is background.
class PartScheme {
 public:
  PartScheme() = default;
  PartScheme(std::string name, std::vector<std::string> parts,
             std::map<Label, std::optional<std::size_t>> label_to_part)
      : name_(std::move(name)), parts_(std::move(parts)), label_to_part_(std::move(label_to_part)) {
    Validate();
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& parts() const { return parts_; }
  std::size_t num_parts() const { return parts_.size(); }
  const std::map<Label, std::optional<std::size_t>>& label_to_part() const { return label_to_part_; }

  bool knows_label(Label label) const { return label_to_part_.count(label) != 0; }

  // Part index of a raw label, or nullopt for background. Throws IngestError
  // for labels outside the scheme's domain.
  std::optional<std::size_t> part_of(Label label) const {
    auto it = label_to_part_.find(label);
    if (it == label_to_part_.end())
      throw IngestError("", "unknown segmentation label " + std::to_string(label));
    return it->second;
  }

  // Case-insensitive part lookup.
  std::optional<std::size_t> find_part(const std::string& name) const {
    for (std::size_t l = 0; l < parts_.size(); ++l)
      if (EqualsIgnoreCase(parts_[l], name)) return l;
    return std::nullopt;
  }

  std::size_t part_index(const std::string& name) const {
    auto l = find_part(name);
    if (!l) throw NotFoundError(NotFoundError::Kind::kPart, name);
    return *l;
  }

  // Smallest raw label that maps onto part l.
  Label representative_label(std::size_t l) const {
    for (const auto& [label, part] : label_to_part_)
      if (part && *part == l) return label;
    throw ArgumentError("part " + parts_.at(l) + " has no labels");
  }

  std::optional<Label> background_label() const {
    for (const auto& [label, part] : label_to_part_)
      if (!part) return label;
    return std::nullopt;
  }

  bool operator==(const PartScheme&) const = default;

  static bool EqualsIgnoreCase(const std::string& a, const std::string& b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
             return std::tolower(x) == std::tolower(y);
           });
  }

 private:
  void Validate() const {
    if (parts_.empty()) throw ArgumentError("part scheme needs at least one part");
    std::set<std::string> seen;
    for (const auto& p : parts_) {
      if (p.empty()) throw ArgumentError("empty part name");
      std::string lower(p);
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (!seen.insert(lower).second) throw ArgumentError("duplicate part name " + p);
    }
    for (const auto& [label, part] : label_to_part_)
      if (part && *part >= parts_.size())
        throw ArgumentError("label " + std::to_string(label) + " maps to part out of range");
  }

  std::string name_;
  std::vector<std::string> parts_;
  std::map<Label, std::optional<std::size_t>> label_to_part_;
};

// Raw label ids of the 20-class LIP human parsing set.
namespace lip {
enum : Label {
  kBackground = 0, kHat, kHair, kGlove, kSunglasses, kUpperClothes, kDress, kCoat, kSocks,
  kPants, kJumpsuits, kScarf, kSkirt, kFace, kLeftArm, kRightArm, kLeftLeg, kRightLeg,
  kLeftShoe, kRightShoe, kNumLabels
};
}  // namespace lip

namespace detail {

inline PartScheme BuildLipScheme(std::string name, std::vector<std::string> parts,
                                 const std::vector<std::pair<std::string, std::vector<Label>>>& groups) {
  std::map<Label, std::optional<std::size_t>> map;
  map[lip::kBackground] = std::nullopt;
  for (const auto& [part, labels] : groups) {
    auto idx = static_cast<std::size_t>(std::find(parts.begin(), parts.end(), part) - parts.begin());
    for (Label label : labels) map[label] = idx;
  }
  for (Label l = 0; l < lip::kNumLabels; ++l)
    if (!map.count(l)) throw ArgumentError("preset leaves label unmapped");
  return PartScheme(std::move(name), std::move(parts), std::move(map));
}

}  // namespace detail

inline PartScheme Pvse4Scheme() {
  using namespace lip;
  return detail::BuildLipScheme(
      "pvse4", {"Head", "Upper-body", "Lower-body", "Shoes"},
      {{"Head", {kHat, kHair, kSunglasses, kFace}},
       {"Upper-body", {kUpperClothes, kGlove, kDress, kCoat, kJumpsuits, kScarf, kLeftArm, kRightArm}},
       {"Lower-body", {kPants, kSkirt, kLeftLeg, kRightLeg}},
       {"Shoes", {kSocks, kLeftShoe, kRightShoe}}});
}

inline PartScheme Pvse8Scheme() {
  using namespace lip;
  return detail::BuildLipScheme(
      "pvse8", {"Head", "Upper-body", "Dress", "Coat", "Lower-body", "Arm", "Leg", "Shoes"},
      {{"Head", {kHat, kHair, kSunglasses, kFace}},
       {"Upper-body", {kUpperClothes, kScarf}},
       {"Dress", {kDress, kJumpsuits}},
       {"Coat", {kCoat}},
       {"Lower-body", {kPants, kSkirt}},
       {"Arm", {kGlove, kLeftArm, kRightArm}},
       {"Leg", {kLeftLeg, kRightLeg}},
       {"Shoes", {kSocks, kLeftShoe, kRightShoe}}});
}

inline PartScheme Pvse16Scheme() {
  using namespace lip;
  return detail::BuildLipScheme(
      "pvse16",
      {"Hat", "Hair", "Glove", "Sunglasses", "Upper-body", "Dress", "Coat", "Socks", "Pants",
       "Jumpsuits", "Skirt", "Face", "Arm", "Leg", "Left-shoe", "Right-shoe"},
      {{"Hat", {kHat}}, {"Hair", {kHair}}, {"Glove", {kGlove}}, {"Sunglasses", {kSunglasses}},
       {"Upper-body", {kUpperClothes, kScarf}}, {"Dress", {kDress}}, {"Coat", {kCoat}},
       {"Socks", {kSocks}}, {"Pants", {kPants}}, {"Jumpsuits", {kJumpsuits}}, {"Skirt", {kSkirt}},
       {"Face", {kFace}}, {"Arm", {kLeftArm, kRightArm}}, {"Leg", {kLeftLeg, kRightLeg}},
       {"Left-shoe", {kLeftShoe}}, {"Right-shoe", {kRightShoe}}});
}

// Every LIP foreground label on one part; the plain single-embedding model.
inline PartScheme SinglePartScheme() {
  std::map<Label, std::optional<std::size_t>> map;
  map[lip::kBackground] = std::nullopt;
  for (Label l = 1; l < lip::kNumLabels; ++l) map[l] = 0;
  return PartScheme("vse", {"Foreground"}, std::move(map));
}

inline PartScheme PresetScheme(const std::string& name) {
  if (name == "pvse4") return Pvse4Scheme();
  if (name == "pvse8") return Pvse8Scheme();
  if (name == "pvse16") return Pvse16Scheme();
  if (name == "vse") return SinglePartScheme();
  throw ArgumentError("unknown part scheme preset: " + name);
}

// The four coarse categories {Head, Upper-body, Lower-body, Shoes} expressed
// as part-index sets of a scheme. Schemes that are not presets get one
// category per part.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> CoarseCategories(
    const PartScheme& scheme) {
  using Names = std::vector<std::string>;
  std::vector<std::pair<std::string, Names>> named;
  if (scheme.name() == "pvse4") {
    named = {{"Head", {"Head"}}, {"Upper-body", {"Upper-body"}},
             {"Lower-body", {"Lower-body"}}, {"Shoes", {"Shoes"}}};
  } else if (scheme.name() == "pvse8") {
    named = {{"Head", {"Head"}}, {"Upper-body", {"Upper-body", "Dress", "Coat"}},
             {"Lower-body", {"Lower-body"}}, {"Shoes", {"Shoes"}}};
  } else if (scheme.name() == "pvse16") {
    named = {{"Head", {"Hat", "Hair", "Sunglasses", "Face"}},
             {"Upper-body", {"Upper-body", "Dress", "Coat", "Jumpsuits"}},
             {"Lower-body", {"Pants", "Skirt"}},
             {"Shoes", {"Left-shoe", "Right-shoe"}}};
  } else {
    for (const auto& p : scheme.parts()) named.push_back({p, {p}});
  }
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  for (const auto& [cat, parts] : named) {
    std::vector<std::size_t> idx;
    for (const auto& p : parts) idx.push_back(scheme.part_index(p));
    out.emplace_back(cat, std::move(idx));
  }
  return out;
}

inline nlohmann::json ToJson(const PartScheme& scheme) {
  nlohmann::json map = nlohmann::json::object();
  for (const auto& [label, part] : scheme.label_to_part())
    map[std::to_string(label)] = part ? scheme.parts()[*part] : std::string("background");
  return {{"name", scheme.name()}, {"parts", scheme.parts()}, {"label_to_part", map}};
}

inline PartScheme PartSchemeFromJson(const nlohmann::json& j, const std::string& path = "") {
  try {
    std::vector<std::string> parts = j.at("parts").get<std::vector<std::string>>();
    std::map<Label, std::optional<std::size_t>> map;
    for (const auto& [key, value] : j.at("label_to_part").items()) {
      std::size_t consumed = 0;
      unsigned long label = std::stoul(key, &consumed);
      if (consumed != key.size() || label > 255) throw IngestError(path, "bad label key '" + key + "'");
      std::string target = value.get<std::string>();
      if (target == "background") {
        map[static_cast<Label>(label)] = std::nullopt;
        continue;
      }
      auto it = std::find(parts.begin(), parts.end(), target);
      if (it == parts.end()) throw IngestError(path, "label " + key + " maps to unknown part '" + target + "'");
      map[static_cast<Label>(label)] = static_cast<std::size_t>(it - parts.begin());
    }
    return PartScheme(j.at("name").get<std::string>(), std::move(parts), std::move(map));
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(path, std::string("malformed part scheme: ") + e.what());
  } catch (const ArgumentError& e) {
    throw IngestError(path, e.what());
  } catch (const std::invalid_argument&) {
    throw IngestError(path, "non-numeric label key");
  }
}

}  // namespace pvse

#endif  // PVSE_PART_SCHEME_HPP_
