#ifndef PVSE_MODEL_IO_HPP_
#define PVSE_MODEL_IO_HPP_

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "pvse/binary_io.hpp"
#include "pvse/embedding.hpp"

namespace pvse {

inline constexpr std::string_view kWeightsMagic = "PVSEW1";

// Writes model.json and weights.bin into dir (created if missing). Weights are
// stored as 32-bit floats.
inline void SaveModel(const ModelParams& params, const std::filesystem::path& dir) {
  params.check_shapes();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json meta = {
      {"K", params.dims_per_part},
      {"L", params.num_parts()},
      {"D", params.feature_dim},
      {"H", params.vocab_size()},
      {"I", params.grid_rows},
      {"J", params.grid_cols},
      {"scheme", ToJson(params.scheme)},
      {"vocab", {{"tags", params.vocab.tags()}, {"frequencies", params.vocab.frequencies()}}},
      {"log_base", "e"},
      {"frequency_scope", ToString(params.frequency_scope)},
      {"seed", params.seed},
  };
  {
    std::ofstream out(dir / "model.json");
    if (!out) throw IoError("cannot write " + (dir / "model.json").string());
    out << meta.dump(2) << '\n';
  }
  auto out = io::OpenOut((dir / "weights.bin").string());
  io::WriteMagic(out, kWeightsMagic);
  for (const auto& w : params.image_proj)
    for (double v : w.data()) io::WriteF32(out, static_cast<float>(v));
  for (double v : params.tag_proj.data()) io::WriteF32(out, static_cast<float>(v));
  if (!out) throw IoError("failed writing weights.bin");
}

inline ModelParams LoadModel(const std::filesystem::path& dir) {
  const std::string meta_path = (dir / "model.json").string();
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw IngestError(meta_path, "model metadata missing");
  ModelParams p;
  try {
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    if (meta.at("log_base").get<std::string>() != "e") throw IngestError(meta_path, "unsupported log base");
    p.scheme = PartSchemeFromJson(meta.at("scheme"), meta_path);
    p.vocab = TagVocabulary(meta.at("vocab").at("tags").get<std::vector<std::string>>(),
                            meta.at("vocab").at("frequencies").get<std::vector<std::uint64_t>>());
    p.dims_per_part = meta.at("K").get<std::size_t>();
    p.feature_dim = meta.at("D").get<std::size_t>();
    p.grid_rows = meta.at("I").get<std::size_t>();
    p.grid_cols = meta.at("J").get<std::size_t>();
    p.frequency_scope = ParseFrequencyScope(meta.at("frequency_scope").get<std::string>());
    p.seed = meta.at("seed").get<std::uint64_t>();
    if (meta.at("L").get<std::size_t>() != p.num_parts()) throw IngestError(meta_path, "L disagrees with scheme");
    if (meta.at("H").get<std::size_t>() != p.vocab_size()) throw IngestError(meta_path, "H disagrees with vocab");
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(meta_path, std::string("malformed model metadata: ") + e.what());
  } catch (const ArgumentError& e) {
    throw IngestError(meta_path, e.what());
  }

  const std::string weights_path = (dir / "weights.bin").string();
  auto in = io::OpenIn(weights_path);
  io::ExpectMagic(in, kWeightsMagic, weights_path);
  for (std::size_t l = 0; l < p.num_parts(); ++l) {
    Matrix w(p.feature_dim, p.dims_per_part);
    for (double& v : w.data()) v = io::ReadF32(in, weights_path);
    p.image_proj.push_back(std::move(w));
  }
  p.tag_proj = Matrix(p.vocab_size(), p.embedding_dim());
  for (double& v : p.tag_proj.data()) v = io::ReadF32(in, weights_path);
  io::ExpectEof(in, weights_path);
  for (const auto& w : p.image_proj)
    if (!AllFinite(w.data())) throw IngestError(weights_path, "non-finite weight");
  if (!AllFinite(p.tag_proj.data())) throw IngestError(weights_path, "non-finite weight");
  return p;
}

}  // namespace pvse

#endif  // PVSE_MODEL_IO_HPP_
