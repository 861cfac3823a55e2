// pvse: command-line front end for training, evaluation, queries and the
// HTTP service.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "pvse/pvse.hpp"

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  std::string data;
  std::string model;
  std::string out;
  bool json = false;
};

std::vector<std::string> SplitCommas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void Require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

// Re-reads the dataset's segmentation under another scheme when every label
// it uses is known there.
void ApplyScheme(pvse::Dataset& ds, const pvse::PartScheme& scheme) {
  if (ds.scheme == scheme) return;
  for (const auto& img : ds.images) pvse::ValidateLabels(img.segmentation, scheme, img.id);
  ds.scheme = scheme;
  ds.tag_parts.clear();
  ds.concrete_tags.clear();
}

pvse::Dataset LoadDataForModel(const Globals& g, const pvse::ModelParams& model) {
  Require(g.data, "--data");
  pvse::Dataset ds = pvse::LoadDataset(g.data);
  ApplyScheme(ds, model.scheme);
  pvse::CompatReport report = pvse::ValidateModelDatasetCompat(model, ds);
  if (!report.ok()) {
    std::string msg = "model/dataset mismatch";
    for (const auto& m : report.mismatches) msg += "\n  " + m;
    throw pvse::IngestError(g.data, msg);
  }
  return ds;
}

pvse::ModelParams LoadModelFlag(const Globals& g) {
  Require(g.model, "--model");
  return pvse::LoadModel(g.model);
}

// Writes to --out when set, otherwise stdout.
void Emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(g.out);
  if (!out) throw pvse::IoError("cannot write " + g.out);
  out << text;
}

void PrintRanked(const nlohmann::json& ranked, bool json) {
  if (json) {
    std::cout << ranked.dump(2) << '\n';
    return;
  }
  for (const auto& r : ranked["results"]) std::cout << r["id"].get<std::string>() << '\t' << r["score"].get<double>() << '\n';
}

std::vector<std::string> DefaultEvalTags(const pvse::Dataset& ds) {
  if (!ds.concrete_tags.empty()) return {ds.concrete_tags.begin(), ds.concrete_tags.end()};
  return ds.vocab.tags();
}

struct TrainFlags {
  std::size_t epochs = 50;
  std::size_t batch = 32;
  double lr = 0.01;
  std::size_t halve_every = 5;
  std::string loss = "npair_angular";
  double lambda = 2.0;
  double alpha_deg = 36.0;
  double margin = 0.2;
  std::size_t kl = 128;
  std::string scheme = "pvse4";
  std::string frequency_scope = "dataset";
  double init_gain = pvse::kDefaultInitGain;

  void Register(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "training epochs")->capture_default_str();
    cmd->add_option("--batch", batch, "positive pairs per batch")->capture_default_str();
    cmd->add_option("--lr", lr, "initial learning rate")->capture_default_str();
    cmd->add_option("--halve-every", halve_every, "epochs between learning-rate halvings")->capture_default_str();
    cmd->add_option("--loss", loss, "triplet|npair|single_angular|batch_angular|npair_angular")->capture_default_str();
    cmd->add_option("--lambda", lambda, "weight of the batch angular term")->capture_default_str();
    cmd->add_option("--alpha-deg", alpha_deg, "angular margin in degrees")->capture_default_str();
    cmd->add_option("--margin", margin, "triplet margin")->capture_default_str();
    cmd->add_option("--kl", kl, "embedding dimension K*L")->capture_default_str();
    cmd->add_option("--scheme", scheme, "part scheme preset, or 'dataset' for the dataset's own")->capture_default_str();
    cmd->add_option("--frequency-scope", frequency_scope, "dataset|minibatch")->capture_default_str();
    cmd->add_option("--init-gain", init_gain, "scale of the uniform initialisation")->capture_default_str();
  }

  pvse::TrainConfig Train(std::uint64_t seed) const { return {epochs, batch, lr, halve_every, seed}; }

  pvse::LossConfig Loss() const {
    pvse::LossConfig c;
    try {
      c.variant = pvse::ParseLossVariant(loss);
    } catch (const pvse::ArgumentError& e) {
      throw UsageError(e.what());
    }
    c.lambda = lambda;
    c.alpha_deg = alpha_deg;
    c.triplet_margin = margin;
    return c;
  }

  pvse::ModelShape Shape() const {
    pvse::ModelShape s;
    s.embedding_dim = kl;
    try {
      s.frequency_scope = pvse::ParseFrequencyScope(frequency_scope);
    } catch (const pvse::ArgumentError& e) {
      throw UsageError(e.what());
    }
    s.init_gain = init_gain;
    return s;
  }

  void ApplySchemeOverride(pvse::Dataset& ds) const {
    if (scheme == "dataset") return;
    pvse::PartScheme preset;
    try {
      preset = pvse::PresetScheme(scheme);
    } catch (const pvse::ArgumentError& e) {
      throw UsageError(e.what());
    }
    ApplyScheme(ds, preset);
  }
};

void WriteTrace(const fs::path& path, const pvse::TrainResult& r) {
  std::ofstream out(path);
  if (!out) throw pvse::IoError("cannot write " + path.string());
  out << "epoch,batch,lr,loss\n";
  out.precision(17);
  for (const auto& t : r.trace) out << t.epoch << ',' << t.batch << ',' << t.lr << ',' << t.loss << '\n';
}

void RunServer(const Globals& g, const std::string& host, int port, const std::string& static_dir,
               const std::vector<std::string>& cors) {
  pvse::ModelParams model = LoadModelFlag(g);
  pvse::Dataset ds = LoadDataForModel(g, model);
  auto snapshot = pvse::ServiceSnapshot::Build(std::move(model), std::move(ds));
  pvse::ApiRouter router(snapshot);

  httplib::Server server;
  auto handle = [&router, &cors](const httplib::Request& req, httplib::Response& res) {
    pvse::ApiRequest api{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) api.query.emplace(k, v);
    pvse::ApiResponse out = router.Handle(api);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
    std::string origin = req.get_header_value("Origin");
    if (!origin.empty() && std::find(cors.begin(), cors.end(), origin) != cors.end())
      res.set_header("Access-Control-Allow-Origin", origin);
  };
  server.Get(R"(/api/.*)", handle);
  server.Post(R"(/api/.*)", handle);
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir))
    throw pvse::IngestError(static_dir, "static directory not found");
  std::cerr << "serving on http://" << host << ':' << port << '\n';
  if (!server.listen(host, port)) throw pvse::IoError("cannot bind " + host + ":" + std::to_string(port));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial visual-semantic embedding toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--data", g.data, "dataset directory");
  app.add_option("--model", g.model, "model directory");
  app.add_option("--out", g.out, "output path");
  app.add_flag("--json", g.json, "machine-readable output");

  // synth
  pvse::SynthSpec synth;
  std::size_t grid = 8;
  std::size_t pixels = 64;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--images", synth.images)->capture_default_str();
  synth_cmd->add_option("--scheme", synth.scheme)->capture_default_str();
  synth_cmd->add_option("--tags-per-part", synth.tags_per_part)->capture_default_str();
  synth_cmd->add_option("--abstract-tags", synth.abstract_tags)->capture_default_str();
  synth_cmd->add_option("--sigma", synth.sigma)->capture_default_str();
  synth_cmd->add_option("--dim", synth.feature_dim, "feature dimension D")->capture_default_str();
  synth_cmd->add_option("--grid", grid, "grid size I=J")->capture_default_str();
  synth_cmd->add_option("--pixels", pixels, "image height=width in pixels")->capture_default_str();

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "validate a dataset (and model compatibility)");

  // train
  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train.Register(train_cmd);

  // eval-tags
  std::string eval_tags, m_list = "5,10,15";
  std::size_t ratio = 10, repeats = 30;
  auto* eval_tags_cmd = app.add_subcommand("eval-tags", "tag-to-image retrieval accuracy");
  eval_tags_cmd->add_option("--tags", eval_tags, "comma-separated tags (default: planted or all)");
  eval_tags_cmd->add_option("--m", m_list, "comma-separated cut-offs")->capture_default_str();
  eval_tags_cmd->add_option("--ratio", ratio, "negatives per positive")->capture_default_str();
  eval_tags_cmd->add_option("--repeats", repeats)->capture_default_str();

  // eval-regions
  std::size_t region_m = 5;
  std::string categories_path;
  bool permuted = false;
  auto* eval_regions_cmd = app.add_subcommand("eval-regions", "region attention accuracy");
  eval_regions_cmd->add_option("--m", region_m)->capture_default_str();
  eval_regions_cmd->add_option("--categories", categories_path,
                               "JSON {category: {parts: [...], tags: [...]}} (default: synthetic truth)");
  eval_regions_cmd->add_flag("--permuted", permuted, "permuted-tag control");

  // ablate-loss
  TrainFlags ablate;
  std::string variants = "triplet,npair,single_angular,batch_angular,npair_angular";
  std::string ablate_tags;
  auto* ablate_cmd = app.add_subcommand("ablate-loss", "train one model per loss and compare");
  ablate.Register(ablate_cmd);
  ablate_cmd->add_option("--variants", variants)->capture_default_str();
  ablate_cmd->add_option("--tags", ablate_tags);
  ablate_cmd->add_option("--ratio", ratio, "negatives per positive")->capture_default_str();
  ablate_cmd->add_option("--repeats", repeats)->capture_default_str();

  // retrieve
  std::string query_image, parts;
  std::vector<std::string> pos_tags, neg_tags;
  std::size_t top = 5;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "retrieve images by image +/- tags");
  retrieve_cmd->add_option("--query-image", query_image)->required();
  retrieve_cmd->add_option("--pos-tag", pos_tags)->take_all()->allow_extra_args(false);
  retrieve_cmd->add_option("--neg-tag", neg_tags)->take_all()->allow_extra_args(false);
  retrieve_cmd->add_option("--parts", parts, "comma-separated parts to change");
  retrieve_cmd->add_option("--top", top)->capture_default_str();

  // reorder
  std::string reorder_tag, reorder_parts;
  bool all_images = false;
  std::size_t reorder_top = 0;
  auto* reorder_cmd = app.add_subcommand("reorder", "order images by relevance to a tag");
  reorder_cmd->add_option("--tag", reorder_tag)->required();
  reorder_cmd->add_option("--parts", reorder_parts);
  reorder_cmd->add_flag("--all-images", all_images, "score untagged images too");
  reorder_cmd->add_option("--top", reorder_top, "0 = all")->capture_default_str();

  // aam
  std::string aam_image, aam_tag;
  auto* aam_cmd = app.add_subcommand("aam", "attribute activation map");
  aam_cmd->add_option("--image", aam_image)->required();
  aam_cmd->add_option("--tag", aam_tag)->required();

  // serve
  std::string host = "127.0.0.1", static_dir, cors;
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "serve the query API over HTTP");
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();
  serve_cmd->add_option("--static", static_dir, "console bundle directory");
  serve_cmd->add_option("--cors", cors, "comma-separated allowed origins");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth_cmd->parsed()) {
      std::string dir = g.out.empty() ? g.data : g.out;
      Require(dir, "--out or --data");
      synth.seed = g.seed;
      synth.grid_rows = synth.grid_cols = grid;
      synth.height = synth.width = pixels;
      try {
        synth.validate();
      } catch (const pvse::ArgumentError& e) {
        throw UsageError(e.what());
      }
      pvse::Dataset ds = pvse::GenerateSynthetic(synth, dir);
      std::cout << "wrote " << ds.images.size() << " images, " << ds.vocab.size() << " tags to " << dir << '\n';
    } else if (validate_cmd->parsed()) {
      Require(g.data, "--data");
      pvse::Dataset ds = pvse::LoadDataset(g.data);
      nlohmann::json report = {{"dataset", ds.name}, {"images", ds.images.size()}, {"tags", ds.vocab.size()},
                               {"ok", true}};
      if (!g.model.empty()) {
        pvse::ModelParams model = pvse::LoadModel(g.model);
        pvse::CompatReport compat = pvse::ValidateModelDatasetCompat(model, ds);
        report["ok"] = compat.ok();
        report["mismatches"] = compat.mismatches;
      }
      if (g.json) {
        std::cout << report.dump(2) << '\n';
      } else {
        std::cout << (report["ok"].get<bool>() ? "ok" : "MISMATCH") << ": " << ds.images.size() << " images, "
                  << ds.vocab.size() << " tags\n";
        if (report.contains("mismatches"))
          for (const auto& m : report["mismatches"]) std::cout << "  " << m.get<std::string>() << '\n';
      }
      return report["ok"].get<bool>() ? 0 : 2;
    } else if (train_cmd->parsed()) {
      Require(g.data, "--data");
      std::string dir = g.model.empty() ? g.out : g.model;
      Require(dir, "--model or --out");
      pvse::ModelShape shape = train.Shape();
      pvse::LossConfig loss = train.Loss();
      pvse::Dataset ds = pvse::LoadDataset(g.data);
      train.ApplySchemeOverride(ds);
      pvse::TrainResult r = pvse::TrainOnDataset(ds, shape, train.Train(g.seed), loss);
      pvse::SaveModel(r.params, dir);
      WriteTrace(fs::path(dir) / "trace.csv", r);
      std::cout << "trained " << r.epoch_mean_loss.size() << " epochs, final mean loss "
                << r.epoch_mean_loss.back() << "; model in " << dir << '\n';
    } else if (eval_tags_cmd->parsed()) {
      pvse::ModelParams model = LoadModelFlag(g);
      pvse::Dataset ds = LoadDataForModel(g, model);
      pvse::EmbeddingIndex index = pvse::BuildIndex(ds, model);
      pvse::TrialSpec spec;
      spec.m_values.clear();
      for (const auto& m : SplitCommas(m_list)) spec.m_values.push_back(std::stoul(m));
      spec.negative_ratio = ratio;
      spec.repeats = repeats;
      spec.seed = g.seed;
      auto tags = eval_tags.empty() ? DefaultEvalTags(ds) : SplitCommas(eval_tags);
      pvse::TagTable table = pvse::TagRetrievalTable(index, model, tags, spec);
      std::ostringstream text;
      if (g.json) text << pvse::ToJson(table).dump(2) << '\n';
      else pvse::WriteTagTableCsv(text, table);
      Emit(g, text.str());
    } else if (eval_regions_cmd->parsed()) {
      pvse::ModelParams model = LoadModelFlag(g);
      pvse::Dataset ds = LoadDataForModel(g, model);
      pvse::EmbeddingIndex index = pvse::BuildIndex(ds, model);
      pvse::RegionEvalSpec spec;
      if (!categories_path.empty()) {
        std::ifstream in(categories_path);
        if (!in) throw pvse::IngestError(categories_path, "missing");
        nlohmann::json doc = nlohmann::json::parse(in);
        for (const auto& [name, cat] : doc.items()) {
          pvse::RegionCategory c{name, {}, cat.at("tags").get<std::vector<std::string>>()};
          for (const auto& p : cat.at("parts").get<std::vector<std::string>>()) c.parts.push_back(model.scheme.part_index(p));
          spec.categories.push_back(std::move(c));
        }
      } else {
        if (ds.tag_parts.empty()) throw UsageError("--categories is required for datasets without planted tags");
        spec = pvse::SyntheticRegionSpec(ds);
      }
      spec.m = region_m;
      if (permuted) spec = pvse::PermutedTagSpec(spec);
      auto rows = pvse::RegionAttentionTrial(index, model, spec);
      std::ostringstream text;
      if (g.json) text << pvse::ToJson(rows, region_m).dump(2) << '\n';
      else pvse::WriteRegionCsv(text, rows, region_m);
      Emit(g, text.str());
    } else if (ablate_cmd->parsed()) {
      Require(g.data, "--data");
      std::vector<pvse::LossVariant> vs;
      for (const auto& v : SplitCommas(variants)) {
        try {
          vs.push_back(pvse::ParseLossVariant(v));
        } catch (const pvse::ArgumentError& e) {
          throw UsageError(e.what());
        }
      }
      pvse::ModelShape shape = ablate.Shape();
      pvse::LossConfig loss = ablate.Loss();
      pvse::Dataset ds = pvse::LoadDataset(g.data);
      ablate.ApplySchemeOverride(ds);
      pvse::TrialSpec trial;
      trial.repeats = repeats;
      trial.negative_ratio = ratio;
      trial.seed = g.seed;
      auto tags = ablate_tags.empty() ? DefaultEvalTags(ds) : SplitCommas(ablate_tags);
      auto rows = pvse::LossAblation(ds, shape, ablate.Train(g.seed), loss, vs, tags, trial);
      std::ostringstream text;
      if (g.json) text << pvse::ToJson(rows).dump(2) << '\n';
      else pvse::WriteAblationCsv(text, rows);
      Emit(g, text.str());
    } else if (retrieve_cmd->parsed()) {
      auto part_list = SplitCommas(parts);
      if (!part_list.empty() && pos_tags.empty())
        throw UsageError("--parts requires at least one --pos-tag");
      if (!part_list.empty() && !neg_tags.empty()) throw UsageError("--neg-tag cannot be combined with --parts");
      pvse::ModelParams model = LoadModelFlag(g);
      pvse::Dataset ds = LoadDataForModel(g, model);
      pvse::EmbeddingIndex index = pvse::BuildIndex(ds, model);
      pvse::RetrieveOptions opts{top, true};
      std::vector<pvse::RankedItem> ranked;
      if (part_list.empty()) {
        ranked = pvse::Retrieve(index, model, query_image, pos_tags, neg_tags, opts);
      } else {
        pvse::PartMask mask;
        try {
          mask = pvse::PartMask::FromNames(part_list, model);
        } catch (const pvse::NotFoundError& e) {
          throw UsageError(e.what());
        }
        ranked = pvse::RetrievePartMasked(index, model, query_image, pos_tags, mask, opts);
      }
      PrintRanked(pvse::RankedJson(query_image, ranked), g.json);
    } else if (reorder_cmd->parsed()) {
      pvse::ModelParams model = LoadModelFlag(g);
      pvse::Dataset ds = LoadDataForModel(g, model);
      pvse::EmbeddingIndex index = pvse::BuildIndex(ds, model);
      pvse::ReorderOptions opts;
      opts.restrict_to_tagged = !all_images;
      opts.top_m = reorder_top;
      if (!reorder_parts.empty()) {
        try {
          opts.mask = pvse::PartMask::FromNames(SplitCommas(reorder_parts), model);
        } catch (const pvse::NotFoundError& e) {
          throw UsageError(e.what());
        }
      }
      PrintRanked(pvse::RankedJson(reorder_tag, pvse::Reorder(index, model, reorder_tag, opts)), g.json);
    } else if (aam_cmd->parsed()) {
      pvse::ModelParams model = LoadModelFlag(g);
      pvse::Dataset ds = LoadDataForModel(g, model);
      pvse::EmbeddingIndex index = pvse::BuildIndex(ds, model);
      nlohmann::json out = pvse::AamJson(aam_image, aam_tag, pvse::ComputeAam(index, model, aam_image, aam_tag));
      if (g.json) {
        std::cout << out.dump(2) << '\n';
      } else {
        for (const auto& row : out["scores"]) {
          for (std::size_t j = 0; j < row.size(); ++j) std::cout << (j ? "\t" : "") << row[j].get<double>();
          std::cout << '\n';
        }
      }
    } else if (serve_cmd->parsed()) {
      RunServer(g, host, port, static_dir, SplitCommas(cors));
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const pvse::ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const pvse::DatasetError& e) {
    std::cerr << "dataset error:\n";
    for (const auto& issue : e.issues()) std::cerr << "  " << issue.what() << '\n';
    return 2;
  } catch (const pvse::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: bad number: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
