#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

namespace pvse {
namespace {

using testing::ReadFile;
using testing::TempDir;

SynthSpec SmallSpec() {
  SynthSpec s;
  s.images = 32;
  s.tags_per_part = 4;
  s.abstract_tags = 2;
  s.feature_dim = 6;
  return s;
}

TEST(LoadDataset, EmptyDirectoryReportsMissingManifest) {
  TempDir dir;
  try {
    LoadDataset(dir.path());
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.reason(), "manifest missing");
  }
}

TEST(LoadDataset, OneImageFixture) {
  TempDir dir;
  Dataset ds;
  ds.name = "one";
  ds.scheme = Pvse4Scheme();
  ds.grid_rows = ds.grid_cols = 2;
  ds.feature_dim = 3;
  ds.height = ds.width = 4;
  DatasetImage img{"solo", GridFeatureTensor(2, 2, 3), SegmentationMap(4, 4, lip::kFace), {"red", "hat", "cap"}};
  ds.images.push_back(img);
  WriteDataset(ds, dir.path());
  Dataset back = LoadDataset(dir.path());
  EXPECT_EQ(back.vocab.size(), 3u);
  EXPECT_EQ(back.scheme, Pvse4Scheme());
  EXPECT_EQ(back.images[0].tags, img.tags);
}

TEST(LoadDataset, ReportsEveryBadFileAtOnce) {
  TempDir dir;
  GenerateSynthetic(SmallSpec(), dir.path());
  std::string feat = (dir / "features/img00003.f32").string();
  std::string seg = (dir / "segmentation/img00007.seg").string();
  std::string bytes = ReadFile(feat);
  std::ofstream(feat, std::ios::binary) << bytes.substr(0, 20);
  std::string sbytes = ReadFile(seg);
  sbytes[14] = static_cast<char>(99);
  std::ofstream(seg, std::ios::binary) << sbytes;
  try {
    LoadDataset(dir.path());
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    ASSERT_EQ(e.issues().size(), 2u);
    EXPECT_EQ(e.issues()[0].path(), feat);
    EXPECT_EQ(e.issues()[1].path(), seg);
    EXPECT_NE(e.issues()[1].reason().find("99"), std::string::npos);
  }
}

TEST(GenerateSynthetic, RoundTripIsBitwiseEqual) {
  TempDir dir;
  Dataset gen = GenerateSynthetic(SmallSpec(), dir.path());
  Dataset back = LoadDataset(dir.path());
  ASSERT_EQ(back.images.size(), gen.images.size());
  for (std::size_t n = 0; n < gen.images.size(); ++n) {
    EXPECT_EQ(back.images[n].id, gen.images[n].id);
    EXPECT_EQ(back.images[n].features, gen.images[n].features);
    EXPECT_EQ(back.images[n].segmentation, gen.images[n].segmentation);
    EXPECT_EQ(back.images[n].tags, gen.images[n].tags);
  }
  EXPECT_EQ(back.vocab, gen.vocab);
  EXPECT_EQ(back.tag_parts, gen.tag_parts);
  EXPECT_EQ(back.concrete_tags, gen.concrete_tags);
}

TEST(GenerateSynthetic, SameSeedGivesIdenticalBytes) {
  TempDir a, b;
  GenerateSynthetic(SmallSpec(), a.path());
  GenerateSynthetic(SmallSpec(), b.path());
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    auto rel = fs::relative(entry.path(), a.path());
    EXPECT_EQ(ReadFile(entry.path()), ReadFile(b.path() / rel)) << rel;
  }
}

TEST(GenerateSynthetic, BandsFollowDeclaredLayout) {
  Dataset ds = GenerateSynthetic(SmallSpec());
  const auto& seg = ds.images[0].segmentation;
  for (std::size_t r = 0; r < 64; ++r) {
    EXPECT_EQ(ds.scheme.part_of(seg.at(r, 32)), r / 16) << "row " << r;
    EXPECT_FALSE(ds.scheme.part_of(seg.at(r, 0)).has_value());
    EXPECT_FALSE(ds.scheme.part_of(seg.at(r, 63)).has_value());
  }
}

TEST(GenerateSynthetic, NoiselessFeaturesRepeatPerAssignment) {
  SynthSpec s = SmallSpec();
  s.sigma = 0.0;
  Dataset ds = GenerateSynthetic(s);
  GridPartFractions frac = ComputeGridPartFractions(ds.images[0].segmentation, ds.scheme, 8, 8);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t a = 0; a < ds.images.size(); ++a)
      for (std::size_t b = a + 1; b < ds.images.size(); ++b) {
        if (ds.images[a].tags[l] != ds.images[b].tags[l]) continue;
        for (std::size_t i = 0; i < 8; ++i)
          for (std::size_t j = 0; j < 8; ++j)
            if (frac.fraction(i, j, l) > 0.0)
              for (std::size_t d = 0; d < s.feature_dim; ++d)
                EXPECT_EQ(ds.images[a].features.cell(i, j)[d], ds.images[b].features.cell(i, j)[d]);
      }
}

TEST(GenerateSynthetic, NoiselessCeilingIsPerfectRetrieval) {
  // With sigma = 0, ranking by the planted prototype's pooled part feature puts
  // every carrier of a concrete tag first.
  SynthSpec s = SmallSpec();
  s.sigma = 0.0;
  s.images = 64;
  Dataset ds = GenerateSynthetic(s);
  for (const auto& tag : ds.concrete_tags) {
    std::size_t l = ds.tag_parts.at(tag)[0];
    std::vector<std::vector<double>> pooled;
    std::vector<bool> carries;
    for (const auto& img : ds.images) {
      GridWeightMap g = ComputeGridWeightMap(img.segmentation, ds.scheme, 8, 8);
      Matrix p = PoolPartFeatures(img.features, g);
      pooled.push_back(oracle::Row(p, l));
      carries.push_back(std::find(img.tags.begin(), img.tags.end(), tag) != img.tags.end());
    }
    std::size_t first = std::find(carries.begin(), carries.end(), true) - carries.begin();
    std::vector<RankedItem> items;
    for (std::size_t n = 0; n < pooled.size(); ++n)
      items.push_back({ds.images[n].id, oracle::Cosine(pooled[n], pooled[first])});
    items = oracle::SortByScore(items);
    std::vector<bool> rel;
    for (const auto& it : items) rel.push_back(carries[std::stoul(it.id.substr(3))]);
    EXPECT_EQ(PrecisionAtM(rel, 5), 1.0) << tag;
  }
}

TEST(GenerateSynthetic, FrequenciesSumToAttachments) {
  Dataset ds = GenerateSynthetic(SmallSpec());
  std::uint64_t attachments = 0, total = 0;
  for (const auto& img : ds.images) attachments += img.tags.size();
  for (auto f : ds.vocab.frequencies()) total += f;
  EXPECT_EQ(total, attachments);
  for (const auto& tag : ds.concrete_tags) EXPECT_EQ(ds.vocab.frequencies()[ds.vocab.index_of(tag)], 8u);
}

TEST(GenerateSynthetic, AbstractTagsAreConjunctions) {
  SynthSpec s;
  s.images = 256;
  Dataset ds = GenerateSynthetic(s);
  std::size_t abstract = 0;
  for (const auto& [tag, parts] : ds.tag_parts)
    if (!ds.concrete_tags.count(tag)) {
      ++abstract;
      EXPECT_EQ(parts.size(), 2u) << tag;
    }
  EXPECT_GT(abstract, 0u);
}

TEST(GenerateSynthetic, UnwritablePathIsIoError) {
  TempDir dir;
  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(GenerateSynthetic(SmallSpec(), dir / "file" / "sub"), IoError);
}

TEST(Compat, MatchingWrongDimAndPermutedVocab) {
  Dataset ds = GenerateSynthetic(SmallSpec());
  ModelShape shape;
  shape.embedding_dim = 8;
  ModelParams m = InitModelForDataset(ds, shape, 1);
  EXPECT_TRUE(ValidateModelDatasetCompat(m, ds).ok());

  ModelParams wrong = m;
  wrong.feature_dim = 7;
  auto r = ValidateModelDatasetCompat(wrong, ds);
  ASSERT_FALSE(r.ok());
  EXPECT_NE(r.mismatches[0].find("7"), std::string::npos);
  EXPECT_NE(r.mismatches[0].find("6"), std::string::npos);

  std::vector<std::string> tags = m.vocab.tags();
  std::swap(tags[0], tags[1]);
  ModelParams permuted = m;
  permuted.vocab = TagVocabulary(tags, m.vocab.frequencies());
  EXPECT_FALSE(ValidateModelDatasetCompat(permuted, ds).ok());

  ModelParams other = m;
  other.scheme = Pvse8Scheme();
  EXPECT_FALSE(ValidateModelDatasetCompat(other, ds).ok());
}

TEST(ModelIo, SaveLoadRoundTrip) {
  TempDir dir;
  Dataset ds = GenerateSynthetic(SmallSpec());
  ModelShape shape;
  shape.embedding_dim = 8;
  shape.frequency_scope = FrequencyScope::kMinibatch;
  ModelParams m = InitModelForDataset(ds, shape, 5);
  for (auto& w : m.image_proj)
    for (double& v : w.data()) v = static_cast<float>(v);
  for (double& v : m.tag_proj.data()) v = static_cast<float>(v);
  SaveModel(m, dir / "model");
  ModelParams back = LoadModel(dir / "model");
  EXPECT_EQ(back.image_proj, m.image_proj);
  EXPECT_EQ(back.tag_proj, m.tag_proj);
  EXPECT_EQ(back.vocab, m.vocab);
  EXPECT_EQ(back.scheme, m.scheme);
  EXPECT_EQ(back.frequency_scope, FrequencyScope::kMinibatch);
  EXPECT_EQ(back.seed, 5u);

  std::ofstream(dir / "model" / "weights.bin", std::ios::binary | std::ios::app) << "junk";
  EXPECT_THROW(LoadModel(dir / "model"), IngestError);
  EXPECT_THROW(LoadModel(dir / "nothing"), IngestError);
}

}  // namespace
}  // namespace pvse
