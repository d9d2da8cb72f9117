#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "geotoken/errors.hpp"
#include "geotoken/experiment.hpp"

namespace geotoken::experiment {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir()
      : path_(fs::temp_directory_path() /
              (std::string("geotoken_exp_") + ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const char* name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig small_run(TagMode mode, std::uint64_t seed) {
  RunConfig c;
  c.mode = mode;
  c.seed = seed;
  c.epochs = 2;
  c.batch_size = 8;
  c.dataset_size = 24;
  return c;
}

TEST(TagModeTest, ParseAndPrint) {
  for (auto m : {TagMode::kGeo, TagMode::kRandom, TagMode::kNone}) EXPECT_EQ(parse_tag_mode(to_string(m)), m);
  EXPECT_THROW(parse_tag_mode("sphere"), ParseError);
}

TEST(TagModeTest, TagSources) {
  const auto ds = data::generate_dataset(5, 1);
  const auto none = tags_for_mode(ds, TagMode::kNone, 1);
  const auto geo = tags_for_mode(ds, TagMode::kGeo, 1);
  const auto random = tags_for_mode(ds, TagMode::kRandom, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (const auto& a : none[i].angles) EXPECT_FALSE(a.has_value());
    EXPECT_EQ(geo[i].size(), none[i].size());
    EXPECT_EQ(random[i].size(), none[i].size());
    EXPECT_NE(geo[i], random[i]);
  }
}

TEST(LossCsvTest, FormatAndParse) {
  const std::vector<LossRecord> recs{{1, 2.8332133}, {2, 2.5}, {3, 0.0000004}};
  const std::string text = format_loss_csv(recs);
  EXPECT_EQ(text, "epoch,loss\n1,2.833213\n2,2.500000\n3,0.000000\n");
  const auto back = parse_loss_csv(text);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].epoch, 1u);
  EXPECT_DOUBLE_EQ(back[0].mean_loss, 2.833213);
}

TEST(LossCsvTest, MalformedInput) {
  EXPECT_THROW(parse_loss_csv(""), ParseError);
  EXPECT_THROW(parse_loss_csv("epoch;loss\n1,2\n"), ParseError);
  EXPECT_THROW(parse_loss_csv("epoch,loss\n1,abc\n"), ParseError);
  EXPECT_THROW(parse_loss_csv("epoch,loss\n1\n"), ParseError);
  EXPECT_THROW(parse_loss_csv("epoch,loss\nx,1.0\n"), ParseError);
  EXPECT_THROW(parse_loss_csv("epoch,loss\n1,nan\n"), ParseError);
  EXPECT_NO_THROW(parse_loss_csv("epoch,loss\r\n1,1.0\r\n"));
}

TEST(CompareRunsTest, GeoWins) {
  const std::vector<LossRecord> geo{{1, 2.0}, {2, 1.0}}, random{{1, 2.0}, {2, 2.0}};
  const Comparison c = compare_runs(geo, random);
  EXPECT_TRUE(c.geo_better);
  EXPECT_DOUBLE_EQ(c.ratio, 0.5);
  std::ostringstream out;
  print_comparison(out, c);
  EXPECT_NE(out.str().find("ratio geo/random:  0.500000"), std::string::npos);
}

TEST(CompareRunsTest, EqualLossesFail) {
  const std::vector<LossRecord> a{{1, 1.5}};
  EXPECT_FALSE(compare_runs(a, a).geo_better);
}

TEST(CompareRunsTest, RowCountMismatch) {
  EXPECT_THROW(compare_runs({{1, 1.0}}, {{1, 1.0}, {2, 1.0}}), ParseError);
  EXPECT_THROW(compare_runs({}, {}), ParseError);
}

TEST(DatasetJsonlTest, DumpThenLoadIsExact) {
  TempDir dir;
  dump_dataset(7, 64, dir / "a.jsonl");
  EXPECT_EQ(load_dataset(dir / "a.jsonl"), data::generate_dataset(64, 7));
}

TEST(DatasetJsonlTest, BytewiseReproducible) {
  TempDir dir;
  dump_dataset(7, 512, dir / "a.jsonl");
  dump_dataset(7, 512, dir / "b.jsonl");
  const std::string a = slurp(dir / "a.jsonl");
  EXPECT_EQ(a, slurp(dir / "b.jsonl"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 512);
  EXPECT_EQ(a.rfind("{\"lat_deg\":", 0), 0u);
}

TEST(DatasetJsonlTest, SchemaErrorsNameKeyAndLine) {
  const std::string good = format_dataset_jsonl(data::generate_dataset(2, 1));
  const auto second = good.find('\n') + 1;
  std::string missing = good;
  const auto key = missing.find("\"distance_m\"", second);
  const auto comma = missing.find(',', key);
  missing.erase(key, comma - key + 1);
  try {
    parse_dataset_jsonl(missing);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("distance_m"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_dataset_jsonl("{\"lat_deg\": \"x\"}\n"), SchemaError);
  EXPECT_THROW(parse_dataset_jsonl("[1, 2]\n"), SchemaError);
  EXPECT_THROW(parse_dataset_jsonl("{oops\n"), SchemaError);
  EXPECT_THROW(load_dataset("/nonexistent/geotoken.jsonl"), IoError);
}

TEST(RunTrainingTest, DeterministicCsvBytes) {
  TempDir dir;
  RunConfig c = small_run(TagMode::kGeo, 3);
  c.output_path = dir / "a.csv";
  const auto first = run_training(c);
  c.output_path = dir / "b.csv";
  const auto second = run_training(c);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  ASSERT_EQ(first.epochs.size(), 2u);
  EXPECT_EQ(first.epochs, second.epochs);
  for (const auto& r : first.epochs) EXPECT_TRUE(std::isfinite(r.mean_loss));
}

TEST(RunTrainingTest, FirstBatchLossCoincidesAcrossModes) {
  const auto geo = run_training(small_run(TagMode::kGeo, 4));
  const auto random = run_training(small_run(TagMode::kRandom, 4));
  const auto none = run_training(small_run(TagMode::kNone, 4));
  EXPECT_NEAR(geo.first_batch_loss, std::log(17.0), 1e-12);
  EXPECT_NEAR(geo.first_batch_loss, random.first_batch_loss, 1e-12);
  EXPECT_NEAR(geo.first_batch_loss, none.first_batch_loss, 1e-12);
  for (const auto* run : {&geo, &random, &none}) {
    EXPECT_NEAR(run->epochs[0].mean_loss, std::log(17.0), 0.5);
  }
}

TEST(RunTrainingTest, UsesDatasetFileWhenGiven) {
  TempDir dir;
  dump_dataset(11, 16, dir / "d.jsonl");
  RunConfig from_file = small_run(TagMode::kGeo, 11);
  from_file.dataset_path = dir / "d.jsonl";
  RunConfig generated = small_run(TagMode::kGeo, 11);
  generated.dataset_size = 16;
  EXPECT_EQ(run_training(from_file).epochs, run_training(generated).epochs);
}

TEST(RunTrainingTest, CheckpointIsWritten) {
  TempDir dir;
  RunConfig c = small_run(TagMode::kNone, 2);
  c.epochs = 1;
  c.checkpoint_path = dir / "m.ckpt";
  run_training(c);
  const auto net = model::GeoTransformer::load(dir / "m.ckpt");
  EXPECT_EQ(net.config(), c.model);
}

TEST(RunTrainingTest, DivergenceNamesEpochAndBatch) {
  RunConfig c = small_run(TagMode::kGeo, 1);
  c.learning_rate = 1e300;
  try {
    run_training(c);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
  }
}

TEST(RunTrainingTest, InvalidConfig) {
  RunConfig c = small_run(TagMode::kGeo, 1);
  c.epochs = 0;
  EXPECT_THROW(run_training(c), DomainError);
  c = small_run(TagMode::kGeo, 1);
  c.batch_size = 0;
  EXPECT_THROW(run_training(c), DomainError);
  c = small_run(TagMode::kGeo, 1);
  c.model.d_model = 10;
  EXPECT_THROW(run_training(c), InvalidDimensionError);
}

}  // namespace
}  // namespace geotoken::experiment
