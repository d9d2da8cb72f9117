#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "geotoken/geodata.hpp"
#include "geotoken/geotransformer.hpp"

namespace geotoken::experiment {

enum class TagMode { kGeo, kRandom, kNone };

std::string to_string(TagMode mode);
/// Throws ParseError for anything but "geo", "random" or "none".
TagMode parse_tag_mode(std::string_view s);

struct RunConfig {
  TagMode mode = TagMode::kGeo;
  std::size_t epochs = 25;
  std::size_t batch_size = 64;
  std::size_t dataset_size = 512;
  std::uint64_t seed = 0;
  double learning_rate = 1e-4;
  std::optional<std::filesystem::path> dataset_path;  // generated from seed when absent
  std::optional<std::filesystem::path> output_path;   // loss CSV
  std::optional<std::filesystem::path> checkpoint_path;
  model::ModelConfig model;

  void validate() const;
};

struct LossRecord {
  std::size_t epoch;  // 1-based
  double mean_loss;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainingRun {
  std::vector<LossRecord> epochs;
  double first_batch_loss = 0.0;  // epoch 1, batch 1, before any update
};

/// Per-sample tags for the chosen mode: true coordinates, fabricated
/// coordinates (seeded, drawn once), or all identity.
std::vector<data::TokenGeoTag> tags_for_mode(const std::vector<data::GeoSample>& dataset, TagMode mode,
                                             std::uint64_t seed);

/// Trains from scratch, reshuffling the samples every epoch from a seeded
/// stream shared across modes. Writes the loss CSV (and checkpoint) when the
/// config names a path. Throws TrainingError naming the epoch and batch if
/// the loss turns non-finite.
TrainingRun run_training(const RunConfig& config);

/// Same, on an already loaded dataset.
TrainingRun run_training(const RunConfig& config, const std::vector<data::GeoSample>& dataset);

// ---------------------------------------------------------------------------
// Files

/// "epoch,loss" header, one row per epoch, loss with 6 decimals.
std::string format_loss_csv(const std::vector<LossRecord>& records);
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& records);
std::vector<LossRecord> parse_loss_csv(std::string_view text);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

struct Comparison {
  double geo_final;
  double random_final;
  double ratio;  // geo / random
  bool geo_better;
};

/// Throws ParseError on empty input or mismatched row counts.
Comparison compare_runs(const std::vector<LossRecord>& geo, const std::vector<LossRecord>& random);
void print_comparison(std::ostream& out, const Comparison& c);

/// One JSON object per line: lat_deg, lon_deg, dlat_deg, dlon_deg,
/// distance_m, input_text, target_text.
std::string format_dataset_jsonl(const std::vector<data::GeoSample>& samples);
std::vector<data::GeoSample> parse_dataset_jsonl(std::string_view text);

void dump_dataset(std::uint64_t seed, std::size_t n, const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<data::GeoSample>& samples);
std::vector<data::GeoSample> load_dataset(const std::filesystem::path& path);

}  // namespace geotoken::experiment
