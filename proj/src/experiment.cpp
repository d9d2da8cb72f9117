#include "geotoken/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "geotoken/errors.hpp"
#include "geotoken/rng.hpp"

namespace geotoken::experiment {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return lines;
}

}  // namespace

std::string to_string(TagMode mode) {
  switch (mode) {
    case TagMode::kGeo:
      return "geo";
    case TagMode::kRandom:
      return "random";
    case TagMode::kNone:
      return "none";
  }
  return "unknown";
}

TagMode parse_tag_mode(std::string_view s) {
  if (s == "geo") return TagMode::kGeo;
  if (s == "random") return TagMode::kRandom;
  if (s == "none") return TagMode::kNone;
  throw ParseError("unknown mode '" + std::string(s) + "' (expected geo, random or none)");
}

void RunConfig::validate() const {
  if (epochs == 0) throw DomainError("epochs must be at least 1");
  if (batch_size == 0) throw DomainError("batch size must be at least 1");
  if (!dataset_path && dataset_size == 0) throw DomainError("dataset size must be at least 1");
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  model.validate();
}

std::vector<data::TokenGeoTag> tags_for_mode(const std::vector<data::GeoSample>& dataset, TagMode mode,
                                             std::uint64_t seed) {
  switch (mode) {
    case TagMode::kRandom:
      return data::randomize_tags(dataset, seed);
    case TagMode::kGeo:
    case TagMode::kNone: {
      std::vector<data::TokenGeoTag> out;
      out.reserve(dataset.size());
      for (const auto& s : dataset) {
        const auto tokens = data::tokenize(s.input_text);
        out.push_back(mode == TagMode::kGeo ? model::assign_token_coordinates(s, tokens)
                                            : data::TokenGeoTag::identity(tokens.size()));
      }
      return out;
    }
  }
  return {};
}

TrainingRun run_training(const RunConfig& config) {
  config.validate();
  const auto dataset = config.dataset_path ? load_dataset(*config.dataset_path)
                                           : data::generate_dataset(config.dataset_size, config.seed);
  return run_training(config, dataset);
}

TrainingRun run_training(const RunConfig& config, const std::vector<data::GeoSample>& dataset) {
  config.validate();
  if (dataset.empty()) throw DomainError("run_training: empty dataset");

  const auto tags = tags_for_mode(dataset, config.mode, config.seed);
  std::vector<model::TrainExample> examples;
  examples.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) examples.push_back(model::make_example(dataset[i], tags[i]));

  model::GeoTransformer net(config.model, config.seed);
  ad::AdamState adam;
  adam.lr = config.learning_rate;
  Rng shuffle_rng(config.seed, kShuffleStream);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<model::TrainExample> batch;
  batch.reserve(config.batch_size);

  TrainingRun run;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t j = start; j < stop; ++j) batch.push_back(examples[order[j]]);
      const std::size_t batch_no = batches + 1;
      double loss = 0.0;
      try {
        loss = model::train_step(net, batch, adam);
      } catch (const NonFiniteError& e) {
        throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no) + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no));
      }
      if (epoch == 1 && batches == 0) run.first_batch_loss = loss;
      total += loss;
      ++batches;
    }
    run.epochs.push_back({epoch, total / static_cast<double>(batches)});
  }

  if (config.output_path) write_loss_csv(*config.output_path, run.epochs);
  if (config.checkpoint_path) net.save(*config.checkpoint_path);
  return run;
}

// ---------------------------------------------------------------------------

std::string format_loss_csv(const std::vector<LossRecord>& records) {
  std::string out = "epoch,loss\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", r.epoch, r.mean_loss);
    out += buf;
  }
  return out;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& records) {
  write_file(path, format_loss_csv(records));
}

std::vector<LossRecord> parse_loss_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "epoch,loss") throw ParseError("loss CSV: missing 'epoch,loss' header");
  std::vector<LossRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string epoch_s(line.substr(0, comma));
    const std::string loss_s(comma == std::string_view::npos ? "" : line.substr(comma + 1));
    char* end_e = nullptr;
    char* end_l = nullptr;
    const unsigned long long epoch = std::strtoull(epoch_s.c_str(), &end_e, 10);
    const double loss = std::strtod(loss_s.c_str(), &end_l);
    if (epoch_s.empty() || loss_s.empty() || *end_e != '\0' || *end_l != '\0' || !std::isfinite(loss)) {
      throw ParseError("loss CSV: malformed row " + std::to_string(i + 1) + ": '" + std::string(line) + "'");
    }
    out.push_back({static_cast<std::size_t>(epoch), loss});
  }
  return out;
}

std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path) {
  return parse_loss_csv(read_file(path));
}

Comparison compare_runs(const std::vector<LossRecord>& geo, const std::vector<LossRecord>& random) {
  if (geo.empty() || random.empty()) throw ParseError("compare: a loss CSV has no rows");
  if (geo.size() != random.size()) {
    throw ParseError("compare: row counts differ (" + std::to_string(geo.size()) + " vs " +
                     std::to_string(random.size()) + ")");
  }
  Comparison c;
  c.geo_final = geo.back().mean_loss;
  c.random_final = random.back().mean_loss;
  c.ratio = c.geo_final / c.random_final;
  c.geo_better = c.geo_final < c.random_final;
  return c;
}

void print_comparison(std::ostream& out, const Comparison& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "geo final loss:    %.6f\nrandom final loss: %.6f\nratio geo/random:  %.6f\n",
                c.geo_final, c.random_final, c.ratio);
  out << buf << (c.geo_better ? "geo encoding wins\n" : "geo encoding does NOT win\n");
}

// ---------------------------------------------------------------------------

std::string format_dataset_jsonl(const std::vector<data::GeoSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["lat_deg"] = s.lat_deg;
    j["lon_deg"] = s.lon_deg;
    j["dlat_deg"] = s.dlat_deg;
    j["dlon_deg"] = s.dlon_deg;
    j["distance_m"] = s.distance_m;
    j["input_text"] = s.input_text;
    j["target_text"] = s.target_text;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<data::GeoSample> parse_dataset_jsonl(std::string_view text) {
  std::vector<data::GeoSample> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = "line " + std::to_string(i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError("dataset " + where + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw SchemaError("dataset " + where + ": expected an object");
    const auto number = [&](const char* key) {
      if (!j.contains(key)) throw SchemaError("dataset " + where + ": missing key '" + key + "'");
      if (!j[key].is_number()) throw SchemaError("dataset " + where + ": key '" + key + "' is not a number");
      return j[key].get<double>();
    };
    const auto string = [&](const char* key) {
      if (!j.contains(key)) throw SchemaError("dataset " + where + ": missing key '" + key + "'");
      if (!j[key].is_string()) throw SchemaError("dataset " + where + ": key '" + key + "' is not a string");
      return j[key].get<std::string>();
    };
    data::GeoSample s;
    s.lat_deg = number("lat_deg");
    s.lon_deg = number("lon_deg");
    s.dlat_deg = number("dlat_deg");
    s.dlon_deg = number("dlon_deg");
    s.distance_m = number("distance_m");
    s.input_text = string("input_text");
    s.target_text = string("target_text");
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<data::GeoSample>& samples) {
  write_file(path, format_dataset_jsonl(samples));
}

void dump_dataset(std::uint64_t seed, std::size_t n, const std::filesystem::path& path) {
  write_dataset(path, data::generate_dataset(n, seed));
}

std::vector<data::GeoSample> load_dataset(const std::filesystem::path& path) {
  return parse_dataset_jsonl(read_file(path));
}

}  // namespace geotoken::experiment
