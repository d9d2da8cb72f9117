#pragma once

// Synthetic distance-prediction data: random origins with small displacements,
// haversine ground truth, the fixed-precision text format, and the
// character-level tokenizer.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "geotoken/spherical_encoding.hpp"

namespace geotoken::data {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr std::size_t kMaxSeqLen = 100;

/// Great-circle distance in meters between two (lat, lon) points given in
/// degrees. Throws DomainError for latitudes outside [-90, 90].
double haversine(double lat1_deg, double lon1_deg, double lat2_deg, double lon2_deg);

/// Wraps a longitude in degrees into [-180, 180).
double wrap_longitude_deg(double lon_deg);

struct GeoSample {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
  double dlat_deg = 0.0;
  double dlon_deg = 0.0;
  double distance_m = 0.0;
  std::string input_text;
  std::string target_text;

  double dest_lat_deg() const;
  double dest_lon_deg() const;

  friend bool operator==(const GeoSample&, const GeoSample&) = default;
};

/// Builds a sample from coordinates (rounded to the 4-decimal serialized
/// precision), filling distance and both texts.
GeoSample make_sample(double lat_deg, double lon_deg, double dlat_deg, double dlon_deg);

struct SampleText {
  std::string input_text;
  std::string target_text;
};

/// "lat,lon+dlat,dlon" at 4 decimals and the distance at 3 decimals.
SampleText format_sample(const GeoSample& s);

struct ParsedInput {
  double lat_deg;
  double lon_deg;
  double dlat_deg;
  double dlon_deg;
};

/// Inverse of the input format. Throws ParseError on malformed text.
ParsedInput parse_input_text(std::string_view text);

/// `n` samples, deterministic in `seed`. Displacements lie in
/// (-max_disp_deg, max_disp_deg); samples whose destination would pass a
/// pole are redrawn.
std::vector<GeoSample> generate_dataset(std::size_t n, std::uint64_t seed,
                                        double max_disp_deg = 10.0);

// ---------------------------------------------------------------------------
// Tokenizer

/// Fixed 17-symbol character vocabulary.
class Vocabulary {
 public:
  static constexpr std::string_view kChars = "0123456789.,+-";
  static constexpr int kBos = 14;
  static constexpr int kEos = 15;
  static constexpr int kPad = 16;
  static constexpr std::size_t kSize = 17;

  static std::size_t size() { return kSize; }
  /// Throws VocabularyError for characters outside the vocabulary.
  static int id(char c);
  static std::optional<char> symbol(int id);
  static bool is_special(int id) { return id >= kBos; }
};

struct TokenSeq {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

/// One id per character followed by EOS. Throws VocabularyError or
/// LengthError (more than kMaxSeqLen tokens).
TokenSeq tokenize(std::string_view text);

/// Drops special tokens.
std::string detokenize(const TokenSeq& seq);

// ---------------------------------------------------------------------------
// Coordinate tags

/// Per-token rotation angles; nullopt means the identity rotation.
struct TokenGeoTag {
  std::vector<std::optional<encoding::GeoAngles>> angles;

  std::size_t size() const { return angles.size(); }
  static TokenGeoTag identity(std::size_t n) { return TokenGeoTag{std::vector<std::optional<encoding::GeoAngles>>(n)}; }
  friend bool operator==(const TokenGeoTag&, const TokenGeoTag&) = default;
};

/// Tags the characters before '+' with `origin` and the characters after it
/// with `dest`; '+' and special tokens get the identity. Throws ParseError
/// if the tokens do not spell a well-formed input string.
TokenGeoTag tag_segments(const TokenSeq& tokens, const encoding::GeoAngles& origin,
                         const encoding::GeoAngles& dest);

/// Fabricated tags for the baseline run: each sample's origin and destination
/// are replaced by independent uniform random points, drawn once.
std::vector<TokenGeoTag> randomize_tags(const std::vector<GeoSample>& dataset, std::uint64_t seed);

}  // namespace geotoken::data
