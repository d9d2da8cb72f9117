#include "geotoken/geodata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "geotoken/errors.hpp"
#include "geotoken/rng.hpp"

namespace geotoken::data {

namespace {

double round4(double x) { return std::round(x * 1e4) / 1e4 + 0.0; }  // + 0.0 folds -0

// Rounding can push a wrapped longitude back up to +180.
double round4_lon(double lon_deg) {
  const double r = round4(wrap_longitude_deg(lon_deg));
  return r >= 180.0 ? r - 360.0 : r;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v + 0.0);
  return buf;
}

// Strict decimal: optional '-', digits, optional '.' followed by digits.
double parse_number(std::string_view s, std::string_view text) {
  std::size_t i = 0;
  if (i < s.size() && s[i] == '-') ++i;
  const std::size_t int_start = i;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  bool ok = i > int_start;
  if (ok && i < s.size() && s[i] == '.') {
    const std::size_t frac_start = ++i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    ok = i > frac_start;
  }
  ok = ok && i == s.size();
  double value = 0.0;
  if (ok) {
    const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    ok = res.ec == std::errc() && res.ptr == s.data() + s.size();
  }
  if (!ok) {
    throw ParseError("malformed number '" + std::string(s) + "' in input text '" + std::string(text) + "'");
  }
  return value;
}

std::pair<double, double> parse_pair(std::string_view s, std::string_view text) {
  const auto comma = s.find(',');
  if (comma == std::string_view::npos || s.find(',', comma + 1) != std::string_view::npos) {
    throw ParseError("expected 'a,b' segment in input text '" + std::string(text) + "'");
  }
  return {parse_number(s.substr(0, comma), text), parse_number(s.substr(comma + 1), text)};
}

}  // namespace

double wrap_longitude_deg(double lon_deg) {
  if (lon_deg >= -180.0 && lon_deg < 180.0) return lon_deg;
  double w = std::fmod(lon_deg + 180.0, 360.0);
  if (w < 0.0) w += 360.0;
  w -= 180.0;
  return w >= 180.0 ? w - 360.0 : w;
}

double haversine(double lat1_deg, double lon1_deg, double lat2_deg, double lon2_deg) {
  for (double lat : {lat1_deg, lat2_deg}) {
    if (!(lat >= -90.0 && lat <= 90.0)) {
      throw DomainError("haversine: latitude " + std::to_string(lat) + " outside [-90, 90]");
    }
  }
  const double phi1 = encoding::degrees_to_radians(lat1_deg);
  const double phi2 = encoding::degrees_to_radians(lat2_deg);
  const double dphi = phi2 - phi1;
  const double dlambda = encoding::degrees_to_radians(lon2_deg - lon1_deg);
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::min(1.0, h)));
}

double GeoSample::dest_lat_deg() const { return round4(lat_deg + dlat_deg); }

double GeoSample::dest_lon_deg() const { return round4_lon(lon_deg + dlon_deg); }

GeoSample make_sample(double lat_deg, double lon_deg, double dlat_deg, double dlon_deg) {
  GeoSample s;
  s.lat_deg = round4(lat_deg);
  s.lon_deg = round4_lon(lon_deg);
  s.dlat_deg = round4(dlat_deg);
  s.dlon_deg = round4(dlon_deg);
  s.distance_m = haversine(s.lat_deg, s.lon_deg, s.dest_lat_deg(), s.dest_lon_deg());
  auto text = format_sample(s);
  s.input_text = std::move(text.input_text);
  s.target_text = std::move(text.target_text);
  return s;
}

SampleText format_sample(const GeoSample& s) {
  return {fixed(s.lat_deg, 4) + "," + fixed(s.lon_deg, 4) + "+" + fixed(s.dlat_deg, 4) + "," +
              fixed(s.dlon_deg, 4),
          fixed(s.distance_m, 3)};
}

ParsedInput parse_input_text(std::string_view text) {
  const auto plus = text.find('+');
  if (plus == std::string_view::npos || text.find('+', plus + 1) != std::string_view::npos) {
    throw ParseError("input text '" + std::string(text) + "' must contain exactly one '+'");
  }
  const auto [lat, lon] = parse_pair(text.substr(0, plus), text);
  const auto [dlat, dlon] = parse_pair(text.substr(plus + 1), text);
  return {lat, lon, dlat, dlon};
}

std::vector<GeoSample> generate_dataset(std::size_t n, std::uint64_t seed, double max_disp_deg) {
  if (n == 0) throw LengthError("generate_dataset: n must be at least 1");
  Rng rng(seed, kDatasetStream);
  std::vector<GeoSample> out;
  out.reserve(n);
  while (out.size() < n) {
    const double lat = rng.uniform(-90.0, 90.0);
    const double lon = rng.uniform(-180.0, 180.0);
    const double dlat = rng.uniform(-max_disp_deg, max_disp_deg);
    const double dlon = rng.uniform(-max_disp_deg, max_disp_deg);
    // Open interval after rounding, and no pole crossings.
    if (std::abs(round4(dlat)) >= max_disp_deg || std::abs(round4(dlon)) >= max_disp_deg) continue;
    if (std::abs(round4(round4(lat) + round4(dlat))) > 90.0) continue;
    out.push_back(make_sample(lat, lon, dlat, dlon));
  }
  return out;
}

// ---------------------------------------------------------------------------

int Vocabulary::id(char c) {
  const auto pos = kChars.find(c);
  if (pos == std::string_view::npos) {
    throw VocabularyError(std::string("character '") + c + "' is not in the vocabulary");
  }
  return static_cast<int>(pos);
}

std::optional<char> Vocabulary::symbol(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= kChars.size()) return std::nullopt;
  return kChars[static_cast<std::size_t>(id)];
}

TokenSeq tokenize(std::string_view text) {
  if (text.size() + 1 > kMaxSeqLen) {
    throw LengthError("tokenize: " + std::to_string(text.size()) + " characters plus EOS exceed " +
                      std::to_string(kMaxSeqLen) + " tokens");
  }
  TokenSeq seq;
  seq.ids.reserve(text.size() + 1);
  for (char c : text) seq.ids.push_back(Vocabulary::id(c));
  seq.ids.push_back(Vocabulary::kEos);
  return seq;
}

std::string detokenize(const TokenSeq& seq) {
  std::string out;
  out.reserve(seq.size());
  for (int id : seq.ids) {
    if (auto c = Vocabulary::symbol(id)) out.push_back(*c);
  }
  return out;
}

// ---------------------------------------------------------------------------

TokenGeoTag tag_segments(const TokenSeq& tokens, const encoding::GeoAngles& origin,
                         const encoding::GeoAngles& dest) {
  for (int id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= Vocabulary::size()) {
      throw ParseError("token id " + std::to_string(id) + " outside the vocabulary");
    }
  }
  parse_input_text(detokenize(tokens));

  const int plus = Vocabulary::id('+');
  TokenGeoTag tag = TokenGeoTag::identity(tokens.size());
  bool after_plus = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int id = tokens.ids[i];
    if (Vocabulary::is_special(id)) continue;
    if (id == plus) {
      after_plus = true;
      continue;
    }
    tag.angles[i] = after_plus ? dest : origin;
  }
  return tag;
}

std::vector<TokenGeoTag> randomize_tags(const std::vector<GeoSample>& dataset, std::uint64_t seed) {
  if (dataset.empty()) throw LengthError("randomize_tags: empty dataset");
  Rng rng(seed, kFabricatedTagStream);
  const auto draw = [&rng] {
    const double lat = rng.uniform(-90.0, 90.0);
    const double lon = rng.uniform(-180.0, 180.0);
    return encoding::GeoAngles::from_degrees(lat, lon);
  };
  std::vector<TokenGeoTag> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset) {
    const auto origin = draw();
    const auto dest = draw();
    out.push_back(tag_segments(tokenize(s.input_text), origin, dest));
  }
  return out;
}

}  // namespace geotoken::data
