#include "geotoken/geotransformer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "geotoken/errors.hpp"
#include "geotoken/rng.hpp"

namespace geotoken::model {

namespace {

constexpr const char* kCheckpointMagic = "geotoken-checkpoint";
constexpr int kCheckpointVersion = 1;

std::vector<encoding::RotationBlock3> blocks_for(const TokenGeoTag& tags, std::vector<bool>& present) {
  std::vector<encoding::RotationBlock3> blocks(tags.size());
  present.assign(tags.size(), false);
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags.angles[i]) {
      blocks[i] = encoding::spherical_block(*tags.angles[i]);
      present[i] = true;
    }
  }
  return blocks;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0 || d_model % 3 != 0) {
    throw InvalidDimensionError("ModelConfig: d_model must be a positive multiple of 3, got " +
                                std::to_string(d_model));
  }
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw InvalidDimensionError("ModelConfig: d_model not divisible by n_heads");
  }
  if (n_heads != 1) throw InvalidDimensionError("ModelConfig: only a single attention head is supported");
  if (n_blocks == 0 || d_ff == 0 || vocab_size == 0 || max_seq_len == 0) {
    throw InvalidDimensionError("ModelConfig: sizes must be positive");
  }
}

TokenGeoTag assign_token_coordinates(const data::GeoSample& sample, const TokenSeq& tokens) {
  const auto origin = encoding::GeoAngles::from_degrees(sample.lat_deg, sample.lon_deg);
  const auto dest = encoding::GeoAngles::from_degrees(sample.dest_lat_deg(), sample.dest_lon_deg());
  TokenGeoTag tags = data::tag_segments(tokens, origin, dest);
  if (data::detokenize(tokens) != sample.input_text) {
    throw ParseError("assign_token_coordinates: tokens do not spell '" + sample.input_text + "'");
  }
  return tags;
}

Var rotate_rows(Var x, const TokenGeoTag& tags, const encoding::GeoRotary& rot) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  if (tags.size() != xv.rows()) {
    throw ShapeError("rotate_rows: " + std::to_string(tags.size()) + " tags for " +
                     std::to_string(xv.rows()) + " rows");
  }
  std::vector<bool> present;
  auto blocks = blocks_for(tags, present);
  Tensor out = xv;
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    if (present[r]) rot.apply(xv.row(r), blocks[r], out.row(r));
  }
  return tape.record(std::move(out), "rotate_rows", {x},
                     [x, rot, blocks = std::move(blocks), present = std::move(present)](
                         Tape& tp, const Tensor& g) {
                       Tensor& gx = tp.grad(x);
                       std::vector<double> tmp(g.cols());
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         auto dst = gx.row(r);
                         if (present[r]) {
                           rot.apply_transpose(g.row(r), blocks[r], tmp);
                           for (std::size_t j = 0; j < tmp.size(); ++j) dst[j] += tmp[j];
                         } else {
                           const auto src = g.row(r);
                           for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                         }
                       }
                     });
}

AttentionOutput geo_attention(const AttentionWeights& w, Var xq, Var xkv, const TokenGeoTag& tags_q,
                              const TokenGeoTag& tags_k, const encoding::GeoRotary& rot) {
  if (xq.value().cols() != rot.dim() || xkv.value().cols() != rot.dim()) {
    throw ShapeError("geo_attention: input width does not match rotation dimension");
  }
  if (tags_q.size() != xq.value().rows() || tags_k.size() != xkv.value().rows()) {
    throw ShapeError("geo_attention: tag count does not match sequence length");
  }
  const Var q = rotate_rows(ad::matmul(xq, w.wq), tags_q, rot);
  const Var k = rotate_rows(ad::matmul(xkv, w.wk), tags_k, rot);
  const Var v = ad::matmul(xkv, w.wv);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(rot.dim()));
  const Var scores = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
  const Var out = ad::add_row_bias(ad::matmul(ad::matmul(scores, v), w.wo), w.bo);
  return {out, scores};
}

// ---------------------------------------------------------------------------

GeoTransformer::GeoTransformer(const ModelConfig& config, std::uint64_t seed)
    : GeoTransformer(config, seed, true) {}

GeoTransformer::GeoTransformer(const ModelConfig& config, std::uint64_t seed, bool initialize)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  // Upper bound on the parameter count so that Parameter addresses stay put.
  params_.reserve(4 + config_.n_blocks * 40);

  embedding_ = add_param("embedding", {config_.vocab_size, d});
  for (std::size_t b = 0; b < config_.n_blocks; ++b) {
    const std::string p = "enc" + std::to_string(b) + ".";
    EncoderBlockIds blk;
    blk.self = add_attention(p + "self");
    blk.norm1 = add_norm(p + "norm1");
    blk.ff = add_feed_forward(p + "ff");
    blk.norm2 = add_norm(p + "norm2");
    encoder_.push_back(blk);
  }
  for (std::size_t b = 0; b < config_.n_blocks; ++b) {
    const std::string p = "dec" + std::to_string(b) + ".";
    DecoderBlockIds blk;
    blk.self = add_attention(p + "self");
    blk.norm1 = add_norm(p + "norm1");
    blk.cross = add_attention(p + "cross");
    blk.norm2 = add_norm(p + "norm2");
    blk.ff = add_feed_forward(p + "ff");
    blk.norm3 = add_norm(p + "norm3");
    decoder_.push_back(blk);
  }
  out_w_ = add_param("out.w", {d, config_.vocab_size});
  out_b_ = add_param("out.b", {config_.vocab_size});

  if (!initialize) return;
  Rng rng(seed, kInitStream);
  for (auto& p : params_) {
    const auto& shape = p.value.shape();
    const bool is_gain = p.name.ends_with(".gain");
    if (is_gain) {
      p.value.fill(1.0);
    } else if (shape.size() == 2 && p.id != out_w_) {
      const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (auto& v : p.value.data()) v = rng.uniform(-bound, bound);
    }
    // Biases and the output projection stay zero.
  }
}

std::size_t GeoTransformer::add_param(std::string name, std::vector<std::size_t> shape) {
  const std::size_t id = params_.size();
  params_.emplace_back(std::move(name), Tensor(std::move(shape)), id);
  return id;
}

GeoTransformer::AttentionIds GeoTransformer::add_attention(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  return {add_param(prefix + ".wq", {d, d}), add_param(prefix + ".wk", {d, d}),
          add_param(prefix + ".wv", {d, d}), add_param(prefix + ".wo", {d, d}),
          add_param(prefix + ".bo", {d})};
}

GeoTransformer::NormIds GeoTransformer::add_norm(const std::string& prefix) {
  return {add_param(prefix + ".gain", {config_.d_model}), add_param(prefix + ".bias", {config_.d_model})};
}

GeoTransformer::FeedForwardIds GeoTransformer::add_feed_forward(const std::string& prefix) {
  const std::size_t d = config_.d_model, f = config_.d_ff;
  return {add_param(prefix + ".w1", {d, f}), add_param(prefix + ".b1", {f}),
          add_param(prefix + ".w2", {f, d}), add_param(prefix + ".b2", {d})};
}

GeoTransformer::Bound GeoTransformer::bind(Tape& tape) {
  Bound b;
  b.vars.reserve(params_.size());
  for (auto& p : params_) b.vars.push_back(tape.param(p));
  return b;
}

namespace {

AttentionWeights attention_vars(const GeoTransformer::Bound& w, std::size_t wq, std::size_t wk,
                                std::size_t wv, std::size_t wo, std::size_t bo) {
  return {w.vars[wq], w.vars[wk], w.vars[wv], w.vars[wo], w.vars[bo]};
}

}  // namespace

Var GeoTransformer::feed_forward(const Bound& w, const FeedForwardIds& ff, Var x) const {
  const Var hidden = ad::relu(ad::add_row_bias(ad::matmul(x, w.vars[ff.w1]), w.vars[ff.b1]));
  return ad::add_row_bias(ad::matmul(hidden, w.vars[ff.w2]), w.vars[ff.b2]);
}

Var GeoTransformer::encode(const Bound& w, const TokenSeq& tokens, const TokenGeoTag& tags) const {
  return encode(w, tokens, tags, nullptr);
}

Var GeoTransformer::encode(const Bound& w, const TokenSeq& tokens, const TokenGeoTag& tags,
                           std::vector<Var>* scores) const {
  const std::size_t len = tokens.size();
  if (len == 0) throw LengthError("forward: empty token sequence");
  if (len > config_.max_seq_len) {
    throw LengthError("forward: sequence of " + std::to_string(len) + " tokens exceeds " +
                      std::to_string(config_.max_seq_len));
  }
  if (tags.size() != len) {
    throw ShapeError("forward: " + std::to_string(tags.size()) + " tags for " + std::to_string(len) +
                     " tokens");
  }
  const encoding::GeoRotary rot(config_.d_model);
  Var x = ad::embedding(w.vars[embedding_], tokens.ids);
  for (const auto& blk : encoder_) {
    const auto& a = blk.self;
    const auto attn = geo_attention(attention_vars(w, a.wq, a.wk, a.wv, a.wo, a.bo), x, x, tags, tags, rot);
    if (scores) scores->push_back(attn.scores);
    x = ad::layer_norm_rows(ad::add(x, attn.output), w.vars[blk.norm1.gain], w.vars[blk.norm1.bias]);
    x = ad::layer_norm_rows(ad::add(x, feed_forward(w, blk.ff, x)), w.vars[blk.norm2.gain],
                            w.vars[blk.norm2.bias]);
  }
  return x;
}

EncDecActivations GeoTransformer::forward(const Bound& w, const TokenSeq& tokens,
                                          const TokenGeoTag& tags) const {
  EncDecActivations act;
  const encoding::GeoRotary rot(config_.d_model);
  act.encoder_output = encode(w, tokens, tags, &act.attention_scores);

  // Decoder: same input tokens, no causal mask, identity tags on its own
  // tokens; cross-attention keys carry the encoder tags.
  const TokenGeoTag dec_tags = TokenGeoTag::identity(tokens.size());
  Var y = ad::embedding(w.vars[embedding_], tokens.ids);
  for (const auto& blk : decoder_) {
    const auto& s = blk.self;
    const auto self = geo_attention(attention_vars(w, s.wq, s.wk, s.wv, s.wo, s.bo), y, y, dec_tags, dec_tags, rot);
    act.attention_scores.push_back(self.scores);
    y = ad::layer_norm_rows(ad::add(y, self.output), w.vars[blk.norm1.gain], w.vars[blk.norm1.bias]);
    const auto& c = blk.cross;
    const auto cross = geo_attention(attention_vars(w, c.wq, c.wk, c.wv, c.wo, c.bo), y,
                                     act.encoder_output, dec_tags, tags, rot);
    act.attention_scores.push_back(cross.scores);
    y = ad::layer_norm_rows(ad::add(y, cross.output), w.vars[blk.norm2.gain], w.vars[blk.norm2.bias]);
    y = ad::layer_norm_rows(ad::add(y, feed_forward(w, blk.ff, y)), w.vars[blk.norm3.gain],
                            w.vars[blk.norm3.bias]);
  }
  act.logits = ad::add_row_bias(ad::matmul(y, w.vars[out_w_]), w.vars[out_b_]);
  return act;
}

EncDecActivations GeoTransformer::forward(Tape& tape, const TokenSeq& tokens, const TokenGeoTag& tags) {
  return forward(bind(tape), tokens, tags);
}

std::vector<Parameter*> GeoTransformer::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

Parameter& GeoTransformer::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw IndexError("no parameter named '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Checkpoints

void GeoTransformer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << kCheckpointMagic << " v" << kCheckpointVersion << "\n";
  out << "config d_model=" << config_.d_model << " n_heads=" << config_.n_heads
      << " n_blocks=" << config_.n_blocks << " d_ff=" << config_.d_ff
      << " vocab_size=" << config_.vocab_size << " max_seq_len=" << config_.max_seq_len << "\n";
  char buf[40];
  for (const auto& p : params_) {
    out << "param " << p.name << " " << p.value.rank();
    for (auto dim : p.value.shape()) out << " " << dim;
    out << "\n";
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%a", p.value[i]);
      out << (i ? " " : "") << buf;
    }
    out << "\n";
  }
  out << "end\n";
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

GeoTransformer GeoTransformer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string magic, version;
  in >> magic >> version;
  if (magic != kCheckpointMagic || version != "v" + std::to_string(kCheckpointVersion)) {
    throw ParseError("checkpoint: unrecognized header in " + path.string());
  }
  std::string word;
  in >> word;
  if (word != "config") throw ParseError("checkpoint: missing config line");
  ModelConfig cfg;
  const auto read_field = [&](const char* key, std::size_t& field) {
    std::string kv;
    in >> kv;
    const std::string prefix = std::string(key) + "=";
    if (kv.rfind(prefix, 0) != 0) throw ParseError("checkpoint: expected " + prefix);
    field = std::stoull(kv.substr(prefix.size()));
  };
  read_field("d_model", cfg.d_model);
  read_field("n_heads", cfg.n_heads);
  read_field("n_blocks", cfg.n_blocks);
  read_field("d_ff", cfg.d_ff);
  read_field("vocab_size", cfg.vocab_size);
  read_field("max_seq_len", cfg.max_seq_len);

  GeoTransformer model(cfg, 0, false);
  for (auto& p : model.params_) {
    std::string name;
    std::size_t rank = 0;
    in >> word >> name >> rank;
    if (!in || word != "param" || name != p.name || rank != p.value.rank()) {
      throw ParseError("checkpoint: expected parameter '" + p.name + "'");
    }
    for (std::size_t r = 0; r < rank; ++r) {
      std::size_t dim = 0;
      in >> dim;
      if (dim != p.value.shape()[r]) throw ParseError("checkpoint: shape mismatch for " + p.name);
    }
    for (auto& v : p.value.data()) {
      std::string tok;
      in >> tok;
      char* end = nullptr;
      v = std::strtod(tok.c_str(), &end);
      if (tok.empty() || end != tok.c_str() + tok.size()) {
        throw ParseError("checkpoint: bad value '" + tok + "' in " + p.name);
      }
    }
    p.value.check_finite(p.name);
  }
  in >> word;
  if (word != "end") throw ParseError("checkpoint: missing end marker");
  return model;
}

// ---------------------------------------------------------------------------
// Training

TrainExample make_example(const data::GeoSample& sample, TokenGeoTag tags) {
  TrainExample ex;
  ex.input = data::tokenize(sample.input_text);
  if (tags.size() != ex.input.size()) {
    throw ShapeError("make_example: tag count does not match token count");
  }
  ex.tags = std::move(tags);
  const TokenSeq target = data::tokenize(sample.target_text);
  if (target.size() > ex.input.size()) {
    throw LengthError("make_example: target '" + sample.target_text + "' longer than input");
  }
  ex.targets.assign(ex.input.size(), data::Vocabulary::kPad);
  ex.keep.assign(ex.input.size(), false);
  for (std::size_t i = 0; i < target.size(); ++i) {
    ex.targets[i] = target.ids[i];
    ex.keep[i] = true;
  }
  return ex;
}

Var batch_loss(Tape& tape, GeoTransformer& model, std::span<const TrainExample> batch) {
  if (batch.empty()) throw LengthError("batch_loss: empty batch");
  const auto bound = model.bind(tape);
  Var total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    const auto act = model.forward(bound, ex.input, ex.tags);
    const Var loss = ad::cross_entropy(act.logits, ex.targets, ex.keep);
    total = i == 0 ? loss : ad::add(total, loss);
  }
  return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

double train_step(GeoTransformer& model, std::span<const TrainExample> batch, ad::AdamState& adam) {
  const auto params = model.parameters();
  ad::zero_grads(params);
  Tape tape;
  const Var loss = batch_loss(tape, model, batch);
  const double value = loss.value().item();
  tape.backward(loss);
  ad::adam_step(params, adam);
  return value;
}

}  // namespace geotoken::model
