#pragma once

// Single-head encoder-decoder transformer whose only positional signal is the
// spherical rotation of attention queries and keys by per-token coordinates.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "geotoken/autodiff.hpp"
#include "geotoken/geodata.hpp"
#include "geotoken/optim.hpp"
#include "geotoken/spherical_encoding.hpp"

namespace geotoken::model {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using data::TokenGeoTag;
using data::TokenSeq;

struct ModelConfig {
  std::size_t d_model = 27;
  std::size_t n_heads = 1;
  std::size_t n_blocks = 1;
  std::size_t d_ff = 108;
  std::size_t vocab_size = data::Vocabulary::kSize;
  std::size_t max_seq_len = data::kMaxSeqLen;

  /// Throws InvalidDimensionError for d_model not divisible by 3 or by
  /// n_heads; only a single head is implemented.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Origin coordinates on the characters before '+', destination coordinates
/// after it, identity on '+' and special tokens. Throws ParseError if the
/// tokens do not spell the sample's input text.
TokenGeoTag assign_token_coordinates(const data::GeoSample& sample, const TokenSeq& tokens);

/// Differentiable per-row spherical rotation; rows with no tag pass through.
Var rotate_rows(Var x, const TokenGeoTag& tags, const encoding::GeoRotary& rot);

struct AttentionWeights {
  Var wq, wk, wv, wo, bo;
};

struct AttentionOutput {
  Var output;  // [Lq x d]
  Var scores;  // softmax(Q K^T / sqrt(d)), [Lq x Lk]
};

/// Projects queries from `xq` and keys/values from `xkv`, rotates the
/// projected Q and K rows by their tags, and attends. V is never rotated.
AttentionOutput geo_attention(const AttentionWeights& w, Var xq, Var xkv, const TokenGeoTag& tags_q,
                              const TokenGeoTag& tags_k, const encoding::GeoRotary& rot);

struct EncDecActivations {
  Var encoder_output;  // [L x d_model]
  Var logits;          // [L x vocab_size]
  // Encoder self-attention per block, then decoder self- and cross-attention
  // per block.
  std::vector<Var> attention_scores;
};

class GeoTransformer {
 public:
  /// Xavier-uniform weight matrices, unit layer-norm gains, zero biases. The
  /// output projection starts at zero so the initial prediction is uniform.
  GeoTransformer(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Parameters bound as leaves of one tape; reuse across samples in a batch.
  struct Bound;
  Bound bind(Tape& tape);

  EncDecActivations forward(const Bound& w, const TokenSeq& tokens, const TokenGeoTag& tags) const;
  EncDecActivations forward(Tape& tape, const TokenSeq& tokens, const TokenGeoTag& tags);
  /// Encoder stack only.
  Var encode(const Bound& w, const TokenSeq& tokens, const TokenGeoTag& tags) const;

  std::vector<Parameter*> parameters();
  Parameter& parameter(std::string_view name);
  std::size_t parameter_count() const { return params_.size(); }

  /// Versioned text checkpoint with hex-float values; round-trips bit-exactly.
  void save(const std::filesystem::path& path) const;
  static GeoTransformer load(const std::filesystem::path& path);

 private:
  struct AttentionIds {
    std::size_t wq, wk, wv, wo, bo;
  };
  struct NormIds {
    std::size_t gain, bias;
  };
  struct FeedForwardIds {
    std::size_t w1, b1, w2, b2;
  };
  struct EncoderBlockIds {
    AttentionIds self;
    NormIds norm1;
    FeedForwardIds ff;
    NormIds norm2;
  };
  struct DecoderBlockIds {
    AttentionIds self;
    NormIds norm1;
    AttentionIds cross;
    NormIds norm2;
    FeedForwardIds ff;
    NormIds norm3;
  };

  GeoTransformer(const ModelConfig& config, std::uint64_t seed, bool initialize);
  Var encode(const Bound& w, const TokenSeq& tokens, const TokenGeoTag& tags,
             std::vector<Var>* scores) const;
  Var feed_forward(const Bound& w, const FeedForwardIds& ff, Var x) const;
  std::size_t add_param(std::string name, std::vector<std::size_t> shape);
  AttentionIds add_attention(const std::string& prefix);
  NormIds add_norm(const std::string& prefix);
  FeedForwardIds add_feed_forward(const std::string& prefix);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::size_t embedding_ = 0;
  std::vector<EncoderBlockIds> encoder_;
  std::vector<DecoderBlockIds> decoder_;
  std::size_t out_w_ = 0;
  std::size_t out_b_ = 0;
};

struct GeoTransformer::Bound {
  std::vector<Var> vars;  // indexed like params_
};

// ---------------------------------------------------------------------------
// Training

struct TrainExample {
  TokenSeq input;
  TokenGeoTag tags;
  std::vector<int> targets;  // target text + EOS, PAD-filled to input length
  std::vector<bool> keep;    // true up to and including EOS
};

/// Throws LengthError if the target is longer than the input.
TrainExample make_example(const data::GeoSample& sample, TokenGeoTag tags);

/// Mean over the batch of each sample's masked position-wise cross-entropy.
Var batch_loss(Tape& tape, GeoTransformer& model, std::span<const TrainExample> batch);

/// Zero grads, forward, backward, Adam. Returns the loss before the update.
double train_step(GeoTransformer& model, std::span<const TrainExample> batch, ad::AdamState& adam);

}  // namespace geotoken::model
