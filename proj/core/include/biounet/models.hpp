#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "biounet/ops.hpp"
#include "biounet/random.hpp"
#include "biounet/tape.hpp"
#include "biounet/tensor.hpp"

namespace biounet::nn {

using ops::NormMode;

/// Which input distribution a forward pass sees. The shared encoder keeps
/// separate running normalization statistics for images and heatmap stacks;
/// weights are shared.
enum class Domain : std::size_t { image = 0, heatmap = 1 };

/// Parameter groups of the pipeline: encoder (theta), projection head
/// (theta1), classifier head (theta2), decoder plus input adapter (theta3).
enum class ParamGroup { encoder, projection, classifier, decoder };
inline constexpr std::array<ParamGroup, 4> kAllGroups{ParamGroup::encoder, ParamGroup::projection,
                                                      ParamGroup::classifier, ParamGroup::decoder};
const char* group_name(ParamGroup group);

template <typename T>
struct ParamRef {
  std::string name;
  Parameter<T>* param;
};

template <typename T>
using RunningStats = std::array<ops::NormStats<T>, 2>;

template <typename T>
struct NormRef {
  std::string name;
  RunningStats<T>* stats;
};

template <typename T>
struct Conv {
  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
  ops::ConvOptions options;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad, bool with_bias,
       Rng& rng);
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);
};

template <typename T>
struct Norm {
  Parameter<T> gamma;
  Parameter<T> beta;
  RunningStats<T> running;

  Norm() = default;
  explicit Norm(std::size_t channels);
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, NormMode mode, Domain domain);
  void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);
  void collect_norms(std::vector<NormRef<T>>& out, const std::string& prefix);
};

template <typename T>
struct Linear {
  Parameter<T> weight;  // (in, out, 1, 1)
  Parameter<T> bias;    // (1, out, 1, 1)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);
};

struct EncoderConfig {
  static constexpr std::size_t kStages = 4;
  static constexpr std::size_t kBlocksPerStage = 3;  // one downsampling block + two residual blocks
  static constexpr std::size_t kBlockCount = kStages * kBlocksPerStage;

  std::size_t in_channels = 3;
  std::array<std::size_t, kStages> stage_widths{16, 32, 64, 128};
  std::size_t expansion = 4;  // bottleneck width = stage width / expansion

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// 1x1 reduce -> 3x3 (strided when downsampling) -> 1x1 expand, each followed
/// by normalization, with an identity or 1x1 projection shortcut.
template <typename T>
struct Bottleneck {
  Conv<T> reduce, spatial, expand;
  Norm<T> reduce_norm, spatial_norm, expand_norm;
  std::optional<Conv<T>> shortcut;
  std::optional<Norm<T>> shortcut_norm;

  Bottleneck() = default;
  Bottleneck(std::size_t in, std::size_t out, std::size_t stride, std::size_t expansion, Rng& rng);
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, NormMode mode, Domain domain);
  void collect(std::vector<ParamRef<T>>& out, const std::string& prefix);
  void collect_norms(std::vector<NormRef<T>>& out, const std::string& prefix);
};

template <typename T>
struct EncoderOutput {
  Tensor<T> features;                                           // deepest stage output
  std::array<Tensor<T>, EncoderConfig::kStages> skips;          // stem, stage 1..3; shallow -> deep
  std::array<Tensor<T>, EncoderConfig::kBlockCount> blocks;     // tap points, block 1..12
};

/// Shared encoder: a 3x3 stem at full resolution, then four stages of three
/// bottleneck blocks, each stage halving the resolution once.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, std::uint64_t seed);

  EncoderOutput<T> forward(Tape<T>& tape, const Tensor<T>& x, NormMode mode, Domain domain);

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t feature_width() const noexcept { return config_.stage_widths.back(); }
  std::size_t block_count() const noexcept { return blocks_.size(); }
  Bottleneck<T>& block(std::size_t index) { return blocks_.at(index); }

  void collect(std::vector<ParamRef<T>>& out, const std::string& prefix = "encoder.");
  void collect_norms(std::vector<NormRef<T>>& out, const std::string& prefix = "encoder.");
  void set_trainable(bool on);

 private:
  EncoderConfig config_;
  Conv<T> stem_;
  Norm<T> stem_norm_;
  std::vector<Bottleneck<T>> blocks_;
};

/// fc1: global average pool -> dense. Returns logits; apply a sigmoid for
/// probabilities.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t features, std::size_t width, std::uint64_t seed);

  Tensor<T> logits(Tape<T>& tape, const Tensor<T>& features) const;
  std::size_t width() const noexcept { return width_; }
  Linear<T>& linear() noexcept { return fc_; }

  void collect(std::vector<ParamRef<T>>& out, const std::string& prefix = "classifier.");
  void set_trainable(bool on);

 private:
  std::size_t width_ = 1;
  Linear<T> fc_;
};

/// P1: global average pool -> dense -> relu -> dense.
template <typename T>
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(std::size_t features, std::size_t hidden, std::size_t out, std::uint64_t seed);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& features) const;
  std::size_t out_dim() const noexcept { return out_; }

  void collect(std::vector<ParamRef<T>>& out, const std::string& prefix = "projection.");

 private:
  std::size_t out_ = 128;
  Linear<T> hidden_;
  Linear<T> output_;
};

struct DecoderConfig {
  std::array<std::size_t, 4> widths{32, 16, 8, 8};  // deep -> shallow
  std::size_t stack_channels = 12;                   // heatmap stack depth fed to the adapter

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

/// D1 plus the 1x1 input adapter that maps a heatmap stack to the encoder's
/// input channel count. Four up-stages (nearest upsample, skip concat, two
/// 3x3 convolutions), then a 1x1 convolution and a sigmoid.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const EncoderConfig& encoder, const DecoderConfig& config, std::uint64_t seed);

  Tensor<T> adapt(Tape<T>& tape, const Tensor<T>& stack) const;
  Tensor<T> forward(Tape<T>& tape, const EncoderOutput<T>& encoded, NormMode mode, Domain domain);

  const DecoderConfig& config() const noexcept { return config_; }
  void collect(std::vector<ParamRef<T>>& out, const std::string& prefix = "decoder.");
  void collect_norms(std::vector<NormRef<T>>& out, const std::string& prefix = "decoder.");

 private:
  struct UpStage {
    Conv<T> conv1, conv2;
    Norm<T> norm1, norm2;
  };
  DecoderConfig config_;
  Conv<T> adapter_;
  std::vector<UpStage> stages_;
  Conv<T> head_;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::size_t classifier_width = 1;
  std::size_t projection_dim = 128;
  std::size_t image_size = 64;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// The three subnetworks sharing one encoder:
///   f_Res(x) = fc1(E1(x)),  f_Seg(H) = D1(E1(adapter(H))),  f_CLR(x) = P1(E1(x)).
template <typename T>
class BioUNet {
 public:
  BioUNet() = default;
  BioUNet(const ModelConfig& config, std::uint64_t seed);

  /// Pre-sigmoid scores, (N, classifier_width, 1, 1).
  Tensor<T> logits(Tape<T>& tape, const Tensor<T>& images, NormMode mode);
  Tensor<T> classify(Tape<T>& tape, const Tensor<T>& images, NormMode mode);
  /// Soft mask (N, 1, H, W) from a heatmap stack (N, 12, H, W).
  Tensor<T> segment(Tape<T>& tape, const Tensor<T>& stack, NormMode mode);
  /// (N, 128, 1, 1) projection embeddings.
  Tensor<T> project(Tape<T>& tape, const Tensor<T>& images, NormMode mode);

  const ModelConfig& config() const noexcept { return config_; }
  Encoder<T>& encoder() noexcept { return encoder_; }
  ClassifierHead<T>& classifier() noexcept { return classifier_; }
  ProjectionHead<T>& projection() noexcept { return projection_; }
  Decoder<T>& decoder() noexcept { return decoder_; }
  const Encoder<T>& encoder() const noexcept { return encoder_; }
  const ClassifierHead<T>& classifier() const noexcept { return classifier_; }

  std::vector<ParamRef<T>> parameters(ParamGroup group);
  std::vector<ParamRef<T>> parameters();
  std::vector<NormRef<T>> norms();
  void zero_grad();

 private:
  ModelConfig config_;
  Encoder<T> encoder_;
  ClassifierHead<T> classifier_;
  ProjectionHead<T> projection_;
  Decoder<T> decoder_;
};

/// Stable content hash of a parameter group (values only).
template <typename T>
std::uint64_t group_hash(BioUNet<T>& model, ParamGroup group);

extern template class Encoder<float>;
extern template class Encoder<double>;
extern template class ClassifierHead<float>;
extern template class ClassifierHead<double>;
extern template class ProjectionHead<float>;
extern template class ProjectionHead<double>;
extern template class Decoder<float>;
extern template class Decoder<double>;
extern template class BioUNet<float>;
extern template class BioUNet<double>;

}  // namespace biounet::nn
