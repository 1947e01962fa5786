#include "biounet/models.hpp"

#include <cmath>

#include "biounet/hash.hpp"

namespace biounet::nn {
namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::encoder:
      return "encoder";
    case ParamGroup::projection:
      return "projection";
    case ParamGroup::classifier:
      return "classifier";
    case ParamGroup::decoder:
      return "decoder";
  }
  return "?";
}

// ---- layers ---------------------------------------------------------------

template <typename T>
Conv<T>::Conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
              bool with_bias, Rng& rng)
    : options{stride, pad} {
  // He-uniform: fan-in scaled for ReLU networks.
  const double bound = std::sqrt(6.0 / static_cast<double>(in * kernel * kernel));
  weight = Parameter<T>(uniform_tensor<T>({out, in, kernel, kernel}, bound, rng));
  if (with_bias) bias.emplace(Tensor<T>({1, out, 1, 1}));
}

template <typename T>
Tensor<T> Conv<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  return ops::conv2d(tape, x, weight.value, bias ? &bias->value : nullptr, options);
}

template <typename T>
void Conv<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
  out.push_back({prefix + "weight", &weight});
  if (bias) out.push_back({prefix + "bias", &*bias});
}

template <typename T>
Norm<T>::Norm(std::size_t channels)
    : gamma(Tensor<T>::full({1, channels, 1, 1}, T(1))),
      beta(Tensor<T>({1, channels, 1, 1})),
      running{ops::NormStats<T>::identity(channels), ops::NormStats<T>::identity(channels)} {}

template <typename T>
Tensor<T> Norm<T>::forward(Tape<T>& tape, const Tensor<T>& x, NormMode mode, Domain domain) {
  return ops::batch_norm2d(tape, x, gamma.value, beta.value, mode, running[static_cast<std::size_t>(domain)]);
}

template <typename T>
void Norm<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
  out.push_back({prefix + "gamma", &gamma});
  out.push_back({prefix + "beta", &beta});
}

template <typename T>
void Norm<T>::collect_norms(std::vector<NormRef<T>>& out, const std::string& prefix) {
  out.push_back({prefix.substr(0, prefix.size() - 1), &running});
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(uniform_tensor<T>({in, out, 1, 1}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias(Tensor<T>({1, out, 1, 1})) {}

template <typename T>
Tensor<T> Linear<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  return ops::dense(tape, x, weight.value, bias.value);
}

template <typename T>
void Linear<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
  out.push_back({prefix + "weight", &weight});
  out.push_back({prefix + "bias", &bias});
}

// ---- bottleneck -----------------------------------------------------------

template <typename T>
Bottleneck<T>::Bottleneck(std::size_t in, std::size_t out, std::size_t stride, std::size_t expansion, Rng& rng) {
  const std::size_t mid = std::max<std::size_t>(1, out / std::max<std::size_t>(1, expansion));
  reduce = Conv<T>(in, mid, 1, 1, 0, false, rng);
  reduce_norm = Norm<T>(mid);
  spatial = Conv<T>(mid, mid, 3, stride, 1, false, rng);
  spatial_norm = Norm<T>(mid);
  expand = Conv<T>(mid, out, 1, 1, 0, false, rng);
  expand_norm = Norm<T>(out);
  if (stride != 1 || in != out) {
    shortcut.emplace(in, out, 1, stride, 0, false, rng);
    shortcut_norm.emplace(out);
  }
}

template <typename T>
Tensor<T> Bottleneck<T>::forward(Tape<T>& tape, const Tensor<T>& x, NormMode mode, Domain domain) {
  Tensor<T> h = ops::relu(tape, reduce_norm.forward(tape, reduce.forward(tape, x), mode, domain));
  h = ops::relu(tape, spatial_norm.forward(tape, spatial.forward(tape, h), mode, domain));
  h = expand_norm.forward(tape, expand.forward(tape, h), mode, domain);
  Tensor<T> skip = shortcut ? shortcut_norm->forward(tape, shortcut->forward(tape, x), mode, domain) : x;
  return ops::relu(tape, ops::add(tape, h, skip));
}

template <typename T>
void Bottleneck<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
  reduce.collect(out, prefix + "reduce.");
  reduce_norm.collect(out, prefix + "reduce_norm.");
  spatial.collect(out, prefix + "spatial.");
  spatial_norm.collect(out, prefix + "spatial_norm.");
  expand.collect(out, prefix + "expand.");
  expand_norm.collect(out, prefix + "expand_norm.");
  if (shortcut) {
    shortcut->collect(out, prefix + "shortcut.");
    shortcut_norm->collect(out, prefix + "shortcut_norm.");
  }
}

template <typename T>
void Bottleneck<T>::collect_norms(std::vector<NormRef<T>>& out, const std::string& prefix) {
  reduce_norm.collect_norms(out, prefix + "reduce_norm.");
  spatial_norm.collect_norms(out, prefix + "spatial_norm.");
  expand_norm.collect_norms(out, prefix + "expand_norm.");
  if (shortcut_norm) shortcut_norm->collect_norms(out, prefix + "shortcut_norm.");
}

// ---- encoder --------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  if (config.in_channels == 0) throw ContractError("encoder: in_channels must be positive");
  for (auto w : config.stage_widths)
    if (w == 0) throw ContractError("encoder: stage widths must be positive");
  Rng rng = Rng::derive(seed, {0x656e63ULL});
  const std::size_t w0 = config.stage_widths[0];
  stem_ = Conv<T>(config.in_channels, w0, 3, 1, 1, false, rng);
  stem_norm_ = Norm<T>(w0);
  std::size_t in = w0;
  for (std::size_t s = 0; s < EncoderConfig::kStages; ++s) {
    const std::size_t out = config.stage_widths[s];
    for (std::size_t b = 0; b < EncoderConfig::kBlocksPerStage; ++b) {
      blocks_.emplace_back(b == 0 ? in : out, out, b == 0 ? 2 : 1, config.expansion, rng);
    }
    in = out;
  }
}

template <typename T>
EncoderOutput<T> Encoder<T>::forward(Tape<T>& tape, const Tensor<T>& x, NormMode mode, Domain domain) {
  if (x.shape().c != config_.in_channels) {
    throw DimensionError("encoder expects " + std::to_string(config_.in_channels) + " input channels, got " +
                         x.shape().str());
  }
  const std::size_t factor = std::size_t{1} << EncoderConfig::kStages;
  if (x.shape().h % factor != 0 || x.shape().w % factor != 0) {
    throw DimensionError("encoder input extent must be a multiple of " + std::to_string(factor) + ", got " +
                         x.shape().str());
  }
  EncoderOutput<T> out;
  Tensor<T> h = ops::relu(tape, stem_norm_.forward(tape, stem_.forward(tape, x), mode, domain));
  out.skips[0] = h;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i].forward(tape, h, mode, domain);
    out.blocks[i] = h;
    const std::size_t stage = i / EncoderConfig::kBlocksPerStage;
    const bool stage_end = (i + 1) % EncoderConfig::kBlocksPerStage == 0;
    if (stage_end && stage + 1 < EncoderConfig::kStages) out.skips[stage + 1] = h;
  }
  out.features = h;
  return out;
}

template <typename T>
void Encoder<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
  stem_.collect(out, prefix + "stem.");
  stem_norm_.collect(out, prefix + "stem_norm.");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + "block" + std::to_string(i + 1) + ".");
}

template <typename T>
void Encoder<T>::collect_norms(std::vector<NormRef<T>>& out, const std::string& prefix) {
  stem_norm_.collect_norms(out, prefix + "stem_norm.");
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect_norms(out, prefix + "block" + std::to_string(i + 1) + ".");
}

template <typename T>
void Encoder<T>::set_trainable(bool on) {
  std::vector<ParamRef<T>> refs;
  collect(refs);
  for (auto& r : refs) r.param->value.set_requires_grad(on);
}

// ---- heads ----------------------------------------------------------------

template <typename T>
ClassifierHead<T>::ClassifierHead(std::size_t features, std::size_t width, std::uint64_t seed) : width_(width) {
  if (width == 0) throw ContractError("classifier width must be positive");
  Rng rng = Rng::derive(seed, {0x636c73ULL});
  fc_ = Linear<T>(features, width, rng);
}

template <typename T>
Tensor<T> ClassifierHead<T>::logits(Tape<T>& tape, const Tensor<T>& features) const {
  return fc_.forward(tape, ops::pool2d(tape, features, ops::PoolKind::global_avg));
}

template <typename T>
void ClassifierHead<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
  fc_.collect(out, prefix + "fc.");
}

template <typename T>
void ClassifierHead<T>::set_trainable(bool on) {
  fc_.weight.value.set_requires_grad(on);
  fc_.bias.value.set_requires_grad(on);
}

template <typename T>
ProjectionHead<T>::ProjectionHead(std::size_t features, std::size_t hidden, std::size_t out, std::uint64_t seed)
    : out_(out) {
  Rng rng = Rng::derive(seed, {0x70726aULL});
  hidden_ = Linear<T>(features, hidden, rng);
  output_ = Linear<T>(hidden, out, rng);
}

template <typename T>
Tensor<T> ProjectionHead<T>::forward(Tape<T>& tape, const Tensor<T>& features) const {
  Tensor<T> pooled = ops::pool2d(tape, features, ops::PoolKind::global_avg);
  return output_.forward(tape, ops::relu(tape, hidden_.forward(tape, pooled)));
}

template <typename T>
void ProjectionHead<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
  hidden_.collect(out, prefix + "hidden.");
  output_.collect(out, prefix + "output.");
}

// ---- decoder --------------------------------------------------------------

template <typename T>
Decoder<T>::Decoder(const EncoderConfig& encoder, const DecoderConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng = Rng::derive(seed, {0x646563ULL});
  adapter_ = Conv<T>(config.stack_channels, encoder.in_channels, 1, 1, 0, true, rng);
  // Skip widths shallow -> deep: stem, stage 1, stage 2, stage 3.
  const auto& sw = encoder.stage_widths;
  const std::array<std::size_t, 4> skip_widths{sw[0], sw[0], sw[1], sw[2]};
  std::size_t prev = sw[3];
  for (std::size_t u = 0; u < 4; ++u) {
    const std::size_t skip = skip_widths[3 - u];
    const std::size_t width = config.widths[u];
    UpStage st;
    st.conv1 = Conv<T>(prev + skip, width, 3, 1, 1, false, rng);
    st.norm1 = Norm<T>(width);
    st.conv2 = Conv<T>(width, width, 3, 1, 1, false, rng);
    st.norm2 = Norm<T>(width);
    stages_.push_back(std::move(st));
    prev = width;
  }
  head_ = Conv<T>(prev, 1, 1, 1, 0, true, rng);
}

template <typename T>
Tensor<T> Decoder<T>::adapt(Tape<T>& tape, const Tensor<T>& stack) const {
  if (stack.shape().c != config_.stack_channels) {
    throw DimensionError("decoder adapter expects a " + std::to_string(config_.stack_channels) +
                         "-channel heatmap stack, got " + stack.shape().str());
  }
  return adapter_.forward(tape, stack);
}

template <typename T>
Tensor<T> Decoder<T>::forward(Tape<T>& tape, const EncoderOutput<T>& encoded, NormMode mode, Domain domain) {
  Tensor<T> h = encoded.features;
  for (std::size_t u = 0; u < stages_.size(); ++u) {
    const Tensor<T>& skip = encoded.skips[3 - u];
    h = ops::upsample_nearest(tape, h, skip.shape().h, skip.shape().w);
    h = ops::concat_channels(tape, std::vector<Tensor<T>>{h, skip});
    auto& st = stages_[u];
    h = ops::relu(tape, st.norm1.forward(tape, st.conv1.forward(tape, h), mode, domain));
    h = ops::relu(tape, st.norm2.forward(tape, st.conv2.forward(tape, h), mode, domain));
  }
  return ops::sigmoid(tape, head_.forward(tape, h));
}

template <typename T>
void Decoder<T>::collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
  adapter_.collect(out, prefix + "adapter.");
  for (std::size_t u = 0; u < stages_.size(); ++u) {
    const std::string p = prefix + "up" + std::to_string(u + 1) + ".";
    stages_[u].conv1.collect(out, p + "conv1.");
    stages_[u].norm1.collect(out, p + "norm1.");
    stages_[u].conv2.collect(out, p + "conv2.");
    stages_[u].norm2.collect(out, p + "norm2.");
  }
  head_.collect(out, prefix + "head.");
}

template <typename T>
void Decoder<T>::collect_norms(std::vector<NormRef<T>>& out, const std::string& prefix) {
  for (std::size_t u = 0; u < stages_.size(); ++u) {
    const std::string p = prefix + "up" + std::to_string(u + 1) + ".";
    stages_[u].norm1.collect_norms(out, p + "norm1.");
    stages_[u].norm2.collect_norms(out, p + "norm2.");
  }
}

// ---- bundle ---------------------------------------------------------------

template <typename T>
BioUNet<T>::BioUNet(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      encoder_(config.encoder, seed),
      classifier_(config.encoder.stage_widths.back(), config.classifier_width, seed),
      projection_(config.encoder.stage_widths.back(), config.encoder.stage_widths.back(), config.projection_dim,
                  seed),
      decoder_(config.encoder, config.decoder, seed) {}

template <typename T>
Tensor<T> BioUNet<T>::logits(Tape<T>& tape, const Tensor<T>& images, NormMode mode) {
  auto enc = encoder_.forward(tape, images, mode, Domain::image);
  return classifier_.logits(tape, enc.features);
}

template <typename T>
Tensor<T> BioUNet<T>::classify(Tape<T>& tape, const Tensor<T>& images, NormMode mode) {
  return ops::sigmoid(tape, logits(tape, images, mode));
}

template <typename T>
Tensor<T> BioUNet<T>::segment(Tape<T>& tape, const Tensor<T>& stack, NormMode mode) {
  Tensor<T> adapted = decoder_.adapt(tape, stack);
  auto enc = encoder_.forward(tape, adapted, mode, Domain::heatmap);
  return decoder_.forward(tape, enc, mode, Domain::heatmap);
}

template <typename T>
Tensor<T> BioUNet<T>::project(Tape<T>& tape, const Tensor<T>& images, NormMode mode) {
  auto enc = encoder_.forward(tape, images, mode, Domain::image);
  return projection_.forward(tape, enc.features);
}

template <typename T>
std::vector<ParamRef<T>> BioUNet<T>::parameters(ParamGroup group) {
  std::vector<ParamRef<T>> out;
  switch (group) {
    case ParamGroup::encoder:
      encoder_.collect(out);
      break;
    case ParamGroup::projection:
      projection_.collect(out);
      break;
    case ParamGroup::classifier:
      classifier_.collect(out);
      break;
    case ParamGroup::decoder:
      decoder_.collect(out);
      break;
  }
  return out;
}

template <typename T>
std::vector<ParamRef<T>> BioUNet<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (auto g : kAllGroups) {
    auto part = parameters(g);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

template <typename T>
std::vector<NormRef<T>> BioUNet<T>::norms() {
  std::vector<NormRef<T>> out;
  encoder_.collect_norms(out);
  decoder_.collect_norms(out);
  return out;
}

template <typename T>
void BioUNet<T>::zero_grad() {
  for (auto& p : parameters()) p.param->value.clear_grad();
}

template <typename T>
std::uint64_t group_hash(BioUNet<T>& model, ParamGroup group) {
  std::uint64_t h = hash_string(group_name(group));
  for (auto& p : model.parameters(group)) {
    h = hash_string(p.name, h);
    h = hash_span<T>(p.param->value.data(), h);
  }
  std::vector<NormRef<T>> norms;
  if (group == ParamGroup::encoder) model.encoder().collect_norms(norms);
  if (group == ParamGroup::decoder) model.decoder().collect_norms(norms);
  for (auto& n : norms)
    for (auto& s : *n.stats) {
      h = hash_span<T>(s.mean, h);
      h = hash_span<T>(s.var, h);
    }
  return h;
}

template struct Conv<float>;
template struct Conv<double>;
template struct Norm<float>;
template struct Norm<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct Bottleneck<float>;
template struct Bottleneck<double>;
template class Encoder<float>;
template class Encoder<double>;
template class ClassifierHead<float>;
template class ClassifierHead<double>;
template class ProjectionHead<float>;
template class ProjectionHead<double>;
template class Decoder<float>;
template class Decoder<double>;
template class BioUNet<float>;
template class BioUNet<double>;
template std::uint64_t group_hash(BioUNet<float>&, ParamGroup);
template std::uint64_t group_hash(BioUNet<double>&, ParamGroup);

}  // namespace biounet::nn
