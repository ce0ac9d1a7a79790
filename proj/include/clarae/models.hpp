#pragma once

// CLARAE encoder-decoder, a strided/transposed-convolution baseline with the
// same bottleneck, and the latent-space rhythm classifier.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "clarae/ops.hpp"
#include "clarae/tensor.hpp"

namespace clarae {

/// A tensor with its stable name inside a model's state.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

enum class LayerKind { conv, dense, norm };

struct ParamGroup {
  std::string name;
  LayerKind kind;
  std::size_t count;
};

/// Trainable parameter totals. The dense share is the fraction held by the two
/// largest dense layers; it is undefined (throws) for an empty model.
struct ParamCount {
  std::size_t total = 0;
  std::size_t top2_dense = 0;

  double top2_dense_share() const {
    if (total == 0) throw std::domain_error("param_count: dense share of an empty model is undefined");
    return static_cast<double>(top2_dense) / static_cast<double>(total);
  }
};

inline ParamCount param_count(std::span<const ParamGroup> groups) {
  ParamCount pc;
  std::size_t first = 0, second = 0;
  for (const auto& g : groups) {
    pc.total += g.count;
    if (g.kind != LayerKind::dense) continue;
    if (g.count > first) {
      second = first;
      first = g.count;
    } else if (g.count > second) {
      second = g.count;
    }
  }
  pc.top2_dense = first + second;
  return pc;
}

struct ClaraeConfig {
  std::size_t input_len = 1250;
  std::size_t latent_dim = 64;
  std::size_t kernel = 7;
  std::size_t block1_channels = 128;
  std::size_t block2_channels = 64;
  std::size_t dense_hidden = 2048;
  double leaky_alpha = 0.3;
  double dropout_p = 0.2;
  std::vector<std::size_t> decoder_stage_channels{128, 128, 128, 128};

  static constexpr std::size_t encoder_pools = 4;

  /// Reduced configuration used for CPU-scale runs.
  static ClaraeConfig desk() {
    ClaraeConfig c;
    c.block1_channels = 16;
    c.block2_channels = 8;
    c.dense_hidden = 256;
    c.decoder_stage_channels = {16, 16, 16, 16};
    return c;
  }

  std::size_t decoder_stages() const { return decoder_stage_channels.size(); }

  /// Sequence length after the four floor-halving pools (78 for 1250).
  std::size_t pooled_len() const {
    std::size_t l = input_len;
    for (std::size_t i = 0; i < encoder_pools; ++i) l /= 2;
    return l;
  }

  std::size_t flatten_size() const { return block2_channels * pooled_len(); }

  /// Decoder length before the final resize to input_len.
  std::size_t native_output_len() const { return pooled_len() << decoder_stages(); }

  double compression_ratio() const {
    return static_cast<double>(input_len) / static_cast<double>(latent_dim);
  }

  void validate() const {
    if (kernel == 0 || kernel % 2 == 0) throw std::invalid_argument("config: kernel must be odd");
    if (latent_dim == 0 || block1_channels == 0 || block2_channels == 0 || dense_hidden == 0) {
      throw std::invalid_argument("config: dimensions must be positive");
    }
    if (pooled_len() < 2) {
      throw std::invalid_argument("config: input_len " + std::to_string(input_len) +
                                  " pools down to fewer than 2 samples");
    }
    if (decoder_stages() == 0) throw std::invalid_argument("config: need at least one decoder stage");
    for (auto c : decoder_stage_channels) {
      if (c == 0) throw std::invalid_argument("config: decoder channels must be positive");
    }
    if (native_output_len() > input_len) {
      throw std::invalid_argument("config: decoder stages overshoot input_len");
    }
    if (!(leaky_alpha >= 0.0)) throw std::invalid_argument("config: leaky_alpha must be >= 0");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("config: dropout_p in [0,1)");
  }

  bool operator==(const ClaraeConfig&) const = default;
};

namespace layers {

template <typename T>
void fill_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
}

template <typename T>
struct Conv {
  Tensor<T> weight, bias;

  Conv() = default;
  // transposed: weight is [in, out, K] and fan-in is scaled by 1/stride.
  Conv(std::size_t in, std::size_t out, std::size_t k, std::mt19937_64& rng, bool transposed = false,
       std::size_t stride = 1)
      : weight(transposed ? Shape{in, out, k} : Shape{out, in, k}, true), bias(Shape{out}, true) {
    const double fan_in = static_cast<double>(in * k) / static_cast<double>(stride);
    fill_uniform(weight, std::sqrt(6.0 / fan_in), rng);
  }
  std::size_t count() const { return weight.size() + bias.size(); }
};

template <typename T>
struct Dense {
  Tensor<T> weight, bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(Shape{out, in}, true), bias(Shape{out}, true) {
    fill_uniform(weight, std::sqrt(6.0 / static_cast<double>(in)), rng);
  }
  std::size_t count() const { return weight.size() + bias.size(); }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const { return dense(tape, x, weight, bias); }
};

template <typename T>
struct Norm {
  Tensor<T> gamma, beta;
  BatchNormState<T> state;

  Norm() = default;
  explicit Norm(std::size_t ch)
      : gamma(Shape{ch}, std::vector<T>(ch, T{1}), true), beta(Shape{ch}, true), state(ch) {}
  std::size_t count() const { return gamma.size() + beta.size(); }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    return batchnorm1d(tape, x, gamma, beta, state, mode);
  }
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    return batchnorm1d(tape, x, gamma, beta, state);
  }
};

template <typename T>
void push_conv(std::vector<NamedTensor<T>>& out, const std::string& p, const Conv<T>& c) {
  out.push_back({p + ".weight", c.weight});
  out.push_back({p + ".bias", c.bias});
}
template <typename T>
void push_dense(std::vector<NamedTensor<T>>& out, const std::string& p, const Dense<T>& d) {
  out.push_back({p + ".weight", d.weight});
  out.push_back({p + ".bias", d.bias});
}
template <typename T>
void push_norm(std::vector<NamedTensor<T>>& out, const std::string& p, const Norm<T>& n, bool buffers) {
  if (buffers) {
    out.push_back({p + ".running_mean", n.state.running_mean});
    out.push_back({p + ".running_var", n.state.running_var});
  } else {
    out.push_back({p + ".gamma", n.gamma});
    out.push_back({p + ".beta", n.beta});
  }
}

/// Copies values from `source` into the same-named tensors of `target`.
template <typename T>
void copy_state(const std::vector<NamedTensor<T>>& target, const std::vector<NamedTensor<T>>& source) {
  if (target.size() != source.size()) {
    throw DataError("state: expected " + std::to_string(target.size()) + " tensors, got " +
                    std::to_string(source.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& dst = target[i];
    const NamedTensor<T>* src = nullptr;
    if (source[i].name == dst.name) {
      src = &source[i];
    } else {
      for (const auto& s : source) {
        if (s.name == dst.name) src = &s;
      }
    }
    if (!src) throw DataError("state: missing tensor " + dst.name);
    if (src->tensor.shape() != dst.tensor.shape()) {
      throw DataError("state: tensor " + dst.name + " has shape " + to_string(src->tensor.shape()) +
                      ", model expects " + to_string(dst.tensor.shape()));
    }
    auto d = dst.tensor;
    std::copy(src->tensor.values().begin(), src->tensor.values().end(), d.values().begin());
  }
}

// Shared dense bottleneck: encoder head flatten -> hidden -> latent (tanh),
// decoder head latent -> hidden -> flatten.
template <typename T>
struct Bottleneck {
  Dense<T> enc_hidden, enc_latent, dec_hidden, dec_out;

  Bottleneck() = default;
  Bottleneck(const ClaraeConfig& c, std::mt19937_64& rng)
      : enc_hidden(c.flatten_size(), c.dense_hidden, rng),
        enc_latent(c.dense_hidden, c.latent_dim, rng),
        dec_hidden(c.latent_dim, c.dense_hidden, rng),
        dec_out(c.dense_hidden, c.flatten_size(), rng) {}
};

}  // namespace layers

/// Shapes batch inputs: [L] -> [1,1,L], [B,L] -> [B,1,L], [B,1,L] unchanged.
template <typename T>
Tensor<T> as_signal_batch(Tape<T>& tape, const Tensor<T>& x, std::size_t input_len) {
  if (x.shape().back() != input_len) {
    throw ShapeError("model: expected signals of length " + std::to_string(input_len) + ", got " +
                     to_string(x.shape()));
  }
  if (x.rank() == 3) {
    if (x.dim(1) != 1) throw ShapeError("model: expected a single input channel");
    return x;
  }
  if (x.rank() == 1) return reshape(tape, x, {1, 1, input_len});
  if (x.rank() == 2) return reshape(tape, x, {x.dim(0), 1, input_len});
  throw ShapeError("model: unsupported input shape " + to_string(x.shape()));
}

template <typename T>
Tensor<T> as_latent_batch(const Tensor<T>& z, std::size_t latent_dim) {
  if (z.shape().back() != latent_dim || z.rank() > 2) {
    throw ShapeError("model: expected latent of dimension " + std::to_string(latent_dim) + ", got " +
                     to_string(z.shape()));
  }
  return z;
}

/// The CLARAE encoder-decoder:
///   [Conv(b1) BN LReLU Pool] x2, [Conv(b2) BN LReLU Pool] x2, flatten,
///   Dense(hidden) Dropout LReLU, Dense(d) tanh
///   Dense(hidden) LReLU Dropout, Dense(flatten), reshape(b2, w),
///   [Upsample x2, Conv, BN, LReLU] x stages, Upsample to input_len, Conv(1) tanh.
///
/// Non-const forward passes use the model's mode (train mode updates batch
/// norm statistics and draws dropout masks). The const infer_* overloads always
/// run in eval mode and never mutate the model, so a frozen model can serve
/// concurrent callers.
template <typename T = float>
class Clarae {
 public:
  using value_type = T;

  explicit Clarae(ClaraeConfig config = {}, std::uint64_t seed = 0) : cfg_(std::move(config)), rng_(seed) {
    cfg_.validate();
    std::mt19937_64 init(seed);
    const std::size_t k = cfg_.kernel;
    const std::size_t enc_ch[4] = {cfg_.block1_channels, cfg_.block1_channels, cfg_.block2_channels,
                                   cfg_.block2_channels};
    std::size_t in = 1;
    for (std::size_t i = 0; i < 4; ++i) {
      enc_conv_.emplace_back(in, enc_ch[i], k, init);
      enc_norm_.emplace_back(enc_ch[i]);
      in = enc_ch[i];
    }
    head_ = layers::Bottleneck<T>(cfg_, init);
    in = cfg_.block2_channels;
    for (auto ch : cfg_.decoder_stage_channels) {
      dec_conv_.emplace_back(in, ch, k, init);
      dec_norm_.emplace_back(ch);
      in = ch;
    }
    out_conv_ = layers::Conv<T>(in, 1, k, init);
  }

  const ClaraeConfig& config() const { return cfg_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }
  void reseed_dropout(std::uint64_t seed) { rng_.seed(seed); }

  Tensor<T> encode(Tape<T>& tape, const Tensor<T>& x) { return encode_impl(*this, tape, x, mode_); }
  Tensor<T> decode(Tape<T>& tape, const Tensor<T>& z) { return decode_impl(*this, tape, z, mode_); }
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) { return decode(tape, encode(tape, x)); }

  Tensor<T> infer_encode(const Tensor<T>& x) const {
    auto tape = Tape<T>::inference();
    return encode_impl(*this, tape, x, Mode::eval);
  }
  Tensor<T> infer_decode(const Tensor<T>& z) const {
    auto tape = Tape<T>::inference();
    return decode_impl(*this, tape, z, Mode::eval);
  }
  Tensor<T> infer(const Tensor<T>& x) const { return infer_decode(infer_encode(x)); }

  std::vector<T> encode(std::span<const T> signal) const {
    auto z = infer_encode(Tensor<T>({signal.size()}, std::vector<T>(signal.begin(), signal.end())));
    return {z.values().begin(), z.values().end()};
  }
  std::vector<T> decode(std::span<const T> latent) const {
    auto y = infer_decode(Tensor<T>({latent.size()}, std::vector<T>(latent.begin(), latent.end())));
    return {y.values().begin(), y.values().end()};
  }
  std::vector<T> reconstruct(std::span<const T> signal) const {
    auto y = infer(Tensor<T>({signal.size()}, std::vector<T>(signal.begin(), signal.end())));
    return {y.values().begin(), y.values().end()};
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
  }

  std::vector<NamedTensor<T>> named_parameters() const { return collect(false); }

  /// Parameters followed by batch-norm running statistics, in a fixed order.
  std::vector<NamedTensor<T>> state() const {
    auto s = collect(false);
    auto b = collect(true);
    s.insert(s.end(), b.begin(), b.end());
    return s;
  }

  void load_state(const std::vector<NamedTensor<T>>& source) { layers::copy_state(state(), source); }

  std::vector<ParamGroup> param_groups() const {
    std::vector<ParamGroup> g;
    for (std::size_t i = 0; i < enc_conv_.size(); ++i) {
      g.push_back({"encoder.conv" + std::to_string(i), LayerKind::conv, enc_conv_[i].count()});
      g.push_back({"encoder.norm" + std::to_string(i), LayerKind::norm, enc_norm_[i].count()});
    }
    g.push_back({"encoder.dense_hidden", LayerKind::dense, head_.enc_hidden.count()});
    g.push_back({"encoder.dense_latent", LayerKind::dense, head_.enc_latent.count()});
    g.push_back({"decoder.dense_hidden", LayerKind::dense, head_.dec_hidden.count()});
    g.push_back({"decoder.dense_out", LayerKind::dense, head_.dec_out.count()});
    for (std::size_t i = 0; i < dec_conv_.size(); ++i) {
      g.push_back({"decoder.conv" + std::to_string(i), LayerKind::conv, dec_conv_[i].count()});
      g.push_back({"decoder.norm" + std::to_string(i), LayerKind::norm, dec_norm_[i].count()});
    }
    g.push_back({"decoder.out_conv", LayerKind::conv, out_conv_.count()});
    return g;
  }

 private:
  template <class Self>
  static Tensor<T> encode_impl(Self& self, Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    const auto& c = self.cfg_;
    const T alpha = static_cast<T>(c.leaky_alpha);
    Tensor<T> h = as_signal_batch(tape, x, c.input_len);
    const std::size_t batch = h.dim(0);
    for (std::size_t i = 0; i < self.enc_conv_.size(); ++i) {
      h = conv1d(tape, h, self.enc_conv_[i].weight, self.enc_conv_[i].bias);
      h = norm(self.enc_norm_[i], tape, h, mode);
      h = leaky_relu(tape, h, alpha);
      h = maxpool1d(tape, h);
    }
    h = reshape(tape, h, {batch, c.flatten_size()});
    h = self.head_.enc_hidden(tape, h);
    h = drop(self, tape, h, mode);
    h = leaky_relu(tape, h, alpha);
    h = self.head_.enc_latent(tape, h);
    h = clarae::tanh(tape, h);
    if (x.rank() == 1) h = reshape(tape, h, {c.latent_dim});
    return h;
  }

  template <class Self>
  static Tensor<T> decode_impl(Self& self, Tape<T>& tape, const Tensor<T>& z, Mode mode) {
    const auto& c = self.cfg_;
    const T alpha = static_cast<T>(c.leaky_alpha);
    Tensor<T> h = as_latent_batch(z, c.latent_dim);
    const std::size_t batch = h.rank() == 2 ? h.dim(0) : 1;
    h = self.head_.dec_hidden(tape, h);
    h = leaky_relu(tape, h, alpha);
    h = drop(self, tape, h, mode);
    h = self.head_.dec_out(tape, h);
    h = reshape(tape, h, {batch, c.block2_channels, c.pooled_len()});
    for (std::size_t i = 0; i < self.dec_conv_.size(); ++i) {
      h = linear_upsample(tape, h, 2 * h.dim(2));
      h = conv1d(tape, h, self.dec_conv_[i].weight, self.dec_conv_[i].bias);
      h = norm(self.dec_norm_[i], tape, h, mode);
      h = leaky_relu(tape, h, alpha);
    }
    h = linear_upsample(tape, h, c.input_len);
    h = conv1d(tape, h, self.out_conv_.weight, self.out_conv_.bias);
    h = clarae::tanh(tape, h);
    if (z.rank() == 1) h = reshape(tape, h, {1, c.input_len});
    return h;
  }

  template <class Layer>
  static Tensor<T> norm(Layer& layer, Tape<T>& tape, const Tensor<T>& h, Mode mode) {
    if constexpr (std::is_const_v<Layer>) {
      return layer(tape, h);
    } else {
      return layer(tape, h, mode);
    }
  }

  template <class Self>
  static Tensor<T> drop(Self& self, Tape<T>& tape, const Tensor<T>& h, Mode mode) {
    if constexpr (std::is_const_v<Self>) {
      return h;
    } else {
      return dropout(tape, h, self.cfg_.dropout_p, mode, self.rng_);
    }
  }

  std::vector<NamedTensor<T>> collect(bool buffers) const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < enc_conv_.size(); ++i) {
      const auto p = "encoder.conv" + std::to_string(i);
      if (!buffers) layers::push_conv(out, p, enc_conv_[i]);
      layers::push_norm(out, "encoder.norm" + std::to_string(i), enc_norm_[i], buffers);
    }
    if (!buffers) {
      layers::push_dense(out, "encoder.dense_hidden", head_.enc_hidden);
      layers::push_dense(out, "encoder.dense_latent", head_.enc_latent);
      layers::push_dense(out, "decoder.dense_hidden", head_.dec_hidden);
      layers::push_dense(out, "decoder.dense_out", head_.dec_out);
    }
    for (std::size_t i = 0; i < dec_conv_.size(); ++i) {
      if (!buffers) layers::push_conv(out, "decoder.conv" + std::to_string(i), dec_conv_[i]);
      layers::push_norm(out, "decoder.norm" + std::to_string(i), dec_norm_[i], buffers);
    }
    if (!buffers) layers::push_conv(out, "decoder.out_conv", out_conv_);
    return out;
  }

  ClaraeConfig cfg_;
  Mode mode_ = Mode::train;
  std::mt19937_64 rng_;
  std::vector<layers::Conv<T>> enc_conv_;
  std::vector<layers::Norm<T>> enc_norm_;
  layers::Bottleneck<T> head_;
  std::vector<layers::Conv<T>> dec_conv_;
  std::vector<layers::Norm<T>> dec_norm_;
  layers::Conv<T> out_conv_;
};

/// Denoising autoencoder in the FCN-DAE / CNN-DAE style: stride-2 convolutions
/// downsample, stride-2 transposed convolutions upsample. It shares CLARAE's
/// dense bottleneck and channel plan so the two differ only in how length is
/// reduced and restored.
template <typename T = float>
class BaselineDae {
 public:
  using value_type = T;

  explicit BaselineDae(ClaraeConfig config = {}, std::uint64_t seed = 0)
      : cfg_(std::move(config)), rng_(seed) {
    cfg_.validate();
    std::mt19937_64 init(seed);
    const std::size_t k = cfg_.kernel;
    const std::size_t enc_ch[4] = {cfg_.block1_channels, cfg_.block1_channels, cfg_.block2_channels,
                                   cfg_.block2_channels};
    std::size_t in = 1;
    for (std::size_t i = 0; i < 4; ++i) {
      enc_conv_.emplace_back(in, enc_ch[i], k, init);
      enc_norm_.emplace_back(enc_ch[i]);
      in = enc_ch[i];
    }
    head_ = layers::Bottleneck<T>(cfg_, init);
    in = cfg_.block2_channels;
    for (auto ch : cfg_.decoder_stage_channels) {
      dec_conv_.emplace_back(in, ch, k, init, true, 2);
      dec_norm_.emplace_back(ch);
      in = ch;
    }
    out_conv_ = layers::Conv<T>(in, 1, k, init);
  }

  const ClaraeConfig& config() const { return cfg_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  void reseed_dropout(std::uint64_t seed) { rng_.seed(seed); }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) { return run(*this, tape, x, mode_); }

  Tensor<T> infer(const Tensor<T>& x) const {
    auto tape = Tape<T>::inference();
    return run(*this, tape, x, Mode::eval);
  }

  std::vector<T> reconstruct(std::span<const T> signal) const {
    auto y = infer(Tensor<T>({signal.size()}, std::vector<T>(signal.begin(), signal.end())));
    return {y.values().begin(), y.values().end()};
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& nt : collect(false)) out.push_back(nt.tensor);
    return out;
  }
  std::vector<NamedTensor<T>> named_parameters() const { return collect(false); }
  std::vector<NamedTensor<T>> state() const {
    auto s = collect(false);
    auto b = collect(true);
    s.insert(s.end(), b.begin(), b.end());
    return s;
  }
  void load_state(const std::vector<NamedTensor<T>>& source) { layers::copy_state(state(), source); }

  std::vector<ParamGroup> param_groups() const {
    std::vector<ParamGroup> g;
    for (std::size_t i = 0; i < enc_conv_.size(); ++i) {
      g.push_back({"encoder.conv" + std::to_string(i), LayerKind::conv, enc_conv_[i].count()});
      g.push_back({"encoder.norm" + std::to_string(i), LayerKind::norm, enc_norm_[i].count()});
    }
    g.push_back({"encoder.dense_hidden", LayerKind::dense, head_.enc_hidden.count()});
    g.push_back({"encoder.dense_latent", LayerKind::dense, head_.enc_latent.count()});
    g.push_back({"decoder.dense_hidden", LayerKind::dense, head_.dec_hidden.count()});
    g.push_back({"decoder.dense_out", LayerKind::dense, head_.dec_out.count()});
    for (std::size_t i = 0; i < dec_conv_.size(); ++i) {
      g.push_back({"decoder.tconv" + std::to_string(i), LayerKind::conv, dec_conv_[i].count()});
      g.push_back({"decoder.norm" + std::to_string(i), LayerKind::norm, dec_norm_[i].count()});
    }
    g.push_back({"decoder.out_conv", LayerKind::conv, out_conv_.count()});
    return g;
  }

 private:
  // Stride-2 geometry with output length floor(L/2), matching the pooled chain.
  ConvGeometry down_geometry() const {
    const std::size_t half = (cfg_.kernel - 1) / 2;
    return {2, half, half - 1};
  }

  template <class Self>
  static Tensor<T> run(Self& self, Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    const auto& c = self.cfg_;
    const T alpha = static_cast<T>(c.leaky_alpha);
    Tensor<T> h = as_signal_batch(tape, x, c.input_len);
    const std::size_t batch = h.dim(0);
    for (std::size_t i = 0; i < self.enc_conv_.size(); ++i) {
      h = conv1d(tape, h, self.enc_conv_[i].weight, self.enc_conv_[i].bias, self.down_geometry());
      h = norm(self.enc_norm_[i], tape, h, mode);
      h = leaky_relu(tape, h, alpha);
    }
    h = reshape(tape, h, {batch, c.flatten_size()});
    h = self.head_.enc_hidden(tape, h);
    h = drop(self, tape, h, mode);
    h = leaky_relu(tape, h, alpha);
    h = self.head_.enc_latent(tape, h);
    h = clarae::tanh(tape, h);
    h = self.head_.dec_hidden(tape, h);
    h = leaky_relu(tape, h, alpha);
    h = drop(self, tape, h, mode);
    h = self.head_.dec_out(tape, h);
    h = reshape(tape, h, {batch, c.block2_channels, c.pooled_len()});
    for (std::size_t i = 0; i < self.dec_conv_.size(); ++i) {
      h = conv1d_transpose(tape, h, self.dec_conv_[i].weight, self.dec_conv_[i].bias, 2);
      h = norm(self.dec_norm_[i], tape, h, mode);
      h = leaky_relu(tape, h, alpha);
    }
    // Widened padding on the last convolution restores the exact input length.
    const std::size_t extra = c.input_len - h.dim(2) + c.kernel - 1;
    h = conv1d(tape, h, self.out_conv_.weight, self.out_conv_.bias, ConvGeometry{1, extra / 2, extra - extra / 2});
    h = clarae::tanh(tape, h);
    if (x.rank() == 1) h = reshape(tape, h, {1, c.input_len});
    return h;
  }

  template <class Layer>
  static Tensor<T> norm(Layer& layer, Tape<T>& tape, const Tensor<T>& h, Mode mode) {
    if constexpr (std::is_const_v<Layer>) {
      return layer(tape, h);
    } else {
      return layer(tape, h, mode);
    }
  }

  template <class Self>
  static Tensor<T> drop(Self& self, Tape<T>& tape, const Tensor<T>& h, Mode mode) {
    if constexpr (std::is_const_v<Self>) {
      return h;
    } else {
      return dropout(tape, h, self.cfg_.dropout_p, mode, self.rng_);
    }
  }

  std::vector<NamedTensor<T>> collect(bool buffers) const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < enc_conv_.size(); ++i) {
      if (!buffers) layers::push_conv(out, "encoder.conv" + std::to_string(i), enc_conv_[i]);
      layers::push_norm(out, "encoder.norm" + std::to_string(i), enc_norm_[i], buffers);
    }
    if (!buffers) {
      layers::push_dense(out, "encoder.dense_hidden", head_.enc_hidden);
      layers::push_dense(out, "encoder.dense_latent", head_.enc_latent);
      layers::push_dense(out, "decoder.dense_hidden", head_.dec_hidden);
      layers::push_dense(out, "decoder.dense_out", head_.dec_out);
    }
    for (std::size_t i = 0; i < dec_conv_.size(); ++i) {
      if (!buffers) layers::push_conv(out, "decoder.tconv" + std::to_string(i), dec_conv_[i]);
      layers::push_norm(out, "decoder.norm" + std::to_string(i), dec_norm_[i], buffers);
    }
    if (!buffers) layers::push_conv(out, "decoder.out_conv", out_conv_);
    return out;
  }

  ClaraeConfig cfg_;
  Mode mode_ = Mode::train;
  std::mt19937_64 rng_;
  std::vector<layers::Conv<T>> enc_conv_;
  std::vector<layers::Norm<T>> enc_norm_;
  layers::Bottleneck<T> head_;
  std::vector<layers::Conv<T>> dec_conv_;
  std::vector<layers::Norm<T>> dec_norm_;
  layers::Conv<T> out_conv_;
};

inline constexpr std::size_t kRhythmClasses = 3;

/// Latent-feature rhythm classifier: Dense(d -> hidden), ReLU, Dense(hidden -> 3).
/// forward() yields logits; probabilities() applies the softmax.
template <typename T = float>
class MlpClassifier {
 public:
  using value_type = T;

  explicit MlpClassifier(std::size_t latent_dim = 64, std::size_t hidden = 32, std::uint64_t seed = 0)
      : latent_dim_(latent_dim) {
    if (latent_dim == 0 || hidden == 0) throw std::invalid_argument("classifier: dimensions must be positive");
    std::mt19937_64 init(seed);
    hidden_ = layers::Dense<T>(latent_dim, hidden, init);
    out_ = layers::Dense<T>(hidden, kRhythmClasses, init);
  }

  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t hidden() const { return hidden_.bias.size(); }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& z) const {
    if (z.shape().back() != latent_dim_ || z.rank() > 2) {
      throw ShapeError("classifier: expected latent dimension " + std::to_string(latent_dim_) + ", got " +
                       to_string(z.shape()));
    }
    auto h = relu(tape, hidden_(tape, z));
    return out_(tape, h);
  }

  std::vector<T> probabilities(std::span<const T> latent) const {
    auto tape = Tape<T>::inference();
    auto logits = forward(tape, Tensor<T>({latent.size()}, std::vector<T>(latent.begin(), latent.end())));
    return softmax_rows<T>(logits.values(), kRhythmClasses);
  }

  int predict(std::span<const T> latent) const {
    auto p = probabilities(latent);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  std::vector<Tensor<T>> parameters() const { return {hidden_.weight, hidden_.bias, out_.weight, out_.bias}; }
  std::vector<NamedTensor<T>> state() const {
    return {{"hidden.weight", hidden_.weight}, {"hidden.bias", hidden_.bias},
            {"out.weight", out_.weight}, {"out.bias", out_.bias}};
  }
  void load_state(const std::vector<NamedTensor<T>>& source) { layers::copy_state(state(), source); }

  std::vector<ParamGroup> param_groups() const {
    return {{"hidden", LayerKind::dense, hidden_.count()}, {"out", LayerKind::dense, out_.count()}};
  }

 private:
  std::size_t latent_dim_;
  layers::Dense<T> hidden_;
  layers::Dense<T> out_;
};

}  // namespace clarae
