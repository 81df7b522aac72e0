#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fpforge/adam.hpp"
#include "fpforge/error.hpp"
#include "fpforge/ops.hpp"
#include "fpforge/rng.hpp"
#include "fpforge/tape.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge {

/// Kaiming-uniform weights, bound sqrt(6 / fan_in); zero bias.
template <class T>
struct Conv2dLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(std::size_t in, std::size_t out, std::size_t k, int stride_, int pad_, Rng& rng)
      : weight({out, in, k, k}), bias({out}), stride(stride_), pad(pad_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
    for (auto& w : weight.data()) w = static_cast<T>(rng.uniform(-bound, bound));
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    return conv2d(x, tape.param(weight), tape.param(bias), stride, pad);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

template <class T>
struct LinearLayer {
  Tensor<T> weight;
  Tensor<T> bias;

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng) : weight({out, in}), bias({out}) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (auto& w : weight.data()) w = static_cast<T>(rng.uniform(-bound, bound));
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) { return linear(x, tape.param(weight), tape.param(bias)); }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

/// Encoder: three stride-2 3x3 convs 3->16->32->64 with ReLU.
/// Decoder: three (2x nearest upsample, 3x3 conv) stages 64->32->16->3,
/// ReLU between stages and a sigmoid at the end.
template <class T>
struct AutoencoderParams {
  Conv2dLayer<T> enc1, enc2, enc3, dec1, dec2, dec3;

  explicit AutoencoderParams(std::uint64_t seed) {
    Rng rng(seed);
    enc1 = Conv2dLayer<T>(3, 16, 3, 2, 1, rng);
    enc2 = Conv2dLayer<T>(16, 32, 3, 2, 1, rng);
    enc3 = Conv2dLayer<T>(32, 64, 3, 2, 1, rng);
    dec1 = Conv2dLayer<T>(64, 32, 3, 1, 1, rng);
    dec2 = Conv2dLayer<T>(32, 16, 3, 1, 1, rng);
    dec3 = Conv2dLayer<T>(16, 3, 3, 1, 1, rng);
  }

  Var<T> forward(Tape<T>& tape, Var<T> x) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % 8 != 0 || s[3] % 8 != 0) {
      throw ValidationError("autoencoder expects N x 3 x H x W with H, W divisible by 8, got " + shape_str(s));
    }
    auto h = relu(enc1(tape, x));
    h = relu(enc2(tape, h));
    h = relu(enc3(tape, h));
    h = relu(dec1(tape, upsample_nearest2x(h)));
    h = relu(dec2(tape, upsample_nearest2x(h)));
    return sigmoid(dec3(tape, upsample_nearest2x(h)));
  }

  std::vector<NamedParam<T>> named_parameters() {
    std::vector<NamedParam<T>> out;
    enc1.collect("enc1", out);
    enc2.collect("enc2", out);
    enc3.collect("enc3", out);
    dec1.collect("dec1", out);
    dec2.collect("dec2", out);
    dec3.collect("dec3", out);
    return out;
  }
};

/// Three stride-2 convs 3->16->32->64, global average pool, linear to K logits.
template <class T>
struct DiscriminatorParams {
  std::size_t num_classes = 0;
  Conv2dLayer<T> c1, c2, c3;
  LinearLayer<T> fc;

  DiscriminatorParams(std::size_t k, std::uint64_t seed) : num_classes(k) {
    if (k < 1) throw ValidationError("discriminator needs at least one class");
    Rng rng(seed);
    c1 = Conv2dLayer<T>(3, 16, 3, 2, 1, rng);
    c2 = Conv2dLayer<T>(16, 32, 3, 2, 1, rng);
    c3 = Conv2dLayer<T>(32, 64, 3, 2, 1, rng);
    fc = LinearLayer<T>(64, k, rng);
  }

  Var<T> forward(Tape<T>& tape, Var<T> x) {
    auto h = relu(c1(tape, x));
    h = relu(c2(tape, h));
    h = relu(c3(tape, h));
    return fc(tape, global_avg_pool(h));
  }

  std::vector<NamedParam<T>> named_parameters() {
    std::vector<NamedParam<T>> out;
    c1.collect("c1", out);
    c2.collect("c2", out);
    c3.collect("c3", out);
    fc.collect("fc", out);
    return out;
  }
};

/// Channel widths of the four detector conv stages.
inline std::vector<std::size_t> detector_widths(const std::string& variant) {
  if (variant == "small") return {16, 32, 64, 64};
  if (variant == "smaller") return {8, 16, 32, 32};
  if (variant == "larger") return {32, 64, 128, 128};
  throw ValidationError("unknown detector variant '" + variant + "' (expected small, smaller or larger)");
}

/// Four stride-2 convs, global average pool, linear to one logit, sigmoid.
template <class T>
struct DetectorParams {
  std::string variant;
  std::vector<Conv2dLayer<T>> convs;
  LinearLayer<T> fc;

  DetectorParams(const std::string& variant_, std::uint64_t seed) : variant(variant_) {
    const auto widths = detector_widths(variant);
    Rng rng(seed);
    std::size_t in = 3;
    for (std::size_t w : widths) {
      convs.emplace_back(in, w, 3, 2, 1, rng);
      in = w;
    }
    fc = LinearLayer<T>(in, 1, rng);
  }

  /// Probabilities, shape [N, 1].
  Var<T> forward(Tape<T>& tape, Var<T> x) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3) throw ValidationError("detector expects N x 3 x H x W, got " + shape_str(s));
    auto h = x;
    for (auto& c : convs) h = relu(c(tape, h));
    return sigmoid(fc(tape, global_avg_pool(h)));
  }

  std::vector<NamedParam<T>> named_parameters() {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect("conv" + std::to_string(i + 1), out);
    fc.collect("fc", out);
    return out;
  }
};

/// FNV-1a over the raw parameter bytes; used to show a network was not modified.
template <class T>
std::uint64_t param_checksum(const std::vector<NamedParam<T>>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.tensor->storage().data());
    for (std::size_t i = 0; i < p.tensor->numel() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace fpforge
