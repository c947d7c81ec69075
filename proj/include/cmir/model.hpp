#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/ops.hpp"
#include "cmir/rng.hpp"
#include "cmir/tensor.hpp"

namespace cmir {

enum class Task { regression, classification };

/// Architecture of a CmIR network.
struct ModelConfig {
  std::vector<std::size_t> input_dims;  ///< raw feature width per modality
  std::size_t shared_dim = 150;         ///< d
  std::size_t hidden_dim = 256;         ///< d'
  std::size_t depth = 2;                ///< linear layers per encoder/decoder/predictor MLP
  std::size_t output_dim = 1;           ///< 1 for regression, class count otherwise
  bool unimodal_heads = false;          ///< per-modality linear heads for KL invariance

  std::size_t modalities() const { return input_dims.size(); }

  void validate() const {
    if (input_dims.empty()) throw ConfigError("model needs at least one modality");
    for (std::size_t d : input_dims) {
      if (d == 0) throw ConfigError("modality input dimension must be positive");
    }
    if (shared_dim == 0 || hidden_dim == 0 || depth == 0 || output_dim == 0) {
      throw ConfigError("model dimensions and depth must be positive");
    }
  }
};

/// y = x W + b, W is in x out.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, rng::Stream& stream)
      : weight(in, out), bias(1, out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : weight.values()) w = stream.uniform(-bound, bound);
    weight.requires_grad(true);
    bias.requires_grad(true);
  }

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }

  Tensor operator()(Tape& tape, const Tensor& x) const {
    return add(tape, matmul(tape, x, weight), bias);
  }
};

/// Stack of linear layers with relu between them (not after the last).
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth, rng::Stream& stream) {
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t fan_in = l == 0 ? in : hidden;
      const std::size_t fan_out = l + 1 == depth ? out : hidden;
      layers.emplace_back(fan_in, fan_out, stream);
    }
  }

  std::size_t in() const { return layers.front().in(); }

  Tensor operator()(Tape& tape, Tensor x) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      x = layers[l](tape, x);
      if (l + 1 < layers.size()) x = relu(tape, x);
    }
    return x;
  }
};

struct DisentangledPair {
  Tensor invariant;
  Tensor spurious;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Adapters, encoders, decoders and the fusion predictor.
class CmirModel {
 public:
  CmirModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const std::size_t d = config_.shared_dim;
    const std::size_t h = config_.hidden_dim;
    const std::size_t depth = config_.depth;
    rng::Stream stream(rng::derive_key(seed, "model-init"));
    for (std::size_t m = 0; m < config_.modalities(); ++m) {
      adapters_.emplace_back(config_.input_dims[m], d, stream);
      encoders_.emplace_back(d, h, 2 * d, depth, stream);
      decoders_.emplace_back(2 * d, h, d, depth, stream);
    }
    predictor_ = Mlp(config_.modalities() * d, h, config_.output_dim, depth, stream);
    if (config_.unimodal_heads) {
      for (std::size_t m = 0; m < config_.modalities(); ++m) {
        unimodal_.emplace_back(d, config_.output_dim, stream);
      }
    }
  }

  const ModelConfig& config() const { return config_; }
  std::size_t modalities() const { return config_.modalities(); }
  std::size_t shared_dim() const { return config_.shared_dim; }

  /// Raw modality features -> shared width d (linear + relu).
  Tensor adapt(Tape& tape, std::size_t m, const Tensor& raw) const {
    check_modality(m);
    if (raw.cols() != config_.input_dims[m]) {
      throw DimensionError("modality " + std::to_string(m) + " expects width " +
                           std::to_string(config_.input_dims[m]) + ", got " + raw.shape());
    }
    return relu(tape, adapters_[m](tape, raw));
  }

  DisentangledPair encode(Tape& tape, std::size_t m, const Tensor& x) const {
    check_modality(m);
    const std::size_t d = config_.shared_dim;
    if (x.cols() != d) {
      throw DimensionError("encoder expects width " + std::to_string(d) + ", got " + x.shape());
    }
    Tensor z = encoders_[m](tape, x);
    return {slice_cols(tape, z, 0, d), slice_cols(tape, z, d, d)};
  }

  Tensor decode(Tape& tape, std::size_t m, const DisentangledPair& pair) const {
    check_modality(m);
    const std::size_t d = config_.shared_dim;
    if (pair.invariant.cols() != d || !pair.invariant.same_shape(pair.spurious)) {
      throw DimensionError("decoder expects two Nx" + std::to_string(d) + " halves, got " +
                           pair.invariant.shape() + " and " + pair.spurious.shape());
    }
    return decoders_[m](tape, concat_cols(tape, {pair.invariant, pair.spurious}));
  }

  /// Fusion over per-modality representations in modality order. Scores are
  /// raw (regression) or logits (classification).
  Tensor predict(Tape& tape, const std::vector<Tensor>& invariants) const {
    if (invariants.size() != modalities()) {
      throw ArityError("predictor expects " + std::to_string(modalities()) +
                       " representations, got " + std::to_string(invariants.size()));
    }
    for (const Tensor& z : invariants) {
      if (z.cols() != config_.shared_dim || z.rows() != invariants.front().rows()) {
        throw DimensionError("predictor input " + z.shape() + " does not match shared width");
      }
    }
    return predictor_(tape, concat_cols(tape, invariants));
  }

  /// Logits of modality m's own head over its invariant representation.
  Tensor unimodal_logits(Tape& tape, std::size_t m, const Tensor& z_inv) const {
    check_modality(m);
    if (unimodal_.empty()) throw ConfigError("model was built without unimodal heads");
    return unimodal_[m](tape, z_inv);
  }

  /// Every trainable tensor exactly once, in a fixed order.
  std::vector<NamedParameter> named_parameters() const {
    std::vector<NamedParameter> out;
    auto add_linear = [&](const std::string& prefix, const Linear& l) {
      out.push_back({prefix + ".weight", l.weight});
      out.push_back({prefix + ".bias", l.bias});
    };
    auto add_mlp = [&](const std::string& prefix, const Mlp& mlp) {
      for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        add_linear(prefix + "." + std::to_string(l), mlp.layers[l]);
      }
    };
    for (std::size_t m = 0; m < modalities(); ++m) {
      const std::string idx = std::to_string(m);
      add_linear("adapter." + idx, adapters_[m]);
      add_mlp("encoder." + idx, encoders_[m]);
      add_mlp("decoder." + idx, decoders_[m]);
    }
    add_mlp("predictor", predictor_);
    for (std::size_t m = 0; m < unimodal_.size(); ++m) {
      add_linear("unimodal." + std::to_string(m), unimodal_[m]);
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named_parameters()) n += p.tensor.size();
    return n;
  }

  /// Deep copy; the copy shares no storage with this model.
  CmirModel clone() const {
    CmirModel copy = *this;
    copy.for_each_linear([&](Linear& l) {
      l.weight = l.weight.clone().requires_grad(true);
      l.bias = l.bias.clone().requires_grad(true);
    });
    return copy;
  }

 private:
  void check_modality(std::size_t m) const {
    if (m >= modalities()) {
      throw ArityError("modality index " + std::to_string(m) + " out of range");
    }
  }

  template <typename F>
  void for_each_linear(F&& f) {
    for (std::size_t m = 0; m < modalities(); ++m) {
      f(adapters_[m]);
      for (Linear& l : encoders_[m].layers) f(l);
      for (Linear& l : decoders_[m].layers) f(l);
    }
    for (Linear& l : predictor_.layers) f(l);
    for (Linear& l : unimodal_) f(l);
  }

  ModelConfig config_;
  std::vector<Linear> adapters_;
  std::vector<Mlp> encoders_;
  std::vector<Mlp> decoders_;
  Mlp predictor_;
  std::vector<Linear> unimodal_;
};

inline CmirModel init_model(const ModelConfig& config, std::uint64_t seed) {
  return CmirModel(config, seed);
}

}  // namespace cmir
