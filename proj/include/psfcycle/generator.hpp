#pragma once

#include "psfcycle/layers.hpp"

#include <cmath>

namespace psfcycle {

struct GeneratorConfig {
  int base_channels = 64;
  int depth_levels = 3;  // number of stride-2 downsamplings
  double output_bias = 0.0;  // initial bias of the final projection (logit space)

  void validate() const {
    require(base_channels >= 1, "generator base_channels must be >= 1");
    require(depth_levels >= 1, "generator depth_levels must be >= 1");
    require(std::isfinite(output_bias), "generator output_bias must be finite");
  }
  Index side_divisor() const { return Index(1) << depth_levels; }
};

/// 3D U-Net mapping a single-channel patch to a same-shape patch in (0,1).
///
/// Level 0 runs one conv block at full resolution with base_channels features.
/// Each deeper level opens with a stride-2 conv block that doubles the channels
/// and follows with a stride-1 block. The expanding path upsamples with a 2x2x2
/// transposed conv, concatenates the matching contracting-path features and
/// fuses them with one conv block. A 1x1x1 projection and a sigmoid finish.
/// Every conv block is 3x3x3 conv -> instance norm -> ReLU.
template <typename Scalar>
class Generator {
 public:
  struct Trace {
    Feature<Scalar> input;
    std::vector<std::vector<typename ConvBlock<Scalar>::Trace>> enc;
    std::vector<Feature<Scalar>> up;
    std::vector<Feature<Scalar>> cat;
    std::vector<typename ConvBlock<Scalar>::Trace> dec;
    Feature<Scalar> head_in;
    Volume<Scalar> output;
  };

  Generator() = default;
  Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x67656eULL));
    const int levels = cfg.depth_levels;
    auto ch = [&](int l) { return Index(cfg.base_channels) << l; };
    enc_.resize(levels + 1);
    enc_[0].emplace_back("enc0.0", 1, ch(0), 1, true, 0.0, rng);
    for (int l = 1; l <= levels; ++l) {
      const std::string p = "enc" + std::to_string(l);
      enc_[l].emplace_back(p + ".0", ch(l - 1), ch(l), 2, true, 0.0, rng);
      enc_[l].emplace_back(p + ".1", ch(l), ch(l), 1, true, 0.0, rng);
    }
    for (int l = 0; l < levels; ++l) {
      up_.emplace_back("up" + std::to_string(l), ch(l + 1), ch(l), rng);
      dec_.emplace_back("dec" + std::to_string(l), 2 * ch(l), ch(l), 1, true, 0.0, rng);
    }
    head_ = Conv3d<Scalar>("head", ch(0), 1, 1, 1, rng);
    head_.bias().value.setConstant(static_cast<Scalar>(cfg.output_bias));
  }

  const GeneratorConfig& config() const { return cfg_; }
  Index side_divisor() const { return cfg_.side_divisor(); }

  /// Forward pass; pass a trace to enable backward(), or nullptr for inference.
  Volume<Scalar> forward(const Volume<Scalar>& x, Trace* trace = nullptr) const {
    const Index div = cfg_.side_divisor();
    require(x.depth() % div == 0 && x.height() % div == 0 && x.width() % div == 0,
            "generator input " + to_string(x.shape()) + " must be divisible by " + std::to_string(div));
    const int levels = cfg_.depth_levels;
    Trace local;
    Trace& t = trace ? *trace : local;
    const bool keep = trace != nullptr;
    t.enc.assign(levels + 1, {});
    t.up.assign(levels, {});
    t.cat.assign(levels, {});
    t.dec.assign(levels, {});

    t.input = to_feature(x);
    std::vector<Feature<Scalar>> skips(levels + 1);
    Feature<Scalar> h = t.input;
    for (int l = 0; l <= levels; ++l) {
      t.enc[l].resize(enc_[l].size());
      for (std::size_t b = 0; b < enc_[l].size(); ++b) h = enc_[l][b].forward(h, keep ? &t.enc[l][b] : nullptr);
      if (l < levels) skips[l] = h;
    }
    for (int l = levels - 1; l >= 0; --l) {
      Feature<Scalar> u = up_[l].forward(h);
      Feature<Scalar> c = concat_channels(u, skips[l]);
      skips[l] = {};
      h = dec_[l].forward(c, keep ? &t.dec[l] : nullptr);
      if (keep) {
        t.up[l] = std::move(u);
        t.cat[l] = std::move(c);
      }
    }
    Feature<Scalar> logits = head_.forward(h);
    logits.data = logits.data.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
    Volume<Scalar> out = to_volume(logits);
    if (keep) {
      t.head_in = std::move(h);
      t.output = out;
    } else {
      t = {};
    }
    return out;
  }

  /// Accumulates parameter gradients for d<grad_out, output>; returns the input
  /// gradient when need_input_grad is set (otherwise an empty volume).
  Volume<Scalar> backward(const Trace& t, const Volume<Scalar>& grad_out, bool need_input_grad) {
    require(grad_out.shape() == t.output.shape(), "generator gradient shape mismatch");
    const int levels = cfg_.depth_levels;
    Feature<Scalar> g = to_feature(grad_out);
    const auto& y = t.output.array();
    g.data.array() *= (y * (Scalar(1) - y)).transpose();
    Feature<Scalar> gh;
    head_.backward(t.head_in, g, &gh);

    std::vector<Feature<Scalar>> skip_grads(levels);
    for (int l = 0; l < levels; ++l) {
      Feature<Scalar> gc;
      dec_[l].backward(t.cat[l], t.dec[l], gh, &gc);
      const Index cu = t.up[l].channels();
      Feature<Scalar> gu(gc.data.topRows(cu), gc.shape);
      skip_grads[l] = Feature<Scalar>(gc.data.bottomRows(gc.channels() - cu), gc.shape);
      const Feature<Scalar>& up_in = l + 1 == levels ? enc_output(t, levels) : t.dec[l + 1].out;
      up_[l].backward(up_in, gu, &gh);
    }
    for (int l = levels; l >= 0; --l) {
      if (l < levels) gh.data += skip_grads[l].data;
      for (int b = static_cast<int>(enc_[l].size()) - 1; b >= 0; --b) {
        const Feature<Scalar>& in = block_input(t, l, b);
        const bool need = need_input_grad || l > 0 || b > 0;
        Feature<Scalar> gin;
        enc_[l][b].backward(in, t.enc[l][b], gh, need ? &gin : nullptr);
        gh = std::move(gin);
      }
    }
    if (!need_input_grad) return {};
    return to_volume(gh);
  }

  ParamRefs<Scalar> parameters() {
    ParamRefs<Scalar> ps;
    auto add = [&](ParamRefs<Scalar> more) { ps.insert(ps.end(), more.begin(), more.end()); };
    for (auto& level : enc_)
      for (auto& b : level) add(b.parameters());
    for (auto& u : up_) add(u.parameters());
    for (auto& d : dec_) add(d.parameters());
    add(head_.parameters());
    return ps;
  }

  Index first_layer_channels() const { return enc_[0][0].conv().out_channels(); }

 private:
  const Feature<Scalar>& enc_output(const Trace& t, int level) const { return t.enc[level].back().out; }

  const Feature<Scalar>& block_input(const Trace& t, int level, int block) const {
    if (block > 0) return t.enc[level][block - 1].out;
    if (level == 0) return t.input;
    return enc_output(t, level - 1);
  }

  GeneratorConfig cfg_;
  std::vector<std::vector<ConvBlock<Scalar>>> enc_;
  std::vector<UpConv3d<Scalar>> up_;
  std::vector<ConvBlock<Scalar>> dec_;
  Conv3d<Scalar> head_;
};

}  // namespace psfcycle
