#pragma once

#include "psfcycle/layers.hpp"

#include <cmath>

namespace psfcycle {

struct DiscriminatorConfig {
  int n_blocks = 4;
  int base_channels = 64;
  bool leaky_relu = false;  // off: plain rectifier inside blocks
  double leaky_slope = 0.2;
  bool norm_first_block = true;  // off: the first block sees absolute intensities

  void validate() const {
    require(n_blocks >= 1, "discriminator n_blocks must be >= 1");
    require(base_channels >= 1, "discriminator base_channels must be >= 1");
  }
  Index min_side() const { return Index(1) << n_blocks; }
};

/// PatchGAN scorer: n_blocks stride-2 conv blocks (3x3x3 conv -> instance norm ->
/// rectifier), then a 3x3x3 projection to one channel. The last block skips the
/// norm: with a 16^3 input its map is a single voxel and instance norm would zero it.
/// Instance norm after the first conv removes global offset and gain, so
/// norm_first_block = false lets the scorer judge background level and brightness.
template <typename Scalar>
class Discriminator {
 public:
  struct Trace {
    Feature<Scalar> input;
    std::vector<typename ConvBlock<Scalar>::Trace> blocks;
    Shape3 out_shape;
  };

  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed, const std::string& name = "d") : cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x646973ULL));
    const double slope = cfg.leaky_relu ? cfg.leaky_slope : 0.0;
    Index in = 1;
    for (int b = 0; b < cfg.n_blocks; ++b) {
      const Index out = Index(cfg.base_channels) << std::min(b, 3);
      const bool norm = b + 1 < cfg.n_blocks && (b > 0 || cfg.norm_first_block);
      blocks_.emplace_back(name + ".block" + std::to_string(b), in, out, 2, norm, slope, rng);
      in = out;
    }
    proj_ = Conv3d<Scalar>(name + ".proj", in, 1, 3, 1, rng);
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  /// Score map of side input/2^n_blocks; pass a trace to enable backward().
  Volume<Scalar> forward(const Volume<Scalar>& x, Trace* trace = nullptr) const {
    const Index m = cfg_.min_side();
    require(x.depth() % m == 0 && x.height() % m == 0 && x.width() % m == 0,
            "discriminator input " + to_string(x.shape()) + " must be a multiple of " + std::to_string(m));
    Feature<Scalar> h = to_feature(x);
    if (trace) {
      trace->input = h;
      trace->blocks.assign(blocks_.size(), {});
    }
    for (std::size_t b = 0; b < blocks_.size(); ++b) h = blocks_[b].forward(h, trace ? &trace->blocks[b] : nullptr);
    Volume<Scalar> out = to_volume(proj_.forward(h));
    if (trace) trace->out_shape = out.shape();
    return out;
  }

  Volume<Scalar> backward(const Trace& t, const Volume<Scalar>& grad_scores, bool need_input_grad) {
    require(grad_scores.shape() == t.out_shape, "discriminator gradient shape mismatch");
    Feature<Scalar> g;
    proj_.backward(t.blocks.back().out, to_feature(grad_scores), &g);
    for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
      const Feature<Scalar>& in = b == 0 ? t.input : t.blocks[b - 1].out;
      const bool need = b > 0 || need_input_grad;
      Feature<Scalar> gin;
      blocks_[b].backward(in, t.blocks[b], g, need ? &gin : nullptr);
      g = std::move(gin);
    }
    if (!need_input_grad) return {};
    return to_volume(g);
  }

  ParamRefs<Scalar> parameters() {
    ParamRefs<Scalar> ps;
    for (auto& b : blocks_) {
      auto more = b.parameters();
      ps.insert(ps.end(), more.begin(), more.end());
    }
    auto more = proj_.parameters();
    ps.insert(ps.end(), more.begin(), more.end());
    return ps;
  }

 private:
  DiscriminatorConfig cfg_;
  std::vector<ConvBlock<Scalar>> blocks_;
  Conv3d<Scalar> proj_;
};

/// Crop fractions for the multi-scale discriminators, full scale first.
struct ScaleSet {
  std::vector<double> scales{1.0, 0.5, 0.25};

  std::size_t size() const { return scales.size(); }

  void validate() const {
    require(!scales.empty(), "scale set must not be empty");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      require(scales[i] > 0.0 && scales[i] <= 1.0, "scale fractions must lie in (0,1]");
      if (i > 0) require(scales[i] < scales[i - 1], "scale fractions must be strictly decreasing");
    }
  }

  Index side(std::size_t i, Index full) const {
    return static_cast<Index>(std::lround(scales[i] * static_cast<double>(full)));
  }
};

struct CropBox {
  Index z, y, x, side;
};

/// Uniformly random cube placements for each scale; scale 1 covers the patch.
inline std::vector<CropBox> sample_crops(Index side, const ScaleSet& scales, Index min_side, std::uint64_t seed) {
  scales.validate();
  Rng rng(mix_seed(seed, 0x63726fULL));
  std::vector<CropBox> boxes;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const Index s = scales.side(i, side);
    require(s >= min_side, "crop side " + std::to_string(s) + " is below the discriminator minimum " +
                               std::to_string(min_side));
    const auto range = static_cast<std::uint64_t>(side - s + 1);
    const auto z = static_cast<Index>(rng.below(range));
    const auto y = static_cast<Index>(rng.below(range));
    const auto x = static_cast<Index>(rng.below(range));
    boxes.push_back({z, y, x, s});
  }
  return boxes;
}

template <typename Scalar>
std::vector<Volume<Scalar>> apply_crops(const Volume<Scalar>& p, const std::vector<CropBox>& boxes) {
  std::vector<Volume<Scalar>> crops;
  for (const auto& b : boxes) crops.push_back(b.side == p.depth() ? p : crop(p, b.z, b.y, b.x, {b.side, b.side, b.side}));
  return crops;
}

/// Native-resolution random cube crops of a cubic patch, one per scale.
template <typename Scalar>
std::vector<Volume<Scalar>> multiscale_crops(const Volume<Scalar>& p, const ScaleSet& scales, std::uint64_t seed,
                                             Index min_side = 16) {
  require(p.shape().cubic(), "multi-scale crops need a cubic patch");
  return apply_crops(p, sample_crops(p.depth(), scales, min_side, seed));
}

}  // namespace psfcycle
