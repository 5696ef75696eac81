#pragma once

#include "psfcycle/adam.hpp"
#include "psfcycle/augment.hpp"
#include "psfcycle/discriminator.hpp"
#include "psfcycle/generator.hpp"
#include "psfcycle/losses.hpp"
#include "psfcycle/psf_layer.hpp"
#include "psfcycle/replay_buffer.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace psfcycle {

/// How the sharp-to-blurred mapping is modelled.
enum class ReverseModel {
  psf,   // a single trainable kernel
  unet,  // a second U-Net (ablation)
};

std::string to_string(ReverseModel m);
ReverseModel reverse_model_from_string(const std::string& s);

struct TrainConfig {
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 200;
  int decay_start_epoch = 40;
  int batch_size = 1;
  int buffer_capacity = 50;
  LossWeights weights;
  int psf_size = 20;
  int patch_size = 64;
  std::uint64_t seed = 0;

  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  ScaleSet scales;
  ReverseModel reverse = ReverseModel::psf;
  double psf_init_sigma = 2.0;
  bool psf_nonnegative = true;
  bool psf_unit_mass = false;  // rescale the kernel to mass <= 1 after each step
  double psf_lr_scale = 1.0;
  bool augment = true;
  AugmentSpec augmentation;

  void validate() const;
  AdamConfig adam() const { return {beta1, beta2, 1e-8}; }
};

/// lr0 up to decay_start_epoch, then linear to 0 at cfg.epochs.
double lr_schedule(const TrainConfig& cfg, int epoch);

/// All trainable modules of the cycle system.
struct CycleModel {
  Generator<float> g_ab;
  std::optional<PsfLayer<float>> psf;  // set for ReverseModel::psf
  std::optional<Generator<float>> g_ba;  // set for ReverseModel::unet
  std::vector<Discriminator<float>> d_a, d_b;  // one per scale

  static CycleModel build(const TrainConfig& cfg);

  ParamRefs<float> generator_parameters();
  /// Every parameter under a hierarchical checkpoint name, in a fixed order.
  std::vector<std::pair<std::string, Param<float>*>> named_parameters();
};

struct LossRecord {
  double adv_ab = 0, adv_ba = 0, cycle = 0, kernel_l1 = 0, g_total = 0, d_a = 0, d_b = 0;

  /// (term name, value) in log order.
  std::vector<std::pair<std::string, double>> terms() const;
};

/// Thrown when any loss term turns NaN or infinite; the message names the step.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainState {
  TrainConfig cfg;
  CycleModel model;
  Adam<float> g_opt;
  std::vector<Adam<float>> d_a_opt, d_b_opt;
  ReplayBuffer<float> pool_a, pool_b;  // fakes for D_A (from the reverse model) and D_B (from G_AB)
  int epoch = 0;           // completed epochs
  std::int64_t step = 0;   // completed optimizer steps

  static TrainState initial(const TrainConfig& cfg);
};

/// One generator update then one update of every discriminator, on a batch of
/// unpaired patches. `seed` drives crops and buffer draws for this step.
LossRecord train_step(TrainState& s, const std::vector<Volumef>& batch_a, const std::vector<Volumef>& batch_b,
                      std::uint64_t seed, double lr, int epoch = 0);

struct TrainHooks {
  std::function<void(int epoch, std::int64_t step, const LossRecord&)> on_step;
  std::function<void(const TrainState&)> on_epoch;  // after each completed epoch
};

/// Runs the remaining epochs of `s` over the two unpaired datasets.
void train(TrainState& s, const std::vector<Volumef>& domain_a, const std::vector<Volumef>& domain_b,
           const TrainHooks& hooks = {});

/// Supervised U-Net trained on (blurred, sharp) pairs with an L1 loss.
struct BaselineState {
  TrainConfig cfg;
  Generator<float> g;
  Adam<float> opt;
  int epoch = 0;
  std::int64_t step = 0;

  static BaselineState initial(const TrainConfig& cfg);
};

struct BaselineHooks {
  std::function<void(int epoch, std::int64_t step, double l1)> on_step;
  std::function<void(const BaselineState&)> on_epoch;
};

double baseline_step(BaselineState& s, const std::vector<std::pair<Volumef, Volumef>>& batch, double lr);

void train_supervised_baseline(BaselineState& s, const std::vector<std::pair<Volumef, Volumef>>& pairs,
                               const BaselineHooks& hooks = {});

}  // namespace psfcycle
