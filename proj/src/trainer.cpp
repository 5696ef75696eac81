#include "psfcycle/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace psfcycle {

std::string to_string(ReverseModel m) { return m == ReverseModel::psf ? "psf" : "unet"; }

ReverseModel reverse_model_from_string(const std::string& s) {
  if (s == "psf") return ReverseModel::psf;
  if (s == "unet") return ReverseModel::unet;
  throw std::invalid_argument("reverse model must be \"psf\" or \"unet\", got \"" + s + "\"");
}

void TrainConfig::validate() const {
  require(lr0 >= 0.0 && std::isfinite(lr0), "lr0 must be finite and >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0,1)");
  require(epochs >= 0, "epochs must be >= 0");
  require(decay_start_epoch > 0, "decay_start_epoch must be > 0");
  require(epochs == 0 || decay_start_epoch < epochs, "decay_start_epoch must be < epochs");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(buffer_capacity >= 0, "buffer_capacity must be >= 0");
  weights.validate();
  generator.validate();
  discriminator.validate();
  scales.validate();
  require(patch_size >= 1 && patch_size % generator.side_divisor() == 0,
          "patch_size must be a positive multiple of " + std::to_string(generator.side_divisor()));
  for (std::size_t i = 0; i < scales.size(); ++i)
    require(scales.side(i, patch_size) >= discriminator.min_side() &&
                scales.side(i, patch_size) % discriminator.min_side() == 0,
            "crop side " + std::to_string(scales.side(i, patch_size)) + " is not a multiple of the discriminator minimum " +
                std::to_string(discriminator.min_side()));
  require(psf_size >= 1 && psf_size <= patch_size, "psf_size must lie in [1, patch_size]");
  require(psf_init_sigma > 0.0, "psf_init_sigma must be > 0");
  require(psf_lr_scale >= 0.0, "psf_lr_scale must be >= 0");
  require(augmentation.max_shift_fraction >= 0.0 && augmentation.max_shift_fraction < 0.5,
          "augmentation max_shift_fraction must lie in [0, 0.5)");
  require(augmentation.scale_lo > 0.0 && augmentation.scale_lo <= augmentation.scale_hi,
          "augmentation scale range must satisfy 0 < lo <= hi");
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  require(epoch >= 0 && epoch <= cfg.epochs,
          "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + "]");
  if (epoch <= cfg.decay_start_epoch) return cfg.lr0;
  return cfg.lr0 * static_cast<double>(cfg.epochs - epoch) / static_cast<double>(cfg.epochs - cfg.decay_start_epoch);
}

// ---------------------------------------------------------------------------

CycleModel CycleModel::build(const TrainConfig& cfg) {
  cfg.validate();
  CycleModel m;
  m.g_ab = Generator<float>(cfg.generator, mix_seed(cfg.seed, 0x676162ULL));
  if (cfg.reverse == ReverseModel::psf) {
    const double s = cfg.psf_init_sigma;
    const Index k = cfg.psf_size;
    m.psf.emplace(make_gaussian_kernel<float>({s, s, s}, {k, k, k}), cfg.psf_nonnegative);
    m.psf->theta().lr_scale = cfg.psf_lr_scale;
  } else {
    m.g_ba.emplace(cfg.generator, mix_seed(cfg.seed, 0x676261ULL));
  }
  for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
    m.d_a.emplace_back(cfg.discriminator, mix_seed(cfg.seed, 0x6461ULL, i), "d_a.s" + std::to_string(i));
    m.d_b.emplace_back(cfg.discriminator, mix_seed(cfg.seed, 0x6462ULL, i), "d_b.s" + std::to_string(i));
  }
  return m;
}

ParamRefs<float> CycleModel::generator_parameters() {
  ParamRefs<float> ps = g_ab.parameters();
  ParamRefs<float> rev = psf ? psf->parameters() : g_ba->parameters();
  ps.insert(ps.end(), rev.begin(), rev.end());
  return ps;
}

std::vector<std::pair<std::string, Param<float>*>> CycleModel::named_parameters() {
  std::vector<std::pair<std::string, Param<float>*>> out;
  for (auto* p : g_ab.parameters()) out.emplace_back("g_ab." + p->name, p);
  if (psf) {
    for (auto* p : psf->parameters()) out.emplace_back(p->name, p);
  } else {
    for (auto* p : g_ba->parameters()) out.emplace_back("g_ba." + p->name, p);
  }
  for (auto* ds : {&d_a, &d_b})
    for (auto& d : *ds)
      for (auto* p : d.parameters()) out.emplace_back(p->name, p);
  return out;
}

std::vector<std::pair<std::string, double>> LossRecord::terms() const {
  return {{"adv_ab", adv_ab}, {"adv_ba", adv_ba}, {"cycle", cycle}, {"kernel_l1", kernel_l1},
          {"g_total", g_total}, {"d_a", d_a},       {"d_b", d_b}};
}

TrainState TrainState::initial(const TrainConfig& cfg) {
  TrainState s;
  s.cfg = cfg;
  s.model = CycleModel::build(cfg);
  s.g_opt = Adam<float>(cfg.adam());
  s.d_a_opt.assign(cfg.scales.size(), Adam<float>(cfg.adam()));
  s.d_b_opt.assign(cfg.scales.size(), Adam<float>(cfg.adam()));
  s.pool_a = ReplayBuffer<float>(static_cast<std::size_t>(cfg.buffer_capacity));
  s.pool_b = ReplayBuffer<float>(static_cast<std::size_t>(cfg.buffer_capacity));
  return s;
}

// ---------------------------------------------------------------------------

namespace {

struct ReverseTrace {
  Volumef input;
  Generator<float>::Trace unet;
};

Volumef reverse_forward(const CycleModel& m, const Volumef& x, ReverseTrace& t) {
  if (m.psf) {
    t.input = x;
    return m.psf->forward(x);
  }
  return m.g_ba->forward(x, &t.unet);
}

Volumef reverse_backward(CycleModel& m, const ReverseTrace& t, const Volumef& g, bool need_input_grad) {
  if (m.psf) return m.psf->backward(t.input, g, need_input_grad);
  return m.g_ba->backward(t.unet, g, need_input_grad);
}

struct MultiScore {
  std::vector<CropBox> boxes;
  std::vector<Discriminator<float>::Trace> traces;
  ScoreMaps<float> scores;
};

MultiScore score_all(const std::vector<Discriminator<float>>& ds, const Volumef& x, std::vector<CropBox> boxes) {
  MultiScore ms;
  ms.traces.resize(ds.size());
  const auto crops = apply_crops(x, boxes);
  for (std::size_t i = 0; i < ds.size(); ++i) ms.scores.push_back(ds[i].forward(crops[i], &ms.traces[i]));
  ms.boxes = std::move(boxes);
  return ms;
}

// Gradient of the scores' loss with respect to the uncropped input.
Volumef input_grad(std::vector<Discriminator<float>>& ds, const MultiScore& ms, const ScoreMaps<float>& grads,
                   const Shape3& shape) {
  Volumef g(shape);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Volumef gc = ds[i].backward(ms.traces[i], grads[i], true);
    accumulate_into(g, gc, ms.boxes[i].z, ms.boxes[i].y, ms.boxes[i].x);
  }
  return g;
}

ScoreMaps<float> scaled(ScoreMaps<float> maps, float f) {
  for (auto& m : maps) m.array() *= f;
  return maps;
}

void zero_discriminators(CycleModel& m) {
  for (auto* ds : {&m.d_a, &m.d_b})
    for (auto& d : *ds) zero_grads(d.parameters());
}

void check_finite(const LossRecord& r, int epoch, std::int64_t step) {
  for (const auto& [name, v] : r.terms()) {
    if (std::isfinite(v)) continue;
    std::ostringstream os;
    os.precision(17);
    os << "non-finite loss at epoch " << epoch << " step " << step << ":";
    for (const auto& [n2, v2] : r.terms()) os << ' ' << n2 << '=' << v2;
    throw TrainingDiverged(os.str());
  }
}

// One discriminator update on a real patch and a (buffered) fake patch.
double update_discriminators(std::vector<Discriminator<float>>& ds, const Volumef& real, const Volumef& fake,
                             const TrainConfig& cfg, std::uint64_t seed, float inv_batch) {
  const Index side = cfg.patch_size, min_side = cfg.discriminator.min_side();
  const MultiScore sr = score_all(ds, real, sample_crops(side, cfg.scales, min_side, mix_seed(seed, 1)));
  const MultiScore sf = score_all(ds, fake, sample_crops(side, cfg.scales, min_side, mix_seed(seed, 2)));
  const double loss = lsgan_discriminator_loss(sr.scores, sf.scores);
  auto [gr, gf] = lsgan_discriminator_loss_grad(sr.scores, sf.scores);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds[i].backward(sr.traces[i], scaled({gr[i]}, inv_batch)[0], false);
    ds[i].backward(sf.traces[i], scaled({gf[i]}, inv_batch)[0], false);
  }
  return loss;
}

void check_patch(const Volumef& p, const TrainConfig& cfg, const char* what) {
  require(p.shape() == Shape3{cfg.patch_size, cfg.patch_size, cfg.patch_size},
          std::string(what) + " patch has shape " + to_string(p.shape()) + ", expected cubic side " +
              std::to_string(cfg.patch_size));
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[static_cast<std::size_t>(rng.below(i))]);
  return p;
}

}  // namespace

LossRecord train_step(TrainState& s, const std::vector<Volumef>& batch_a, const std::vector<Volumef>& batch_b,
                      std::uint64_t seed, double lr, int epoch) {
  const TrainConfig& cfg = s.cfg;
  CycleModel& m = s.model;
  require(!batch_a.empty() && batch_a.size() == batch_b.size(), "train_step needs equal, nonempty batches");
  const float inv_batch = 1.0f / static_cast<float>(batch_a.size());
  const float lambda1 = static_cast<float>(cfg.weights.lambda1);
  const Index side = cfg.patch_size, min_side = cfg.discriminator.min_side();

  LossRecord rec;
  zero_grads(m.generator_parameters());
  zero_discriminators(m);
  std::vector<Volumef> fakes_a, fakes_b;

  for (std::size_t k = 0; k < batch_a.size(); ++k) {
    const Volumef& a = batch_a[k];
    const Volumef& b = batch_b[k];
    check_patch(a, cfg, "domain-A");
    check_patch(b, cfg, "domain-B");
    const std::uint64_t ks = mix_seed(seed, k);

    Generator<float>::Trace ta, tb;
    ReverseTrace ra, rb;
    const Volumef fake_b = m.g_ab.forward(a, &ta);
    const Volumef rec_a = reverse_forward(m, fake_b, ra);
    const Volumef fake_a = reverse_forward(m, b, rb);
    const Volumef rec_b = m.g_ab.forward(fake_a, &tb);

    const MultiScore sb = score_all(m.d_b, fake_b, sample_crops(side, cfg.scales, min_side, mix_seed(ks, 0x6762ULL)));
    const MultiScore sa = score_all(m.d_a, fake_a, sample_crops(side, cfg.scales, min_side, mix_seed(ks, 0x6761ULL)));
    const double adv_ab = lsgan_generator_loss(sb.scores);
    const double adv_ba = lsgan_generator_loss(sa.scores);
    const double cyc = cycle_loss(a, rec_a, b, rec_b);
    rec.adv_ab += adv_ab * inv_batch;
    rec.adv_ba += adv_ba * inv_batch;
    rec.cycle += cyc * inv_batch;

    auto [gca, gcb] = cycle_loss_grad(a, rec_a, b, rec_b);
    gca.array() *= lambda1 * inv_batch;
    gcb.array() *= lambda1 * inv_batch;

    Volumef g_fake_b = input_grad(m.d_b, sb, scaled(lsgan_generator_loss_grad(sb.scores), inv_batch), fake_b.shape());
    g_fake_b.array() += reverse_backward(m, ra, gca, true).array();
    m.g_ab.backward(ta, g_fake_b, false);

    Volumef g_fake_a = m.g_ab.backward(tb, gcb, true);
    g_fake_a.array() += input_grad(m.d_a, sa, scaled(lsgan_generator_loss_grad(sa.scores), inv_batch), fake_a.shape()).array();
    reverse_backward(m, rb, g_fake_a, false);

    fakes_a.push_back(fake_a);
    fakes_b.push_back(fake_b);
  }

  if (m.psf) {
    const PsfKernel<float> k = m.psf->kernel();
    rec.kernel_l1 = kernel_l1(k);
    Volumef g = k.weights;
    g.array() = k.weights.array().sign() * static_cast<float>(cfg.weights.lambda2);
    m.psf->accumulate_kernel_grad(g);
  }
  rec.g_total = rec.adv_ab + rec.adv_ba + cfg.weights.lambda1 * rec.cycle + cfg.weights.lambda2 * rec.kernel_l1;
  check_finite(rec, epoch, s.step);
  s.g_opt.step(m.generator_parameters(), lr);
  if (m.psf && cfg.psf_unit_mass) m.psf->project_unit_mass();

  zero_discriminators(m);
  for (std::size_t k = 0; k < batch_a.size(); ++k) {
    const std::uint64_t ks = mix_seed(seed, k);
    const Volumef fb = s.pool_b.query(fakes_b[k], mix_seed(ks, 0x7062ULL));
    const Volumef fa = s.pool_a.query(fakes_a[k], mix_seed(ks, 0x7061ULL));
    rec.d_b += inv_batch * update_discriminators(m.d_b, batch_b[k], fb, cfg, mix_seed(ks, 0x6462ULL), inv_batch);
    rec.d_a += inv_batch * update_discriminators(m.d_a, batch_a[k], fa, cfg, mix_seed(ks, 0x6461ULL), inv_batch);
  }
  check_finite(rec, epoch, s.step);
  for (std::size_t i = 0; i < m.d_a.size(); ++i) {
    s.d_a_opt[i].step(m.d_a[i].parameters(), lr);
    s.d_b_opt[i].step(m.d_b[i].parameters(), lr);
  }
  ++s.step;
  return rec;
}

void train(TrainState& s, const std::vector<Volumef>& domain_a, const std::vector<Volumef>& domain_b,
           const TrainHooks& hooks) {
  require(!domain_a.empty(), "domain A dataset is empty");
  require(!domain_b.empty(), "domain B dataset is empty");
  const TrainConfig& cfg = s.cfg;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = (domain_a.size() + batch - 1) / batch;
  for (int e = s.epoch; e < cfg.epochs; ++e) {
    const double lr = lr_schedule(cfg, e);
    const auto perm_a = permutation(domain_a.size(), mix_seed(cfg.seed, 0x7061ULL, e));
    const auto perm_b = permutation(domain_b.size(), mix_seed(cfg.seed, 0x7062ULL, e));
    for (std::size_t j = 0; j < steps; ++j) {
      std::vector<Volumef> ba, bb;
      for (std::size_t k = 0; k < batch; ++k) {
        const std::size_t i = j * batch + k;
        const Volumef& a = domain_a[perm_a[i % domain_a.size()]];
        const Volumef& b = domain_b[perm_b[i % domain_b.size()]];
        if (cfg.augment) {
          ba.push_back(augment(a, mix_seed(cfg.seed, 0x6175ULL, e, i, 0), cfg.augmentation));
          bb.push_back(augment(b, mix_seed(cfg.seed, 0x6175ULL, e, i, 1), cfg.augmentation));
        } else {
          ba.push_back(a);
          bb.push_back(b);
        }
      }
      const LossRecord rec = train_step(s, ba, bb, mix_seed(cfg.seed, 0x73ULL, e, j), lr, e);
      if (hooks.on_step) hooks.on_step(e, s.step - 1, rec);
    }
    s.epoch = e + 1;
    if (hooks.on_epoch) hooks.on_epoch(s);
  }
}

// ---------------------------------------------------------------------------

BaselineState BaselineState::initial(const TrainConfig& cfg) {
  cfg.validate();
  BaselineState s;
  s.cfg = cfg;
  s.g = Generator<float>(cfg.generator, mix_seed(cfg.seed, 0x676162ULL));
  s.opt = Adam<float>(cfg.adam());
  return s;
}

double baseline_step(BaselineState& s, const std::vector<std::pair<Volumef, Volumef>>& batch, double lr) {
  require(!batch.empty(), "baseline step needs a nonempty batch");
  const float inv_batch = 1.0f / static_cast<float>(batch.size());
  zero_grads(s.g.parameters());
  double loss = 0;
  for (const auto& [blurred, sharp] : batch) {
    require(blurred.shape() == sharp.shape(), "baseline pair shapes differ: " + to_string(blurred.shape()) + " vs " +
                                                  to_string(sharp.shape()));
    Generator<float>::Trace t;
    const Volumef pred = s.g.forward(blurred, &t);
    loss += inv_batch * l1_loss(pred, sharp);
    Volumef g = l1_loss_grad(pred, sharp);
    g.array() *= inv_batch;
    s.g.backward(t, g, false);
  }
  if (!std::isfinite(loss))
    throw TrainingDiverged("non-finite baseline loss at step " + std::to_string(s.step));
  s.opt.step(s.g.parameters(), lr);
  ++s.step;
  return loss;
}

void train_supervised_baseline(BaselineState& s, const std::vector<std::pair<Volumef, Volumef>>& pairs,
                               const BaselineHooks& hooks) {
  require(!pairs.empty(), "paired dataset is empty");
  const TrainConfig& cfg = s.cfg;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = (pairs.size() + batch - 1) / batch;
  for (int e = s.epoch; e < cfg.epochs; ++e) {
    const double lr = lr_schedule(cfg, e);
    const auto perm = permutation(pairs.size(), mix_seed(cfg.seed, 0x7070ULL, e));
    for (std::size_t j = 0; j < steps; ++j) {
      std::vector<std::pair<Volumef, Volumef>> b;
      for (std::size_t k = 0; k < batch; ++k) {
        const std::size_t i = j * batch + k;
        const auto& [blurred, sharp] = pairs[perm[i % pairs.size()]];
        if (cfg.augment) {
          // Same seed for both members keeps the pair aligned.
          const std::uint64_t as = mix_seed(cfg.seed, 0x6175ULL, e, i);
          b.emplace_back(augment(blurred, as, cfg.augmentation), augment(sharp, as, cfg.augmentation));
        } else {
          b.emplace_back(blurred, sharp);
        }
      }
      const double loss = baseline_step(s, b, lr);
      if (hooks.on_step) hooks.on_step(e, s.step - 1, loss);
    }
    s.epoch = e + 1;
    if (hooks.on_epoch) hooks.on_epoch(s);
  }
}

}  // namespace psfcycle
