#include "psfcycle/cli.hpp"

#include "psfcycle/checkpoint.hpp"
#include "psfcycle/clahe.hpp"
#include "psfcycle/config.hpp"
#include "psfcycle/metrics.hpp"
#include "psfcycle/tiff.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

namespace psfcycle {

namespace fs = std::filesystem;

std::string metrics_record(int epoch, std::int64_t step, const std::string& term, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return std::to_string(epoch) + ' ' + std::to_string(step) + ' ' + term + ' ' + buf + '\n';
}

std::string metrics_records(int epoch, std::int64_t step, const LossRecord& r) {
  std::string s;
  for (const auto& [term, value] : r.terms()) s += metrics_record(epoch, step, term, value);
  return s;
}

namespace {

constexpr const char* kOutputEnv = "PSFCYCLE_OUTPUT_DIR";
constexpr const char* kCheckpointName = "checkpoint.ckpt";
constexpr const char* kMetricsName = "metrics.log";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config, out, checkpoint, resume, reference, test, input, true_psf;
  std::vector<std::string> inputs;
  std::optional<std::uint64_t> seed;
  std::optional<int> tile, overlap;
  bool raw = false, export_views = false;
};

fs::path output_dir(const Options& o) {
  fs::path dir = o.out;
  if (dir.empty()) {
    const char* env = std::getenv(kOutputEnv);
    if (!env || !*env) throw UsageError(std::string("--out is required (or set ") + kOutputEnv + ")");
    dir = env;
  }
  fs::create_directories(dir);
  return dir;
}

RunConfig read_config(const Options& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    if (rc.synthetic) rc.synthetic->seed = *o.seed;
    if (rc.train) rc.train->seed = *o.seed;
  }
  return rc;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed while writing " + path.string());
}

std::string volume_name(int i, const char* stem) {
  std::ostringstream os;
  os << stem << '_' << std::setw(3) << std::setfill('0') << i << ".tif";
  return os.str();
}

// Normalized to [0,1] and reflect-padded at the far end up to `side` on each axis.
Volumef prepare(const Volumef& v, Index side) {
  const Volumef n = normalize01(v);
  const Shape3 s = n.shape();
  const Shape3 after{std::max<Index>(0, side - s.d), std::max<Index>(0, side - s.h), std::max<Index>(0, side - s.w)};
  return after == Shape3{0, 0, 0} ? n : pad_reflect(n, {0, 0, 0}, after);
}

std::vector<fs::path> volume_files(const std::vector<std::string>& entries, const char* what) {
  auto files = list_volume_files(entries);
  if (files.empty()) throw IoError(std::string("no .tif/.tiff volumes found for ") + what);
  return files;
}

struct Domains {
  std::vector<Volumef> a, b;  // blurred, sharp
};

// Patches of both domains, from the data section or, failing that, a synthetic set.
Domains training_domains(const RunConfig& rc, const TrainConfig& cfg, bool paired) {
  const Index side = cfg.patch_size;
  Domains d;
  auto add = [&](std::vector<Volumef>& dst, const Volumef& v, Index stride) {
    for (auto& p : extract_patches(prepare(v, side), side, stride)) dst.push_back(std::move(p));
  };
  if (rc.data) {
    const auto fa = volume_files(rc.data->domain_a, "data.domain_a");
    const auto fb = volume_files(rc.data->domain_b, "data.domain_b");
    if (paired && fa.size() != fb.size())
      throw std::invalid_argument("paired training needs as many domain_b volumes (" + std::to_string(fb.size()) +
                                  ") as domain_a volumes (" + std::to_string(fa.size()) + ")");
    for (std::size_t i = 0; i < fa.size(); ++i) {
      const Volumef va = load_volume(fa[i]);
      add(d.a, va, rc.data->patch_stride);
      if (paired) {
        const Volumef vb = load_volume(fb[i]);
        if (vb.shape() != va.shape())
          throw std::invalid_argument("paired volumes differ in shape: " + fa[i].string() + " " + to_string(va.shape()) +
                                      " vs " + fb[i].string() + " " + to_string(vb.shape()));
        add(d.b, vb, rc.data->patch_stride);
      }
    }
    if (!paired)
      for (const auto& f : fb) add(d.b, load_volume(f), rc.data->patch_stride);
  } else if (rc.synthetic) {
    const SyntheticSet set = make_synthetic_set(*rc.synthetic);
    for (const auto& v : set.blurred_train) add(d.a, v, side);
    for (const auto& v : set.sharp_train) add(d.b, v, side);
  } else {
    throw ConfigError("config needs a \"data\" or \"synthetic\" section to train on");
  }
  return d;
}

// Keeps the records of steps before `step` so a resumed run continues the same log.
void truncate_metrics(const fs::path& path, std::int64_t step) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string() + " to resume");
  std::string kept, line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    int e;
    std::int64_t s;
    if (ls >> e >> s && s < step) kept += line + '\n';
  }
  in.close();
  write_text(path, kept);
}

std::ofstream open_metrics(const fs::path& dir, bool resume, std::int64_t step) {
  const fs::path path = dir / kMetricsName;
  if (resume && fs::exists(path))
    truncate_metrics(path, step);
  else
    write_text(path, "");
  std::ofstream f(path, std::ios::app | std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void write_config_snapshot(const fs::path& dir, RunConfig rc, const TrainConfig& cfg) {
  rc.train = cfg;
  write_text(dir / "config.json", to_json(rc).dump(2) + "\n");
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  RunConfig rc = read_config(o);
  SyntheticSpec spec = rc.synthetic.value_or(SyntheticSpec{});
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  const fs::path dir = output_dir(o);
  const SyntheticSet set = make_synthetic_set(spec);
  for (const char* sub : {"train/sharp", "train/blurred", "heldout/sharp", "heldout/blurred"})
    fs::create_directories(dir / sub);
  for (std::size_t i = 0; i < set.sharp_train.size(); ++i) {
    save_volume(set.sharp_train[i], dir / "train/sharp" / volume_name(int(i), "sharp"));
    save_volume(set.blurred_train[i], dir / "train/blurred" / volume_name(int(i), "blurred"));
  }
  for (std::size_t i = 0; i < set.sharp_heldout.size(); ++i) {
    save_volume(set.sharp_heldout[i], dir / "heldout/sharp" / volume_name(int(i), "sharp"));
    save_volume(set.blurred_heldout[i], dir / "heldout/blurred" / volume_name(int(i), "blurred"));
  }
  save_volume(set.true_kernel.weights, dir / "true_psf.tif");
  write_text(dir / "synthetic.json", to_json(spec).dump(2) + "\n");
  out << "wrote " << set.sharp_train.size() << " training and " << set.sharp_heldout.size()
      << " held-out volume pairs and true_psf.tif to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig rc = read_config(o);
  const bool resume = !o.resume.empty();
  TrainState s;
  if (resume) {
    s = load_train_state(o.resume);
  } else {
    if (!rc.train) throw ConfigError("config has no \"train\" section");
    s = TrainState::initial(*rc.train);
  }
  const Domains d = training_domains(rc, s.cfg, false);
  const fs::path dir = output_dir(o);
  write_config_snapshot(dir, rc, s.cfg);
  std::ofstream log = open_metrics(dir, resume, s.step);

  LossRecord sum;
  int n = 0;
  TrainHooks hooks;
  hooks.on_step = [&](int epoch, std::int64_t step, const LossRecord& r) {
    log << metrics_records(epoch, step, r);
    sum.g_total += r.g_total;
    sum.d_a += r.d_a;
    sum.d_b += r.d_b;
    ++n;
  };
  hooks.on_epoch = [&](const TrainState& st) {
    log.flush();
    save_checkpoint(st, dir / kCheckpointName);
    out << "epoch " << st.epoch << '/' << st.cfg.epochs << "  g_total " << sum.g_total / n << "  d_a " << sum.d_a / n
        << "  d_b " << sum.d_b / n << '\n'
        << std::flush;
    sum = {};
    n = 0;
  };
  out << "training on " << d.a.size() << " domain-A and " << d.b.size() << " domain-B patches\n";
  train(s, d.a, d.b, hooks);
  log.close();
  save_checkpoint(s, dir / kCheckpointName);
  out << "wrote " << (dir / kCheckpointName).string() << " and " << (dir / kMetricsName).string() << '\n';
  return kExitOk;
}

int cmd_train_baseline(const Options& o, std::ostream& out) {
  RunConfig rc = read_config(o);
  const bool resume = !o.resume.empty();
  BaselineState s;
  if (resume) {
    s = load_baseline_state(o.resume);
  } else {
    if (!rc.train) throw ConfigError("config has no \"train\" section");
    s = BaselineState::initial(*rc.train);
  }
  const Domains d = training_domains(rc, s.cfg, true);
  std::vector<std::pair<Volumef, Volumef>> pairs;
  for (std::size_t i = 0; i < d.a.size(); ++i) pairs.emplace_back(d.a[i], d.b[i]);
  const fs::path dir = output_dir(o);
  write_config_snapshot(dir, rc, s.cfg);
  std::ofstream log = open_metrics(dir, resume, s.step);

  double sum = 0;
  int n = 0;
  BaselineHooks hooks;
  hooks.on_step = [&](int epoch, std::int64_t step, double l1) {
    log << metrics_record(epoch, step, "l1", l1);
    sum += l1;
    ++n;
  };
  hooks.on_epoch = [&](const BaselineState& st) {
    log.flush();
    save_checkpoint(st, dir / kCheckpointName);
    out << "epoch " << st.epoch << '/' << st.cfg.epochs << "  l1 " << sum / n << '\n' << std::flush;
    sum = 0;
    n = 0;
  };
  out << "training on " << pairs.size() << " paired patches\n";
  train_supervised_baseline(s, pairs, hooks);
  log.close();
  save_checkpoint(s, dir / kCheckpointName);
  out << "wrote " << (dir / kCheckpointName).string() << " and " << (dir / kMetricsName).string() << '\n';
  return kExitOk;
}

int cmd_infer(const Options& o, std::ostream& out) {
  const RunConfig rc = read_config(o);
  InferConfig ic = rc.infer;
  if (o.tile) ic.tile = *o.tile;
  if (o.overlap) ic.overlap = *o.overlap;
  const auto files = volume_files(o.inputs, "infer inputs");
  const InferenceModel model = load_inference_model(o.checkpoint);
  const fs::path dir = output_dir(o);
  for (const auto& f : files) {
    Volumef v = load_volume(f);
    if (!o.raw) v = normalize01(v);
    const Volumef y = std::visit([&](const auto& m) { return infer_volume(m, v, ic.tile, ic.overlap); }, model);
    fs::path name = f.filename();
    name.replace_extension(".tif");
    save_volume(y, dir / name);
    out << f.string() << " -> " << (dir / name).string() << '\n';
  }
  return kExitOk;
}

Eigen::ArrayXXf transverse_view(const Volumef& v) {
  Eigen::ArrayXXf s(v.height(), v.width());
  const Index z = v.depth() / 2;
  for (Index y = 0; y < v.height(); ++y)
    for (Index x = 0; x < v.width(); ++x) s(y, x) = v(z, y, x);
  return s;
}

Eigen::ArrayXXf sagittal_view(const Volumef& v) {
  Eigen::ArrayXXf s(v.depth(), v.height());
  const Index x = v.width() / 2;
  for (Index z = 0; z < v.depth(); ++z)
    for (Index y = 0; y < v.height(); ++y) s(z, y) = v(z, y, x);
  return s;
}

Eigen::ArrayXXf equalize(const Eigen::ArrayXXf& slice, const EvalConfig& ec) {
  Volumef v({1, slice.rows(), slice.cols()});
  for (Index y = 0; y < slice.rows(); ++y)
    for (Index x = 0; x < slice.cols(); ++x) v(0, y, x) = std::clamp(slice(y, x), 0.0f, 1.0f);
  const Volumef e = clahe_slices(v, ec.clahe_clip, ec.clahe_tiles);
  Eigen::ArrayXXf out(slice.rows(), slice.cols());
  for (Index y = 0; y < slice.rows(); ++y)
    for (Index x = 0; x < slice.cols(); ++x) out(y, x) = e(0, y, x);
  return out;
}

Json psnr_json(const Psnr& p) { return p.identical ? Json(nullptr) : Json(p.db); }

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig rc = read_config(o);
  const EvalConfig& ec = rc.eval;
  const auto refs = volume_files({o.reference}, "--reference");
  const auto tests = volume_files({o.test}, "--test");
  if (refs.size() != tests.size())
    throw std::invalid_argument("--reference has " + std::to_string(refs.size()) + " volumes but --test has " +
                                std::to_string(tests.size()));
  std::vector<fs::path> inputs;
  if (!o.input.empty()) {
    inputs = volume_files({o.input}, "--input");
    if (inputs.size() != refs.size())
      throw std::invalid_argument("--input has " + std::to_string(inputs.size()) + " volumes but --reference has " +
                                  std::to_string(refs.size()));
  }
  if (o.true_psf.empty() != o.checkpoint.empty())
    throw UsageError("--checkpoint and --true-psf must be given together for kernel similarity");
  const fs::path dir = output_dir(o);

  Json record = {{"peak", ec.peak}, {"volumes", Json::array()}};
  double sum_psnr = 0, sum_mae = 0, sum_gain = 0;
  bool any_identical = false;
  out << std::left << std::setw(28) << "volume" << std::setw(14) << "psnr_db" << std::setw(14) << "mean_abs_err";
  if (!inputs.empty()) out << std::setw(14) << "input_psnr_db" << std::setw(12) << "gain_db";
  out << '\n';
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Volumef ref = load_volume(refs[i]);
    const Volumef test = load_volume(tests[i]);
    const Metrics m = compute_metrics(ref, test, ec.peak);
    Json v = {{"reference", refs[i].string()},
              {"test", tests[i].string()},
              {"psnr_db", psnr_json(m.psnr)},
              {"identical", m.psnr.identical},
              {"mean_abs_err", m.mean_abs_err}};
    any_identical |= m.psnr.identical;
    sum_psnr += m.psnr.db;
    sum_mae += m.mean_abs_err;
    out << std::setw(28) << tests[i].filename().string() << std::setw(14)
        << (m.psnr.identical ? std::string("identical") : std::to_string(m.psnr.db)) << std::setw(14) << m.mean_abs_err;
    if (!inputs.empty()) {
      const Psnr pin = psnr(ref, load_volume(inputs[i]), ec.peak);
      const double gain = m.psnr.db - pin.db;
      v["input_psnr_db"] = psnr_json(pin);
      v["psnr_gain_db"] = std::isfinite(gain) ? Json(gain) : Json(nullptr);
      sum_gain += gain;
      out << std::setw(14) << (pin.identical ? std::string("identical") : std::to_string(pin.db)) << std::setw(12)
          << gain;
    }
    out << '\n';
    record["volumes"].push_back(v);
    if (o.export_views) {
      const std::string stem = tests[i].stem().string();
      save_slice_u8(equalize(transverse_view(test), ec), dir / (stem + "_transverse.tif"));
      save_slice_u8(equalize(sagittal_view(test), ec), dir / (stem + "_sagittal.tif"));
    }
  }
  const double n = static_cast<double>(refs.size());
  record["mean_psnr_db"] = any_identical ? Json(nullptr) : Json(sum_psnr / n);
  record["mean_abs_err"] = sum_mae / n;
  if (!inputs.empty()) record["mean_psnr_gain_db"] = std::isfinite(sum_gain) ? Json(sum_gain / n) : Json(nullptr);
  out << "mean psnr_db " << (any_identical ? std::string("identical") : std::to_string(sum_psnr / n))
      << "  mean_abs_err " << sum_mae / n;
  if (!inputs.empty()) out << "  mean gain_db " << sum_gain / n;
  out << '\n';
  if (!o.checkpoint.empty()) {
    const double sim = kernel_similarity(load_learned_kernel(o.checkpoint), PsfKernel<float>{load_volume(o.true_psf)});
    record["kernel_similarity"] = sim;
    out << "kernel_similarity " << sim << '\n';
  }
  write_text(dir / "eval.json", record.dump(2) + "\n");
  out << "wrote " << (dir / "eval.json").string() << '\n';
  return kExitOk;
}

int cmd_export_psf(const Options& o, std::ostream& out) {
  const PsfKernel<float> k = load_learned_kernel(o.checkpoint);
  const fs::path dir = output_dir(o);
  save_volume(k.weights, dir / "learned_psf.tif");
  out << "kernel " << to_string(k.shape()) << "  mass " << kernel_l1(k);
  if (!o.true_psf.empty())
    out << "  similarity " << kernel_similarity(k, PsfKernel<float>{load_volume(o.true_psf)});
  out << "\nwrote " << (dir / "learned_psf.tif").string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind deconvolution of fluorescence volumes with a learned PSF", "psfcycle"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile); };
  auto add_out = [&](CLI::App* c) {
    c->add_option("--out", o.out, std::string("output directory (default: $") + kOutputEnv + ")");
  };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "override the configured seed"); };

  CLI::App* gen = app.add_subcommand("gen-data", "write synthetic sharp/blurred phantom pairs and the true PSF");
  add_config(gen);
  add_out(gen);
  add_seed(gen);

  CLI::App* tr = app.add_subcommand("train", "unpaired cycle training with the learned PSF");
  CLI::App* tb = app.add_subcommand("train-baseline", "supervised U-Net on paired volumes with an L1 loss");
  for (CLI::App* c : {tr, tb}) {
    add_config(c);
    add_out(c);
    add_seed(c);
    c->add_option("--resume", o.resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  }

  CLI::App* inf = app.add_subcommand("infer", "deconvolve whole volumes with a trained checkpoint");
  add_config(inf);
  add_out(inf);
  inf->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--tile", o.tile, "tile side");
  inf->add_option("--overlap", o.overlap, "tile overlap");
  inf->add_flag("--raw", o.raw, "skip the [0,1] normalization of inputs");
  inf->add_option("inputs", o.inputs, "volume files or directories")->required();

  CLI::App* ev = app.add_subcommand("eval", "PSNR and mean absolute error against references");
  add_config(ev);
  add_out(ev);
  ev->add_option("--reference", o.reference, "ground-truth volume file or directory")->required();
  ev->add_option("--test", o.test, "restored volume file or directory")->required();
  ev->add_option("--input", o.input, "degraded inputs, to report the PSNR gain");
  ev->add_option("--checkpoint", o.checkpoint, "cycle checkpoint whose kernel is compared")->check(CLI::ExistingFile);
  ev->add_option("--true-psf", o.true_psf, "ground-truth kernel volume")->check(CLI::ExistingFile);
  ev->add_flag("--export-views", o.export_views, "write equalized mid-plane views of each test volume");

  CLI::App* ex = app.add_subcommand("export-psf", "write the learned kernel as a volume");
  add_out(ex);
  ex->add_option("--checkpoint", o.checkpoint, "cycle checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--true-psf", o.true_psf, "ground-truth kernel to compare against")->check(CLI::ExistingFile);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (tb->parsed()) return cmd_train_baseline(o, out);
    if (inf->parsed()) return cmd_infer(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    return cmd_export_psf(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: invalid config: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace psfcycle
