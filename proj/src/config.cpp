#include "psfcycle/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace psfcycle {

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where.empty() ? what : where + ": " + what);
}

// Reads an object's keys with type checks and reports any key left unread.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail(where_, "expected an object");
  }

  void get(const char* key, int& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number_integer()) fail(path(key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(path(key), "out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
        fail(path(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number()) fail(path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const Json* v = take(key)) {
      if (!v->is_boolean()) fail(path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const Json* v = take(key)) {
      if (!v->is_string()) fail(path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <std::size_t N>
  void get(const char* key, std::array<double, N>& out) {
    if (const Json* v = take(key)) {
      if (!v->is_array() || v->size() != N) fail(path(key), "expected an array of " + std::to_string(N) + " numbers");
      for (std::size_t i = 0; i < N; ++i) {
        if (!(*v)[i].is_number()) fail(path(key), "expected numbers");
        out[i] = (*v)[i].get<double>();
      }
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const Json* v = take(key)) {
      if (!v->is_array()) fail(path(key), "expected an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) fail(path(key), "expected numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (const Json* v = take(key)) {
      if (v->is_string()) {
        out = {v->get<std::string>()};
        return;
      }
      if (!v->is_array()) fail(path(key), "expected a string or an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(path(key), "expected strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  void get(const char* key, Shape3& out) {
    if (const Json* v = take(key)) {
      if (!v->is_array() || v->size() != 3) fail(path(key), "expected [depth, height, width]");
      for (const auto& e : *v)
        if (!e.is_number_integer()) fail(path(key), "expected integers");
      out = {(*v)[0].get<Index>(), (*v)[1].get<Index>(), (*v)[2].get<Index>()};
    }
  }

  /// Sub-object, or nullptr when absent.
  const Json* object(const char* key) { return take(key); }
  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(where_, "unknown key \"" + k + "\"");
  }

 private:
  const Json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// Wraps a validate() call so its message carries the section name.
template <typename F>
void validated(const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    fail(where, e.what());
  }
}

PhantomSpec phantom_from(const Json& j, const std::string& where) {
  PhantomSpec s;
  ObjectReader r(j, where);
  r.get("shape", s.shape);
  r.get("n_filaments", s.n_filaments);
  r.get("filament_width_vox", s.filament_width_vox);
  r.get("intensity_range", s.intensity_range);
  r.get("curvature", s.curvature);
  r.finish();
  return s;
}

SyntheticSpec synthetic_from(const Json& j, const std::string& where) {
  SyntheticSpec s;
  ObjectReader r(j, where);
  if (const Json* p = r.object("phantom")) s.phantom = phantom_from(*p, r.path("phantom"));
  r.get("n_train", s.n_train);
  r.get("n_heldout", s.n_heldout);
  r.get("psf_sigma", s.psf_sigma);
  r.get("psf_size", s.psf_size);
  r.get("noise_sigma", s.noise_sigma);
  r.get("stretch_blurred", s.stretch_blurred);
  r.get("seed", s.seed);
  r.finish();
  validated(where, [&] { s.validate(); });
  return s;
}

TrainConfig train_from(const Json& j, const std::string& where) {
  TrainConfig c;
  ObjectReader r(j, where);
  r.get("lr0", c.lr0);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("epochs", c.epochs);
  r.get("decay_start_epoch", c.decay_start_epoch);
  r.get("batch_size", c.batch_size);
  r.get("buffer_capacity", c.buffer_capacity);
  if (const Json* w = r.object("weights")) {
    ObjectReader rw(*w, r.path("weights"));
    rw.get("lambda1", c.weights.lambda1);
    rw.get("lambda2", c.weights.lambda2);
    rw.finish();
  }
  r.get("psf_size", c.psf_size);
  r.get("patch_size", c.patch_size);
  r.get("seed", c.seed);
  if (const Json* g = r.object("generator")) {
    ObjectReader rg(*g, r.path("generator"));
    rg.get("base_channels", c.generator.base_channels);
    rg.get("depth_levels", c.generator.depth_levels);
    rg.get("output_bias", c.generator.output_bias);
    rg.finish();
  }
  if (const Json* d = r.object("discriminator")) {
    ObjectReader rd(*d, r.path("discriminator"));
    rd.get("n_blocks", c.discriminator.n_blocks);
    rd.get("base_channels", c.discriminator.base_channels);
    rd.get("leaky_relu", c.discriminator.leaky_relu);
    rd.get("norm_first_block", c.discriminator.norm_first_block);
    rd.get("leaky_slope", c.discriminator.leaky_slope);
    rd.finish();
  }
  r.get("scales", c.scales.scales);
  std::string reverse = to_string(c.reverse);
  r.get("reverse", reverse);
  validated(r.path("reverse"), [&] { c.reverse = reverse_model_from_string(reverse); });
  r.get("psf_init_sigma", c.psf_init_sigma);
  r.get("psf_nonnegative", c.psf_nonnegative);
  r.get("psf_unit_mass", c.psf_unit_mass);
  r.get("psf_lr_scale", c.psf_lr_scale);
  r.get("augment", c.augment);
  if (const Json* a = r.object("augmentation")) {
    ObjectReader ra(*a, r.path("augmentation"));
    ra.get("rotate", c.augmentation.rotate);
    ra.get("flip", c.augmentation.flip);
    ra.get("translate", c.augmentation.translate);
    ra.get("scale", c.augmentation.scale);
    ra.get("max_shift_fraction", c.augmentation.max_shift_fraction);
    ra.get("scale_lo", c.augmentation.scale_lo);
    ra.get("scale_hi", c.augmentation.scale_hi);
    ra.finish();
  }
  r.finish();
  validated(where, [&] { c.validate(); });
  return c;
}

DataConfig data_from(const Json& j, const std::string& where) {
  DataConfig d;
  ObjectReader r(j, where);
  r.get("domain_a", d.domain_a);
  r.get("domain_b", d.domain_b);
  r.get("patch_stride", d.patch_stride);
  r.finish();
  if (d.patch_stride < 1) fail(r.path("patch_stride"), "must be >= 1");
  return d;
}

InferConfig infer_from(const Json& j, const std::string& where) {
  InferConfig c;
  ObjectReader r(j, where);
  r.get("tile", c.tile);
  r.get("overlap", c.overlap);
  r.finish();
  if (c.tile < 1) fail(r.path("tile"), "must be >= 1");
  if (c.overlap < 0 || c.overlap >= c.tile) fail(r.path("overlap"), "must lie in [0, tile)");
  return c;
}

EvalConfig eval_from(const Json& j, const std::string& where) {
  EvalConfig c;
  ObjectReader r(j, where);
  r.get("peak", c.peak);
  r.get("clahe_clip", c.clahe_clip);
  r.get("clahe_tiles", c.clahe_tiles);
  r.finish();
  if (!(c.peak > 0.0)) fail(r.path("peak"), "must be > 0");
  if (!(c.clahe_clip > 0.0)) fail(r.path("clahe_clip"), "must be > 0");
  if (c.clahe_tiles < 1) fail(r.path("clahe_tiles"), "must be >= 1");
  return c;
}

}  // namespace

Json to_json(const PhantomSpec& s) {
  return {{"shape", {s.shape.d, s.shape.h, s.shape.w}},
          {"n_filaments", s.n_filaments},
          {"filament_width_vox", s.filament_width_vox},
          {"intensity_range", s.intensity_range},
          {"curvature", s.curvature}};
}

Json to_json(const SyntheticSpec& s) {
  return {{"phantom", to_json(s.phantom)}, {"n_train", s.n_train},         {"n_heldout", s.n_heldout},
          {"psf_sigma", s.psf_sigma},      {"psf_size", s.psf_size},       {"noise_sigma", s.noise_sigma},
          {"stretch_blurred", s.stretch_blurred},
          {"seed", s.seed}};
}

Json to_json(const TrainConfig& c) {
  const AugmentSpec& a = c.augmentation;
  return {{"lr0", c.lr0},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epochs", c.epochs},
          {"decay_start_epoch", c.decay_start_epoch},
          {"batch_size", c.batch_size},
          {"buffer_capacity", c.buffer_capacity},
          {"weights", {{"lambda1", c.weights.lambda1}, {"lambda2", c.weights.lambda2}}},
          {"psf_size", c.psf_size},
          {"patch_size", c.patch_size},
          {"seed", c.seed},
          {"generator", {{"base_channels", c.generator.base_channels}, {"depth_levels", c.generator.depth_levels},
            {"output_bias", c.generator.output_bias}}},
          {"discriminator",
           {{"n_blocks", c.discriminator.n_blocks},
            {"base_channels", c.discriminator.base_channels},
            {"leaky_relu", c.discriminator.leaky_relu},
            {"norm_first_block", c.discriminator.norm_first_block},
            {"leaky_slope", c.discriminator.leaky_slope}}},
          {"scales", c.scales.scales},
          {"reverse", to_string(c.reverse)},
          {"psf_init_sigma", c.psf_init_sigma},
          {"psf_nonnegative", c.psf_nonnegative},
          {"psf_unit_mass", c.psf_unit_mass},
          {"psf_lr_scale", c.psf_lr_scale},
          {"augment", c.augment},
          {"augmentation",
           {{"rotate", a.rotate},
            {"flip", a.flip},
            {"translate", a.translate},
            {"scale", a.scale},
            {"max_shift_fraction", a.max_shift_fraction},
            {"scale_lo", a.scale_lo},
            {"scale_hi", a.scale_hi}}}};
}

Json to_json(const DataConfig& d) {
  return {{"domain_a", d.domain_a}, {"domain_b", d.domain_b}, {"patch_stride", d.patch_stride}};
}

Json to_json(const InferConfig& c) { return {{"tile", c.tile}, {"overlap", c.overlap}}; }

Json to_json(const EvalConfig& c) {
  return {{"peak", c.peak}, {"clahe_clip", c.clahe_clip}, {"clahe_tiles", c.clahe_tiles}};
}

Json to_json(const RunConfig& c) {
  Json j = Json::object();
  if (c.synthetic) j["synthetic"] = to_json(*c.synthetic);
  if (c.train) j["train"] = to_json(*c.train);
  if (c.data) j["data"] = to_json(*c.data);
  j["infer"] = to_json(c.infer);
  j["eval"] = to_json(c.eval);
  return j;
}

PhantomSpec phantom_spec_from_json(const Json& j) {
  PhantomSpec s = phantom_from(j, "phantom");
  validated("phantom", [&] { validate(s); });
  return s;
}
SyntheticSpec synthetic_spec_from_json(const Json& j) { return synthetic_from(j, "synthetic"); }
TrainConfig train_config_from_json(const Json& j) { return train_from(j, "train"); }
DataConfig data_config_from_json(const Json& j) { return data_from(j, "data"); }
InferConfig infer_config_from_json(const Json& j) { return infer_from(j, "infer"); }
EvalConfig eval_config_from_json(const Json& j) { return eval_from(j, "eval"); }

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  if (const Json* s = r.object("synthetic")) c.synthetic = synthetic_from(*s, "synthetic");
  if (const Json* t = r.object("train")) c.train = train_from(*t, "train");
  if (const Json* d = r.object("data")) c.data = data_from(*d, "data");
  if (const Json* i = r.object("infer")) c.infer = infer_from(*i, "infer");
  if (const Json* e = r.object("eval")) c.eval = eval_from(*e, "eval");
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": not valid JSON (" + e.what() + ")");
  }
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> list_volume_files(const std::vector<std::string>& entries) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& e : entries) {
    const fs::path p(e);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& de : fs::directory_iterator(p)) {
        const auto ext = de.path().extension().string();
        if (de.is_regular_file() && (ext == ".tif" || ext == ".tiff")) found.push_back(de.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw IoError("no such volume file or directory: " + e);
    }
  }
  return files;
}

}  // namespace psfcycle
