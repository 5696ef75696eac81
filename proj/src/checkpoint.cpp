#include "psfcycle/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace psfcycle {

namespace {

constexpr char kMagic[] = "PSFCYCLE-CKPT\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;
constexpr int kFormat = 1;

static_assert(sizeof(float) == 4);

class ArchiveWriter {
 public:
  void add(const std::string& name, std::vector<Index> shape, const float* data, Index count) {
    Json t = {{"name", name}, {"shape", shape}, {"offset", payload_.size()}};
    tensors_.push_back(std::move(t));
    payload_.insert(payload_.end(), data, data + count);
  }
  void add(const std::string& name, const Matrix<float>& m) { add(name, {m.rows(), m.cols()}, m.data(), m.size()); }
  void add(const std::string& name, const Volumef& v) {
    add(name, {v.depth(), v.height(), v.width()}, v.data(), v.size());
  }

  void write(Json header, const std::filesystem::path& path) const {
    header["format"] = kFormat;
    header["tensors"] = tensors_;
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    unsigned char len_bytes[8];
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>(len >> (8 * i));

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write checkpoint " + tmp.string());
      out.write(kMagic, kMagicLen);
      out.write(reinterpret_cast<const char*>(len_bytes), 8);
      out.write(text.data(), static_cast<std::streamsize>(text.size()));
      std::vector<unsigned char> bytes(payload_.size() * 4);
      for (std::size_t i = 0; i < payload_.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &payload_[i], 4);
        for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<unsigned char>(u >> (8 * b));
      }
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      out.flush();
      if (!out) throw IoError("failed while writing checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
  }

 private:
  Json tensors_ = Json::array();
  std::vector<float> payload_;
};

class ArchiveReader {
 public:
  explicit ArchiveReader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path_);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kMagicLen + 8 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0)
      throw IoError(path_ + " is not a checkpoint file");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(bytes[kMagicLen + i])) << (8 * i);
    const std::size_t body = kMagicLen + 8;
    if (len > bytes.size() - body) throw IoError(path_ + ": truncated checkpoint header");
    try {
      header_ = Json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(body),
                            bytes.begin() + static_cast<std::ptrdiff_t>(body + len));
    } catch (const Json::parse_error& e) {
      throw IoError(path_ + ": corrupt checkpoint header (" + e.what() + ")");
    }
    if (header_.value("format", 0) != kFormat) throw IoError(path_ + ": unsupported checkpoint format");
    const std::size_t payload_bytes = bytes.size() - body - len;
    if (payload_bytes % 4 != 0) throw IoError(path_ + ": truncated checkpoint payload");
    payload_.resize(payload_bytes / 4);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + body + len);
    for (std::size_t i = 0; i < payload_.size(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= std::uint32_t(p[4 * i + b]) << (8 * b);
      std::memcpy(&payload_[i], &u, 4);
    }
    for (const auto& t : header_.at("tensors")) {
      Entry e{t.at("shape").get<std::vector<Index>>(), t.at("offset").get<std::size_t>()};
      Index count = 1;
      for (Index s : e.shape) count *= s;
      if (e.offset + static_cast<std::size_t>(count) > payload_.size())
        throw IoError(path_ + ": tensor " + t.at("name").get<std::string>() + " lies outside the payload");
      entries_[t.at("name").get<std::string>()] = e;
    }
  }

  const Json& header() const { return header_; }
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  void read(const std::string& name, Matrix<float>& m) const {
    const Entry& e = entry(name, {m.rows(), m.cols()});
    std::copy_n(payload_.data() + e.offset, m.size(), m.data());
  }

  Volumef volume(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError(path_ + ": missing tensor " + name);
    const auto& s = it->second.shape;
    if (s.size() != 3) throw IoError(path_ + ": tensor " + name + " is not a volume");
    Volumef v({s[0], s[1], s[2]});
    std::copy_n(payload_.data() + it->second.offset, v.size(), v.data());
    return v;
  }

 private:
  struct Entry {
    std::vector<Index> shape;
    std::size_t offset;
  };

  const Entry& entry(const std::string& name, const std::vector<Index>& shape) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError(path_ + ": missing tensor " + name);
    if (it->second.shape != shape) throw IoError(path_ + ": tensor " + name + " has an unexpected shape");
    return it->second;
  }

  std::string path_;
  Json header_;
  std::vector<float> payload_;
  std::map<std::string, Entry> entries_;
};

CheckpointKind kind_from_string(const std::string& s) {
  if (s == "cycle") return CheckpointKind::cycle;
  if (s == "baseline") return CheckpointKind::baseline;
  if (s == "identity") return CheckpointKind::identity;
  throw IoError("unknown checkpoint kind \"" + s + "\"");
}

TrainConfig config_of(const ArchiveReader& r) {
  try {
    return train_config_from_json(r.header().at("config"));
  } catch (const std::exception& e) {
    throw IoError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

void add_adam(ArchiveWriter& w, const std::string& key, const Adam<float>& opt,
              const std::vector<std::string>& names, Json& steps) {
  steps[key] = opt.steps();
  if (opt.first_moments().empty()) return;
  for (std::size_t i = 0; i < names.size(); ++i) {
    w.add("adam." + key + ".m." + names[i], opt.first_moments()[i]);
    w.add("adam." + key + ".v." + names[i], opt.second_moments()[i]);
  }
}

void read_adam(const ArchiveReader& r, const std::string& key, Adam<float>& opt,
               const std::vector<std::pair<std::string, Param<float>*>>& params) {
  const auto t = r.header().at("adam_steps").at(key).get<std::int64_t>();
  opt.set_steps(t);
  opt.first_moments().clear();
  opt.second_moments().clear();
  if (!r.has("adam." + key + ".m." + params.front().first)) return;
  for (const auto& [name, p] : params) {
    Matrix<float> m(p->value.rows(), p->value.cols()), v(p->value.rows(), p->value.cols());
    r.read("adam." + key + ".m." + name, m);
    r.read("adam." + key + ".v." + name, v);
    opt.first_moments().push_back(std::move(m));
    opt.second_moments().push_back(std::move(v));
  }
}

using Named = std::vector<std::pair<std::string, Param<float>*>>;

Named prefixed(const std::string& prefix, const ParamRefs<float>& ps) {
  Named out;
  for (auto* p : ps) out.emplace_back(prefix + p->name, p);
  return out;
}

std::vector<std::string> names_of(const Named& n) {
  std::vector<std::string> out;
  for (const auto& e : n) out.push_back(e.first);
  return out;
}

// Names in generator-optimizer order: G_AB, then the reverse model.
Named generator_named(CycleModel& m) {
  Named n = prefixed("g_ab.", m.g_ab.parameters());
  Named rev = m.psf ? prefixed("", m.psf->parameters()) : prefixed("g_ba.", m.g_ba->parameters());
  n.insert(n.end(), rev.begin(), rev.end());
  return n;
}

}  // namespace

std::string to_string(CheckpointKind k) {
  switch (k) {
    case CheckpointKind::cycle: return "cycle";
    case CheckpointKind::baseline: return "baseline";
    case CheckpointKind::identity: return "identity";
  }
  return "?";
}

void save_checkpoint(const TrainState& cs, const std::filesystem::path& path) {
  auto& s = const_cast<TrainState&>(cs);
  ArchiveWriter w;
  for (const auto& [name, p] : s.model.named_parameters()) w.add(name, p->value);
  Json steps = Json::object();
  add_adam(w, "g", s.g_opt, names_of(generator_named(s.model)), steps);
  for (std::size_t i = 0; i < s.model.d_a.size(); ++i) {
    add_adam(w, "d_a.s" + std::to_string(i), s.d_a_opt[i], names_of(prefixed("", s.model.d_a[i].parameters())), steps);
    add_adam(w, "d_b.s" + std::to_string(i), s.d_b_opt[i], names_of(prefixed("", s.model.d_b[i].parameters())), steps);
  }
  for (std::size_t i = 0; i < s.pool_a.size(); ++i) w.add("pool_a." + std::to_string(i), s.pool_a.pool()[i]);
  for (std::size_t i = 0; i < s.pool_b.size(); ++i) w.add("pool_b." + std::to_string(i), s.pool_b.pool()[i]);
  w.write({{"kind", "cycle"},
           {"config", to_json(s.cfg)},
           {"epoch", s.epoch},
           {"step", s.step},
           {"adam_steps", steps},
           {"pools", {{"pool_a", s.pool_a.size()}, {"pool_b", s.pool_b.size()}}}},
          path);
}

void save_checkpoint(const BaselineState& cs, const std::filesystem::path& path) {
  auto& s = const_cast<BaselineState&>(cs);
  ArchiveWriter w;
  const Named named = prefixed("g_ab.", s.g.parameters());
  for (const auto& [name, p] : named) w.add(name, p->value);
  Json steps = Json::object();
  add_adam(w, "g", s.opt, names_of(named), steps);
  w.write({{"kind", "baseline"}, {"config", to_json(s.cfg)}, {"epoch", s.epoch}, {"step", s.step}, {"adam_steps", steps}},
          path);
}

void save_identity_checkpoint(const std::filesystem::path& path) {
  ArchiveWriter().write({{"kind", "identity"}, {"config", Json::object()}, {"epoch", 0}, {"step", 0}}, path);
}

CheckpointKind checkpoint_kind(const std::filesystem::path& path) {
  return kind_from_string(ArchiveReader(path).header().at("kind").get<std::string>());
}

TrainState load_train_state(const std::filesystem::path& path) {
  const ArchiveReader r(path);
  if (r.header().at("kind") != "cycle") throw IoError(path.string() + " is not a cycle-training checkpoint");
  TrainState s = TrainState::initial(config_of(r));
  for (const auto& [name, p] : s.model.named_parameters()) r.read(name, p->value);
  read_adam(r, "g", s.g_opt, generator_named(s.model));
  for (std::size_t i = 0; i < s.model.d_a.size(); ++i) {
    read_adam(r, "d_a.s" + std::to_string(i), s.d_a_opt[i], prefixed("", s.model.d_a[i].parameters()));
    read_adam(r, "d_b.s" + std::to_string(i), s.d_b_opt[i], prefixed("", s.model.d_b[i].parameters()));
  }
  const auto& pools = r.header().at("pools");
  for (std::size_t i = 0; i < pools.at("pool_a").get<std::size_t>(); ++i)
    s.pool_a.pool().push_back(r.volume("pool_a." + std::to_string(i)));
  for (std::size_t i = 0; i < pools.at("pool_b").get<std::size_t>(); ++i)
    s.pool_b.pool().push_back(r.volume("pool_b." + std::to_string(i)));
  s.epoch = r.header().at("epoch").get<int>();
  s.step = r.header().at("step").get<std::int64_t>();
  return s;
}

BaselineState load_baseline_state(const std::filesystem::path& path) {
  const ArchiveReader r(path);
  if (r.header().at("kind") != "baseline") throw IoError(path.string() + " is not a baseline checkpoint");
  BaselineState s = BaselineState::initial(config_of(r));
  const Named named = prefixed("g_ab.", s.g.parameters());
  for (const auto& [name, p] : named) r.read(name, p->value);
  read_adam(r, "g", s.opt, named);
  s.epoch = r.header().at("epoch").get<int>();
  s.step = r.header().at("step").get<std::int64_t>();
  return s;
}

InferenceModel load_inference_model(const std::filesystem::path& path) {
  const ArchiveReader r(path);
  const CheckpointKind kind = kind_from_string(r.header().at("kind").get<std::string>());
  if (kind == CheckpointKind::identity) return IdentityModel{};
  const TrainConfig cfg = config_of(r);
  Generator<float> g(cfg.generator, 0);
  for (const auto& [name, p] : prefixed("g_ab.", g.parameters())) r.read(name, p->value);
  return g;
}

PsfKernel<float> load_learned_kernel(const std::filesystem::path& path) {
  const TrainState s = load_train_state(path);
  if (!s.model.psf) throw IoError(path.string() + " has no PSF layer (reverse model is a U-Net)");
  return s.model.psf->kernel();
}

}  // namespace psfcycle
