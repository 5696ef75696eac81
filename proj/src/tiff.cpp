#include "psfcycle/tiff.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace psfcycle {
namespace {

namespace fs = std::filesystem;

constexpr std::uint16_t kImageWidth = 256;
constexpr std::uint16_t kImageLength = 257;
constexpr std::uint16_t kBitsPerSample = 258;
constexpr std::uint16_t kCompression = 259;
constexpr std::uint16_t kPhotometric = 262;
constexpr std::uint16_t kImageDescription = 270;
constexpr std::uint16_t kStripOffsets = 273;
constexpr std::uint16_t kSamplesPerPixel = 277;
constexpr std::uint16_t kRowsPerStrip = 278;
constexpr std::uint16_t kStripByteCounts = 279;
constexpr std::uint16_t kPlanarConfig = 284;
constexpr std::uint16_t kTileWidth = 322;
constexpr std::uint16_t kSampleFormat = 339;

constexpr std::uint16_t kTypeAscii = 2;
constexpr std::uint16_t kTypeShort = 3;
constexpr std::uint16_t kTypeLong = 4;

constexpr const char* kVoxelSizeKey = "psfcycle voxel_size_um=";

class Reader {
 public:
  Reader(std::vector<std::uint8_t> bytes, bool big_endian) : bytes_(std::move(bytes)), big_(big_endian) {}

  std::uint64_t read(std::size_t pos, int width) const {
    if (pos + width > bytes_.size()) throw IoError("truncated TIFF: read past end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      const std::uint64_t b = bytes_[pos + i];
      v |= big_ ? b << (8 * (width - 1 - i)) : b << (8 * i);
    }
    return v;
  }
  std::uint16_t u16(std::size_t pos) const { return static_cast<std::uint16_t>(read(pos, 2)); }
  std::uint32_t u32(std::size_t pos) const { return static_cast<std::uint32_t>(read(pos, 4)); }
  std::size_t size() const { return bytes_.size(); }
  const std::uint8_t* at(std::size_t pos) const { return bytes_.data() + pos; }

 private:
  std::vector<std::uint8_t> bytes_;
  bool big_;
};

struct Ifd {
  std::map<std::uint16_t, std::vector<std::uint64_t>> values;
  std::string description;

  std::uint64_t get(std::uint16_t tag, std::uint64_t fallback) const {
    auto it = values.find(tag);
    return it == values.end() || it->second.empty() ? fallback : it->second.front();
  }
  bool has(std::uint16_t tag) const { return values.count(tag) != 0; }
};

int type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
  }
}

Ifd parse_ifd(const Reader& r, std::size_t pos) {
  Ifd ifd;
  const std::uint16_t n = r.u16(pos);
  for (std::uint16_t e = 0; e < n; ++e) {
    const std::size_t entry = pos + 2 + 12 * std::size_t(e);
    const std::uint16_t tag = r.u16(entry);
    const std::uint16_t type = r.u16(entry + 2);
    const std::uint32_t count = r.u32(entry + 4);
    const int tsize = type_size(type);
    if (tsize == 0) continue;
    const std::size_t total = std::size_t(tsize) * count;
    const std::size_t data = total <= 4 ? entry + 8 : r.u32(entry + 8);
    if (data + total > r.size()) throw IoError("truncated TIFF: tag data past end of file");
    if (type == kTypeAscii) {
      ifd.description.assign(reinterpret_cast<const char*>(r.at(data)), total);
      if (auto nul = ifd.description.find('\0'); nul != std::string::npos) ifd.description.resize(nul);
      if (tag != kImageDescription) ifd.description.clear();
      continue;
    }
    if (tsize > 4) continue;
    auto& vals = ifd.values[tag];
    for (std::uint32_t i = 0; i < count; ++i) vals.push_back(r.read(data + std::size_t(i) * tsize, tsize));
  }
  return ifd;
}

float decode_sample(const Reader& r, std::size_t pos, int bits, int format) {
  const std::uint64_t raw = r.read(pos, bits / 8);
  if (format == 3) {
    if (bits == 32) {
      const auto u = static_cast<std::uint32_t>(raw);
      float f;
      std::memcpy(&f, &u, 4);
      return f;
    }
    double d;
    std::memcpy(&d, &raw, 8);
    return static_cast<float>(d);
  }
  if (format == 2) {
    const int shift = 64 - bits;
    return static_cast<float>(static_cast<std::int64_t>(raw << shift) >> shift);
  }
  return static_cast<float>(raw);
}

std::optional<std::array<double, 3>> parse_voxel_size(const std::string& description) {
  const auto at = description.find(kVoxelSizeKey);
  if (at == std::string::npos) return std::nullopt;
  std::istringstream in(description.substr(at + std::strlen(kVoxelSizeKey)));
  std::array<double, 3> vs{};
  char sep = 0;
  if (in >> vs[0] >> sep >> vs[1] >> sep >> vs[2]) return vs;
  return std::nullopt;
}

class Writer {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void patch_u32(std::size_t pos, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_[pos + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  void align() {
    if (buf_.size() % 2) buf_.push_back(0);
  }
  std::size_t pos() const { return buf_.size(); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

struct Entry {
  std::uint16_t tag, type;
  std::uint32_t count, value;
};

void write_page(Writer& w, std::size_t& next_ifd_slot, std::uint32_t width, std::uint32_t height,
                const void* pixels, std::uint16_t bits, std::uint16_t format, const std::string& description) {
  const std::uint32_t nbytes = width * height * (bits / 8);
  w.align();
  const auto strip = static_cast<std::uint32_t>(w.pos());
  w.bytes(pixels, nbytes);

  std::uint32_t desc_at = 0;
  if (!description.empty()) {
    w.align();
    desc_at = static_cast<std::uint32_t>(w.pos());
    w.bytes(description.c_str(), description.size() + 1);
  }

  std::vector<Entry> entries = {
      {kImageWidth, kTypeLong, 1, width},
      {kImageLength, kTypeLong, 1, height},
      {kBitsPerSample, kTypeShort, 1, bits},
      {kCompression, kTypeShort, 1, 1},
      {kPhotometric, kTypeShort, 1, 1},
  };
  if (!description.empty())
    entries.push_back({kImageDescription, kTypeAscii, static_cast<std::uint32_t>(description.size() + 1), desc_at});
  entries.insert(entries.end(), {
                                    {kStripOffsets, kTypeLong, 1, strip},
                                    {kSamplesPerPixel, kTypeShort, 1, 1},
                                    {kRowsPerStrip, kTypeLong, 1, height},
                                    {kStripByteCounts, kTypeLong, 1, nbytes},
                                    {kPlanarConfig, kTypeShort, 1, 1},
                                    {kSampleFormat, kTypeShort, 1, format},
                                });

  w.align();
  w.patch_u32(next_ifd_slot, static_cast<std::uint32_t>(w.pos()));
  w.u16(static_cast<std::uint16_t>(entries.size()));
  for (const auto& e : entries) {
    w.u16(e.tag);
    w.u16(e.type);
    w.u32(e.count);
    if (e.type == kTypeShort && e.count == 1) {
      w.u16(static_cast<std::uint16_t>(e.value));
      w.u16(0);
    } else {
      w.u32(e.value);
    }
  }
  next_ifd_slot = w.pos();
  w.u32(0);
}

void write_file(const Writer& w, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(w.buffer().data()), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Writer start_file(std::size_t& first_ifd_slot) {
  Writer w;
  w.bytes("II", 2);
  w.u16(42);
  first_ifd_slot = w.pos();
  w.u32(0);
  return w;
}

}  // namespace

Volumef load_volume(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || !((bytes[0] == 'I' && bytes[1] == 'I') || (bytes[0] == 'M' && bytes[1] == 'M')))
    throw IoError("'" + path.string() + "' is not a TIFF file");
  const bool big_endian = bytes[0] == 'M';
  const Reader r(std::move(bytes), big_endian);
  if (r.u16(2) != 42) throw IoError("'" + path.string() + "' is not a classic TIFF file");

  std::vector<float> voxels;
  Index width = -1, height = -1, depth = 0;
  std::string description;
  std::size_t ifd_pos = r.u32(4);
  while (ifd_pos != 0) {
    if (depth > 1'000'000) throw IoError("TIFF page chain does not terminate");
    const Ifd ifd = parse_ifd(r, ifd_pos);
    if (depth == 0) description = ifd.description;
    const auto w = static_cast<Index>(ifd.get(kImageWidth, 0));
    const auto h = static_cast<Index>(ifd.get(kImageLength, 0));
    const int bits = static_cast<int>(ifd.get(kBitsPerSample, 1));
    const int format = static_cast<int>(ifd.get(kSampleFormat, 1));
    if (w <= 0 || h <= 0) throw IoError("TIFF page without image dimensions");
    if (ifd.get(kCompression, 1) != 1) throw IoError("unsupported TIFF: compressed pages");
    if (ifd.get(kSamplesPerPixel, 1) != 1) throw IoError("unsupported TIFF: multi-sample pixels");
    if (ifd.has(kTileWidth)) throw IoError("unsupported TIFF: tiled layout");
    const bool float_ok = format == 3 && (bits == 32 || bits == 64);
    const bool int_ok = (format == 1 || format == 2) && (bits == 8 || bits == 16 || bits == 32);
    if (!float_ok && !int_ok) throw IoError("unsupported TIFF sample encoding");
    if (depth > 0 && (w != width || h != height)) throw IoError("inconsistent page shapes in '" + path.string() + "'");
    width = w;
    height = h;

    auto offsets_it = ifd.values.find(kStripOffsets);
    auto counts_it = ifd.values.find(kStripByteCounts);
    if (offsets_it == ifd.values.end() || counts_it == ifd.values.end() ||
        offsets_it->second.size() != counts_it->second.size())
      throw IoError("TIFF page without valid strip layout");

    const int bps = bits / 8;
    const std::size_t page_bytes = std::size_t(w) * h * bps;
    std::size_t got = 0;
    const std::size_t base = voxels.size();
    voxels.resize(base + std::size_t(w) * h);
    for (std::size_t s = 0; s < offsets_it->second.size() && got < page_bytes; ++s) {
      const std::size_t off = offsets_it->second[s];
      const std::size_t n = std::min<std::size_t>(counts_it->second[s], page_bytes - got);
      if (off + n > r.size()) throw IoError("truncated TIFF: strip past end of file");
      for (std::size_t b = 0; b < n; b += bps) voxels[base + (got + b) / bps] = decode_sample(r, off + b, bits, format);
      got += n;
    }
    if (got < page_bytes) throw IoError("truncated TIFF: page has fewer bytes than its dimensions");
    ++depth;
    const std::size_t next_slot = ifd_pos + 2 + 12 * std::size_t(r.u16(ifd_pos));
    ifd_pos = r.u32(next_slot);
  }
  if (depth == 0) throw IoError("TIFF file '" + path.string() + "' has no pages");

  Volumef v({depth, height, width});
  std::copy(voxels.begin(), voxels.end(), v.data());
  v.voxel_size = parse_voxel_size(description);
  return v;
}

void save_volume(const Volumef& v, const fs::path& path) {
  require(!v.empty(), "cannot save an empty volume");
  std::string description;
  if (v.voxel_size) {
    std::ostringstream os;
    os.precision(17);
    os << kVoxelSizeKey << (*v.voxel_size)[0] << ',' << (*v.voxel_size)[1] << ',' << (*v.voxel_size)[2];
    description = os.str();
  }
  std::size_t slot = 0;
  Writer w = start_file(slot);
  const Index plane = v.height() * v.width();
  for (Index z = 0; z < v.depth(); ++z)
    write_page(w, slot, static_cast<std::uint32_t>(v.width()), static_cast<std::uint32_t>(v.height()),
               v.data() + z * plane, 32, 3, z == 0 ? description : std::string());
  write_file(w, path);
}

void save_slice_u8(const Eigen::ArrayXXf& slice, const fs::path& path) {
  require(slice.size() > 0, "cannot save an empty slice");
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(slice.size()));
  for (Index y = 0; y < slice.rows(); ++y)
    for (Index x = 0; x < slice.cols(); ++x) {
      const float c = std::clamp(slice(y, x), 0.0f, 1.0f);
      pixels[std::size_t(y * slice.cols() + x)] = static_cast<std::uint8_t>(std::lround(c * 255.0f));
    }
  std::size_t slot = 0;
  Writer w = start_file(slot);
  write_page(w, slot, static_cast<std::uint32_t>(slice.cols()), static_cast<std::uint32_t>(slice.rows()),
             pixels.data(), 8, 1, {});
  write_file(w, path);
}

}  // namespace psfcycle
