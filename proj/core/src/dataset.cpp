#include "pvmdnn/dataset.hpp"

#include <cstring>

#include "binio.hpp"

namespace pvmdnn {

namespace {
constexpr char kMagic[7] = {'P', 'V', 'M', 'D', '-', 'D', 'S'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
  for (const auto& s : ds.sequences) {
    const std::size_t t = s.frames.size();
    if (s.joints.size() != t || s.codes.size() != t) {
      throw ConfigError("save_dataset: sequence " + std::to_string(s.id) +
                        " has misaligned frames/joints/codes");
    }
  }

  binio::Writer w(path);
  w.bytes(kMagic, 7);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.image_height));
  w.u32(static_cast<std::uint32_t>(ds.image_width));
  w.u32(static_cast<std::uint32_t>(ds.num_joints));
  w.u32(static_cast<std::uint32_t>(ds.code_len));
  w.u32(static_cast<std::uint32_t>(ds.sequences.size()));
  for (const auto& s : ds.sequences) {
    w.u32(static_cast<std::uint32_t>(s.id));
    w.u32(static_cast<std::uint32_t>(s.frames.size()));
    w.u8(static_cast<std::uint8_t>(s.spec.lead));
    w.f32(static_cast<float>(s.spec.amp_left));
    w.f32(static_cast<float>(s.spec.amp_right));
    w.u32(static_cast<std::uint32_t>(s.spec.period));
    w.u32(static_cast<std::uint32_t>(s.spec.phase_offset));
  }
  for (const auto& s : ds.sequences) {
    for (const auto& f : s.frames) w.f32_block(f.data);
    for (const auto& j : s.joints) w.f32_block(j);
    for (const auto& c : s.codes) w.f32_block(c);
  }
  w.trailer_crc();
  w.close();
}

Dataset load_dataset(const std::string& path) {
  binio::Reader rd(path);
  char magic[7];
  rd.bytes(magic, 7);
  if (std::memcmp(magic, kMagic, 7) != 0) {
    throw IoError("'" + path + "' is not a dataset file (bad magic)");
  }
  const std::uint16_t version = rd.u16();
  if (version != kVersion) {
    throw IoError("'" + path + "' has unsupported dataset version " + std::to_string(version));
  }

  Dataset ds;
  ds.image_height = static_cast<int>(rd.u32());
  ds.image_width = static_cast<int>(rd.u32());
  ds.num_joints = static_cast<int>(rd.u32());
  ds.code_len = static_cast<int>(rd.u32());
  const std::uint32_t count = rd.u32();
  if (ds.image_height <= 0 || ds.image_width <= 0 || ds.num_joints <= 0 || ds.code_len <= 0) {
    throw IoError("'" + path + "' declares non-positive extents");
  }

  ds.sequences.resize(count);
  for (auto& s : ds.sequences) {
    s.id = static_cast<int>(rd.u32());
    const std::uint32_t t = rd.u32();
    const std::uint8_t lead = rd.u8();
    if (lead > 2) throw IoError("'" + path + "' has an invalid lead tag");
    s.spec.lead = static_cast<Lead>(lead);
    s.spec.amp_left = rd.f32();
    s.spec.amp_right = rd.f32();
    s.spec.period = static_cast<int>(rd.u32());
    s.spec.phase_offset = static_cast<int>(rd.u32());
    s.spec.length = static_cast<int>(t);
    s.frames.assign(t, MapStack(1, ds.image_height, ds.image_width));
    s.joints.assign(t, std::vector<double>(ds.num_joints, 0.0));
    s.codes.assign(t, std::vector<double>(ds.code_len, 0.0));
  }
  for (auto& s : ds.sequences) {
    for (auto& f : s.frames) rd.f32_block(f.data);
    for (auto& j : s.joints) rd.f32_block(j);
    for (auto& c : s.codes) rd.f32_block(c);
  }

  const std::size_t body_end = rd.pos();
  const std::uint32_t expect = rd.crc_of_prefix(body_end);
  const std::uint32_t stored = rd.u32();
  if (stored != expect) throw IoError("'" + path + "' failed its CRC32 check");
  if (rd.remaining() != 0) throw IoError("'" + path + "' has trailing bytes after the CRC");
  return ds;
}

}  // namespace pvmdnn
