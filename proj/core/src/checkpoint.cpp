#include "pvmdnn/checkpoint.hpp"

#include <cstring>

#include "binio.hpp"

namespace pvmdnn {

namespace {
constexpr char kMagic[4] = {'P', 'V', 'M', 'D'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const NetworkConfig& cfg, const Parameters& p) {
  // tensor_refs takes a mutable Parameters; we only read through it here.
  auto refs = tensor_refs(const_cast<Parameters&>(p), cfg);

  binio::Writer w(path);
  w.bytes(kMagic, 4);
  w.u16(kVersion);

  const std::string cfg_json = config_to_json(cfg);
  w.u32(static_cast<std::uint32_t>(cfg_json.size()));
  w.bytes(cfg_json.data(), cfg_json.size());
  w.u32(static_cast<std::uint32_t>(p.initial_states.size()));

  w.u32(static_cast<std::uint32_t>(refs.size()));
  for (const auto& r : refs) {
    w.str(r.name);
    w.f64(r.tau);
    w.u8(static_cast<std::uint8_t>(r.dims.size()));
    for (int d : r.dims) w.u32(static_cast<std::uint32_t>(d));
  }
  for (const auto& r : refs) {
    w.f32_block({r.data, r.size});
  }
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  binio::Reader rd(path);
  char magic[4];
  rd.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("'" + path + "' is not a checkpoint file (bad magic)");
  }
  const std::uint16_t version = rd.u16();
  if (version != kVersion) {
    throw IoError("'" + path + "' has unsupported checkpoint version " +
                  std::to_string(version));
  }

  const std::uint32_t cfg_len = rd.u32();
  std::string cfg_json(cfg_len, '\0');
  rd.bytes(cfg_json.data(), cfg_len);

  Checkpoint ck;
  ck.config = config_from_json(cfg_json);
  const std::uint32_t num_sequences = rd.u32();
  ck.params = zero_params(ck.config, static_cast<int>(num_sequences));

  auto refs = tensor_refs(ck.params, ck.config);
  const std::uint32_t count = rd.u32();
  if (count != refs.size()) {
    throw IoError("'" + path + "' manifest lists " + std::to_string(count) +
                  " tensors, config implies " + std::to_string(refs.size()));
  }
  for (const auto& r : refs) {
    const std::string name = rd.str();
    if (name != r.name) {
      throw IoError("'" + path + "' manifest entry '" + name + "' does not match expected '" +
                    r.name + "'");
    }
    rd.f64();  // tau is informational; the config is authoritative
    const std::uint8_t ndims = rd.u8();
    if (ndims != r.dims.size()) {
      throw IoError("'" + path + "': tensor '" + name + "' has unexpected rank");
    }
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < ndims; ++i) {
      const std::uint32_t d = rd.u32();
      if (d != static_cast<std::uint32_t>(r.dims[i])) {
        throw IoError("'" + path + "': tensor '" + name + "' has unexpected shape");
      }
      n *= d;
    }
    if (n != r.size) throw IoError("'" + path + "': tensor '" + name + "' size mismatch");
  }
  for (const auto& r : refs) {
    rd.f32_block({r.data, r.size});
  }
  if (rd.remaining() != 0) {
    throw IoError("'" + path + "' has " + std::to_string(rd.remaining()) +
                  " trailing bytes after the parameter blobs");
  }
  return ck;
}

}  // namespace pvmdnn
