#include "dcae/container.hpp"

#include <algorithm>
#include <cstring>

namespace dcae {

namespace {

constexpr char kContainerMagic[4] = {'D', 'C', 'A', 'E'};
constexpr char kModelMagic[8] = {'D', 'C', 'A', 'E', 'M', 'O', 'D', 'L'};

struct Writer {
  std::vector<uint8_t> out;

  void u8(uint8_t v) { out.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xff));
  }
  void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(uint32_t(s.size()));
    raw(s.data(), s.size());
  }
};

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (bytes.size() - pos < n) throw FormatError("truncated file");
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    if (n > (1u << 20)) throw FormatError("string length out of range");
    need(n);
    std::string s(bytes.begin() + pos, bytes.begin() + pos + n);
    pos += n;
    return s;
  }
  std::vector<uint8_t> blob(size_t n) {
    need(n);
    std::vector<uint8_t> b(bytes.begin() + pos, bytes.begin() + pos + n);
    pos += n;
    return b;
  }
};

}  // namespace

std::vector<uint8_t> write_container(const ContainerParts& parts) {
  const DcaeHeader& h = parts.header;
  if (h.slice_stream_lens.size() != h.slice_count)
    throw FormatError("container: slice length table does not match slice count");
  if (h.z_stream_len != parts.z_stream.size())
    throw FormatError("container: z stream length mismatch");
  if (parts.slice_streams.size() != h.slice_count)
    throw FormatError("container: slice stream count mismatch");
  for (size_t i = 0; i < parts.slice_streams.size(); ++i)
    if (parts.slice_streams[i].size() != h.slice_stream_lens[i])
      throw FormatError("container: slice stream length mismatch");

  Writer w;
  w.raw(kContainerMagic, 4);
  w.u8(h.version);
  w.u8(h.profile_id);
  w.u8(h.lambda_index);
  w.u32(h.width);
  w.u32(h.height);
  w.u8(h.slice_count);
  w.u32(h.z_stream_len);
  for (uint32_t len : h.slice_stream_lens) w.u32(len);
  w.raw(parts.z_stream.data(), parts.z_stream.size());
  for (const auto& s : parts.slice_streams) w.raw(s.data(), s.size());
  return w.out;
}

ContainerParts read_container(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kContainerMagic, 4) != 0)
    throw FormatError("container: bad magic");
  r.pos = 4;
  ContainerParts parts;
  DcaeHeader& h = parts.header;
  h.version = r.u8();
  if (h.version != 1)
    throw FormatError("container: unsupported version " + std::to_string(h.version));
  h.profile_id = r.u8();
  h.lambda_index = r.u8();
  h.width = r.u32();
  h.height = r.u32();
  if (h.width == 0 || h.height == 0) throw FormatError("container: zero image dimensions");
  if (h.width > 32768 || h.height > 32768 || uint64_t(h.width) * h.height > (1u << 24))
    throw FormatError("container: image dimensions out of supported range");
  h.slice_count = r.u8();
  h.z_stream_len = r.u32();
  uint64_t total = 0;
  h.slice_stream_lens.resize(h.slice_count);
  for (auto& len : h.slice_stream_lens) {
    len = r.u32();
    total += len;
  }
  total += h.z_stream_len;
  if (bytes.size() != h.header_size() + total)
    throw FormatError("container: size does not match header lengths");
  parts.z_stream = r.blob(h.z_stream_len);
  parts.slice_streams.reserve(h.slice_count);
  for (uint32_t len : h.slice_stream_lens) parts.slice_streams.push_back(r.blob(len));
  return parts;
}

const std::vector<float>& lambda_grid() {
  static const std::vector<float> grid = {0.0018f, 0.0035f, 0.0067f, 0.0130f, 0.0250f, 0.0500f};
  return grid;
}

uint8_t lambda_index_for(float lambda) {
  const auto& grid = lambda_grid();
  for (size_t i = 0; i < grid.size(); ++i)
    if (grid[i] == lambda) return uint8_t(i);
  return 255;
}

std::vector<uint8_t> save_model(const DcaeModel<float>& model) {
  const ModelConfig& c = model.cfg;
  Writer w;
  w.raw(kModelMagic, 8);
  w.u8(c.profile_id);
  w.u8(c.lambda_index);
  w.f32(c.lambda);
  w.i32(c.y_channels);
  w.i32(c.z_channels);
  w.u32(uint32_t(c.stage_channels.size()));
  for (int v : c.stage_channels) w.i32(v);
  w.i32(c.downsample_factor_y);
  w.i32(c.downsample_factor_z);
  w.i32(c.slice_count);
  w.i32(c.dict_entries);
  w.i32(c.dict_channels);
  w.i32(c.msfa_layers);
  w.i32(c.c_ms);
  w.i32(c.c_qk);
  w.i32(c.head_dim);
  w.i32(c.ffn_expansion);
  w.i32(c.fe_hidden);
  w.i32(c.hyper_hidden);
  w.u8(c.dca_enabled ? 1 : 0);
  w.str(c.profile_name);

  // canonical name-sorted tensor table
  std::vector<size_t> order(model.params.entries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return model.params.entries[a].name < model.params.entries[b].name;
  });
  w.u32(uint32_t(order.size()));
  for (size_t idx : order) {
    const auto& e = model.params.entries[idx];
    w.str(e.name);
    w.u8(4);
    w.u32(uint32_t(e.value.b));
    w.u32(uint32_t(e.value.c));
    w.u32(uint32_t(e.value.h));
    w.u32(uint32_t(e.value.w));
    for (float v : e.value.data) w.f32(v);
  }
  return w.out;
}

DcaeModel<float> load_model(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(8);
  if (std::memcmp(bytes.data(), kModelMagic, 8) != 0) throw FormatError("model: bad magic");
  r.pos = 8;
  ModelConfig c;
  c.profile_id = r.u8();
  c.lambda_index = r.u8();
  c.lambda = r.f32();
  c.y_channels = r.i32();
  c.z_channels = r.i32();
  const uint32_t n_stage = r.u32();
  if (n_stage > 16) throw FormatError("model: stage list out of range");
  c.stage_channels.clear();
  for (uint32_t i = 0; i < n_stage; ++i) c.stage_channels.push_back(r.i32());
  c.downsample_factor_y = r.i32();
  c.downsample_factor_z = r.i32();
  c.slice_count = r.i32();
  c.dict_entries = r.i32();
  c.dict_channels = r.i32();
  c.msfa_layers = r.i32();
  c.c_ms = r.i32();
  c.c_qk = r.i32();
  c.head_dim = r.i32();
  c.ffn_expansion = r.i32();
  c.fe_hidden = r.i32();
  c.hyper_hidden = r.i32();
  c.dca_enabled = r.u8() != 0;
  c.profile_name = r.str();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model: invalid config: ") + e.what());
  }
  // a named profile must match the compiled definition
  if (c.profile_id != 0) {
    const std::string expect_name = profile_name_from_id(c.profile_id);
    ModelConfig compiled = make_profile(expect_name);
    compiled.lambda = c.lambda;
    compiled.lambda_index = c.lambda_index;
    compiled.dca_enabled = c.dca_enabled;
    compiled.msfa_layers = c.msfa_layers;
    if (c.profile_name != expect_name || c.y_channels != compiled.y_channels ||
        c.z_channels != compiled.z_channels || c.stage_channels != compiled.stage_channels ||
        c.downsample_factor_y != compiled.downsample_factor_y ||
        c.downsample_factor_z != compiled.downsample_factor_z ||
        c.slice_count != compiled.slice_count || c.dict_entries != compiled.dict_entries ||
        c.dict_channels != compiled.dict_channels || c.c_ms != compiled.c_ms ||
        c.c_qk != compiled.c_qk || c.head_dim != compiled.head_dim ||
        c.ffn_expansion != compiled.ffn_expansion || c.fe_hidden != compiled.fe_hidden ||
        c.hyper_hidden != compiled.hyper_hidden)
      throw FormatError("model: config does not match compiled profile " + expect_name);
  }

  DcaeModel<float> model(c, 0);
  const uint32_t count = r.u32();
  if (count != model.params.entries.size())
    throw FormatError("model: tensor count " + std::to_string(count) + " does not match config");
  std::vector<bool> seen(model.params.entries.size(), false);
  for (uint32_t t = 0; t < count; ++t) {
    const std::string name = r.str();
    const int id = model.params.find(name);
    if (id < 0) throw FormatError("model: unknown tensor " + name);
    if (seen[size_t(id)]) throw FormatError("model: duplicate tensor " + name);
    seen[size_t(id)] = true;
    if (r.u8() != 4) throw FormatError("model: unexpected tensor rank for " + name);
    auto& value = model.params.entries[size_t(id)].value;
    const uint32_t b = r.u32(), ch = r.u32(), h = r.u32(), w = r.u32();
    if (int(b) != value.b || int(ch) != value.c || int(h) != value.h || int(w) != value.w)
      throw FormatError("model: shape mismatch for " + name);
    for (auto& v : value.data) v = r.f32();
  }
  if (r.pos != bytes.size()) throw FormatError("model: trailing bytes");
  return model;
}

}  // namespace dcae
