#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "dcae/model.hpp"

namespace dcae {

// Compressed-image container. All integers little-endian:
//   "DCAE" | version u8 | profile_id u8 | lambda_index u8 |
//   width u32 | height u32 (pre-padding dims) | slice_count u8 |
//   z_stream_len u32 | slice_stream_lens u32 x slice_count |
//   z stream bytes | slice streams in coding order
// The header length plus the stream lengths must equal the file size; the
// shared dictionary contributes zero bytes here.
struct DcaeHeader {
  uint8_t version = 1;
  uint8_t profile_id = 0;
  uint8_t lambda_index = 0;
  uint32_t width = 0;
  uint32_t height = 0;
  uint8_t slice_count = 0;
  uint32_t z_stream_len = 0;
  std::vector<uint32_t> slice_stream_lens;

  size_t header_size() const { return 20 + 4 * size_t(slice_count); }
};

struct ContainerParts {
  DcaeHeader header;
  std::vector<uint8_t> z_stream;
  std::vector<std::vector<uint8_t>> slice_streams;
};

std::vector<uint8_t> write_container(const ContainerParts& parts);
ContainerParts read_container(const std::vector<uint8_t>& bytes);

// Model archive:
//   "DCAEMODL" | config block | tensor table
// Config block: profile_id u8 | lambda_index u8 | lambda f32 |
//   y_channels i32 | z_channels i32 | n_stages u32 | stage_channels i32 x n |
//   downsample_factor_y i32 | downsample_factor_z i32 | slice_count i32 |
//   dict_entries i32 | dict_channels i32 | msfa_layers i32 | c_ms i32 |
//   c_qk i32 | head_dim i32 | ffn_expansion i32 | fe_hidden i32 |
//   hyper_hidden i32 | dca_enabled u8 | name_len u32 | profile_name bytes
// Tensor table: count u32, then per tensor sorted by name:
//   name_len u32 | name | rank u8 | dims u32 x rank | f32 data little-endian
std::vector<uint8_t> save_model(const DcaeModel<float>& model);
DcaeModel<float> load_model(const std::vector<uint8_t>& bytes);

// The lambda grid addressed by lambda_index; index 255 marks a custom value.
const std::vector<float>& lambda_grid();
uint8_t lambda_index_for(float lambda);

}  // namespace dcae
