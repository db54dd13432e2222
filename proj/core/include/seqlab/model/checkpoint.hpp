#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "seqlab/model/config.hpp"
#include "seqlab/numerics/tensor.hpp"

namespace seqlab {

// Binary checkpoint layout (little-endian):
//   "SEQLABCK" | u32 version | ModelConfig | u64 count |
//   count × (u32 path length, path bytes, u32 rank, u64 dims..., f64 values...)
// ModelConfig is seven u64 fields in declaration order, f64 dropout, u8 tie flag.
inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'Q', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Parameters parameters;
};

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                      const Parameters& parameters);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Path-tagged tensor records without a header; shared with trainer state files.
void write_tensor_records(std::ostream& out, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> read_tensor_records(std::istream& in);

}  // namespace seqlab
