#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fsed/autodiff/nn.hpp"

namespace fsed::ad {

// Binary layout, little-endian:
//   "FSED" | u32 version | records...
//   record: u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
// Records run to end of file.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

/// Copies record data into the named tensors of `targets`, in place. Every
/// target must be present with a matching shape.
void assign_records(const std::vector<CheckpointRecord>& records, TensorList& targets);
std::vector<CheckpointRecord> to_records(const TensorList& tensors);

}  // namespace fsed::ad
