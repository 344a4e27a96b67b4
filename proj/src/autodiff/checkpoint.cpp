#include "fsed/autodiff/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "fsed/error.hpp"

namespace fsed::ad {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    raise(ErrorCategory::format, "checkpoint truncated while reading " + what);
  }
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<CheckpointRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCategory::io, "cannot open " + path.string() + " for writing");
  out.write("FSED", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& r : records) {
    if (shape_size(r.shape) != r.data.size()) {
      raise(ErrorCategory::shape, "checkpoint record " + r.name + " has inconsistent shape");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(r.data.data()),
              static_cast<std::streamsize>(r.data.size() * sizeof(double)));
  }
  if (!out) raise(ErrorCategory::io, "write failed for " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCategory::io, "cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FSED", 4) != 0) {
    raise(ErrorCategory::format, path.string() + " is not an FSED checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    raise(ErrorCategory::unsupported, "checkpoint version " + std::to_string(version));
  }
  std::vector<CheckpointRecord> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    CheckpointRecord r;
    const auto name_len = get<std::uint32_t>(in, "name length");
    r.name.resize(name_len);
    if (!in.read(r.name.data(), name_len)) raise(ErrorCategory::format, "checkpoint truncated in name");
    const auto rank = get<std::uint32_t>(in, "rank");
    for (std::uint32_t i = 0; i < rank; ++i) r.shape.push_back(get<std::uint64_t>(in, "dims"));
    r.data.resize(shape_size(r.shape));
    if (!in.read(reinterpret_cast<char*>(r.data.data()),
                 static_cast<std::streamsize>(r.data.size() * sizeof(double)))) {
      raise(ErrorCategory::format, "checkpoint truncated in data of " + r.name);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void assign_records(const std::vector<CheckpointRecord>& records, TensorList& targets) {
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& t : targets) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) raise(ErrorCategory::format, "checkpoint lacks tensor " + t.name);
    if (it->second->shape != t.tensor.shape()) {
      raise(ErrorCategory::shape, "checkpoint tensor " + t.name + " has shape " +
                                      shape_string(it->second->shape) + ", expected " +
                                      shape_string(t.tensor.shape()));
    }
    std::ranges::copy(it->second->data, t.tensor.mutable_values().begin());
  }
}

std::vector<CheckpointRecord> to_records(const TensorList& tensors) {
  std::vector<CheckpointRecord> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) {
    out.push_back({t.name, t.tensor.shape(),
                   std::vector<double>(t.tensor.values().begin(), t.tensor.values().end())});
  }
  return out;
}

}  // namespace fsed::ad
