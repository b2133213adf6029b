#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nid/channel.hpp"

namespace nid {

/// Channel samples of one shape, each a stacked real vector of norm sqrt(2 n_a n_c).
struct ChannelDataset {
  std::size_t n_a = 0;
  std::size_t n_c = 0;
  std::vector<std::vector<double>> samples;

  std::size_t dim() const { return 2 * n_a * n_c; }
  std::size_t size() const { return samples.size(); }
};

/// n synthetic channels; sample i uses the stream (seed, first_index + i).
ChannelDataset synth_dataset(const ChannelParams& params, std::size_t n_a, std::size_t n_c, std::size_t n,
                             std::uint64_t seed, std::uint64_t first_index = 0);

/// "NIDF" file: magic, u32 version, u32 sample count, u32 n_a, u32 n_c, then per
/// sample the real plane followed by the imaginary plane (row-major) as
/// little-endian binary32.
void write_dataset(const std::filesystem::path& path, const ChannelDataset& data);

struct DatasetReadResult {
  ChannelDataset data;
  /// Samples whose stored norm was off by more than 1e-4 relative before re-normalization.
  std::size_t renormalized = 0;
};

/// Validates the header and size, then scales every sample to norm sqrt(d).
DatasetReadResult read_dataset(const std::filesystem::path& path);

}  // namespace nid
