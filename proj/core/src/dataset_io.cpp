#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nid/dataset.hpp"

namespace nid {

namespace {

constexpr char kMagic[4] = {'N', 'I', 'D', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

ChannelDataset synth_dataset(const ChannelParams& params, std::size_t n_a, std::size_t n_c, std::size_t n,
                             std::uint64_t seed, std::uint64_t first_index) {
  ChannelDataset data{n_a, n_c, {}};
  data.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, first_index + i);
    data.samples.push_back(synth_channel(params, n_a, n_c, rng));
  }
  return data;
}

void write_dataset(const std::filesystem::path& path, const ChannelDataset& data) {
  if (data.n_a == 0 || data.n_c == 0) throw ShapeError("dataset: empty grid");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("dataset: cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  put_u32(out, static_cast<std::uint32_t>(data.n_a));
  put_u32(out, static_cast<std::uint32_t>(data.n_c));
  for (const auto& s : data.samples) {
    if (s.size() != data.dim()) throw ShapeError("dataset: sample size does not match grid");
    for (double x : s) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  if (!out) throw IoError("dataset: write failed for " + path.string());
}

DatasetReadResult read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("dataset: cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("dataset: bad magic");
  if (get_u32(bytes.data() + 4) != kVersion) throw IoError("dataset: unsupported version");
  const std::size_t count = get_u32(bytes.data() + 8);
  DatasetReadResult result;
  auto& data = result.data;
  data.n_a = get_u32(bytes.data() + 12);
  data.n_c = get_u32(bytes.data() + 16);
  if (data.n_a == 0 || data.n_c == 0) throw IoError("dataset: empty grid in header");
  const std::size_t d = data.dim();
  if (bytes.size() != 20 + count * d * 4) throw IoError("dataset: file size does not match header");

  const double target = std::sqrt(static_cast<double>(d));
  data.samples.assign(count, std::vector<double>(d));
  const unsigned char* p = bytes.data() + 20;
  for (auto& s : data.samples) {
    double sq = 0.0;
    for (double& x : s) {
      x = std::bit_cast<float>(get_u32(p));
      p += 4;
      if (!std::isfinite(x)) throw IoError("dataset: non-finite entry");
      sq += x * x;
    }
    if (!(sq > 0.0)) throw IoError("dataset: zero-norm sample");
    if (std::abs(std::sqrt(sq) - target) > 1e-4 * target) ++result.renormalized;
    normalize_channel(s);
  }
  return result;
}

}  // namespace nid
