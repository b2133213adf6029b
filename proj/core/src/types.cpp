#include "nid/types.hpp"

#include "nid/rng.hpp"

namespace nid {

double total(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

std::vector<double> expand_planes(std::span<const double> per_element, std::size_t planes) {
  std::vector<double> out(per_element.size() * planes);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < per_element.size(); ++i) out[p * per_element.size() + i] = per_element[i];
  return out;
}

std::size_t planes_for(std::size_t state_size, std::size_t elements) {
  if (elements == 0 || state_size % elements != 0 || state_size == 0)
    throw ShapeError("state size is not a whole number of planes over the time matrix");
  return state_size / elements;
}

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": size mismatch");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t index) { return Rng(mix_seed(seed, index)); }

}  // namespace nid
