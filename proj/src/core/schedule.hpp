#pragma once

#include <vector>

#include "common.hpp"

namespace sfpn {

enum class Variant { Sfpn3, Sfpn5, Sfpn9 };

const char* variant_name(Variant v);
Variant variant_from_string(const std::string& s);
int variant_level_count(Variant v);

// Ordered stride list of a pyramid. Three strides are original backbone
// outputs; the rest are synthetic intermediates at 1.5x/2x steps.
struct ScaleSchedule {
  Variant variant;
  std::vector<int> strides;         // strictly increasing
  std::vector<bool> synthetic;      // parallel to strides

  int level_count() const { return int(strides.size()); }
  int synthetic_count() const {
    int n = 0;
    for (bool s : synthetic) n += s;
    return n;
  }
  std::vector<int> original_strides() const {
    std::vector<int> out;
    for (size_t i = 0; i < strides.size(); ++i)
      if (!synthetic[i]) out.push_back(strides[i]);
    return out;
  }
  // Feature-map side length at a given stride.
  static int map_size(int input_size, int stride) { return input_size / stride; }
};

ScaleSchedule build_schedule(Variant variant,
                             const std::vector<int>& base_strides = {8, 16, 32});

}  // namespace sfpn
