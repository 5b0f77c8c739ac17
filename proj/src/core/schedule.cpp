#include "schedule.hpp"

#include <algorithm>

namespace sfpn {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Sfpn3: return "sfpn3";
    case Variant::Sfpn5: return "sfpn5";
    case Variant::Sfpn9: return "sfpn9";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "sfpn3" || s == "SFPN-3" || s == "3") return Variant::Sfpn3;
  if (s == "sfpn5" || s == "SFPN-5" || s == "5") return Variant::Sfpn5;
  if (s == "sfpn9" || s == "SFPN-9" || s == "9") return Variant::Sfpn9;
  throw ArgumentError("unknown variant: " + s);
}

int variant_level_count(Variant v) {
  switch (v) {
    case Variant::Sfpn3: return 3;
    case Variant::Sfpn5: return 5;
    case Variant::Sfpn9: return 9;
  }
  return 0;
}

ScaleSchedule build_schedule(Variant variant,
                             const std::vector<int>& base_strides) {
  if (base_strides.size() != 3 ||
      !std::is_sorted(base_strides.begin(), base_strides.end()) ||
      base_strides[0] >= base_strides[1] || base_strides[1] >= base_strides[2])
    throw ArgumentError("build_schedule: need 3 strictly increasing base strides");
  const int a = base_strides[0], b = base_strides[1], c = base_strides[2];

  std::vector<std::pair<int, bool>> levels;  // (stride, synthetic)
  for (int s : base_strides) levels.emplace_back(s, false);
  if (variant != Variant::Sfpn3) {
    // Intermediates at 1.5x the lower original of each adjacent pair.
    levels.emplace_back(a * 3 / 2, true);
    levels.emplace_back(b * 3 / 2, true);
  }
  if (variant == Variant::Sfpn9) {
    // Extend the 1.5x/2x pattern past both ends of the pyramid.
    levels.emplace_back(a / 2, true);
    levels.emplace_back(a * 3 / 4, true);
    levels.emplace_back(c * 3 / 2, true);
    levels.emplace_back(c * 2, true);
  }
  std::sort(levels.begin(), levels.end());

  ScaleSchedule out;
  out.variant = variant;
  for (auto [stride, synth] : levels) {
    if (stride < 1) throw ArgumentError("build_schedule: stride underflow");
    if (!out.strides.empty() && stride <= out.strides.back())
      throw ArgumentError("build_schedule: strides not strictly increasing");
    out.strides.push_back(stride);
    out.synthetic.push_back(synth);
  }
  return out;
}

}  // namespace sfpn
