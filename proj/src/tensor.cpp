#include "tsm/tensor.hpp"

namespace tsm {

char axis_name(Axis a) {
  switch (a) {
    case Axis::N: return 'N';
    case Axis::T: return 'T';
    case Axis::C: return 'C';
    case Axis::H: return 'H';
    case Axis::W: return 'W';
  }
  return '?';
}

std::string describe(const Extents& extents, const AxisLabels& labels) {
  std::string s = "(";
  for (std::size_t i = 0; i < extents.size(); ++i) {
    if (i) s += ",";
    if (i < labels.size()) s += std::string(1, axis_name(labels[i])) + "=";
    s += std::to_string(extents[i]);
  }
  return s + ")";
}

}  // namespace tsm
