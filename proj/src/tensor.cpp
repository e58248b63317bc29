#include "pogmv/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pogmv {

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    throw Error("ShapeMismatch", std::string(where) + ": " + shape_str(a.shape) +
                                     " vs " + shape_str(b.shape));
  }
}

bool all_finite(const Tensor& t) {
  for (double x : t.data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double x : t.data) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace pogmv
