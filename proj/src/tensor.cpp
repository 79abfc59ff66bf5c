#include "teaf/tensor.hpp"

#include <cmath>
#include <sstream>

namespace teaf {

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str_of(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

void ensure_finite(const Tensor& t, const char* what) {
  if (!t.all_finite())
    throw std::runtime_error(std::string(what) + ": produced non-finite values");
}

}  // namespace teaf
