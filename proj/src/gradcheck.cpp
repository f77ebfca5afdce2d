#include "confshare/gradcheck.hpp"

#include <algorithm>

namespace confshare {

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace confshare
