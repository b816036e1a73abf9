#pragma once

// Dense row-major tensors. Rank is 2 throughout the project; a scalar is
// {1,1}. Real is float in production paths and double in gradient oracles.

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "mlr/common.hpp"

namespace mlr {

using Shape = std::vector<int>;

inline size_t numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= (size_t)d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename Real>
struct TensorData {
    Shape shape;
    std::vector<Real> values;
    bool requires_grad = false;
    std::vector<Real> grad;  // empty until backward touches this node

    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }
};

}  // namespace mlr
