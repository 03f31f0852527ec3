#include "npnet/tensor.hpp"

#include <cmath>
#include <sstream>

#include "npnet/errors.hpp"

namespace npnet {

std::string Shape::str() const {
    std::ostringstream out;
    out << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return out.str();
}

Tensor::Tensor(Shape s) : shape_(s) {
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
        throw ShapeError("tensor dimensions must be positive, got " + s.str());
    }
    data_.assign(s.count(), 0.0f);
}

Tensor Tensor::full(Shape s, float value) {
    Tensor t(s);
    t.fill(value);
    return t;
}

void Tensor::fill(float value) {
    for (float& v : data_) v = value;
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace npnet
