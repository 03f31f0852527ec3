#ifndef NPNET_TENSOR_HPP
#define NPNET_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace npnet {

// Dense 4-D shape in NCHW order.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense NCHW tensor of single-precision values. Row-major, contiguous.
// The data length always equals the shape product.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(int n, int c, int h, int w) : Tensor(Shape{n, c, h, w}) {}

    static Tensor full(Shape s, float value);

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int n, int c, int y, int x) {
        return data_[index(n, c, y, x)];
    }
    float at(int n, int c, int y, int x) const {
        return data_[index(n, c, y, x)];
    }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    void fill(float value);
    bool all_finite() const;

private:
    Shape shape_{};
    std::vector<float> data_;
};

// Per-pixel class indices, shape (n, h, w).
struct LabelMap {
    int n = 0;
    int h = 0;
    int w = 0;
    std::vector<std::int32_t> data;

    LabelMap() = default;
    LabelMap(int n_, int h_, int w_)
        : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * h_ * w_, 0) {}

    std::size_t size() const { return data.size(); }
    std::int32_t& at(int b, int y, int x) {
        return data[(static_cast<std::size_t>(b) * h + y) * w + x];
    }
    std::int32_t at(int b, int y, int x) const {
        return data[(static_cast<std::size_t>(b) * h + y) * w + x];
    }
};

}  // namespace npnet

#endif
