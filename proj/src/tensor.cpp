#include "p2dnet/tensor.hpp"

#include "p2dnet/errors.hpp"

#include <algorithm>
#include <cmath>

namespace p2dnet {

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DimensionError("negative extent in shape " + shape_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
    if (shape_.size() > 4) throw DimensionError("tensors have at most 4 dimensions, got " + p2dnet::shape_string(shape_));
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() > 4) throw DimensionError("tensors have at most 4 dimensions, got " + p2dnet::shape_string(shape_));
    if (data_.size() != shape_size(shape_))
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             p2dnet::shape_string(shape_));
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_size(shape) != size())
        throw DimensionError("cannot reshape " + shape_string() + " to " + p2dnet::shape_string(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const { return p2dnet::shape_string(shape_); }

} // namespace p2dnet
