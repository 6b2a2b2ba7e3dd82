#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace p2dnet {

/// Dense row-major array of doubles with up to four dimensions.
/// Images are stored H x W x C (channels last), batches lead: B x H x W x C.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    const std::vector<int>& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Same data, new shape of equal element count.
    Tensor reshaped(std::vector<int> shape) const;
    void fill(double v);
    bool all_finite() const;

    std::string shape_string() const;

    bool operator==(const Tensor&) const = default;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

} // namespace p2dnet
