#pragma once

#include <dynaseg/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dynaseg {

/// Dense row-major array of doubles with up to four extents (last axis fastest).
class Tensor
{
public:
    using Shape = std::vector<std::size_t>;

    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape))
    {
        check_rank();
        data_.assign(element_count(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape))
        , data_(std::move(data))
    {
        check_rank();
        detail::require(data_.size() == element_count(shape_),
                        "tensor data length does not match the product of its extents");
    }

    /// Builds a tensor from untrusted values; NaN and infinity are rejected.
    static Tensor from_external(Shape shape, std::vector<double> data)
    {
        for (double v : data)
            detail::require(std::isfinite(v), "tensor input contains a non-finite value");
        return Tensor(std::move(shape), std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Three-axis (C, H, W) element access.
    double& at(std::size_t c, std::size_t y, std::size_t x)
    {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const
    {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    // Four-axis (O, I, KH, KW) element access.
    double& at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx)
    {
        return data_[((o * shape_[1] + i) * shape_[2] + ky) * shape_[3] + kx];
    }
    double at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const
    {
        return data_[((o * shape_[1] + i) * shape_[2] + ky) * shape_[3] + kx];
    }

    void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

    static std::size_t element_count(const Shape& shape)
    {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
    }

private:
    void check_rank() const
    {
        detail::require(!shape_.empty() && shape_.size() <= 4, "tensor rank must be between 1 and 4");
    }

    Shape shape_;
    std::vector<double> data_;
};

inline std::string shape_string(const Tensor::Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Integer label per pixel. Cluster labels are in [0, q); ground truth may also
/// carry kVoidLabel for pixels excluded from evaluation.
struct LabelMap
{
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int32_t> labels;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0)
        : height(h)
        , width(w)
        , labels(h * w, fill)
    {
    }
    LabelMap(std::size_t h, std::size_t w, std::vector<std::int32_t> values)
        : height(h)
        , width(w)
        , labels(std::move(values))
    {
        detail::require(labels.size() == h * w, "label map size does not match its dimensions");
    }

    std::size_t size() const noexcept { return labels.size(); }
    std::int32_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
    std::int32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

    friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

inline constexpr std::int32_t kVoidLabel = -1;

} // namespace dynaseg
