#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace coplanar {

/// Dense row-major 2D array.
template <typename T>
class Image
{
public:
    Image() = default;
    Image(int width, int height, const T& fill = T{})
        : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill)
    {
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
    int index(int x, int y) const { return y * width_ + x; }

    T& operator()(int x, int y)
    {
        assert(contains(x, y));
        return data_[static_cast<std::size_t>(index(x, y))];
    }
    const T& operator()(int x, int y) const
    {
        assert(contains(x, y));
        return data_[static_cast<std::size_t>(index(x, y))];
    }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

struct Rgb8
{
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb8&, const Rgb8&) = default;
};

/// Inclusive-exclusive pixel rectangle: [x, x + width) x [y, y + height).
struct PixelRect
{
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    bool empty() const { return width <= 0 || height <= 0; }
    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

}  // namespace coplanar
