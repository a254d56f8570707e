#ifndef FPRECT_TENSOR_HPP
#define FPRECT_TENSOR_HPP

#include <cstddef>
#include <memory>
#include <vector>

#include "fprect/errors.hpp"

namespace fprect {

// Allocator whose default-construct is a no-op for trivial types, so large
// buffers that are fully overwritten skip the zeroing pass.
template <typename T>
struct uninit_allocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = uninit_allocator<U>;
    };
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

template <typename T>
using FlatBuffer = std::vector<T, uninit_allocator<T>>;

struct no_init_t {
    explicit no_init_t() = default;
};
inline constexpr no_init_t no_init{};

// Dense (batch, height, width, channels) tensor, row-major with channels
// innermost. A (h, w, c) tensor is represented with batch = 1.
template <typename T>
struct Tensor {
    int batch = 0;
    int height = 0;
    int width = 0;
    int channels = 0;
    FlatBuffer<T> data;

    Tensor() = default;
    Tensor(int b, int h, int w, int c)
        : batch(b), height(h), width(w), channels(c),
          data(static_cast<std::size_t>(b) * h * w * c, T(0)) {}
    // Contents are left uninitialized; every element must be written.
    Tensor(int b, int h, int w, int c, no_init_t)
        : batch(b), height(h), width(w), channels(c),
          data(static_cast<std::size_t>(b) * h * w * c) {}

    std::size_t size() const { return data.size(); }

    std::size_t index(int b, int y, int x, int c) const {
        return ((static_cast<std::size_t>(b) * height + y) * width + x) * channels + c;
    }
    T& at(int b, int y, int x, int c) { return data[index(b, y, x, c)]; }
    T at(int b, int y, int x, int c) const { return data[index(b, y, x, c)]; }

    bool same_shape(const Tensor& o) const {
        return batch == o.batch && height == o.height && width == o.width &&
               channels == o.channels;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace fprect

#endif
