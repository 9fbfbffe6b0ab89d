#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

// Dense-layer kernels. Every output element is accumulated in a fixed order
// that does not depend on how many rows are in the batch, so a row computed
// alone is bitwise equal to the same row computed inside a larger batch.
namespace oscar::kernels {

// y[b, n] = bias[n] + sum_k x[b, k] * w[k, n]
template <typename T>
void linear_forward(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> y,
                    std::size_t batch, std::size_t in, std::size_t out) {
    std::size_t i = 0;
    for (; i + 4 <= batch; i += 4) {
        T* y0 = y.data() + i * out;
        T* y1 = y0 + out;
        T* y2 = y1 + out;
        T* y3 = y2 + out;
        for (std::size_t j = 0; j < out; ++j) y0[j] = y1[j] = y2[j] = y3[j] = bias[j];
        const T* x0 = x.data() + i * in;
        for (std::size_t k = 0; k < in; ++k) {
            const T a0 = x0[k], a1 = x0[in + k], a2 = x0[2 * in + k], a3 = x0[3 * in + k];
            const T* wr = w.data() + k * out;
            for (std::size_t j = 0; j < out; ++j) {
                const T wv = wr[j];
                y0[j] += a0 * wv;
                y1[j] += a1 * wv;
                y2[j] += a2 * wv;
                y3[j] += a3 * wv;
            }
        }
    }
    for (; i < batch; ++i) {
        T* yr = y.data() + i * out;
        std::copy(bias.begin(), bias.end(), yr);
        const T* xr = x.data() + i * in;
        for (std::size_t k = 0; k < in; ++k) {
            const T a = xr[k];
            const T* wr = w.data() + k * out;
            for (std::size_t j = 0; j < out; ++j) yr[j] += a * wr[j];
        }
    }
}

// dx[b, k] += sum_n dy[b, n] * w[k, n]   (uses a transposed copy of w)
template <typename T>
void linear_backward_input(std::span<const T> dy, std::span<const T> w, std::span<T> dx, std::size_t batch,
                           std::size_t in, std::size_t out) {
    std::vector<T> wt(in * out);
    for (std::size_t k = 0; k < in; ++k)
        for (std::size_t j = 0; j < out; ++j) wt[j * in + k] = w[k * out + j];
    for (std::size_t i = 0; i < batch; ++i) {
        T* dxr = dx.data() + i * in;
        const T* dyr = dy.data() + i * out;
        for (std::size_t j = 0; j < out; ++j) {
            const T g = dyr[j];
            const T* wr = wt.data() + j * in;
            for (std::size_t k = 0; k < in; ++k) dxr[k] += g * wr[k];
        }
    }
}

// dw[k, n] += sum_b x[b, k] * dy[b, n];  db[n] += sum_b dy[b, n]
template <typename T>
void linear_backward_params(std::span<const T> x, std::span<const T> dy, std::span<T> dw, std::span<T> db,
                            std::size_t batch, std::size_t in, std::size_t out) {
    for (std::size_t k = 0; k < in; ++k) {
        T* dwr = dw.data() + k * out;
        for (std::size_t i = 0; i < batch; ++i) {
            const T a = x[i * in + k];
            const T* dyr = dy.data() + i * out;
            for (std::size_t j = 0; j < out; ++j) dwr[j] += a * dyr[j];
        }
    }
    for (std::size_t i = 0; i < batch; ++i) {
        const T* dyr = dy.data() + i * out;
        for (std::size_t j = 0; j < out; ++j) db[j] += dyr[j];
    }
}

}  // namespace oscar::kernels
