#pragma once

#include <cstddef>
#include <span>

// BLAS-backed versions of the dense-layer kernels, single-threaded. Faster,
// but the summation order may depend on the batch size, so they are only used
// where rows are never compared across batch shapes (training).
namespace oscar::blas {

void linear_forward(std::span<const float> x, std::span<const float> w, std::span<const float> bias,
                    std::span<float> y, std::size_t batch, std::size_t in, std::size_t out);
void linear_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> y, std::size_t batch, std::size_t in, std::size_t out);

void linear_backward_input(std::span<const float> dy, std::span<const float> w, std::span<float> dx,
                           std::size_t batch, std::size_t in, std::size_t out);
void linear_backward_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                           std::size_t batch, std::size_t in, std::size_t out);

void linear_backward_params(std::span<const float> x, std::span<const float> dy, std::span<float> dw,
                            std::span<float> db, std::size_t batch, std::size_t in, std::size_t out);
void linear_backward_params(std::span<const double> x, std::span<const double> dy, std::span<double> dw,
                            std::span<double> db, std::size_t batch, std::size_t in, std::size_t out);

}  // namespace oscar::blas
