#include "oscar/numerics/blas_kernels.hpp"

#include <algorithm>
#include <mutex>

#include <cblas.h>

namespace oscar::blas {

namespace {

void single_thread() {
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
}

int I(std::size_t n) { return static_cast<int>(n); }

}  // namespace

void linear_forward(std::span<const float> x, std::span<const float> w, std::span<const float> bias,
                    std::span<float> y, std::size_t batch, std::size_t in, std::size_t out) {
    single_thread();
    for (std::size_t i = 0; i < batch; ++i) std::copy(bias.begin(), bias.end(), y.begin() + i * out);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, I(batch), I(out), I(in), 1.0f, x.data(), I(in), w.data(),
                I(out), 1.0f, y.data(), I(out));
}

void linear_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> y, std::size_t batch, std::size_t in, std::size_t out) {
    single_thread();
    for (std::size_t i = 0; i < batch; ++i) std::copy(bias.begin(), bias.end(), y.begin() + i * out);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, I(batch), I(out), I(in), 1.0, x.data(), I(in), w.data(),
                I(out), 1.0, y.data(), I(out));
}

void linear_backward_input(std::span<const float> dy, std::span<const float> w, std::span<float> dx,
                           std::size_t batch, std::size_t in, std::size_t out) {
    single_thread();
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, I(batch), I(in), I(out), 1.0f, dy.data(), I(out), w.data(),
                I(out), 1.0f, dx.data(), I(in));
}

void linear_backward_input(std::span<const double> dy, std::span<const double> w, std::span<double> dx,
                           std::size_t batch, std::size_t in, std::size_t out) {
    single_thread();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, I(batch), I(in), I(out), 1.0, dy.data(), I(out), w.data(),
                I(out), 1.0, dx.data(), I(in));
}

void linear_backward_params(std::span<const float> x, std::span<const float> dy, std::span<float> dw,
                            std::span<float> db, std::size_t batch, std::size_t in, std::size_t out) {
    single_thread();
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, I(in), I(out), I(batch), 1.0f, x.data(), I(in), dy.data(),
                I(out), 1.0f, dw.data(), I(out));
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < out; ++j) db[j] += dy[i * out + j];
}

void linear_backward_params(std::span<const double> x, std::span<const double> dy, std::span<double> dw,
                            std::span<double> db, std::size_t batch, std::size_t in, std::size_t out) {
    single_thread();
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, I(in), I(out), I(batch), 1.0, x.data(), I(in), dy.data(),
                I(out), 1.0, dw.data(), I(out));
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < out; ++j) db[j] += dy[i * out + j];
}

}  // namespace oscar::blas
