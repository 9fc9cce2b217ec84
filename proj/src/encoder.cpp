#include "micpq/encoder.hpp"

#include <cmath>
#include <string>

#include "micpq/error.hpp"
#include "micpq/rng.hpp"

namespace micpq {

EncoderParams init_encoder(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
    if (d_in == 0 || d_out == 0) throw Error(ErrorCode::InvalidConfig, "encoder dimensions must be positive");
    const double s = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    Rng rng(seed);
    EncoderParams p{Matrix<float>(d_out, d_in), std::vector<float>(d_out, 0.0f)};
    for (auto& w : p.weight.values()) w = static_cast<float>(s * (2.0 * rng.uniform() - 1.0));
    return p;
}

template <typename T>
std::vector<T> pre_activation(const BasicEncoderParams<T>& params, ConstSpan<T> z) {
    if (z.size() != params.d_in() || params.bias.size() != params.d_out()) {
        throw Error(ErrorCode::DimMismatch, "input has " + std::to_string(z.size()) + " values, encoder expects " +
                                                std::to_string(params.d_in()));
    }
    std::vector<T> a(params.bias);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto w = params.weight.row(i);
        T acc = 0;
        for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * z[j];
        a[i] += acc;
    }
    return a;
}

template <typename T>
RefinedEmbedding<T> forward(const BasicEncoderParams<T>& params, ConstSpan<T> z, std::size_t sub_dim) {
    if (sub_dim == 0 || params.d_out() % sub_dim != 0) {
        throw Error(ErrorCode::DimMismatch, "encoder output " + std::to_string(params.d_out()) +
                                                " is not a multiple of sub_dim " + std::to_string(sub_dim));
    }
    auto a = pre_activation(params, z);
    for (auto& v : a) v = v > T(0) ? v : T(0);
    return {std::move(a), sub_dim};
}

template <typename T>
Matrix<T> forward_batch(const BasicEncoderParams<T>& params, const Matrix<T>& z) {
    if (z.cols() != params.d_in()) {
        throw Error(ErrorCode::DimMismatch, "batch has " + std::to_string(z.cols()) + " columns, encoder expects " +
                                                std::to_string(params.d_in()));
    }
    Matrix<T> out(z.rows(), params.d_out());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto a = pre_activation(params, z.row(r));
        auto dst = out.row(r);
        for (std::size_t i = 0; i < a.size(); ++i) dst[i] = a[i] > T(0) ? a[i] : T(0);
    }
    return out;
}

template <typename T>
std::vector<T> dropout_view(std::span<const T> z, const DropoutConfig& cfg) {
    std::vector<T> out(z.begin(), z.end());
    if (cfg.p_drop <= 0.0) return out;
    Rng rng(cfg.seed);
    const T scale = static_cast<T>(1.0 / (1.0 - cfg.p_drop));
    for (auto& v : out) v = rng.uniform() < cfg.p_drop ? T(0) : v * scale;
    return out;
}

#define MICPQ_INSTANTIATE(T)                                                                         \
    template std::vector<T> pre_activation(const BasicEncoderParams<T>&, ConstSpan<T>);        \
    template RefinedEmbedding<T> forward(const BasicEncoderParams<T>&, ConstSpan<T>, std::size_t); \
    template Matrix<T> forward_batch(const BasicEncoderParams<T>&, const Matrix<T>&);                 \
    template std::vector<T> dropout_view(std::span<const T>, const DropoutConfig&);

MICPQ_INSTANTIATE(float)
MICPQ_INSTANTIATE(double)
#undef MICPQ_INSTANTIATE

}  // namespace micpq
