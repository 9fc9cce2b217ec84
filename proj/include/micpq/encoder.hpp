#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "micpq/matrix.hpp"

namespace micpq {

/// Affine map followed by ReLU: refined = max(0, weight * z + bias).
/// weight is d_out x d_in; d_out = n_codebooks * sub_dim.
template <typename T>
struct BasicEncoderParams {
    Matrix<T> weight;
    std::vector<T> bias;

    std::size_t d_in() const noexcept { return weight.cols(); }
    std::size_t d_out() const noexcept { return weight.rows(); }
    bool operator==(const BasicEncoderParams&) const = default;
};

using EncoderParams = BasicEncoderParams<float>;

template <typename To, typename From>
BasicEncoderParams<To> cast_params(const BasicEncoderParams<From>& p) {
    return {cast_matrix<To>(p.weight), std::vector<To>(p.bias.begin(), p.bias.end())};
}

/// Encoder output viewed as M contiguous segments of sub_dim values.
template <typename T>
struct RefinedEmbedding {
    std::vector<T> values;
    std::size_t sub_dim = 0;

    std::size_t n_segments() const noexcept { return sub_dim == 0 ? 0 : values.size() / sub_dim; }
    std::span<const T> segment(std::size_t m) const noexcept {
        return std::span<const T>(values).subspan(m * sub_dim, sub_dim);
    }
};

struct DropoutConfig {
    double p_drop = 0.3;
    std::uint64_t seed = 0;
};

/// Glorot-uniform weights in [-s, s], s = sqrt(6 / (d_in + d_out)), zero bias.
EncoderParams init_encoder(std::size_t d_in, std::size_t d_out, std::uint64_t seed);

/// Pre-activation weight * z + bias, no ReLU.
template <typename T>
std::vector<T> pre_activation(const BasicEncoderParams<T>& params, ConstSpan<T> z);

/// DimMismatch if z.size() != d_in or d_out is not a multiple of sub_dim.
template <typename T>
RefinedEmbedding<T> forward(const BasicEncoderParams<T>& params, ConstSpan<T> z, std::size_t sub_dim);

/// Row-wise forward; output row i depends only on input row i.
template <typename T>
Matrix<T> forward_batch(const BasicEncoderParams<T>& params, const Matrix<T>& z);

/// Inverted dropout: zero each coordinate with probability p_drop and scale
/// survivors by 1 / (1 - p_drop). One uniform per coordinate, in order, from
/// an Rng seeded with cfg.seed. p_drop = 0 returns z unchanged.
template <typename T>
std::vector<T> dropout_view(std::span<const T> z, const DropoutConfig& cfg);

}  // namespace micpq
