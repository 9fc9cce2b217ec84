#pragma once

#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "micpq/encoder.hpp"

namespace micpq {

/// One codebook: K codewords of sub_dim values, stored contiguously.
template <typename T>
struct BookView {
    std::span<const T> data;
    std::size_t n_codewords = 0;
    std::size_t sub_dim = 0;

    std::span<const T> codeword(std::size_t k) const noexcept { return data.subspan(k * sub_dim, sub_dim); }
};

/// M codebooks of K codewords each, laid out [m][k][j].
template <typename T>
struct BasicCodebookSet {
    std::size_t n_codebooks = 0;
    std::size_t n_codewords = 0;
    std::size_t sub_dim = 0;
    std::vector<T> values;

    BasicCodebookSet() = default;
    BasicCodebookSet(std::size_t m, std::size_t k, std::size_t sub_dim_, T fill = T{})
        : n_codebooks(m), n_codewords(k), sub_dim(sub_dim_), values(m * k * sub_dim_, fill) {}

    std::size_t dim() const noexcept { return n_codebooks * sub_dim; }

    BookView<T> book(std::size_t m) const noexcept {
        return {std::span<const T>(values).subspan(m * n_codewords * sub_dim, n_codewords * sub_dim), n_codewords,
                sub_dim};
    }
    std::span<T> codeword(std::size_t m, std::size_t k) noexcept {
        return std::span<T>(values).subspan((m * n_codewords + k) * sub_dim, sub_dim);
    }
    std::span<const T> codeword(std::size_t m, std::size_t k) const noexcept {
        return std::span<const T>(values).subspan((m * n_codewords + k) * sub_dim, sub_dim);
    }

    bool operator==(const BasicCodebookSet&) const = default;
};

using CodebookSet = BasicCodebookSet<float>;

template <typename To, typename From>
BasicCodebookSet<To> cast_books(const BasicCodebookSet<From>& b) {
    BasicCodebookSet<To> out(b.n_codebooks, b.n_codewords, b.sub_dim);
    out.values.assign(b.values.begin(), b.values.end());
    return out;
}

template <typename T>
struct SoftAssignment {
    std::vector<T> probs;
    std::vector<T> gumbel;
    T temperature{1};
};

/// M sub-codeword indices for one document.
struct QuantCode {
    std::vector<std::uint32_t> indices;
    bool operator==(const QuantCode&) const = default;
};

inline constexpr double kGumbelClamp = 1e-12;

template <typename T>
T squared_distance(std::span<const T> a, std::span<const T> b) noexcept {
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

/// ||segment - c_k||^2 for every codeword.
template <typename T>
std::vector<T> codeword_distances(ConstSpan<T> segment, const BookView<T>& book);

/// p_k proportional to exp(-||segment - c_k||^2), max-subtracted.
template <typename T>
std::vector<T> assign_probs(ConstSpan<T> segment, const BookView<T>& book);

/// xi_i = -log(-log u_i), u_i uniform clamped to [eps, 1 - eps].
template <typename T>
std::vector<T> sample_gumbel(std::size_t k, std::uint64_t seed);

/// Relaxed assignment v_k = softmax_k(-(||segment - c_k||^2 + gumbel_k) / temperature).
/// The noise enters with the sign shown; see README for the discussion.
template <typename T>
SoftAssignment<T> soft_assign(ConstSpan<T> segment, const BookView<T>& book, std::type_identity_t<T> temperature,
                              ConstSpan<T> gumbel);

/// argmin_k ||segment - c_k||^2, lowest index wins ties.
template <typename T>
std::uint32_t hard_assign(ConstSpan<T> segment, const BookView<T>& book);

/// book^T v: the probability-weighted codeword mixture.
template <typename T>
std::vector<T> soft_codeword(const BookView<T>& book, ConstSpan<T> probs);

template <typename T>
QuantCode quantize_document(const RefinedEmbedding<T>& refined, const BasicCodebookSet<T>& books);

/// Concatenation of the selected codewords.
template <typename T>
std::vector<T> reconstruct(const QuantCode& code, const BasicCodebookSet<T>& books);

bool is_power_of_two(std::size_t k) noexcept;
/// log2(K) for a power of two.
unsigned bits_per_index(std::size_t k);
/// ceil(M * log2(K) / 8).
std::size_t packed_code_bytes(std::size_t m, std::size_t k);

/// Index m occupies bits [m*b, (m+1)*b) with b = log2(K), bit 0 being the
/// least significant bit of byte 0. Trailing bits of the last byte are zero.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> indices, std::size_t k);
std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t m, std::size_t k);

}  // namespace micpq
