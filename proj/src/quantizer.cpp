#include "micpq/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "micpq/error.hpp"
#include "micpq/rng.hpp"

namespace micpq {

namespace {

template <typename T>
void softmax_inplace(std::vector<T>& logits) {
    const T mx = *std::max_element(logits.begin(), logits.end());
    T sum = 0;
    for (auto& l : logits) {
        l = std::exp(l - mx);
        sum += l;
    }
    for (auto& l : logits) l /= sum;
}

template <typename T>
void check_segment(std::span<const T> segment, const BookView<T>& book) {
    if (segment.size() != book.sub_dim) {
        throw Error(ErrorCode::DimMismatch, "segment has " + std::to_string(segment.size()) +
                                                " values, codebook sub_dim is " + std::to_string(book.sub_dim));
    }
}

}  // namespace

template <typename T>
std::vector<T> codeword_distances(ConstSpan<T> segment, const BookView<T>& book) {
    check_segment(segment, book);
    std::vector<T> d(book.n_codewords);
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = squared_distance(segment, book.codeword(k));
    return d;
}

template <typename T>
std::vector<T> assign_probs(ConstSpan<T> segment, const BookView<T>& book) {
    auto logits = codeword_distances(segment, book);
    for (auto& l : logits) {
        if (!std::isfinite(l)) throw Error(ErrorCode::NonFiniteInput, "non-finite distance in assign_probs");
        l = -l;
    }
    softmax_inplace(logits);
    return logits;
}

template <typename T>
std::vector<T> sample_gumbel(std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<T> xi(k);
    for (auto& x : xi) {
        const double u = std::clamp(rng.uniform(), kGumbelClamp, 1.0 - kGumbelClamp);
        x = static_cast<T>(-std::log(-std::log(u)));
    }
    return xi;
}

template <typename T>
SoftAssignment<T> soft_assign(ConstSpan<T> segment, const BookView<T>& book, std::type_identity_t<T> temperature,
                              ConstSpan<T> gumbel) {
    if (!(temperature > T(0))) throw Error(ErrorCode::NonPositiveTemperature, "temperature must be > 0");
    if (gumbel.size() != book.n_codewords) {
        throw Error(ErrorCode::DimMismatch, "gumbel noise has " + std::to_string(gumbel.size()) +
                                                " entries for K = " + std::to_string(book.n_codewords));
    }
    auto logits = codeword_distances(segment, book);
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = -(logits[k] + gumbel[k]) / temperature;
    softmax_inplace(logits);
    return {std::move(logits), std::vector<T>(gumbel.begin(), gumbel.end()), temperature};
}

template <typename T>
std::uint32_t hard_assign(ConstSpan<T> segment, const BookView<T>& book) {
    check_segment(segment, book);
    std::uint32_t best = 0;
    T best_d = squared_distance(segment, book.codeword(0));
    for (std::size_t k = 1; k < book.n_codewords; ++k) {
        const T d = squared_distance(segment, book.codeword(k));
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(k);
        }
    }
    return best;
}

template <typename T>
std::vector<T> soft_codeword(const BookView<T>& book, ConstSpan<T> probs) {
    std::vector<T> h(book.sub_dim, T(0));
    for (std::size_t k = 0; k < book.n_codewords; ++k) {
        const auto c = book.codeword(k);
        for (std::size_t j = 0; j < h.size(); ++j) h[j] += probs[k] * c[j];
    }
    return h;
}

template <typename T>
QuantCode quantize_document(const RefinedEmbedding<T>& refined, const BasicCodebookSet<T>& books) {
    if (refined.sub_dim != books.sub_dim || refined.values.size() != books.dim()) {
        throw Error(ErrorCode::DimMismatch, "refined embedding of size " + std::to_string(refined.values.size()) +
                                                " does not match " + std::to_string(books.n_codebooks) + " x " +
                                                std::to_string(books.sub_dim));
    }
    QuantCode code;
    code.indices.resize(books.n_codebooks);
    for (std::size_t m = 0; m < books.n_codebooks; ++m) code.indices[m] = hard_assign(refined.segment(m), books.book(m));
    return code;
}

template <typename T>
std::vector<T> reconstruct(const QuantCode& code, const BasicCodebookSet<T>& books) {
    if (code.indices.size() != books.n_codebooks) {
        throw Error(ErrorCode::DimMismatch, "code has " + std::to_string(code.indices.size()) + " indices, expected " +
                                                std::to_string(books.n_codebooks));
    }
    std::vector<T> out;
    out.reserve(books.dim());
    for (std::size_t m = 0; m < books.n_codebooks; ++m) {
        if (code.indices[m] >= books.n_codewords) {
            throw Error(ErrorCode::IndexOutOfRange, "index " + std::to_string(code.indices[m]) + " >= K");
        }
        const auto c = books.codeword(m, code.indices[m]);
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

bool is_power_of_two(std::size_t k) noexcept { return std::has_single_bit(k); }

unsigned bits_per_index(std::size_t k) {
    if (k < 2 || !is_power_of_two(k)) {
        throw Error(ErrorCode::KNotPowerOfTwo, "K = " + std::to_string(k) + " is not a power of two >= 2");
    }
    return static_cast<unsigned>(std::countr_zero(k));
}

std::size_t packed_code_bytes(std::size_t m, std::size_t k) { return (m * bits_per_index(k) + 7) / 8; }

std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> indices, std::size_t k) {
    const unsigned b = bits_per_index(k);
    std::vector<std::uint8_t> out(packed_code_bytes(indices.size(), k), 0);
    std::size_t bit = 0;
    for (auto idx : indices) {
        if (idx >= k) {
            throw Error(ErrorCode::IndexOutOfRange, "index " + std::to_string(idx) + " >= K = " + std::to_string(k));
        }
        for (unsigned i = 0; i < b; ++i, ++bit) {
            if ((idx >> i) & 1U) out[bit / 8] |= static_cast<std::uint8_t>(1U << (bit % 8));
        }
    }
    return out;
}

std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t m, std::size_t k) {
    const unsigned b = bits_per_index(k);
    if (bytes.size() < packed_code_bytes(m, k)) {
        throw Error(ErrorCode::TruncatedFile, "packed code has " + std::to_string(bytes.size()) + " bytes, needs " +
                                                  std::to_string(packed_code_bytes(m, k)));
    }
    std::vector<std::uint32_t> out(m, 0);
    std::size_t bit = 0;
    for (auto& idx : out) {
        for (unsigned i = 0; i < b; ++i, ++bit) {
            if ((bytes[bit / 8] >> (bit % 8)) & 1U) idx |= 1U << i;
        }
    }
    return out;
}

#define MICPQ_INSTANTIATE(T)                                                                                  \
    template std::vector<T> codeword_distances(ConstSpan<T>, const BookView<T>&);                      \
    template std::vector<T> assign_probs(ConstSpan<T>, const BookView<T>&);                            \
    template std::vector<T> sample_gumbel<T>(std::size_t, std::uint64_t);                                   \
    template SoftAssignment<T> soft_assign(ConstSpan<T>, const BookView<T>&, T, ConstSpan<T>);   \
    template std::uint32_t hard_assign(ConstSpan<T>, const BookView<T>&);                               \
    template std::vector<T> soft_codeword(const BookView<T>&, ConstSpan<T>);                            \
    template QuantCode quantize_document(const RefinedEmbedding<T>&, const BasicCodebookSet<T>&);            \
    template std::vector<T> reconstruct(const QuantCode&, const BasicCodebookSet<T>&);

MICPQ_INSTANTIATE(float)
MICPQ_INSTANTIATE(double)
#undef MICPQ_INSTANTIATE

}  // namespace micpq
