#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "micpq/dataio.hpp"
#include "micpq/quantizer.hpp"
#include "micpq/trainer.hpp"

namespace micpq {

/// Compiled corpus: frozen codebooks plus one code per document. Codes are
/// bit-packed (ceil(M log2 K / 8) bytes each) when K is a power of two and
/// stored as one little-endian u16 per index otherwise.
class RetrievalIndex {
public:
    RetrievalIndex() = default;
    RetrievalIndex(CodebookSet books, std::vector<std::uint64_t> doc_ids, std::vector<std::uint8_t> payload);

    const CodebookSet& books() const noexcept { return books_; }
    std::size_t n_codebooks() const noexcept { return books_.n_codebooks; }
    std::size_t n_codewords() const noexcept { return books_.n_codewords; }
    std::size_t sub_dim() const noexcept { return books_.sub_dim; }
    std::size_t n_docs() const noexcept { return doc_ids_.size(); }
    bool packed() const noexcept { return is_power_of_two(books_.n_codewords); }

    const std::vector<std::uint64_t>& doc_ids() const noexcept { return doc_ids_; }
    const std::vector<std::uint8_t>& payload() const noexcept { return payload_; }
    std::size_t code_bytes() const noexcept { return code_bytes_; }

    std::span<const std::uint8_t> code_bytes_of(std::size_t i) const noexcept {
        return std::span<const std::uint8_t>(payload_).subspan(i * code_bytes_, code_bytes_);
    }
    QuantCode code(std::size_t i) const;

    bool operator==(const RetrievalIndex&) const = default;

private:
    CodebookSet books_;
    std::vector<std::uint64_t> doc_ids_;
    std::vector<std::uint8_t> payload_;
    std::size_t code_bytes_ = 0;
};

/// Bytes one code occupies in an index with the given (M, K).
std::size_t index_code_bytes(std::size_t m, std::size_t k);
std::vector<std::uint8_t> encode_code(const QuantCode& code, std::size_t k);

/// M x K table of ||query segment m - c^m_k||^2.
template <typename T>
struct DistanceLUT {
    std::size_t n_codebooks = 0;
    std::size_t n_codewords = 0;
    std::vector<T> table;

    T operator()(std::size_t m, std::size_t k) const noexcept { return table[m * n_codewords + k]; }
};

struct SearchHit {
    std::uint64_t doc_id = 0;
    double distance = 0;
    bool operator==(const SearchHit&) const = default;
};

/// Encodes every corpus row without dropout and hard-assigns it. `ids`
/// defaults to row numbers when empty.
RetrievalIndex build_index(const ModelState& model, const EmbeddingMatrix& corpus,
                           std::span<const std::uint64_t> ids = {});

template <typename T>
DistanceLUT<T> build_lut(const RefinedEmbedding<T>& query, const BasicCodebookSet<T>& books);

/// Sum over m of lut(m, indices[m]).
template <typename T>
T adc_distance(const DistanceLUT<T>& lut, const QuantCode& code);

/// Exhaustive ADC scan; the k nearest ascending by distance, ties by doc id.
/// The table and the per-document sums are kept in double so that rankings
/// do not depend on float rounding between near-equal distances.
std::vector<SearchHit> search_topk(const RetrievalIndex& index, std::span<const float> query, const ModelState& model,
                                   std::size_t k);

/// Number of positions where two K=2 codes differ.
std::size_t hamming_distance(const QuantCode& a, const QuantCode& b, std::size_t k);
/// popcount(a XOR b) over packed payloads.
std::size_t hamming_distance_packed(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Hamming scan for the extreme (K = 2) configuration.
std::vector<SearchHit> search_topk_hamming(const RetrievalIndex& index, std::span<const float> query,
                                           const ModelState& model, std::size_t k);

void write_index(const RetrievalIndex& index, const std::filesystem::path& path);
RetrievalIndex read_index(const std::filesystem::path& path);

inline constexpr std::uint32_t kIndexVersion = 1;

}  // namespace micpq
