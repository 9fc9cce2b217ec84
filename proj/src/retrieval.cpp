#include "micpq/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <queue>
#include <string>

#include "micpq/detail/binary_io.hpp"
#include "micpq/error.hpp"

namespace micpq {

namespace {

constexpr std::string_view kIdxMagic = "MICPQIDX";

bool hit_less(const SearchHit& a, const SearchHit& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.doc_id < b.doc_id);
}

// Keeps the k smallest hits under hit_less in a max-heap, then sorts them.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) {}

    void offer(const SearchHit& h) {
        if (heap_.size() < k_) {
            heap_.push_back(h);
            std::push_heap(heap_.begin(), heap_.end(), hit_less);
        } else if (hit_less(h, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), hit_less);
            heap_.back() = h;
            std::push_heap(heap_.begin(), heap_.end(), hit_less);
        }
    }

    std::vector<SearchHit> take() && {
        std::sort_heap(heap_.begin(), heap_.end(), hit_less);
        return std::move(heap_);
    }

private:
    std::size_t k_;
    std::vector<SearchHit> heap_;
};

void check_model_matches(const RetrievalIndex& index, const ModelState& model, std::size_t query_dim) {
    if (model.n_codebooks() != index.n_codebooks() || model.n_codewords() != index.n_codewords() ||
        model.sub_dim() != index.sub_dim()) {
        throw Error(ErrorCode::DimMismatch, "model and index disagree on (M, K, sub_dim)");
    }
    if (query_dim != model.d_in()) {
        throw Error(ErrorCode::DimMismatch, "query has " + std::to_string(query_dim) + " values, model expects " +
                                                std::to_string(model.d_in()));
    }
}

}  // namespace

std::size_t index_code_bytes(std::size_t m, std::size_t k) {
    return is_power_of_two(k) && k >= 2 ? packed_code_bytes(m, k) : 2 * m;
}

std::vector<std::uint8_t> encode_code(const QuantCode& code, std::size_t k) {
    if (is_power_of_two(k) && k >= 2) return pack_codes(code.indices, k);
    std::vector<std::uint8_t> out;
    out.reserve(2 * code.indices.size());
    for (auto idx : code.indices) {
        if (idx >= k) throw Error(ErrorCode::IndexOutOfRange, "index " + std::to_string(idx) + " >= K");
        out.push_back(static_cast<std::uint8_t>(idx & 0xFF));
        out.push_back(static_cast<std::uint8_t>(idx >> 8));
    }
    return out;
}

RetrievalIndex::RetrievalIndex(CodebookSet books, std::vector<std::uint64_t> doc_ids, std::vector<std::uint8_t> payload)
    : books_(std::move(books)), doc_ids_(std::move(doc_ids)), payload_(std::move(payload)) {
    code_bytes_ = index_code_bytes(books_.n_codebooks, books_.n_codewords);
    if (payload_.size() != doc_ids_.size() * code_bytes_) {
        throw Error(ErrorCode::LengthMismatch, "payload of " + std::to_string(payload_.size()) + " bytes for " +
                                                   std::to_string(doc_ids_.size()) + " codes of " +
                                                   std::to_string(code_bytes_) + " bytes");
    }
    for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
        for (auto idx : code(i).indices) {
            if (idx >= books_.n_codewords) {
                throw Error(ErrorCode::IndexOutOfRange, "document " + std::to_string(i) + " stores index " +
                                                            std::to_string(idx));
            }
        }
    }
}

QuantCode RetrievalIndex::code(std::size_t i) const {
    const auto bytes = code_bytes_of(i);
    if (packed()) return {unpack_codes(bytes, books_.n_codebooks, books_.n_codewords)};
    QuantCode c;
    c.indices.resize(books_.n_codebooks);
    for (std::size_t m = 0; m < c.indices.size(); ++m) {
        c.indices[m] = static_cast<std::uint32_t>(bytes[2 * m]) | (static_cast<std::uint32_t>(bytes[2 * m + 1]) << 8);
    }
    return c;
}

RetrievalIndex build_index(const ModelState& model, const EmbeddingMatrix& corpus, std::span<const std::uint64_t> ids) {
    if (corpus.cols() != model.d_in()) {
        throw Error(ErrorCode::DimMismatch, "corpus dimension " + std::to_string(corpus.cols()) +
                                                " does not match model input " + std::to_string(model.d_in()));
    }
    if (!ids.empty() && ids.size() != corpus.rows()) {
        throw Error(ErrorCode::LengthMismatch, "doc id count does not match corpus rows");
    }
    const auto& books = model.params.books;
    std::vector<std::uint64_t> doc_ids(corpus.rows());
    for (std::size_t i = 0; i < doc_ids.size(); ++i) doc_ids[i] = ids.empty() ? i : ids[i];
    std::vector<std::uint8_t> payload;
    payload.reserve(corpus.rows() * index_code_bytes(books.n_codebooks, books.n_codewords));
    for (std::size_t i = 0; i < corpus.rows(); ++i) {
        const auto refined = forward(model.params.encoder, corpus.row(i), books.sub_dim);
        const auto bytes = encode_code(quantize_document(refined, books), books.n_codewords);
        payload.insert(payload.end(), bytes.begin(), bytes.end());
    }
    return RetrievalIndex(books, std::move(doc_ids), std::move(payload));
}

template <typename T>
DistanceLUT<T> build_lut(const RefinedEmbedding<T>& query, const BasicCodebookSet<T>& books) {
    if (query.sub_dim != books.sub_dim || query.values.size() != books.dim()) {
        throw Error(ErrorCode::DimMismatch, "query refined vector does not match codebooks");
    }
    DistanceLUT<T> lut{books.n_codebooks, books.n_codewords, {}};
    lut.table.reserve(books.n_codebooks * books.n_codewords);
    for (std::size_t m = 0; m < books.n_codebooks; ++m) {
        const auto d = codeword_distances(query.segment(m), books.book(m));
        lut.table.insert(lut.table.end(), d.begin(), d.end());
    }
    return lut;
}

template <typename T>
T adc_distance(const DistanceLUT<T>& lut, const QuantCode& code) {
    if (code.indices.size() != lut.n_codebooks) {
        throw Error(ErrorCode::DimMismatch, "code has " + std::to_string(code.indices.size()) + " indices for M = " +
                                                std::to_string(lut.n_codebooks));
    }
    T acc = 0;
    for (std::size_t m = 0; m < lut.n_codebooks; ++m) {
        if (code.indices[m] >= lut.n_codewords) {
            throw Error(ErrorCode::IndexOutOfRange, "index " + std::to_string(code.indices[m]) + " >= K");
        }
        acc += lut(m, code.indices[m]);
    }
    return acc;
}

std::vector<SearchHit> search_topk(const RetrievalIndex& index, std::span<const float> query, const ModelState& model,
                                   std::size_t k) {
    if (index.n_docs() == 0) throw Error(ErrorCode::EmptyIndex, "index holds no documents");
    if (k == 0) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
    check_model_matches(index, model, query.size());
    const auto refined = forward(model.params.encoder, query, index.sub_dim());
    const RefinedEmbedding<double> wide{{refined.values.begin(), refined.values.end()}, refined.sub_dim};
    const auto lut = build_lut(wide, cast_books<double>(index.books()));
    TopK top(std::min(k, index.n_docs()));
    const std::size_t mb = index.n_codebooks();
    const std::size_t kk = index.n_codewords();
    std::vector<std::uint32_t> scratch(mb);
    for (std::size_t i = 0; i < index.n_docs(); ++i) {
        const auto bytes = index.code_bytes_of(i);
        double dist = 0;
        if (index.packed()) {
            const unsigned b = bits_per_index(kk);
            std::size_t bit = 0;
            for (std::size_t m = 0; m < mb; ++m) {
                std::uint32_t idx = 0;
                for (unsigned j = 0; j < b; ++j, ++bit) idx |= ((bytes[bit / 8] >> (bit % 8)) & 1U) << j;
                dist += lut(m, idx);
            }
        } else {
            for (std::size_t m = 0; m < mb; ++m) {
                dist += lut(m, static_cast<std::size_t>(bytes[2 * m]) | (static_cast<std::size_t>(bytes[2 * m + 1]) << 8));
            }
        }
        top.offer({index.doc_ids()[i], dist});
    }
    return std::move(top).take();
}

std::size_t hamming_distance(const QuantCode& a, const QuantCode& b, std::size_t k) {
    if (k != 2) throw Error(ErrorCode::KNot2, "hamming distance requires K=2, got K=" + std::to_string(k));
    if (a.indices.size() != b.indices.size()) {
        throw Error(ErrorCode::ConfigMismatch, "codes have different lengths");
    }
    std::size_t d = 0;
    for (std::size_t m = 0; m < a.indices.size(); ++m) d += a.indices[m] != b.indices[m];
    return d;
}

std::size_t hamming_distance_packed(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::ConfigMismatch, "packed codes have different lengths");
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
    return d;
}

std::vector<SearchHit> search_topk_hamming(const RetrievalIndex& index, std::span<const float> query,
                                           const ModelState& model, std::size_t k) {
    if (index.n_codewords() != 2) {
        throw Error(ErrorCode::KNot2, "hamming mode requires K=2, index has K=" + std::to_string(index.n_codewords()));
    }
    if (index.n_docs() == 0) throw Error(ErrorCode::EmptyIndex, "index holds no documents");
    if (k == 0) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
    check_model_matches(index, model, query.size());
    const auto refined = forward(model.params.encoder, query, index.sub_dim());
    const auto qbytes = pack_codes(quantize_document(refined, index.books()).indices, 2);
    TopK top(std::min(k, index.n_docs()));
    for (std::size_t i = 0; i < index.n_docs(); ++i) {
        top.offer({index.doc_ids()[i], static_cast<double>(hamming_distance_packed(qbytes, index.code_bytes_of(i)))});
    }
    return std::move(top).take();
}

void write_index(const RetrievalIndex& index, const std::filesystem::path& path) {
    detail::ByteWriter out;
    out.magic(kIdxMagic);
    out.u32(kIndexVersion);
    out.u32(static_cast<std::uint32_t>(index.n_codebooks()));
    out.u32(static_cast<std::uint32_t>(index.n_codewords()));
    out.u32(static_cast<std::uint32_t>(index.sub_dim()));
    out.u64(index.n_docs());
    out.f32s(index.books().values);
    for (auto id : index.doc_ids()) out.u64(id);
    out.raw(index.payload());
    out.save(path);
}

RetrievalIndex read_index(const std::filesystem::path& path) {
    auto in = detail::ByteReader::load(path);
    in.expect_magic(kIdxMagic);
    const auto version_offset = in.offset();
    const auto version = in.u32();
    if (version != kIndexVersion) {
        throw Error(ErrorCode::VersionMismatch, "index version " + std::to_string(version) + " at byte offset " +
                                                    std::to_string(version_offset));
    }
    const std::size_t m = in.u32();
    const std::size_t k = in.u32();
    const std::size_t sd = in.u32();
    const auto n = in.u64();
    if (m == 0 || k == 0 || sd == 0) throw Error(ErrorCode::InvalidConfig, "index declares an empty codebook set");
    CodebookSet books(m, k, sd);
    in.f32s(books.values);
    if (n > in.remaining() / 8) in.need(static_cast<std::size_t>(n) * 8);
    std::vector<std::uint64_t> ids(static_cast<std::size_t>(n));
    for (auto& id : ids) id = in.u64();
    const auto payload = in.raw(static_cast<std::size_t>(n) * index_code_bytes(m, k));
    return RetrievalIndex(std::move(books), std::move(ids), payload);
}

template DistanceLUT<float> build_lut(const RefinedEmbedding<float>&, const BasicCodebookSet<float>&);
template DistanceLUT<double> build_lut(const RefinedEmbedding<double>&, const BasicCodebookSet<double>&);
template float adc_distance(const DistanceLUT<float>&, const QuantCode&);
template double adc_distance(const DistanceLUT<double>&, const QuantCode&);

}  // namespace micpq
