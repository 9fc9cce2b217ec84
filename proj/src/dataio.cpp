#include "micpq/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "micpq/detail/binary_io.hpp"
#include "micpq/error.hpp"
#include "micpq/rng.hpp"

namespace micpq {

namespace {

constexpr std::string_view kEmbMagic = "MICPQEMB";
constexpr std::string_view kLblMagic = "MICPQLBL";
constexpr std::size_t kEmbHeaderBytes = 24;

}  // namespace

std::size_t LabelVector::n_classes() const noexcept {
    if (labels.empty()) return 0;
    return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

void validate_embeddings(const EmbeddingMatrix& m) {
    if (m.rows() == 0 || m.cols() == 0) {
        throw Error(ErrorCode::InvalidSpec, "embedding matrix must have n_docs >= 1 and dim >= 1");
    }
    const auto& v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw Error(ErrorCode::NonFiniteValue,
                        "row " + std::to_string(i / m.cols()) + " col " + std::to_string(i % m.cols()) +
                            " at byte offset " + std::to_string(kEmbHeaderBytes + 4 * i));
        }
    }
}

void validate_labels(const LabelVector& labels) {
    const std::size_t c = labels.n_classes();
    std::vector<bool> seen(c, false);
    for (auto l : labels.labels) seen[l] = true;
    const auto gap = std::find(seen.begin(), seen.end(), false);
    if (gap != seen.end()) {
        throw Error(ErrorCode::NonContiguousClasses,
                    "class id " + std::to_string(gap - seen.begin()) + " is missing below max id " +
                        std::to_string(c - 1));
    }
}

void check_paired(const EmbeddingMatrix& m, const LabelVector& labels) {
    if (labels.size() != m.rows()) {
        throw Error(ErrorCode::LengthMismatch, std::to_string(labels.size()) + " labels for " +
                                                   std::to_string(m.rows()) + " documents");
    }
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
    auto in = detail::ByteReader::load(path);
    in.expect_magic(kEmbMagic);
    const auto version_offset = in.offset();
    const auto version = in.u32();
    if (version != kEmbeddingVersion) {
        throw Error(ErrorCode::VersionMismatch, "embedding version " + std::to_string(version) +
                                                    " at byte offset " + std::to_string(version_offset));
    }
    const auto n = in.u64();
    const auto d = in.u32();
    if (n == 0 || d == 0) throw Error(ErrorCode::InvalidSpec, "embedding header declares an empty matrix");
    // Guard against absurd headers before allocating.
    if (n > in.remaining() / 4 / d) {
        throw Error(ErrorCode::TruncatedFile, "header declares " + std::to_string(n) + "x" + std::to_string(d) +
                                                  " but payload at byte offset " + std::to_string(in.offset()) +
                                                  " holds only " + std::to_string(in.remaining()) + " bytes");
    }
    EmbeddingMatrix m(static_cast<std::size_t>(n), d);
    in.f32s(m.values());
    validate_embeddings(m);
    return m;
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    validate_embeddings(m);
    detail::ByteWriter out;
    out.magic(kEmbMagic);
    out.u32(kEmbeddingVersion);
    out.u64(m.rows());
    out.u32(static_cast<std::uint32_t>(m.cols()));
    out.f32s(m.values());
    out.save(path);
}

LabelVector read_labels(const std::filesystem::path& path) {
    auto in = detail::ByteReader::load(path);
    in.expect_magic(kLblMagic);
    const auto version_offset = in.offset();
    const auto version = in.u32();
    if (version != kLabelVersion) {
        throw Error(ErrorCode::VersionMismatch, "label version " + std::to_string(version) +
                                                    " at byte offset " + std::to_string(version_offset));
    }
    const auto n = in.u64();
    if (n > in.remaining() / 4) {
        throw Error(ErrorCode::TruncatedFile, "header declares " + std::to_string(n) +
                                                  " labels but payload at byte offset " +
                                                  std::to_string(in.offset()) + " holds only " +
                                                  std::to_string(in.remaining()) + " bytes");
    }
    LabelVector out;
    out.labels.resize(static_cast<std::size_t>(n));
    for (auto& l : out.labels) l = in.u32();
    validate_labels(out);
    return out;
}

void write_labels(const LabelVector& labels, const std::filesystem::path& path) {
    validate_labels(labels);
    detail::ByteWriter out;
    out.magic(kLblMagic);
    out.u32(kLabelVersion);
    out.u64(labels.size());
    for (auto l : labels.labels) out.u32(l);
    out.save(path);
}

std::pair<EmbeddingMatrix, LabelVector> synth_mixture(const MixtureSpec& spec) {
    if (spec.n_docs == 0 || spec.dim == 0 || spec.n_classes == 0 || spec.n_classes > spec.n_docs ||
        !(spec.separation >= 0.0) || !(spec.noise_sigma > 0.0) || !std::isfinite(spec.separation) ||
        !std::isfinite(spec.noise_sigma)) {
        throw Error(ErrorCode::InvalidSpec, "need 1 <= n_classes <= n_docs, dim >= 1, separation >= 0, sigma > 0");
    }
    Rng rng(derive_seed(spec.seed, Stream::Synth));
    Matrix<double> centers(spec.n_classes, spec.dim);
    for (auto& c : centers.values()) c = spec.separation * rng.normal();

    EmbeddingMatrix x(static_cast<std::size_t>(spec.n_docs), spec.dim);
    LabelVector labels;
    labels.labels.resize(static_cast<std::size_t>(spec.n_docs));
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto cls = static_cast<std::uint32_t>(i % spec.n_classes);
        labels.labels[i] = cls;
        auto row = x.row(i);
        const auto center = centers.row(cls);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] = static_cast<float>(center[j] + spec.noise_sigma * rng.normal());
        }
    }
    return {std::move(x), std::move(labels)};
}

Split split_indices(std::size_t n, double train_fraction, double val_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0) || !(val_fraction >= 0.0) || train_fraction + val_fraction > 1.0) {
        throw Error(ErrorCode::InvalidSpec, "split fractions must satisfy train > 0, val >= 0, train + val <= 1");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, Stream::Split));
    shuffle(order, rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train,
                                static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return s;
}

LabelVector gather_labels(const LabelVector& labels, std::span<const std::size_t> rows) {
    LabelVector out;
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(labels.labels.at(r));
    return out;
}

}  // namespace micpq
