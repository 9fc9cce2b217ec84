#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "micpq/matrix.hpp"

namespace micpq {

/// N x D_in document embeddings, row-major binary32.
using EmbeddingMatrix = Matrix<float>;

struct LabelVector {
    std::vector<std::uint32_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    /// max label + 1 (labels are validated contiguous from 0).
    std::size_t n_classes() const noexcept;
    bool operator==(const LabelVector&) const = default;
};

struct MixtureSpec {
    std::uint64_t n_docs = 0;
    std::uint32_t dim = 0;
    std::uint32_t n_classes = 0;
    double separation = 0.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
};

inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::uint32_t kLabelVersion = 1;

/// NonFiniteValue (naming the byte offset the value would occupy on disk)
/// when any entry is NaN or Inf; InvalidSpec for an empty matrix.
void validate_embeddings(const EmbeddingMatrix& m);

/// NonContiguousClasses unless the set of ids is exactly {0, ..., C-1}.
void validate_labels(const LabelVector& labels);

/// LengthMismatch unless labels pair row-for-row with the embeddings.
void check_paired(const EmbeddingMatrix& m, const LabelVector& labels);

EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);

LabelVector read_labels(const std::filesystem::path& path);
void write_labels(const LabelVector& labels, const std::filesystem::path& path);

/// Gaussian mixture corpus. Class centers are N(0, separation^2) per
/// coordinate, documents add N(0, noise_sigma^2) noise, and document i gets
/// label i mod n_classes. Everything is drawn from one xoshiro256** stream
/// seeded by derive_seed(seed, Stream::Synth): all centers first (class by
/// class, coordinate by coordinate), then document noise row by row.
std::pair<EmbeddingMatrix, LabelVector> synth_mixture(const MixtureSpec& spec);

/// Seeded random partition of [0, n) into consecutive train/val/test parts
/// whose sizes follow `fractions` (the last part absorbs rounding).
struct Split {
    std::vector<std::size_t> train, val, test;
};
Split split_indices(std::size_t n, double train_fraction, double val_fraction, std::uint64_t seed);

LabelVector gather_labels(const LabelVector& labels, std::span<const std::size_t> rows);

}  // namespace micpq
