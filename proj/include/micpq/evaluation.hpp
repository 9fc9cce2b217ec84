#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "micpq/dataio.hpp"
#include "micpq/matrix.hpp"
#include "micpq/retrieval.hpp"
#include "micpq/trainer.hpp"

namespace micpq {

/// Mean over queries of the fraction of the first min(k, |results|) hits
/// sharing the query label. corpus_labels is indexed by doc id.
double precision_at_k(const std::vector<std::vector<std::uint64_t>>& results,
                      std::span<const std::uint32_t> query_labels, std::span<const std::uint32_t> corpus_labels,
                      std::size_t k);

/// Optimal assignment (Kuhn-Munkres with potentials) minimizing total cost
/// on a square n x n matrix. Returns the column chosen for each row.
std::vector<std::size_t> solve_assignment(const Matrix<double>& cost);

/// Best one-to-one cluster -> class mapping accuracy. Rectangular confusion
/// matrices are zero-padded to square.
double hungarian_accuracy(std::span<const std::uint32_t> assignments, std::span<const std::uint32_t> labels);

struct KMeansResult {
    Matrix<double> centers;
    std::vector<std::uint32_t> assignments;
    /// Within-cluster SSE after each assignment step.
    std::vector<double> sse_history;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Lloyd's algorithm with k-means++ seeding; stops when assignments stop
/// changing. Empty clusters are re-seeded with the point farthest from its
/// current center.
KMeansResult kmeans(const Matrix<double>& points, std::size_t k, std::size_t max_iters, std::uint64_t seed);

struct CodewordQuality {
    std::vector<double> micpq_accuracy;
    std::vector<double> kmeans_accuracy;
    double micpq_avg = 0, micpq_max = 0;
    double kmeans_avg = 0, kmeans_max = 0;
};

/// Per-codebook Hungarian accuracy of hard codeword assignments against
/// labels, alongside K-Means (K = n_classes) on the same refined segments.
/// ConfigMismatch when the model's K differs from the number of classes.
CodewordQuality evaluate_codeword_quality(const ModelState& model, const EmbeddingMatrix& data,
                                          const LabelVector& labels, std::uint64_t seed,
                                          std::size_t kmeans_max_iters = 300);

enum class SearchMode { Adc, Hamming };

/// Runs every query through the index. `threads` workers split the query
/// list; each result lands in its query's slot, so output is independent of
/// the thread count.
std::vector<std::vector<SearchHit>> search_all(const RetrievalIndex& index, const EmbeddingMatrix& queries,
                                               const ModelState& model, std::size_t k, SearchMode mode,
                                               std::size_t threads = 1);

std::vector<std::vector<std::uint64_t>> hit_ids(const std::vector<std::vector<SearchHit>>& hits);

struct EvalReport {
    std::size_t k = 0;
    std::size_t n_queries = 0;
    std::string mode;
    double precision_at_k = 0;
    std::optional<CodewordQuality> codewords;
    double search_seconds = 0;

    /// key=value lines. Runtime is only included when `with_runtime` is set
    /// so that reports stay byte-identical across repeated runs.
    std::string to_text(bool with_runtime = false) const;
    void write(const std::filesystem::path& path, bool with_runtime = false) const;
};

}  // namespace micpq
