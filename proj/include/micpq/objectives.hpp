#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "micpq/encoder.hpp"
#include "micpq/matrix.hpp"
#include "micpq/quantizer.hpp"

namespace micpq {

struct LossConfig {
    double tau_cl = 0.3;
    double tau_gumbel = 5.0;
    double alpha = 0.1;
    double lambda = 0.2;
    double p_drop = 0.3;
};

/// InvalidConfig unless tau_cl > 0, tau_gumbel > 0, alpha >= 0, lambda >= 0
/// and 0 <= p_drop < 1.
void validate(const LossConfig& cfg);

/// Two views of a batch: row i of view1 and row i of view2 belong to the
/// same document. Each row is a concatenation of M (soft) codewords.
template <typename T>
struct BatchViews {
    Matrix<T> view1;
    Matrix<T> view2;
};

template <typename T>
struct MIStats {
    std::vector<T> marginal;
    T h_marginal{};
    T h_conditional{};
    T mi{};
};

/// Trainable parameters; also used as the gradient container.
template <typename T>
struct ModelParams {
    BasicEncoderParams<T> encoder;
    BasicCodebookSet<T> books;
    bool operator==(const ModelParams&) const = default;
};

template <typename To, typename From>
ModelParams<To> cast_model(const ModelParams<From>& p) {
    return {cast_params<To>(p.encoder), cast_books<To>(p.books)};
}

/// Entropy floor used inside every log: log(max(p, kEntropyClamp)).
inline constexpr double kEntropyClamp = 1e-12;
inline constexpr double kZeroNormEps = 1e-12;

/// ZeroNorm if either vector has norm <= 1e-12.
template <typename T>
T cosine_sim(std::span<const T> a, std::span<const T> b);

/// Symmetric two-view InfoNCE. For anchor view i of document x the logits
/// are the shared positive sim(h1_x, h2_x) / tau and sim(h_i_x, h_n_t) / tau
/// for every other document t and both views n.
template <typename T>
T contrastive_loss(const BatchViews<T>& views, T tau_cl);

/// Same value plus dL/dview1 and dL/dview2.
template <typename T>
T contrastive_loss_grad(const BatchViews<T>& views, T tau_cl, Matrix<T>& grad1, Matrix<T>& grad2);

/// Exact expectation of the contrastive loss when every (document, view,
/// codebook) index is drawn independently from the noise-free assignment
/// distribution. Enumerates all K^(2 |B| M) outcomes; TooLargeToEnumerate
/// past kMaxEnumeration.
inline constexpr std::uint64_t kMaxEnumeration = 20'000'000;
double expected_loss_oracle(const Matrix<double>& refined_view1, const Matrix<double>& refined_view2,
                            const BasicCodebookSet<double>& books, double tau_cl);

/// Entropy statistics of a batch of assignment distributions (one row per
/// sample). RowNotNormalized when a row does not sum to 1.
template <typename T>
MIStats<T> mi_term(const Matrix<T>& probs, T alpha);

/// d mi / d probs for the same rows.
template <typename T>
Matrix<T> mi_term_grad(const Matrix<T>& probs, T alpha);

/// L = contrastive - lambda * sum_m mi_m. probs_per_book[m] holds the
/// noise-free assignment rows of codebook m.
template <typename T>
T total_loss(const BatchViews<T>& views, std::span<const Matrix<T>> probs_per_book, const LossConfig& cfg);

/// Gumbel-softmax codeword mixtures for refined rows, noise seeded per
/// (row, codebook) from `seed`.
template <typename T>
Matrix<T> relaxed_codewords(const Matrix<T>& refined, const BasicCodebookSet<T>& books, T tau_gumbel,
                            std::uint64_t seed);

template <typename T>
struct LossResult {
    T total{};
    T contrastive{};
    T mi_sum{};
    ModelParams<T> grad;
};

/// Full stochastic objective for one mini-batch and its exact gradient.
///
/// For document i and view v in {0, 1} the pipeline is: inverted dropout
/// seeded by derive_seed(seed, Dropout, 2i + v), encoder forward, then for
/// every codebook m Gumbel noise seeded by derive_seed(seed, Gumbel,
/// (2i + v) M + m), soft assignment and soft codeword. The MI term pools
/// the noise-free assignment rows of both views (2 |B| rows per codebook).
template <typename T>
LossResult<T> loss_and_gradients(const ModelParams<T>& params, const Matrix<T>& batch, const LossConfig& cfg,
                                 std::uint64_t seed);

}  // namespace micpq
