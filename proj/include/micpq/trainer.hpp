#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "micpq/dataio.hpp"
#include "micpq/objectives.hpp"

namespace micpq {

struct AdamConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Gumbel temperature used when none is given: 10 for 16-bit codes, else 5.
double default_tau_gumbel(std::size_t n_codebooks, std::size_t n_codewords);

struct TrainConfig {
    std::size_t n_codebooks = 8;
    std::size_t n_codewords = 16;
    std::size_t sub_dim = 24;
    std::size_t batch_size = 256;
    std::size_t n_epochs = 100;
    std::uint64_t seed = 0;
    LossConfig loss;
    AdamConfig adam;
    /// Write a checkpoint every this many epochs (0 = only at the end).
    std::size_t checkpoint_every = 0;
    std::filesystem::path checkpoint_path;

    std::size_t code_bits() const;
};

/// Fills loss.tau_gumbel from the bit budget (for callers that did not set it).
TrainConfig with_paper_defaults(TrainConfig cfg);

void validate(const TrainConfig& cfg);

struct ModelState {
    ModelParams<float> params;
    ModelParams<float> adam_m;
    ModelParams<float> adam_v;
    std::uint64_t step = 0;

    std::size_t n_codebooks() const noexcept { return params.books.n_codebooks; }
    std::size_t n_codewords() const noexcept { return params.books.n_codewords; }
    std::size_t sub_dim() const noexcept { return params.books.sub_dim; }
    std::size_t d_in() const noexcept { return params.encoder.d_in(); }

    bool operator==(const ModelState&) const = default;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double total_loss = 0;
    double contrastive_loss = 0;
    double mi_sum = 0;
    /// Per codebook, number of training documents hard-assigned to each codeword.
    std::vector<std::vector<std::uint64_t>> usage;
    /// Mean over codebooks of the entropy of the usage histogram (nats).
    double usage_entropy = 0;
    std::optional<double> val_loss;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    /// One line per epoch: key=value fields separated by spaces.
    std::string to_text() const;
    void write(const std::filesystem::path& path) const;
};

/// Encoder: Glorot-uniform weights, zero bias (stream Init/0). Codebooks:
/// for each book, K distinct refined segments of the warmup batch picked by
/// a seeded shuffle (stream Init/1+m); a book with fewer than K distinct
/// segments falls back to N(0, 0.1^2) entries. Adam moments start at zero.
ModelState init_model(const TrainConfig& cfg, const EmbeddingMatrix& warmup_batch);

/// Bias-corrected Adam on every parameter; increments state.step.
/// NonFiniteGradient (state untouched) if any gradient entry is NaN/Inf.
void adam_step(ModelState& state, const ModelParams<float>& grads, const AdamConfig& adam);

/// Hard codeword usage and its mean per-book entropy over `data`.
std::vector<std::vector<std::uint64_t>> codeword_usage(const ModelParams<float>& params, const EmbeddingMatrix& data);
double histogram_entropy(const std::vector<std::uint64_t>& counts);

/// Mean over codebooks of H(K^m) where the marginal is the average
/// noise-free assignment distribution over `data`.
double mean_marginal_entropy(const ModelParams<float>& params, const EmbeddingMatrix& data);

struct TrainResult {
    ModelState state;
    TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training. Epoch e visits rows in the order of a Fisher-Yates
/// shuffle seeded by derive_seed(seed, Shuffle, e); step s uses
/// derive_seed(seed, Step, s) for its dropout masks and Gumbel noise. The
/// warmup batch for init is the first batch of epoch 0. A trailing batch of
/// a single row is dropped (the contrastive term needs two documents).
TrainResult train(const TrainConfig& cfg, const EmbeddingMatrix& data,
                  const EmbeddingMatrix* validation = nullptr, const EpochCallback& on_epoch = {});

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace micpq
