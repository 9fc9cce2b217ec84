#include "micpq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "micpq/detail/binary_io.hpp"
#include "micpq/error.hpp"
#include "micpq/rng.hpp"

namespace micpq {

namespace {

constexpr std::string_view kCkpMagic = "MICPQCKP";

template <typename Fn>
void for_each_tensor(ModelParams<float>& p, Fn&& fn) {
    fn(std::span<float>(p.encoder.weight.values()));
    fn(std::span<float>(p.encoder.bias));
    fn(std::span<float>(p.books.values));
}

template <typename Fn>
void for_each_tensor(const ModelParams<float>& p, Fn&& fn) {
    fn(std::span<const float>(p.encoder.weight.values()));
    fn(std::span<const float>(p.encoder.bias));
    fn(std::span<const float>(p.books.values));
}

ModelParams<float> zeros_like(const ModelParams<float>& p) {
    ModelParams<float> z = p;
    for_each_tensor(z, [](std::span<float> t) { std::fill(t.begin(), t.end(), 0.0f); });
    return z;
}

bool same_shape(const ModelParams<float>& a, const ModelParams<float>& b) {
    return a.encoder.weight.rows() == b.encoder.weight.rows() && a.encoder.weight.cols() == b.encoder.weight.cols() &&
           a.encoder.bias.size() == b.encoder.bias.size() && a.books.n_codebooks == b.books.n_codebooks &&
           a.books.n_codewords == b.books.n_codewords && a.books.sub_dim == b.books.sub_dim &&
           a.books.values.size() == b.books.values.size();
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

}  // namespace

double default_tau_gumbel(std::size_t n_codebooks, std::size_t n_codewords) {
    const double bits = static_cast<double>(n_codebooks) * std::log2(static_cast<double>(n_codewords));
    return std::abs(bits - 16.0) < 1e-9 ? 10.0 : 5.0;
}

std::size_t TrainConfig::code_bits() const { return n_codebooks * bits_per_index(n_codewords); }

TrainConfig with_paper_defaults(TrainConfig cfg) {
    cfg.loss.tau_gumbel = default_tau_gumbel(cfg.n_codebooks, cfg.n_codewords);
    return cfg;
}

void validate(const TrainConfig& cfg) {
    validate(cfg.loss);
    if (cfg.n_codebooks == 0 || cfg.n_codewords < 2 || cfg.sub_dim == 0 || cfg.batch_size == 0) {
        throw Error(ErrorCode::InvalidConfig, "need M >= 1, K >= 2, sub_dim >= 1, batch_size >= 1");
    }
    if (!(cfg.adam.learning_rate > 0.0) || !(cfg.adam.beta1 >= 0.0 && cfg.adam.beta1 < 1.0) ||
        !(cfg.adam.beta2 >= 0.0 && cfg.adam.beta2 < 1.0) || !(cfg.adam.epsilon > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "invalid Adam hyper-parameters");
    }
}

std::string TrainLog::to_text() const {
    std::ostringstream os;
    for (const auto& e : epochs) {
        os << "epoch=" << e.epoch << " total=" << format_double(e.total_loss)
           << " contrastive=" << format_double(e.contrastive_loss) << " mi=" << format_double(e.mi_sum)
           << " usage_entropy=" << format_double(e.usage_entropy);
        if (e.val_loss) os << " val_total=" << format_double(*e.val_loss);
        os << " usage=";
        for (std::size_t m = 0; m < e.usage.size(); ++m) {
            if (m) os << '|';
            for (std::size_t k = 0; k < e.usage[m].size(); ++k) os << (k ? "," : "") << e.usage[m][k];
        }
        os << '\n';
    }
    return os.str();
}

void TrainLog::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
    out << to_text();
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for '" + path.string() + "'");
}

ModelState init_model(const TrainConfig& cfg, const EmbeddingMatrix& warmup_batch) {
    validate(cfg);
    if (warmup_batch.rows() == 0) throw Error(ErrorCode::InvalidConfig, "warmup batch is empty");
    const std::size_t m_books = cfg.n_codebooks;
    const std::size_t k = cfg.n_codewords;
    const std::size_t sd = cfg.sub_dim;

    ModelState st;
    st.params.encoder = init_encoder(warmup_batch.cols(), m_books * sd, derive_seed(cfg.seed, Stream::Init, 0));
    st.params.books = CodebookSet(m_books, k, sd);
    const auto refined = forward_batch(st.params.encoder, warmup_batch);

    for (std::size_t m = 0; m < m_books; ++m) {
        Rng rng(derive_seed(cfg.seed, Stream::Init, 1 + m));
        std::vector<std::vector<float>> distinct;
        for (std::size_t r = 0; r < refined.rows(); ++r) {
            const auto seg = refined.row(r).subspan(m * sd, sd);
            const bool seen = std::any_of(distinct.begin(), distinct.end(), [&](const std::vector<float>& d) {
                return std::equal(d.begin(), d.end(), seg.begin());
            });
            if (!seen) distinct.emplace_back(seg.begin(), seg.end());
        }
        if (distinct.size() < k) {
            for (std::size_t kk = 0; kk < k; ++kk) {
                for (auto& v : st.params.books.codeword(m, kk)) v = static_cast<float>(0.1 * rng.normal());
            }
            continue;
        }
        shuffle(distinct, rng);
        for (std::size_t kk = 0; kk < k; ++kk) {
            std::copy(distinct[kk].begin(), distinct[kk].end(), st.params.books.codeword(m, kk).begin());
        }
    }
    st.adam_m = zeros_like(st.params);
    st.adam_v = zeros_like(st.params);
    st.step = 0;
    return st;
}

void adam_step(ModelState& state, const ModelParams<float>& grads, const AdamConfig& adam) {
    if (!same_shape(state.params, grads)) throw Error(ErrorCode::DimMismatch, "gradient shapes do not match parameters");
    std::size_t flat = 0;
    std::optional<std::size_t> bad;
    for_each_tensor(grads, [&](std::span<const float> g) {
        for (float v : g) {
            if (!bad && !std::isfinite(v)) bad = flat;
            ++flat;
        }
    });
    if (bad) {
        throw Error(ErrorCode::NonFiniteGradient,
                    "non-finite gradient at flat parameter index " + std::to_string(*bad) + " (step " +
                        std::to_string(state.step) + ")");
    }

    const std::uint64_t t = state.step + 1;
    const double b1 = adam.beta1, b2 = adam.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));

    std::vector<std::span<float>> ps, ms, vs;
    std::vector<std::span<const float>> gs;
    for_each_tensor(state.params, [&](std::span<float> x) { ps.push_back(x); });
    for_each_tensor(state.adam_m, [&](std::span<float> x) { ms.push_back(x); });
    for_each_tensor(state.adam_v, [&](std::span<float> x) { vs.push_back(x); });
    for_each_tensor(grads, [&](std::span<const float> x) { gs.push_back(x); });
    for (std::size_t tsr = 0; tsr < ps.size(); ++tsr) {
        for (std::size_t i = 0; i < ps[tsr].size(); ++i) {
            const double g = gs[tsr][i];
            const double m = b1 * ms[tsr][i] + (1.0 - b1) * g;
            const double v = b2 * vs[tsr][i] + (1.0 - b2) * g * g;
            ms[tsr][i] = static_cast<float>(m);
            vs[tsr][i] = static_cast<float>(v);
            const double update = adam.learning_rate * (m / c1) / (std::sqrt(v / c2) + adam.epsilon);
            ps[tsr][i] = static_cast<float>(ps[tsr][i] - update);
        }
    }
    state.step = t;
}

std::vector<std::vector<std::uint64_t>> codeword_usage(const ModelParams<float>& params, const EmbeddingMatrix& data) {
    const auto& books = params.books;
    std::vector<std::vector<std::uint64_t>> usage(books.n_codebooks, std::vector<std::uint64_t>(books.n_codewords, 0));
    const auto refined = forward_batch(params.encoder, data);
    for (std::size_t r = 0; r < refined.rows(); ++r) {
        for (std::size_t m = 0; m < books.n_codebooks; ++m) {
            ++usage[m][hard_assign(refined.row(r).subspan(m * books.sub_dim, books.sub_dim), books.book(m))];
        }
    }
    return usage;
}

double histogram_entropy(const std::vector<std::uint64_t>& counts) {
    double total = 0;
    for (auto c : counts) total += static_cast<double>(c);
    if (total == 0) return 0;
    double h = 0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / total;
        h -= p * std::log(p);
    }
    return h;
}

double mean_marginal_entropy(const ModelParams<float>& params, const EmbeddingMatrix& data) {
    const auto& books = params.books;
    const auto refined = cast_matrix<double>(forward_batch(params.encoder, data));
    const auto books64 = cast_books<double>(books);
    double total = 0;
    for (std::size_t m = 0; m < books.n_codebooks; ++m) {
        Matrix<double> probs(refined.rows(), books.n_codewords);
        for (std::size_t r = 0; r < refined.rows(); ++r) {
            const auto p = assign_probs(refined.row(r).subspan(m * books.sub_dim, books.sub_dim), books64.book(m));
            std::copy(p.begin(), p.end(), probs.row(r).begin());
        }
        total += mi_term(probs, 1.0).h_marginal;
    }
    return total / static_cast<double>(books.n_codebooks);
}

TrainResult train(const TrainConfig& cfg, const EmbeddingMatrix& data, const EmbeddingMatrix* validation,
                  const EpochCallback& on_epoch) {
    validate(cfg);
    validate_embeddings(data);
    if (data.rows() < 2) throw Error(ErrorCode::InvalidConfig, "training needs at least two documents");
    if (validation && validation->cols() != data.cols()) {
        throw Error(ErrorCode::DimMismatch, "validation embeddings have a different dimension");
    }
    const std::size_t n = data.rows();
    const std::size_t bs = std::min(cfg.batch_size, n);

    auto epoch_order = [&](std::size_t epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(derive_seed(cfg.seed, Stream::Shuffle, epoch));
        shuffle(order, rng);
        return order;
    };

    TrainResult result;
    {
        const auto order = epoch_order(0);
        const auto warm = gather_rows(data, std::span<const std::size_t>(order.data(), bs));
        result.state = init_model(cfg, warm);
    }
    auto& state = result.state;

    for (std::size_t epoch = 0; epoch < cfg.n_epochs; ++epoch) {
        const auto order = epoch_order(epoch);
        double total = 0, cl = 0, mi = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t len = std::min(bs, n - start);
            if (len < 2) break;
            const auto batch = gather_rows(data, std::span<const std::size_t>(order.data() + start, len));
            const auto res = loss_and_gradients(state.params, batch, cfg.loss, derive_seed(cfg.seed, Stream::Step, state.step));
            try {
                adam_step(state, res.grad, cfg.adam);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NonFiniteGradient) throw;
                throw Error(ErrorCode::NonFiniteGradient, "epoch " + std::to_string(epoch) + " batch " +
                                                              std::to_string(batches) + ": " + e.what());
            }
            total += res.total;
            cl += res.contrastive;
            mi += res.mi_sum;
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
        rec.total_loss = total / nb;
        rec.contrastive_loss = cl / nb;
        rec.mi_sum = mi / nb;
        rec.usage = codeword_usage(state.params, data);
        for (const auto& u : rec.usage) rec.usage_entropy += histogram_entropy(u);
        rec.usage_entropy /= static_cast<double>(rec.usage.size());
        if (validation && validation->rows() >= 2) {
            double vt = 0;
            std::size_t vb = 0;
            for (std::size_t start = 0; start + 1 < validation->rows(); start += bs, ++vb) {
                const std::size_t len = std::min(bs, validation->rows() - start);
                std::vector<std::size_t> rows(len);
                for (std::size_t i = 0; i < len; ++i) rows[i] = start + i;
                const auto batch = gather_rows(*validation, std::span<const std::size_t>(rows));
                vt += loss_and_gradients(state.params, batch, cfg.loss, derive_seed(cfg.seed, Stream::Step, ~std::uint64_t{0} - vb)).total;
            }
            rec.val_loss = vt / static_cast<double>(std::max<std::size_t>(vb, 1));
        }
        if (on_epoch) on_epoch(rec);
        result.log.epochs.push_back(std::move(rec));
        if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(state, cfg.checkpoint_path);
        }
    }
    if (!cfg.checkpoint_path.empty()) save_checkpoint(state, cfg.checkpoint_path);
    return result;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
    detail::ByteWriter out;
    out.magic(kCkpMagic);
    out.u32(kCheckpointVersion);
    out.u32(static_cast<std::uint32_t>(state.n_codebooks()));
    out.u32(static_cast<std::uint32_t>(state.n_codewords()));
    out.u32(static_cast<std::uint32_t>(state.sub_dim()));
    out.u32(static_cast<std::uint32_t>(state.d_in()));
    out.u64(state.step);
    for (const auto* p : {&state.params, &state.adam_m, &state.adam_v}) {
        for_each_tensor(*p, [&](std::span<const float> t) { out.f32s(t); });
    }
    out.save(path);
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    auto in = detail::ByteReader::load(path);
    in.expect_magic(kCkpMagic);
    const auto version_offset = in.offset();
    const auto version = in.u32();
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + " at byte offset " +
                                                    std::to_string(version_offset) + ", expected " +
                                                    std::to_string(kCheckpointVersion));
    }
    const std::size_t m = in.u32();
    const std::size_t k = in.u32();
    const std::size_t sd = in.u32();
    const std::size_t d_in = in.u32();
    const auto step = in.u64();
    if (m == 0 || k == 0 || sd == 0 || d_in == 0) throw Error(ErrorCode::InvalidConfig, "checkpoint declares an empty model");
    const std::size_t d = m * sd;
    const std::size_t per_set = d * d_in + d + m * k * sd;
    in.need(3 * per_set * 4);
    ModelState st;
    st.params.encoder = EncoderParams{Matrix<float>(d, d_in), std::vector<float>(d)};
    st.params.books = CodebookSet(m, k, sd);
    st.adam_m = st.params;
    st.adam_v = st.params;
    for (auto* p : {&st.params, &st.adam_m, &st.adam_v}) {
        for_each_tensor(*p, [&](std::span<float> t) { in.f32s(t); });
    }
    st.step = step;
    return st;
}

}  // namespace micpq
