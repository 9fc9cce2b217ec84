// Acceptance suite: one [PASS]/[FAIL] line per criterion, nonzero exit if any fail.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "micpq/dataio.hpp"
#include "micpq/evaluation.hpp"
#include "micpq/objectives.hpp"
#include "micpq/retrieval.hpp"
#include "micpq/rng.hpp"
#include "micpq/trainer.hpp"
#include "oracles.hpp"

using namespace micpq;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds) {
    std::printf("[%s] criterion %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
                seconds);
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

void timed(int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

Matrix<double> normal_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Matrix<double> m(r, c);
    for (auto& v : m.values()) v = scale * rng.normal();
    return m;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_correctness() {
    Rng rng(2024);
    LossConfig cfg;
    cfg.tau_gumbel = 0.7;
    double worst = 0;
    std::size_t coords = 0;
    for (std::size_t m : {1u, 2u}) {
        for (std::size_t k : {2u, 4u}) {
            for (std::size_t b : {2u, 3u}) {
                const std::size_t d_in = 3, sd = 2;
                ModelParams<double> p;
                p.encoder.weight = normal_matrix(m * sd, d_in, rng, 0.5);
                p.encoder.bias.assign(m * sd, 0.0);
                for (auto& v : p.encoder.bias) v = 0.5 + 0.1 * rng.normal();
                p.books = BasicCodebookSet<double>(m, k, sd);
                for (auto& v : p.books.values) v = rng.normal();
                const auto batch = normal_matrix(b, d_in, rng);
                const std::uint64_t seed = rng.next();
                const auto an = oracle::flatten(loss_and_gradients(p, batch, cfg, seed).grad);
                const auto fd = oracle::finite_differences(
                    p, [&](const ModelParams<double>& q) { return loss_and_gradients(q, batch, cfg, seed).total; },
                    1e-4);
                for (std::size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, oracle::relative_error(an[i], fd[i]));
                coords += fd.size();
            }
        }
    }
    return {worst < 1e-4, std::to_string(coords) + " coordinates, worst relative error " + num(worst) + " (< 1e-4)"};
}

// 2 -------------------------------------------------------------------------

Outcome expectation_consistency() {
    const std::size_t m = 2, k = 3, b = 2, sd = 2, n = 100000;
    const double tau_cl = 0.3, tau_g = 0.05;
    Rng rng(31);
    BasicCodebookSet<double> books(m, k, sd);
    for (auto& v : books.values) v = rng.normal();
    const auto r1 = normal_matrix(b, m * sd, rng), r2 = normal_matrix(b, m * sd, rng);
    const double exact = expected_loss_oracle(r1, r2, books, tau_cl);

    Rng mc(32);
    double sum = 0, sq = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double l = oracle::hard_sampled_loss(r1, r2, books, tau_cl, mc);
        sum += l;
        sq += l * l;
    }
    const double mean = sum / n, se = std::sqrt((sq / n - mean * mean) / n);
    const double z = (mean - exact) / se;

    double soft = 0;
    for (std::size_t t = 0; t < n; ++t) {
        BatchViews<double> v{relaxed_codewords(r1, books, tau_g, derive_seed(33, 2 * t)),
                             relaxed_codewords(r2, books, tau_g, derive_seed(33, 2 * t + 1))};
        soft += contrastive_loss(v, tau_cl) / n;
    }
    const double rel = std::abs(soft - exact) / std::abs(exact);
    const bool pass = std::abs(z) <= 3 && rel <= 0.05;
    return {pass, "oracle " + num(exact) + ", hard-sampled mean " + num(mean) + " (" + num(z) +
                      " SE, need |z| <= 3), Gumbel-softmax mean " + num(soft) + " (relative gap " + num(rel) +
                      ", need <= 0.05)"};
}

// 3 -------------------------------------------------------------------------

Outcome mi_closed_forms() {
    const double alpha = 0.1;
    bool ok = true;
    double worst_uniform = 0, worst_onehot = 0;
    for (std::size_t k : {2u, 4u, 16u}) {
        const auto u = mi_term(Matrix<double>(6, k, 1.0 / double(k)), alpha);
        worst_uniform = std::max(worst_uniform, std::abs(u.mi - (1 - alpha) * std::log(double(k))));
        Matrix<double> h(2 * k, k, 0.0);
        for (std::size_t i = 0; i < 2 * k; ++i) h(i, i % k) = 1.0;
        worst_onehot = std::max(worst_onehot, std::abs(mi_term(h, alpha).mi - std::log(double(k))));
    }
    ok = ok && worst_uniform < 1e-9 && worst_onehot < 1e-9;
    const double ex = mi_term(Matrix<double>(2, 2, {0.9, 0.1, 0.1, 0.9}), alpha).mi;
    ok = ok && std::abs(ex - 0.66064) <= 1e-4;
    return {ok, "uniform error " + num(worst_uniform) + ", one-hot error " + num(worst_onehot) +
                    ", worked example mi " + num(ex)};
}

// 4 -------------------------------------------------------------------------

ModelState identity_model(std::size_t m, std::size_t k, std::size_t sd, std::uint64_t seed) {
    const std::size_t d = m * sd;
    ModelState st;
    st.params.encoder = {Matrix<float>(d, d, 0.f), std::vector<float>(d, 0.f)};
    for (std::size_t i = 0; i < d; ++i) st.params.encoder.weight(i, i) = 1.f;
    st.params.books = CodebookSet(m, k, sd);
    Rng rng(seed);
    for (auto& v : st.params.books.values) v = static_cast<float>(rng.uniform() * 4);
    st.adam_m = st.adam_v = st.params;
    return st;
}

EmbeddingMatrix uniform_rows(std::size_t n, std::size_t d, Rng& rng) {
    EmbeddingMatrix x(n, d);
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform() * 4);
    return x;
}

Outcome retrieval_exactness() {
    const std::size_t m = 8, k = 16, sd = 3;
    const auto model = identity_model(m, k, sd, 41);
    Rng rng(42);
    const auto corpus = uniform_rows(1000, m * sd, rng);
    const auto queries = uniform_rows(1000, m * sd, rng);
    const auto index = build_index(model, corpus);

    double worst = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        const auto rq = forward(model.params.encoder, queries.row(i), sd);
        const auto code = index.code(i);
        const double adc = adc_distance(build_lut(rq, model.params.books), code);
        const auto rec = reconstruct(code, model.params.books);
        double direct = 0;
        for (std::size_t j = 0; j < rec.size(); ++j) direct += std::pow(double(rq.values[j]) - rec[j], 2);
        worst = std::max(worst, std::abs(adc - direct) / std::max(direct, 1e-12));
    }

    std::size_t mismatched = 0;
    const std::size_t n_rank = 50;
    for (std::size_t q = 0; q < n_rank; ++q) {
        const auto rq = forward(model.params.encoder, queries.row(q), sd);
        std::vector<std::pair<double, std::uint64_t>> all;
        for (std::size_t i = 0; i < index.n_docs(); ++i) {
            const auto rec = reconstruct(index.code(i), model.params.books);
            double d = 0;
            for (std::size_t j = 0; j < rec.size(); ++j) d += std::pow(double(rq.values[j]) - rec[j], 2);
            all.emplace_back(d, index.doc_ids()[i]);
        }
        std::sort(all.begin(), all.end());
        const auto hits = search_topk(index, queries.row(q), model, index.n_docs());
        for (std::size_t i = 0; i < hits.size(); ++i) {
            if (hits[i].doc_id != all[i].second) {
                ++mismatched;
                break;
            }
        }
    }
    const bool pass = worst <= 1e-5 && mismatched == 0;
    return {pass, "worst ADC relative error " + num(worst) + " over 1000 pairs, " + std::to_string(mismatched) + "/" +
                      std::to_string(n_rank) + " full rankings differ from the exhaustive oracle"};
}

// 5 -------------------------------------------------------------------------

Outcome bit_budget() {
    const std::size_t n = 10000;
    bool ok = true;
    std::string detail;
    const std::pair<std::size_t, std::size_t> settings[] = {{4, 2000}, {8, 4000}, {16, 8000}, {32, 16000}};
    for (const auto& [m, per_thousand] : settings) {
        const auto model = identity_model(m, 16, 1, m);
        Rng rng(50 + m);
        const auto index = build_index(model, uniform_rows(n, m, rng));
        const std::size_t expect = per_thousand * (n / 1000);
        ok = ok && index.payload().size() == expect;
        detail += "M=" + std::to_string(m) + ": " + std::to_string(index.payload().size()) + " B (" +
                  std::to_string(index.code_bytes() * 8) + " bits/doc); ";
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

// 6-9 -----------------------------------------------------------------------

struct Corpus {
    EmbeddingMatrix train, queries;
    LabelVector train_labels, query_labels;
};

Corpus acceptance_corpus() {
    const auto [x, labels] = synth_mixture({2000, 32, 4, 20.0, 1.0, 7});
    const auto s = split_indices(x.rows(), 0.8, 0.1, 7);
    const std::span<const std::size_t> tr(s.train), te(s.test);
    return {gather_rows(x, tr), gather_rows(x, te), gather_labels(labels, tr), gather_labels(labels, te)};
}

TrainConfig base_config(std::size_t m, std::size_t k, double lambda, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.n_codebooks = m;
    cfg.n_codewords = k;
    cfg.n_epochs = 50;
    cfg.seed = seed;
    cfg.loss.lambda = lambda;
    return with_paper_defaults(cfg);
}

/// The model training would start from: init on the first batch of epoch 0.
ModelState untrained_model(const TrainConfig& cfg, const EmbeddingMatrix& data) {
    std::vector<std::size_t> order(data.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, Stream::Shuffle, 0));
    shuffle(order, rng);
    order.resize(std::min(cfg.batch_size, order.size()));
    return init_model(cfg, gather_rows(data, std::span<const std::size_t>(order)));
}

EvalReport retrieval_report(const ModelState& model, const Corpus& c, SearchMode mode, std::size_t threads) {
    const auto index = build_index(model, c.train);
    EvalReport rep;
    rep.k = 100;
    rep.n_queries = c.queries.rows();
    rep.mode = mode == SearchMode::Adc ? "adc" : "hamming";
    const auto hits = search_all(index, c.queries, model, 100, mode, threads);
    rep.precision_at_k = precision_at_k(hit_ids(hits), c.query_labels.labels, c.train_labels.labels, 100);
    return rep;
}

struct EndToEnd {
    Outcome c6, c7, c8, c9;
    std::string transcript;
};

EndToEnd criteria_6_to_9(const Corpus& c, std::size_t threads, const std::function<void(int, const Outcome&)>& done) {
    EndToEnd r;
    std::ostringstream tx;
    auto finish = [&](int id, const Outcome& o) {
        if (done) done(id, o);
    };

    // 6
    const auto cfg = base_config(4, 16, 0.2, 7);
    const auto trained = train(cfg, c.train);
    const auto untrained = untrained_model(cfg, c.train);
    const auto rep_trained = retrieval_report(trained.state, c, SearchMode::Adc, threads);
    const auto rep_untrained = retrieval_report(untrained, c, SearchMode::Adc, threads);
    tx << "[6] log\n" << trained.log.to_text() << "[6] trained\n" << rep_trained.to_text() << "[6] untrained\n"
       << rep_untrained.to_text();
    {
        const double p = rep_trained.precision_at_k, p0 = rep_untrained.precision_at_k;
        r.c6 = {p >= 0.90 && p >= p0 + 0.15, "precision@100 trained " + num(p) + " (need >= 0.90), untrained " +
                                                 num(p0) + " (need trained - untrained >= 0.15, got " + num(p - p0) +
                                                 ")"};
    }
    finish(6, r.c6);

    // 7
    double h_mi = 0, h_cl = 0;
    std::string per_seed;
    for (std::uint64_t seed : {7u, 8u, 9u}) {
        const auto with_mi = seed == 7 ? trained : train(base_config(4, 16, 0.2, seed), c.train);
        const auto without = train(base_config(4, 16, 0.0, seed), c.train);
        const double a = mean_marginal_entropy(with_mi.state.params, c.train);
        const double b = mean_marginal_entropy(without.state.params, c.train);
        h_mi += a / 3;
        h_cl += b / 3;
        per_seed += " seed " + std::to_string(seed) + ": " + num(a) + " vs " + num(b) + ";";
        tx << "[7] seed " << seed << " lambda=0.2\n" << with_mi.log.to_text() << "[7] seed " << seed << " lambda=0\n"
           << without.log.to_text() << "[7] entropies " << num(a) << ' ' << num(b) << '\n';
    }
    r.c7 = {h_mi > h_cl, "mean H(K^m) lambda=0.2 " + num(h_mi) + " vs lambda=0 " + num(h_cl) + " (" + per_seed + ")"};
    finish(7, r.c7);

    // 8
    {
        auto cfg8 = base_config(16, 2, 0.2, 7);
        const auto res = train(cfg8, c.train);
        const auto index = build_index(res.state, c.train);
        const auto adc = retrieval_report(res.state, c, SearchMode::Adc, threads);
        const auto ham = retrieval_report(res.state, c, SearchMode::Hamming, threads);
        Rng rng(88);
        std::size_t mismatches = 0;
        for (int t = 0; t < 10000; ++t) {
            const auto i = rng.below(index.n_docs()), j = rng.below(index.n_docs());
            const auto a = index.code_bytes_of(i), b = index.code_bytes_of(j);
            std::size_t xor_pop = 0;
            for (std::size_t by = 0; by < a.size(); ++by) xor_pop += std::popcount(unsigned(a[by] ^ b[by]));
            const std::size_t h = hamming_distance(index.code(i), index.code(j), 2);
            if (h != xor_pop || hamming_distance_packed(a, b) != xor_pop) ++mismatches;
        }
        tx << "[8] log\n" << res.log.to_text() << "[8] adc\n" << adc.to_text() << "[8] hamming\n" << ham.to_text()
           << "[8] mismatches " << mismatches << '\n';
        r.c8 = {mismatches == 0, std::to_string(mismatches) + "/10000 Hamming distances differ from XOR-popcount; "
                                                             "precision@100 ADC " +
                                     num(adc.precision_at_k) + ", Hamming " + num(ham.precision_at_k)};
    }
    finish(8, r.c8);

    // 9
    {
        const auto res = train(base_config(8, 4, 0.2, 7), c.train);
        const auto q = evaluate_codeword_quality(res.state, c.train, c.train_labels, 7);
        EvalReport rep;
        rep.k = 100;
        rep.mode = "adc";
        rep.codewords = q;
        tx << "[9] log\n" << res.log.to_text() << "[9] report\n" << rep.to_text();
        const double gap = std::abs(q.micpq_avg - q.kmeans_avg);
        r.c9 = {gap <= 0.10 && q.micpq_avg > 0.80 && q.kmeans_avg > 0.80,
                "avg Hungarian accuracy MICPQ " + num(q.micpq_avg) + ", K-Means " + num(q.kmeans_avg) + " (gap " +
                    num(gap) + ", need <= 0.10 and both > 0.80)"};
    }
    finish(9, r.c9);
    r.transcript = tx.str();
    return r;
}

}  // namespace

int main() {
    std::printf("MICPQ acceptance suite\n");
    timed(1, "gradient correctness", gradient_correctness);
    timed(2, "expectation consistency", expectation_consistency);
    timed(3, "MI closed forms", mi_closed_forms);
    timed(4, "retrieval exactness", retrieval_exactness);
    timed(5, "bit budget", bit_budget);

    const auto corpus = acceptance_corpus();
    const std::size_t threads = std::max(2u, std::thread::hardware_concurrency());
    const char* names[] = {"end-to-end retrieval", "MI ablation direction", "extreme-mode consistency",
                           "codeword quality"};
    auto last = std::chrono::steady_clock::now();
    EndToEnd first;
    try {
        first = criteria_6_to_9(corpus, threads, [&](int id, const Outcome& o) {
            const auto now = std::chrono::steady_clock::now();
            report(id, names[id - 6], o, std::chrono::duration<double>(now - last).count());
            last = now;
        });
    } catch (const std::exception& e) {
        report(6, "end-to-end pipeline", {false, std::string("exception: ") + e.what()}, 0);
    }

    timed(10, "determinism", [&] {
        const auto second = criteria_6_to_9(corpus, 1, {});
        const bool same = !first.transcript.empty() && first.transcript == second.transcript;
        return Outcome{same, "criteria 6-9 repeated (" + std::to_string(threads) + " vs 1 search threads): " +
                                 std::to_string(first.transcript.size()) + " transcript bytes, " +
                                 (same ? "identical" : "DIFFERENT")};
    });

    std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
    return failures == 0 ? 0 : 1;
}
