#include "micpq/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "micpq/error.hpp"
#include "micpq/rng.hpp"

namespace micpq {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

}  // namespace

double precision_at_k(const std::vector<std::vector<std::uint64_t>>& results,
                      std::span<const std::uint32_t> query_labels, std::span<const std::uint32_t> corpus_labels,
                      std::size_t k) {
    if (k == 0) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
    if (results.size() != query_labels.size()) {
        throw Error(ErrorCode::LengthMismatch, std::to_string(results.size()) + " result lists for " +
                                                   std::to_string(query_labels.size()) + " query labels");
    }
    if (results.empty()) return 0.0;
    double sum = 0;
    for (std::size_t q = 0; q < results.size(); ++q) {
        const std::size_t depth = std::min(k, results[q].size());
        if (depth == 0) continue;
        std::size_t relevant = 0;
        for (std::size_t i = 0; i < depth; ++i) {
            const auto id = results[q][i];
            if (id >= corpus_labels.size()) {
                throw Error(ErrorCode::UnknownDocId, "doc id " + std::to_string(id) + " has no label");
            }
            relevant += corpus_labels[static_cast<std::size_t>(id)] == query_labels[q];
        }
        sum += static_cast<double>(relevant) / static_cast<double>(depth);
    }
    return sum / static_cast<double>(results.size());
}

std::vector<std::size_t> solve_assignment(const Matrix<double>& cost) {
    const std::size_t n = cost.rows();
    if (cost.cols() != n) throw Error(ErrorCode::DimMismatch, "assignment cost matrix must be square");
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based potentials formulation; column 0 is a virtual source.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n);
    for (std::size_t j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
    return row_to_col;
}

double hungarian_accuracy(std::span<const std::uint32_t> assignments, std::span<const std::uint32_t> labels) {
    if (assignments.size() != labels.size()) {
        throw Error(ErrorCode::LengthMismatch, std::to_string(assignments.size()) + " assignments for " +
                                                   std::to_string(labels.size()) + " labels");
    }
    if (assignments.empty()) throw Error(ErrorCode::LengthMismatch, "hungarian_accuracy needs n >= 1");
    const std::size_t clusters = *std::max_element(assignments.begin(), assignments.end()) + 1u;
    const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1u;
    const std::size_t n = std::max(clusters, classes);
    Matrix<double> confusion(n, n, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) confusion(assignments[i], labels[i]) += 1.0;
    double max_count = 0;
    for (auto c : confusion.values()) max_count = std::max(max_count, c);
    Matrix<double> cost(n, n);
    for (std::size_t i = 0; i < cost.size(); ++i) cost.values()[i] = max_count - confusion.values()[i];
    const auto match = solve_assignment(cost);
    double correct = 0;
    for (std::size_t r = 0; r < n; ++r) correct += confusion(r, match[r]);
    return correct / static_cast<double>(labels.size());
}

KMeansResult kmeans(const Matrix<double>& points, std::size_t k, std::size_t max_iters, std::uint64_t seed) {
    const std::size_t n = points.rows();
    const std::size_t dim = points.cols();
    if (k == 0 || n < k) {
        throw Error(ErrorCode::TooFewPoints, std::to_string(n) + " points for k = " + std::to_string(k));
    }
    Rng rng(seed);
    KMeansResult res;
    res.centers = Matrix<double>(k, dim);

    // k-means++ seeding.
    std::vector<bool> chosen(n, false);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    auto take = [&](std::size_t c, std::size_t idx) {
        chosen[idx] = true;
        std::copy(points.row(idx).begin(), points.row(idx).end(), res.centers.row(c).begin());
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(points.row(i), res.centers.row(c)));
    };
    take(0, rng.below(n));
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t idx = n;
        if (total > 0) {
            double target = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0) continue;
                idx = i;
                target -= d2[i];
                if (target < 0) break;
            }
        } else {
            // Every remaining point coincides with a center: pick any unused row.
            std::size_t skip = rng.below(n - c);
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i]) continue;
                if (skip-- == 0) {
                    idx = i;
                    break;
                }
            }
        }
        take(c, idx);
    }

    res.assignments.assign(n, 0);
    std::vector<std::uint32_t> previous;
    std::vector<double> own(n);
    for (std::size_t it = 0; it < max_iters; ++it) {
        double sse = 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t best = 0;
            double best_d = sq_dist(points.row(i), res.centers.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double d = sq_dist(points.row(i), res.centers.row(c));
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<std::uint32_t>(c);
                }
            }
            res.assignments[i] = best;
            own[i] = best_d;
            sse += best_d;
        }
        res.sse_history.push_back(sse);
        res.iterations = it + 1;
        if (res.assignments == previous) {
            res.converged = true;
            break;
        }

        std::vector<std::size_t> counts(k, 0);
        for (auto a : res.assignments) ++counts[a];
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[res.assignments[i]] > 1 && (far == n || own[i] > own[far])) far = i;
            }
            if (far == n) break;
            --counts[res.assignments[far]];
            res.assignments[far] = static_cast<std::uint32_t>(c);
            own[far] = 0;
            counts[c] = 1;
        }

        Matrix<double> sums(k, dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto dst = sums.row(res.assignments[i]);
            const auto src = points.row(i);
            for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            auto dst = res.centers.row(c);
            const auto src = sums.row(c);
            for (std::size_t j = 0; j < dim; ++j) dst[j] = src[j] / static_cast<double>(counts[c]);
        }
        previous = res.assignments;
    }
    return res;
}

CodewordQuality evaluate_codeword_quality(const ModelState& model, const EmbeddingMatrix& data,
                                          const LabelVector& labels, std::uint64_t seed, std::size_t kmeans_max_iters) {
    check_paired(data, labels);
    const std::size_t classes = labels.n_classes();
    if (model.n_codewords() != classes) {
        throw Error(ErrorCode::ConfigMismatch, "model has K=" + std::to_string(model.n_codewords()) + " but labels have " +
                                                   std::to_string(classes) + " classes");
    }
    if (data.cols() != model.d_in()) throw Error(ErrorCode::DimMismatch, "data dimension does not match the model");
    const auto& books = model.params.books;
    const auto refined = forward_batch(model.params.encoder, data);
    CodewordQuality q;
    for (std::size_t m = 0; m < books.n_codebooks; ++m) {
        std::vector<std::uint32_t> hard(data.rows());
        Matrix<double> seg(data.rows(), books.sub_dim);
        for (std::size_t r = 0; r < data.rows(); ++r) {
            const auto s = refined.row(r).subspan(m * books.sub_dim, books.sub_dim);
            hard[r] = hard_assign(s, books.book(m));
            std::copy(s.begin(), s.end(), seg.row(r).begin());
        }
        q.micpq_accuracy.push_back(hungarian_accuracy(hard, labels.labels));
        const auto km = kmeans(seg, classes, kmeans_max_iters, derive_seed(seed, Stream::KMeans, m));
        q.kmeans_accuracy.push_back(hungarian_accuracy(km.assignments, labels.labels));
    }
    auto summarize = [](const std::vector<double>& v, double& avg, double& mx) {
        avg = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        mx = *std::max_element(v.begin(), v.end());
    };
    summarize(q.micpq_accuracy, q.micpq_avg, q.micpq_max);
    summarize(q.kmeans_accuracy, q.kmeans_avg, q.kmeans_max);
    return q;
}

std::vector<std::vector<SearchHit>> search_all(const RetrievalIndex& index, const EmbeddingMatrix& queries,
                                               const ModelState& model, std::size_t k, SearchMode mode,
                                               std::size_t threads) {
    std::vector<std::vector<SearchHit>> out(queries.rows());
    auto run = [&](std::size_t q) {
        out[q] = mode == SearchMode::Adc ? search_topk(index, queries.row(q), model, k)
                                         : search_topk_hamming(index, queries.row(q), model, k);
    };
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(queries.rows(), 1));
    if (threads == 1) {
        for (std::size_t q = 0; q < queries.rows(); ++q) run(q);
        return out;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t q = t; q < queries.rows(); q += threads) run(q);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::vector<std::vector<std::uint64_t>> hit_ids(const std::vector<std::vector<SearchHit>>& hits) {
    std::vector<std::vector<std::uint64_t>> ids(hits.size());
    for (std::size_t q = 0; q < hits.size(); ++q) {
        for (const auto& h : hits[q]) ids[q].push_back(h.doc_id);
    }
    return ids;
}

std::string EvalReport::to_text(bool with_runtime) const {
    std::ostringstream os;
    os << "mode=" << mode << '\n' << "k=" << k << '\n' << "queries=" << n_queries << '\n';
    os << "precision_at_k=" << fmt(precision_at_k) << '\n';
    if (codewords) {
        const auto& c = *codewords;
        for (std::size_t m = 0; m < c.micpq_accuracy.size(); ++m) {
            os << "codebook_" << m << "_accuracy=" << fmt(c.micpq_accuracy[m]) << '\n';
            os << "codebook_" << m << "_kmeans_accuracy=" << fmt(c.kmeans_accuracy[m]) << '\n';
        }
        os << "avg_accuracy=" << fmt(c.micpq_avg) << '\n' << "max_accuracy=" << fmt(c.micpq_max) << '\n';
        os << "kmeans_avg_accuracy=" << fmt(c.kmeans_avg) << '\n' << "kmeans_max_accuracy=" << fmt(c.kmeans_max) << '\n';
    }
    if (with_runtime) os << "search_seconds=" << fmt(search_seconds) << '\n';
    return os.str();
}

void EvalReport::write(const std::filesystem::path& path, bool with_runtime) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
    out << to_text(with_runtime);
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for '" + path.string() + "'");
}

}  // namespace micpq
