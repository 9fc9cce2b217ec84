#include "micpq/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "micpq/error.hpp"
#include "micpq/rng.hpp"

namespace micpq {

namespace {

template <typename T>
T norm_of(std::span<const T> v) {
    T acc = 0;
    for (auto x : v) acc += x * x;
    return std::sqrt(acc);
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// f(p) = -p log(max(p, eps)) and its derivative.
template <typename T>
T neg_plogp(T p) {
    return -p * std::log(std::max(p, static_cast<T>(kEntropyClamp)));
}

template <typename T>
T neg_plogp_grad(T p) {
    if (p > static_cast<T>(kEntropyClamp)) return -(std::log(p) + T(1));
    return -std::log(static_cast<T>(kEntropyClamp));
}

// Stacks view1 over view2: row v*B + i is view v of document i.
template <typename T>
struct Stacked {
    std::size_t batch = 0;
    std::size_t dim = 0;
    std::vector<T> units;  // normalized rows
    std::vector<T> norms;
    Matrix<T> cos;

    std::span<const T> unit(std::size_t r) const { return std::span<const T>(units).subspan(r * dim, dim); }
};

template <typename T>
Stacked<T> stack_views(const BatchViews<T>& views) {
    const auto& v1 = views.view1;
    const auto& v2 = views.view2;
    if (v1.rows() != v2.rows() || v1.cols() != v2.cols() || v1.rows() == 0) {
        throw Error(ErrorCode::DimMismatch, "views must be non-empty with equal shapes");
    }
    Stacked<T> s;
    s.batch = v1.rows();
    s.dim = v1.cols();
    const std::size_t n = 2 * s.batch;
    s.units.resize(n * s.dim);
    s.norms.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto src = r < s.batch ? v1.row(r) : v2.row(r - s.batch);
        const T nrm = norm_of(src);
        if (!(nrm > static_cast<T>(kZeroNormEps))) {
            throw Error(ErrorCode::ZeroNorm, "representation row " + std::to_string(r) + " has zero norm");
        }
        s.norms[r] = nrm;
        for (std::size_t j = 0; j < s.dim; ++j) s.units[r * s.dim + j] = src[j] / nrm;
    }
    s.cos = Matrix<T>(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        s.cos(r, r) = dot(s.unit(r), s.unit(r));
        for (std::size_t c = r + 1; c < n; ++c) {
            const T v = dot(s.unit(r), s.unit(c));
            s.cos(r, c) = v;
            s.cos(c, r) = v;
        }
    }
    return s;
}

// Walks every (document, anchor view) term. `visit` receives the anchor
// row, the positive logit, the negative rows and their logits, and the
// log-sum-exp of all logits.
template <typename T, typename Visit>
T contrastive_terms(const Stacked<T>& s, T tau_cl, Visit&& visit) {
    const std::size_t b = s.batch;
    std::vector<std::size_t> neg_rows;
    std::vector<T> neg_logits;
    neg_rows.reserve(2 * b);
    neg_logits.reserve(2 * b);
    T total = 0;
    for (std::size_t x = 0; x < b; ++x) {
        const T pos = s.cos(x, b + x) / tau_cl;
        for (std::size_t view = 0; view < 2; ++view) {
            const std::size_t anchor = view * b + x;
            neg_rows.clear();
            neg_logits.clear();
            for (std::size_t t = 0; t < b; ++t) {
                if (t == x) continue;
                for (std::size_t n = 0; n < 2; ++n) {
                    neg_rows.push_back(n * b + t);
                    neg_logits.push_back(s.cos(anchor, n * b + t) / tau_cl);
                }
            }
            T mx = pos;
            for (auto l : neg_logits) mx = std::max(mx, l);
            T sum = std::exp(pos - mx);
            for (auto l : neg_logits) sum += std::exp(l - mx);
            const T lse = mx + std::log(sum);
            total += pos - lse;
            visit(x, anchor, pos, neg_rows, neg_logits, lse);
        }
    }
    return -total / static_cast<T>(b);
}

template <typename T>
T contrastive_from_stacked(const Stacked<T>& s, T tau_cl) {
    return contrastive_terms(s, tau_cl, [](auto&&...) {});
}

}  // namespace

void validate(const LossConfig& cfg) {
    if (!(cfg.tau_cl > 0.0) || !(cfg.tau_gumbel > 0.0) || !(cfg.alpha >= 0.0) || !(cfg.lambda >= 0.0) ||
        !(cfg.p_drop >= 0.0 && cfg.p_drop < 1.0)) {
        throw Error(ErrorCode::InvalidConfig,
                    "need tau_cl > 0, tau_gumbel > 0, alpha >= 0, lambda >= 0, 0 <= p_drop < 1");
    }
}

template <typename T>
T cosine_sim(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::DimMismatch, "cosine_sim on vectors of different length");
    const T na = norm_of(a);
    const T nb = norm_of(b);
    if (!(na > static_cast<T>(kZeroNormEps)) || !(nb > static_cast<T>(kZeroNormEps))) {
        throw Error(ErrorCode::ZeroNorm, "cosine_sim of a zero-norm vector");
    }
    return std::clamp(dot(a, b) / (na * nb), T(-1), T(1));
}

template <typename T>
T contrastive_loss(const BatchViews<T>& views, T tau_cl) {
    return contrastive_from_stacked(stack_views(views), tau_cl);
}

template <typename T>
T contrastive_loss_grad(const BatchViews<T>& views, T tau_cl, Matrix<T>& grad1, Matrix<T>& grad2) {
    const auto s = stack_views(views);
    const std::size_t b = s.batch;
    const std::size_t n = 2 * b;
    // gcos(r, c): dL / d cos(row r, row c), accumulated without symmetrizing.
    Matrix<T> gcos(n, n, T(0));
    const T inv_b = T(1) / static_cast<T>(b);
    const T loss = contrastive_terms(
        s, tau_cl,
        [&](std::size_t x, std::size_t anchor, T pos, const std::vector<std::size_t>& neg_rows,
            const std::vector<T>& neg_logits, T lse) {
            // L = -(1/B) sum (pos - lse); dL/dlogit_j = (1/B) (softmax_j - [j is pos]).
            const T w_pos = std::exp(pos - lse);
            gcos(x, b + x) += inv_b * (w_pos - T(1)) / tau_cl;
            for (std::size_t j = 0; j < neg_rows.size(); ++j) {
                gcos(anchor, neg_rows[j]) += inv_b * std::exp(neg_logits[j] - lse) / tau_cl;
            }
        });

    grad1 = Matrix<T>(b, s.dim, T(0));
    grad2 = Matrix<T>(b, s.dim, T(0));
    for (std::size_t r = 0; r < n; ++r) {
        auto out = r < b ? grad1.row(r) : grad2.row(r - b);
        const auto ur = s.unit(r);
        for (std::size_t c = 0; c < n; ++c) {
            const T g = gcos(r, c) + gcos(c, r);
            if (g == T(0) || c == r) continue;
            const auto uc = s.unit(c);
            const T cs = s.cos(r, c);
            for (std::size_t j = 0; j < s.dim; ++j) out[j] += g * (uc[j] - cs * ur[j]);
        }
        for (auto& v : out) v /= s.norms[r];
    }
    return loss;
}

double expected_loss_oracle(const Matrix<double>& refined_view1, const Matrix<double>& refined_view2,
                            const BasicCodebookSet<double>& books, double tau_cl) {
    const std::size_t b = refined_view1.rows();
    const std::size_t m_books = books.n_codebooks;
    const std::size_t k = books.n_codewords;
    if (refined_view2.rows() != b || refined_view1.cols() != books.dim() || refined_view2.cols() != books.dim() ||
        b == 0 || k == 0) {
        throw Error(ErrorCode::DimMismatch, "refined views do not match codebook dimensions");
    }
    const std::size_t digits = 2 * b * m_books;
    double combos = std::pow(static_cast<double>(k), static_cast<double>(digits));
    if (combos > static_cast<double>(kMaxEnumeration)) {
        throw Error(ErrorCode::TooLargeToEnumerate,
                    std::to_string(k) + "^" + std::to_string(digits) + " outcomes exceed the enumeration limit");
    }
    // probs[(row * M + m) * K + k] for stacked row = view * B + doc.
    std::vector<double> probs(digits * k);
    for (std::size_t r = 0; r < 2 * b; ++r) {
        const auto row = r < b ? refined_view1.row(r) : refined_view2.row(r - b);
        for (std::size_t m = 0; m < m_books; ++m) {
            const auto p = assign_probs(row.subspan(m * books.sub_dim, books.sub_dim), books.book(m));
            std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::ptrdiff_t>((r * m_books + m) * k));
        }
    }
    std::vector<std::size_t> choice(digits, 0);
    BatchViews<double> hard{Matrix<double>(b, books.dim()), Matrix<double>(b, books.dim())};
    double expectation = 0.0;
    const auto n_combos = static_cast<std::uint64_t>(combos);
    for (std::uint64_t c = 0; c < n_combos; ++c) {
        double weight = 1.0;
        for (std::size_t d = 0; d < digits; ++d) {
            weight *= probs[d * k + choice[d]];
            const std::size_t r = d / m_books;
            const std::size_t m = d % m_books;
            auto dst = (r < b ? hard.view1.row(r) : hard.view2.row(r - b)).subspan(m * books.sub_dim, books.sub_dim);
            const auto cw = books.codeword(m, choice[d]);
            std::copy(cw.begin(), cw.end(), dst.begin());
        }
        if (weight > 0.0) expectation += weight * contrastive_loss(hard, tau_cl);
        for (std::size_t d = 0; d < digits; ++d) {
            if (++choice[d] < k) break;
            choice[d] = 0;
        }
    }
    return expectation;
}

template <typename T>
MIStats<T> mi_term(const Matrix<T>& probs, T alpha) {
    const std::size_t n = probs.rows();
    const std::size_t k = probs.cols();
    if (n == 0 || k == 0) throw Error(ErrorCode::DimMismatch, "mi_term needs a non-empty batch");
    const T tol = std::sqrt(std::numeric_limits<T>::epsilon()) * static_cast<T>(k);
    MIStats<T> st;
    st.marginal.assign(k, T(0));
    T h_cond = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = probs.row(i);
        T sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            sum += row[j];
            st.marginal[j] += row[j];
            h_cond += neg_plogp(row[j]);
        }
        if (std::abs(sum - T(1)) > tol) {
            throw Error(ErrorCode::RowNotNormalized, "row " + std::to_string(i) + " sums to " + std::to_string(sum));
        }
    }
    const T inv_n = T(1) / static_cast<T>(n);
    T h = 0;
    for (auto& p : st.marginal) {
        p *= inv_n;
        h += neg_plogp(p);
    }
    st.h_marginal = h;
    st.h_conditional = h_cond * inv_n;
    st.mi = st.h_marginal - alpha * st.h_conditional;
    return st;
}

template <typename T>
Matrix<T> mi_term_grad(const Matrix<T>& probs, T alpha) {
    const auto st = mi_term(probs, alpha);
    const std::size_t n = probs.rows();
    const T inv_n = T(1) / static_cast<T>(n);
    Matrix<T> g(n, probs.cols());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < probs.cols(); ++j) {
            g(i, j) = inv_n * (neg_plogp_grad(st.marginal[j]) - alpha * neg_plogp_grad(probs(i, j)));
        }
    }
    return g;
}

template <typename T>
T total_loss(const BatchViews<T>& views, std::span<const Matrix<T>> probs_per_book, const LossConfig& cfg) {
    T mi_sum = 0;
    for (const auto& p : probs_per_book) mi_sum += mi_term(p, static_cast<T>(cfg.alpha)).mi;
    return contrastive_loss(views, static_cast<T>(cfg.tau_cl)) - static_cast<T>(cfg.lambda) * mi_sum;
}

template <typename T>
Matrix<T> relaxed_codewords(const Matrix<T>& refined, const BasicCodebookSet<T>& books, T tau_gumbel,
                            std::uint64_t seed) {
    if (refined.cols() != books.dim()) throw Error(ErrorCode::DimMismatch, "refined rows do not match codebooks");
    Matrix<T> out(refined.rows(), books.dim());
    for (std::size_t r = 0; r < refined.rows(); ++r) {
        for (std::size_t m = 0; m < books.n_codebooks; ++m) {
            const auto xi = sample_gumbel<T>(books.n_codewords, derive_seed(seed, Stream::Gumbel, r * books.n_codebooks + m));
            const auto seg = refined.row(r).subspan(m * books.sub_dim, books.sub_dim);
            const auto sa = soft_assign(seg, books.book(m), tau_gumbel, std::span<const T>(xi));
            const auto h = soft_codeword(books.book(m), std::span<const T>(sa.probs));
            std::copy(h.begin(), h.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(m * books.sub_dim));
        }
    }
    return out;
}

template <typename T>
LossResult<T> loss_and_gradients(const ModelParams<T>& params, const Matrix<T>& batch, const LossConfig& cfg,
                                 std::uint64_t seed) {
    validate(cfg);
    const auto& enc = params.encoder;
    const auto& books = params.books;
    const std::size_t b = batch.rows();
    const std::size_t n_rows = 2 * b;
    const std::size_t mb = books.n_codebooks;
    const std::size_t kk = books.n_codewords;
    const std::size_t sd = books.sub_dim;
    const std::size_t d = books.dim();
    if (b == 0) throw Error(ErrorCode::DimMismatch, "empty batch");
    if (batch.cols() != enc.d_in() || enc.d_out() != d) {
        throw Error(ErrorCode::DimMismatch, "batch/encoder/codebook dimensions disagree");
    }
    const T tau_g = static_cast<T>(cfg.tau_gumbel);

    // Forward. Row r = view * B + doc.
    Matrix<T> inputs(n_rows, enc.d_in());
    Matrix<T> pre(n_rows, d);
    Matrix<T> refined(n_rows, d);
    std::vector<T> soft(n_rows * mb * kk);   // v
    std::vector<T> hardp(n_rows * mb * kk);  // p(k|x)
    std::vector<Matrix<T>> probs_per_book(mb, Matrix<T>(n_rows, kk));
    BatchViews<T> views{Matrix<T>(b, d), Matrix<T>(b, d)};

    for (std::size_t r = 0; r < n_rows; ++r) {
        const std::size_t view = r / b;
        const std::size_t doc = r % b;
        const auto z = dropout_view(batch.row(doc), DropoutConfig{cfg.p_drop, derive_seed(seed, Stream::Dropout, 2 * doc + view)});
        std::copy(z.begin(), z.end(), inputs.row(r).begin());
        const auto a = pre_activation(enc, std::span<const T>(z));
        std::copy(a.begin(), a.end(), pre.row(r).begin());
        auto s = refined.row(r);
        for (std::size_t i = 0; i < d; ++i) s[i] = a[i] > T(0) ? a[i] : T(0);

        auto h = view == 0 ? views.view1.row(doc) : views.view2.row(doc);
        for (std::size_t m = 0; m < mb; ++m) {
            const auto seg = std::span<const T>(s).subspan(m * sd, sd);
            const auto p = assign_probs(seg, books.book(m));
            const auto xi = sample_gumbel<T>(kk, derive_seed(seed, Stream::Gumbel, (2 * doc + view) * mb + m));
            const auto sa = soft_assign(seg, books.book(m), tau_g, std::span<const T>(xi));
            const auto hm = soft_codeword(books.book(m), std::span<const T>(sa.probs));
            std::copy(hm.begin(), hm.end(), h.begin() + static_cast<std::ptrdiff_t>(m * sd));
            std::copy(sa.probs.begin(), sa.probs.end(), soft.begin() + static_cast<std::ptrdiff_t>((r * mb + m) * kk));
            std::copy(p.begin(), p.end(), hardp.begin() + static_cast<std::ptrdiff_t>((r * mb + m) * kk));
            std::copy(p.begin(), p.end(), probs_per_book[m].row(r).begin());
        }
    }

    LossResult<T> out;
    Matrix<T> gview1, gview2;
    out.contrastive = contrastive_loss_grad(views, static_cast<T>(cfg.tau_cl), gview1, gview2);
    const T alpha = static_cast<T>(cfg.alpha);
    const T lambda = static_cast<T>(cfg.lambda);
    std::vector<Matrix<T>> gprobs(mb);
    for (std::size_t m = 0; m < mb; ++m) {
        out.mi_sum += mi_term(probs_per_book[m], alpha).mi;
        gprobs[m] = mi_term_grad(probs_per_book[m], alpha);
    }
    out.total = out.contrastive - lambda * out.mi_sum;

    // Backward.
    out.grad.encoder.weight = Matrix<T>(d, enc.d_in(), T(0));
    out.grad.encoder.bias.assign(d, T(0));
    out.grad.books = BasicCodebookSet<T>(mb, kk, sd, T(0));
    std::vector<T> dseg(sd), dv(kk), dd(kk), dact(d);

    for (std::size_t r = 0; r < n_rows; ++r) {
        const std::size_t view = r / b;
        const std::size_t doc = r % b;
        const auto gh = view == 0 ? gview1.row(doc) : gview2.row(doc);
        const auto s = refined.row(r);
        std::fill(dact.begin(), dact.end(), T(0));
        for (std::size_t m = 0; m < mb; ++m) {
            const T* v = soft.data() + (r * mb + m) * kk;
            const T* p = hardp.data() + (r * mb + m) * kk;
            const auto seg = s.subspan(m * sd, sd);
            const auto g = gh.subspan(m * sd, sd);

            // h = sum_k v_k c_k
            T vdot = 0;
            for (std::size_t k = 0; k < kk; ++k) {
                const auto c = books.codeword(m, k);
                auto gc = out.grad.books.codeword(m, k);
                T acc = 0;
                for (std::size_t j = 0; j < sd; ++j) {
                    acc += g[j] * c[j];
                    gc[j] += v[k] * g[j];
                }
                dv[k] = acc;
                vdot += v[k] * acc;
            }
            // v = softmax(-(dist + xi) / tau)
            for (std::size_t k = 0; k < kk; ++k) dd[k] = -v[k] * (dv[k] - vdot) / tau_g;

            // MI term: L includes -lambda * mi; p = softmax(-dist).
            T pdot = 0;
            for (std::size_t k = 0; k < kk; ++k) pdot += p[k] * (-lambda * gprobs[m](r, k));
            for (std::size_t k = 0; k < kk; ++k) dd[k] -= p[k] * (-lambda * gprobs[m](r, k) - pdot);

            // dist_k = ||seg - c_k||^2
            std::fill(dseg.begin(), dseg.end(), T(0));
            for (std::size_t k = 0; k < kk; ++k) {
                if (dd[k] == T(0)) continue;
                const auto c = books.codeword(m, k);
                auto gc = out.grad.books.codeword(m, k);
                for (std::size_t j = 0; j < sd; ++j) {
                    const T diff = T(2) * (seg[j] - c[j]) * dd[k];
                    dseg[j] += diff;
                    gc[j] -= diff;
                }
            }
            for (std::size_t j = 0; j < sd; ++j) {
                // ReLU subgradient at exactly zero is zero.
                dact[m * sd + j] = pre(r, m * sd + j) > T(0) ? dseg[j] : T(0);
            }
        }
        const auto z = inputs.row(r);
        for (std::size_t i = 0; i < d; ++i) {
            const T gi = dact[i];
            if (gi == T(0)) continue;
            out.grad.encoder.bias[i] += gi;
            auto gw = out.grad.encoder.weight.row(i);
            for (std::size_t j = 0; j < z.size(); ++j) gw[j] += gi * z[j];
        }
    }
    return out;
}

#define MICPQ_INSTANTIATE(T)                                                                                      \
    template T cosine_sim(std::span<const T>, std::span<const T>);                                               \
    template T contrastive_loss(const BatchViews<T>&, T);                                                        \
    template T contrastive_loss_grad(const BatchViews<T>&, T, Matrix<T>&, Matrix<T>&);                          \
    template MIStats<T> mi_term(const Matrix<T>&, T);                                                            \
    template Matrix<T> mi_term_grad(const Matrix<T>&, T);                                                        \
    template T total_loss(const BatchViews<T>&, std::span<const Matrix<T>>, const LossConfig&);                 \
    template Matrix<T> relaxed_codewords(const Matrix<T>&, const BasicCodebookSet<T>&, T, std::uint64_t);       \
    template LossResult<T> loss_and_gradients(const ModelParams<T>&, const Matrix<T>&, const LossConfig&, std::uint64_t);

MICPQ_INSTANTIATE(float)
MICPQ_INSTANTIATE(double)
#undef MICPQ_INSTANTIATE

}  // namespace micpq
