#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "micpq/quantizer.hpp"
#include "micpq/rng.hpp"
#include "test_util.hpp"

using namespace micpq;

namespace {

BasicCodebookSet<double> random_books(std::size_t m, std::size_t k, std::size_t sd, std::uint64_t seed) {
    BasicCodebookSet<double> b(m, k, sd);
    Rng rng(seed);
    for (auto& v : b.values) v = rng.normal();
    return b;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("assign_probs") {
    SUBCASE("equidistant codewords split evenly") {
        BasicCodebookSet<double> b(1, 2, 2);
        b.values = {1, 0, -1, 0};
        const std::vector<double> seg{0, 0};
        const auto p = assign_probs<double>(seg, b.book(0));
        CHECK(p[0] == doctest::Approx(0.5));
        CHECK(p[1] == doctest::Approx(0.5));
    }
    SUBCASE("segment on c1, c2 at squared distance 1") {
        BasicCodebookSet<double> b(1, 2, 1);
        b.values = {0, 1};
        const std::vector<double> seg{0};
        const auto p = assign_probs<double>(seg, b.book(0));
        CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
        CHECK(p[0] == doctest::Approx(0.73106).epsilon(1e-5));
    }
    SUBCASE("identical codewords give uniform") {
        BasicCodebookSet<double> b(1, 5, 3, 0.25);
        const std::vector<double> seg{3, -1, 2};
        for (double v : assign_probs<double>(seg, b.book(0))) CHECK(v == doctest::Approx(0.2));
    }
    SUBCASE("far segments stay finite") {
        BasicCodebookSet<double> b(1, 2, 1);
        b.values = {0, 1};
        const std::vector<double> seg{1e4};
        const auto p = assign_probs<double>(seg, b.book(0));
        CHECK(p[1] == doctest::Approx(1.0));
        CHECK(std::isfinite(p[0]));
    }
    SUBCASE("errors") {
        BasicCodebookSet<double> b(1, 2, 2);
        const std::vector<double> short_seg{1};
        const std::vector<double> nan_seg{NAN, 0};
        CHECK_ERROR_CODE(assign_probs<double>(short_seg, b.book(0)), ErrorCode::DimMismatch);
        CHECK_ERROR_CODE(assign_probs<double>(nan_seg, b.book(0)), ErrorCode::NonFiniteInput);
    }
}

TEST_CASE("Gumbel noise") {
    // u = 0.5 maps to -log(log 2).
    CHECK(-std::log(-std::log(0.5)) == doctest::Approx(0.36651).epsilon(1e-5));
    const auto xi = sample_gumbel<double>(1000000, 17);
    CHECK(std::all_of(xi.begin(), xi.end(), [](double x) { return std::isfinite(x); }));
    const double mean = std::accumulate(xi.begin(), xi.end(), 0.0) / double(xi.size());
    CHECK(std::abs(mean - 0.5772156649) < 0.01);
    CHECK(sample_gumbel<double>(8, 3) == sample_gumbel<double>(8, 3));
    // Clamp bounds the noise to the finite range reachable from [1e-12, 1 - 1e-12].
    const double lo = -std::log(-std::log(1e-12)), hi = -std::log(-std::log(1.0 - 1e-12));
    const auto [mn, mx] = std::minmax_element(xi.begin(), xi.end());
    CHECK(*mn >= lo);
    CHECK(*mx <= hi);
}

TEST_CASE("soft_assign") {
    const auto b = random_books(1, 4, 3, 5);
    Rng rng(8);
    const auto seg = random_vec(3, rng);

    SUBCASE("no noise at unit temperature reduces to assign_probs") {
        const std::vector<double> zero(4, 0.0);
        const auto v = soft_assign<double>(seg, b.book(0), 1.0, zero);
        const auto p = assign_probs<double>(seg, b.book(0));
        for (std::size_t k = 0; k < 4; ++k) CHECK(v.probs[k] == doctest::Approx(p[k]).epsilon(1e-12));
        CHECK(v.temperature == 1.0);
        CHECK(v.gumbel == zero);
    }
    SUBCASE("small temperature is one-hot at argmin of distance plus noise") {
        const auto xi = sample_gumbel<double>(4, 2);
        const auto v = soft_assign<double>(seg, b.book(0), 1e-4, xi);
        const auto d = codeword_distances<double>(seg, b.book(0));
        std::size_t best = 0;
        for (std::size_t k = 1; k < 4; ++k) {
            if (d[k] + xi[k] < d[best] + xi[best]) best = k;
        }
        CHECK(v.probs[best] == doctest::Approx(1.0));
    }
    SUBCASE("large temperature is uniform") {
        const auto xi = sample_gumbel<double>(4, 2);
        for (double p : soft_assign<double>(seg, b.book(0), 1e9, xi).probs) CHECK(p == doctest::Approx(0.25));
    }
    SUBCASE("joint rescaling of temperature and logits is invariant") {
        const auto xi = sample_gumbel<double>(4, 6);
        const auto v = soft_assign<double>(seg, b.book(0), 0.7, xi);
        auto scaled = b;
        for (auto& c : scaled.values) c *= 2.0;
        auto seg2 = seg;
        for (auto& s : seg2) s *= 2.0;
        auto xi4 = xi;
        for (auto& x : xi4) x *= 4.0;
        const auto w = soft_assign<double>(seg2, scaled.book(0), 2.8, xi4);
        for (std::size_t k = 0; k < 4; ++k) CHECK(w.probs[k] == doctest::Approx(v.probs[k]).epsilon(1e-10));
    }
    SUBCASE("probabilities sum to one") {
        for (std::uint64_t s = 0; s < 50; ++s) {
            const auto v = soft_assign<double>(seg, b.book(0), 0.3, sample_gumbel<double>(4, s));
            CHECK(std::accumulate(v.probs.begin(), v.probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    SUBCASE("errors") {
        const std::vector<double> xi(4, 0.0), xi3(3, 0.0);
        CHECK_ERROR_CODE(soft_assign<double>(seg, b.book(0), 0.0, xi), ErrorCode::NonPositiveTemperature);
        CHECK_ERROR_CODE(soft_assign<double>(seg, b.book(0), -1.0, xi), ErrorCode::NonPositiveTemperature);
        CHECK_ERROR_CODE(soft_assign<double>(seg, b.book(0), 1.0, xi3), ErrorCode::DimMismatch);
    }
}

TEST_CASE("Gumbel-max sampling matches assignment frequencies") {
    const auto b = random_books(1, 4, 2, 21);
    const std::vector<double> seg{0.3, -0.2};
    const auto p = assign_probs<double>(seg, b.book(0));
    const auto d = codeword_distances<double>(seg, b.book(0));
    const std::size_t n = 100000;
    std::vector<double> counts(4, 0.0);
    Rng rng(99);
    for (std::size_t t = 0; t < n; ++t) {
        std::size_t best = 0;
        double best_score = -INFINITY;
        for (std::size_t k = 0; k < 4; ++k) {
            const double g = -std::log(-std::log(std::clamp(rng.uniform(), 1e-12, 1.0 - 1e-12)));
            if (-d[k] + g > best_score) {
                best_score = -d[k] + g;
                best = k;
            }
        }
        counts[best] += 1;
    }
    for (std::size_t k = 0; k < 4; ++k) {
        const double sigma = std::sqrt(double(n) * p[k] * (1 - p[k]));
        CHECK(std::abs(counts[k] - double(n) * p[k]) < 3 * sigma + 1);
    }
}

TEST_CASE("hard_assign") {
    BasicCodebookSet<double> b(1, 4, 2);
    b.values = {0, 0, 1, 1, 3, 3, 0, 0};
    const std::vector<double> on2{3, 3};
    CHECK(hard_assign<double>(on2, b.book(0)) == 2);
    const std::vector<double> tie{0, 0};
    CHECK(hard_assign<double>(tie, b.book(0)) == 0);

    const auto r = random_books(1, 7, 3, 4);
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        const auto seg = random_vec(3, rng);
        const auto p = assign_probs<double>(seg, r.book(0));
        CHECK(hard_assign<double>(seg, r.book(0)) == std::max_element(p.begin(), p.end()) - p.begin());
    }
}

TEST_CASE("soft_codeword") {
    const auto b = random_books(1, 3, 4, 1);
    const std::vector<double> onehot{0, 1, 0};
    const auto h = soft_codeword<double>(b.book(0), onehot);
    const auto c1 = b.codeword(0, 1);
    CHECK(std::vector<double>(c1.begin(), c1.end()) == h);

    BasicCodebookSet<double> two(1, 2, 2);
    two.values = {0, 2, 4, -2};
    const std::vector<double> half{0.5, 0.5};
    CHECK(soft_codeword<double>(two.book(0), half) == std::vector<double>{2, 0});

    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        auto v = random_vec(3, rng);
        for (auto& x : v) x = std::exp(x);
        const double s = std::accumulate(v.begin(), v.end(), 0.0);
        for (auto& x : v) x /= s;
        const auto mix = soft_codeword<double>(b.book(0), v);
        for (std::size_t j = 0; j < 4; ++j) {
            double lo = INFINITY, hi = -INFINITY;
            for (std::size_t k = 0; k < 3; ++k) {
                lo = std::min(lo, b.codeword(0, k)[j]);
                hi = std::max(hi, b.codeword(0, k)[j]);
            }
            CHECK(mix[j] >= lo - 1e-12);
            CHECK(mix[j] <= hi + 1e-12);
        }
    }
}

TEST_CASE("quantize_document and reconstruct") {
    const auto b = random_books(2, 4, 3, 7);
    RefinedEmbedding<double> r{{}, 3};
    for (auto v : b.codeword(0, 3)) r.values.push_back(v);
    for (auto v : b.codeword(1, 1)) r.values.push_back(v);
    const auto code = quantize_document(r, b);
    CHECK(code.indices == std::vector<std::uint32_t>{3, 1});
    CHECK(reconstruct(code, b) == r.values);

    const auto one = random_books(1, 5, 3, 9);
    RefinedEmbedding<double> r1{{0.1, 0.2, 0.3}, 3};
    CHECK(quantize_document(r1, one).indices[0] == hard_assign<double>(r1.segment(0), one.book(0)));

    // Squared distance decomposes over segments, so per-book argmin is the
    // global argmin over all K^M concatenations.
    const auto small = random_books(2, 2, 2, 13);
    Rng rng(14);
    for (int t = 0; t < 100; ++t) {
        RefinedEmbedding<double> q{random_vec(4, rng), 2};
        double best = INFINITY;
        std::vector<std::uint32_t> arg;
        for (std::uint32_t a = 0; a < 2; ++a) {
            for (std::uint32_t c = 0; c < 2; ++c) {
                const auto full = reconstruct(QuantCode{{a, c}}, small);
                const double d = squared_distance<double>(q.values, full);
                if (d < best) {
                    best = d;
                    arg = {a, c};
                }
            }
        }
        CHECK(quantize_document(q, small).indices == arg);
    }

    RefinedEmbedding<double> wrong{{1, 2}, 2};
    CHECK_ERROR_CODE(quantize_document(wrong, b), ErrorCode::DimMismatch);
    CHECK_ERROR_CODE(reconstruct(QuantCode{{0}}, b), ErrorCode::DimMismatch);
    CHECK_ERROR_CODE(reconstruct(QuantCode{{0, 4}}, b), ErrorCode::IndexOutOfRange);
}

TEST_CASE("bit packing") {
    const std::vector<std::uint32_t> a{1, 2, 3, 4};
    CHECK(pack_codes(a, 16) == std::vector<std::uint8_t>{0x21, 0x43});
    const std::vector<std::uint32_t> b{1, 0, 0, 0, 0, 0, 0, 1};
    CHECK(pack_codes(b, 2) == std::vector<std::uint8_t>{0x81});
    CHECK(unpack_codes(std::vector<std::uint8_t>{0x21, 0x43}, 4, 16) == a);

    CHECK(packed_code_bytes(4, 16) == 2);
    CHECK(packed_code_bytes(8, 16) == 4);
    CHECK(packed_code_bytes(16, 16) == 8);
    CHECK(packed_code_bytes(32, 16) == 16);
    CHECK(packed_code_bytes(3, 8) == 2);

    Rng rng(6);
    for (std::size_t k : {2u, 4u, 8u, 16u, 256u, 1024u}) {
        for (std::size_t m : {1u, 3u, 7u, 16u}) {
            std::vector<std::uint32_t> idx(m);
            for (auto& i : idx) i = static_cast<std::uint32_t>(rng.below(k));
            const auto packed = pack_codes(idx, k);
            CHECK(packed.size() == (m * bits_per_index(k) + 7) / 8);
            CHECK(unpack_codes(packed, m, k) == idx);
        }
    }
    // Unused high bits of the last byte stay zero.
    CHECK(pack_codes(std::vector<std::uint32_t>{7}, 8) == std::vector<std::uint8_t>{0x07});

    CHECK_ERROR_CODE(pack_codes(a, 12), ErrorCode::KNotPowerOfTwo);
    CHECK_ERROR_CODE(bits_per_index(1), ErrorCode::KNotPowerOfTwo);
    CHECK_ERROR_CODE(pack_codes(std::vector<std::uint32_t>{16}, 16), ErrorCode::IndexOutOfRange);
    CHECK_ERROR_CODE(unpack_codes(std::vector<std::uint8_t>{0x21}, 4, 16), ErrorCode::TruncatedFile);
}
