#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "lexroute/vector.hpp"

using lexroute::Error;
using lexroute::ErrorCode;
using lexroute::Vector;

using testing::error_code;

TEST_CASE("vector construction validates dimension and finiteness") {
    CHECK(error_code([] { Vector v(std::vector<double>{}); }) == ErrorCode::Dimension);
    CHECK(error_code([] { Vector v({1.0, NAN}); }) == ErrorCode::Numeric);
    CHECK(error_code([] { Vector v({INFINITY}); }) == ErrorCode::Numeric);
    Vector z = Vector::zeros(4);
    CHECK(z.dim() == 4);
    CHECK(z.is_zero());
}

TEST_CASE("cosine hand values") {
    CHECK(lexroute::cosine(Vector({1, 0}), Vector({0, 1})) == 0.0);
    // (1*1 + 0*1) / (1 * sqrt 2)
    CHECK(lexroute::cosine(Vector({1, 0}), Vector({1, 1})) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(std::abs(lexroute::cosine(Vector({1, 0}), Vector({1, 1})) - 0.70711) < 1e-5);
    Vector v({0.3, -2.0, 5.5});
    CHECK(lexroute::cosine(v, v) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cosine zero-vector convention and dimension errors") {
    CHECK(lexroute::cosine(Vector::zeros(3), Vector::zeros(3)) == 0.0);
    CHECK(lexroute::cosine(Vector::zeros(3), Vector({1, 2, 3})) == 0.0);
    CHECK(error_code([] { lexroute::cosine(Vector({1, 0}), Vector({1, 0, 0})); }) == ErrorCode::Dimension);
}

TEST_CASE("normalize") {
    Vector n = lexroute::normalize(Vector({3, 4}));
    CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-15));
    Vector u({0, 1, 0});
    CHECK(lexroute::normalize(u) == u);
    CHECK(error_code([] { lexroute::normalize(Vector::zeros(2)); }) == ErrorCode::Normalization);
}

TEST_CASE("cosine properties over random vectors") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_int_distribution<int> dims(1, 32);
    for (int trial = 0; trial < 2000; ++trial) {
        const int d = dims(rng);
        std::vector<double> a(d), b(d);
        for (auto& x : a) x = nd(rng);
        for (auto& x : b) x = nd(rng);
        Vector va(a), vb(b);
        const double ab = lexroute::cosine(va, vb);
        CHECK(ab == lexroute::cosine(vb, va));
        CHECK(std::abs(ab) <= 1.0 + 1e-12);
        const double c = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
        std::vector<double> pos(a), neg(a);
        for (auto& x : pos) x *= c;
        for (auto& x : neg) x *= -c;
        CHECK(lexroute::cosine(va, Vector(pos)) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(lexroute::cosine(va, Vector(neg)) == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(lexroute::normalize(va).norm() == doctest::Approx(1.0).epsilon(1e-9));
    }
}
