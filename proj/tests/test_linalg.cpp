#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "atome/error.hpp"
#include "atome/linalg.hpp"
#include "atome/matrix_io.hpp"
#include "atome/rng.hpp"
#include "oracles.hpp"

using namespace atome;

TEST_CASE("matmul examples") {
    const Matrix id{{1, 0}, {0, 1}};
    const Matrix m{{1, 2}, {3, 4}};
    CHECK(matmul(id, m) == m);
    CHECK(matmul(Matrix{{1, 0}}, Matrix{{2}, {5}}) == Matrix{{2}});
    CHECK_THROWS_AS(matmul(m, Matrix(3, 1)), InputError);
}

TEST_CASE("matmul agrees with the triple-loop oracle") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix a = oracle::random_matrix(3, 4, gen);
        const Matrix b = oracle::random_matrix(4, 2, gen);
        const Matrix c = matmul(a, b);
        const auto ref = oracle::naive_matmul(a, b);
        for (std::size_t i = 0; i < c.size(); ++i) {
            // One rounding to float from an essentially exact sum.
            CHECK(c.data()[i] == static_cast<float>(ref[i]));
        }
    }
}

TEST_CASE("matmul is associative within 1e-4 relative") {
    std::mt19937_64 gen(12);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix a = oracle::random_matrix(3, 5, gen);
        const Matrix b = oracle::random_matrix(5, 4, gen);
        const Matrix c = oracle::random_matrix(4, 2, gen);
        const Matrix l = matmul(matmul(a, b), c);
        const Matrix r = matmul(a, matmul(b, c));
        double num = 0, den = 0;
        for (std::size_t i = 0; i < l.size(); ++i) {
            num += std::pow(l.data()[i] - r.data()[i], 2);
            den += std::pow(l.data()[i], 2);
        }
        CHECK(std::sqrt(num) <= 1e-4 * std::max(1e-12, std::sqrt(den)));
    }
}

TEST_CASE("affine adds the bias to every row") {
    const Matrix x{{1, 2}, {0, -1}};
    const Matrix w{{1, 0, 2}, {0, 1, 1}};
    const Vector b{0.5f, -0.5f, 0.0f};
    CHECK(affine(x, w, b) == Matrix{{1.5f, 1.5f, 4.0f}, {0.5f, -1.5f, -1.0f}});
    const Vector row = affine(x.row(0), w, b);
    CHECK(row == Vector{1.5f, 1.5f, 4.0f});
    CHECK_THROWS_AS(affine(x, w, Vector{1.0f}), InputError);
}

TEST_CASE("softmax examples") {
    const Matrix s = softmax_rows(Matrix{{0, 0}, {1000, 0}, {1, 2}});
    CHECK(s(0, 0) == doctest::Approx(0.5));
    CHECK(s(0, 1) == doctest::Approx(0.5));
    CHECK(std::isfinite(s(1, 0)));
    CHECK(s(1, 0) == doctest::Approx(1.0));
    CHECK(s(1, 1) == doctest::Approx(0.0));

    const Matrix t = softmax_rows(Matrix{{1, 2, 3}});
    const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    for (int j = 0; j < 3; ++j) {
        CHECK(std::abs(t(0, j) - static_cast<double>(std::exp(static_cast<long double>(j + 1)) / z)) <= 1e-6);
    }
}

TEST_CASE("softmax rows sum to one for extreme inputs") {
    atome::Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const double scale = std::pow(10.0, rng.uniform(-3.0, 30.0));
        Matrix m(3, 7);
        for (auto& x : m.data()) x = static_cast<float>(rng.uniform(-1.0, 1.0) * scale);
        const Matrix s = softmax_rows(m);
        for (std::size_t r = 0; r < 3; ++r) {
            double sum = 0;
            for (float v : s.row(r)) sum += v;
            CHECK(std::abs(sum - 1.0) <= 1e-5);
        }
    }
    Vector row{-3e38f, 3e38f, 0.0f};
    softmax_inplace(row);
    CHECK(row[1] == doctest::Approx(1.0));
}

TEST_CASE("layer_norm examples") {
    const Vector ones(4, 1.0f), zeros(4, 0.0f);
    for (float v : layer_norm(Vector{3, 3, 3, 3}, ones, zeros, 1e-5f)) CHECK(v == 0.0f);

    const Vector y = layer_norm(Vector{1, -1}, Vector{1, 1}, Vector{0, 0}, 1e-12f);
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-6));

    std::mt19937_64 gen(3);
    const Matrix x = oracle::random_matrix(1, 33, gen, -5.0f, 7.0f);
    const auto g = oracle::random_matrix(1, 33, gen, 0.5f, 1.5f);
    const auto b = oracle::random_matrix(1, 33, gen);
    const Vector out = layer_norm(x.row(0), g.row(0), b.row(0), 1e-5f);
    long double mean = 0, var = 0;
    for (float v : x.row(0)) mean += v;
    mean /= 33;
    for (float v : x.row(0)) var += (v - mean) * (v - mean);
    var /= 33;
    for (std::size_t i = 0; i < 33; ++i) {
        const long double ref = (x(0, i) - mean) / std::sqrt(var + 1e-5L) * g(0, i) + b(0, i);
        CHECK(std::abs(out[i] - static_cast<double>(ref)) <= 1e-5);
    }
    CHECK_THROWS_AS(layer_norm(Vector{1, 2}, Vector{1}, Vector{0, 0}, 1e-5f), InputError);
}

TEST_CASE("cosine examples and invariants") {
    const Vector u{0.3f, -2.0f, 1.0f};
    CHECK(cosine(u, u) == doctest::Approx(1.0));
    CHECK(cosine(Vector{1, 0}, Vector{0, 1}) == 0.0);
    CHECK(std::abs(cosine(Vector{1, 1}, Vector{1, 0}) - 1.0 / std::sqrt(2.0)) <= 1e-4);
    CHECK(cosine(Vector{0, 0}, Vector{1, 0}) == 0.0);

    atome::Rng rng(9);
    for (int trial = 0; trial < 500; ++trial) {
        Vector a(16), b(16);
        for (auto& x : a) x = static_cast<float>(rng.normal());
        for (auto& x : b) x = static_cast<float>(rng.normal());
        const double ab = cosine(a, b);
        CHECK(std::bit_cast<std::uint64_t>(ab) == std::bit_cast<std::uint64_t>(cosine(b, a)));
        CHECK(std::abs(ab - oracle::cosine(a, b)) <= 1e-9);
        const float alpha = static_cast<float>(rng.uniform(0.01, 100.0));
        Vector sa = a;
        for (auto& x : sa) x *= alpha;
        CHECK(std::abs(cosine(sa, b) - ab) <= 1e-6);
        CHECK(ab <= 1.0);
        CHECK(ab >= -1.0);
    }
}

TEST_CASE("ATMX round-trip is bit-exact") {
    std::mt19937_64 gen(4);
    Matrix m = oracle::random_matrix(7, 5, gen);
    m(0, 0) = -0.0f;
    m(1, 1) = std::numeric_limits<float>::denorm_min();
    std::stringstream ss;
    write_atmx(ss, m);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 16 + 7 * 5 * 4);
    CHECK(bytes.substr(0, 4) == "ATMX");
    CHECK(static_cast<unsigned char>(bytes[4]) == 7);  // little-endian rows
    CHECK(static_cast<unsigned char>(bytes[8]) == 5);
    float first;
    std::memcpy(&first, bytes.data() + 16, 4);
    CHECK(std::bit_cast<std::uint32_t>(first) == std::bit_cast<std::uint32_t>(m(0, 0)));
    CHECK(read_atmx(ss) == m);
}

namespace {

std::string header(const char* magic, std::uint32_t rows, std::uint32_t cols, std::uint32_t reserved) {
    std::string s(magic, 4);
    for (std::uint32_t v : {rows, cols, reserved})
        for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>(v >> (8 * b) & 0xff));
    return s;
}

std::string format_error_of(const std::string& bytes) {
    std::stringstream ss(bytes);
    try {
        read_atmx(ss);
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("malformed ATMX input names the offending field") {
    CHECK(format_error_of("ATM").find("header") != std::string::npos);
    CHECK(format_error_of(header("ATMY", 1, 1, 0) + std::string(4, '\0')).find("magic") != std::string::npos);
    CHECK(format_error_of(header("ATMX", 1, 1, 7) + std::string(4, '\0')).find("reserved") != std::string::npos);
    CHECK(format_error_of(header("ATMX", 2, 2, 0) + std::string(4, '\0')).find("payload") != std::string::npos);
    std::string nan_payload(4, '\0');
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan_payload.data(), &nan, 4);
    CHECK(format_error_of(header("ATMX", 1, 1, 0) + nan_payload).find("non-finite") != std::string::npos);
    CHECK(format_error_of(header("ATMX", 0, 3, 0)).empty());
}

TEST_CASE("key=value files") {
    std::stringstream ss("# comment\n\n a = 1 \nb=two\n");
    const KeyValues kv = parse_key_values(ss, "mem");
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two");
    std::stringstream bad("novalue\n");
    CHECK_THROWS_AS(parse_key_values(bad, "mem"), FormatError);

    const auto path = std::filesystem::temp_directory_path() / "atome_kv_test.conf";
    write_key_values(path, kv);
    CHECK(read_key_values(path) == kv);
    std::filesystem::remove(path);
}

TEST_CASE("rng reproduces and stays in range") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 1000; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs |= x != c.next_u64();
        const double u = a.uniform();
        b.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(a.below(7) < 7);
        b.below(7);
    }
    CHECK(differs);
    Rng n(1);
    double sum = 0, sq = 0;
    const int count = 20000;
    for (int i = 0; i < count; ++i) {
        const double v = n.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / count) < 0.03);
    CHECK(std::abs(sq / count - 1.0) < 0.05);
}
