#include <doctest.h>

#include <cmath>
#include <vector>

#include "mocgvq/tensor.hpp"
#include "test_support.hpp"

using namespace mocgvq;
using test::random_tensor;
using test::rel_err;

namespace {

// Independent triple-loop product, written here so the library's serial path
// is itself checked against something outside the library.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    }
    return out;
}

} // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and projector cases") {
    Tensor id{{1, 0}, {0, 1}};
    Tensor m{{1, 2}, {3, 4}};
    CHECK(matmul(id, m) == m);

    Tensor proj{{1, 0}, {0, 0}};
    Tensor v{{5}, {7}};
    Tensor out = matmul(proj, v);
    CHECK(out.at(0, 0) == 5.0);
    CHECK(out.at(1, 0) == 0.0);
}

TEST_CASE("matmul matches the naive oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 1 + static_cast<int>(rng.next_below(6));
        int k = 1 + static_cast<int>(rng.next_below(6));
        int m = 1 + static_cast<int>(rng.next_below(6));
        Tensor a = random_tensor(n, k, rng);
        Tensor b = random_tensor(k, m, rng);
        Tensor got = matmul(a, b);
        Tensor serial_got = serial::matmul(a, b);
        Tensor want = naive_matmul(a, b);
        REQUIRE(got.rows() == want.rows());
        REQUIRE(got.cols() == want.cols());
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                CHECK(std::abs(got.at(i, j) - want.at(i, j)) < 1e-12);
                CHECK(serial_got.at(i, j) == got.at(i, j));
            }
        }
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a(2, 3);
    Tensor b(4, 2);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("4x2"), ShapeError);
}

TEST_CASE("matmul backward passes finite differences") {
    Rng rng(7);
    Tensor a = random_tensor(3, 4, rng);
    Tensor b = random_tensor(4, 2, rng);
    Tensor coef = random_tensor(3, 2, rng);
    auto scalar = [&]() {
        Tensor y = matmul(a, b);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += coef.data()[i] * y.data()[i];
        return s;
    };
    Tensor ga = matmul_backward_a(coef, b);
    Tensor gb = matmul_backward_b(a, coef);
    CHECK(test::fd_max_rel_err(a, ga, scalar) < 1e-6);
    CHECK(test::fd_max_rel_err(b, gb, scalar) < 1e-6);
}

TEST_CASE("transpose") {
    Tensor m{{1, 2, 3}, {4, 5, 6}};
    Tensor t = transpose(m);
    REQUIRE(t.rows() == 3);
    REQUIRE(t.cols() == 2);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) CHECK(t.at(j, i) == m.at(i, j));
    }
}

TEST_CASE("relu forward cases") {
    Tensor x{{-1, 0, 2}};
    Tensor y = relu(x);
    CHECK(y.at(0, 0) == 0.0);
    CHECK(y.at(0, 1) == 0.0);
    CHECK(y.at(0, 2) == 2.0);

    Tensor neg{{-3, -1}, {-2, -0.5}};
    Tensor yneg = relu(neg);
    for (std::size_t i = 0; i < yneg.size(); ++i) CHECK(yneg.data()[i] == 0.0);
    Tensor up(2, 2, 1.0);
    Tensor gneg = relu_backward(neg, up);
    for (std::size_t i = 0; i < gneg.size(); ++i) CHECK(gneg.data()[i] == 0.0);
}

TEST_CASE("relu subgradient at zero is zero") {
    Tensor x{{0.0}};
    Tensor up{{3.0}};
    CHECK(relu_backward(x, up).at(0, 0) == 0.0);
}

TEST_CASE("relu gradient matches finite differences away from kinks") {
    Rng rng(21);
    Tensor x = random_tensor(4, 5, rng);
    // Push every entry away from the kink so central differences are clean.
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x.data()[i]) < 1e-3) x.data()[i] += 0.5;
    }
    Tensor coef = random_tensor(4, 5, rng);
    auto scalar = [&]() {
        Tensor y = relu(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += coef.data()[i] * y.data()[i];
        return s;
    };
    Tensor g = relu_backward(x, coef);
    CHECK(test::fd_max_rel_err(x, g, scalar) < 1e-6);
}

TEST_CASE("elementwise arithmetic") {
    Tensor a{{1, 2}, {3, 4}};
    Tensor b{{10, 20}, {30, 40}};
    CHECK(add(a, b) == Tensor{{11, 22}, {33, 44}});
    CHECK(sub(b, a) == Tensor{{9, 18}, {27, 36}});
    CHECK(scale(a, 2.0) == Tensor{{2, 4}, {6, 8}});
    CHECK(hadamard(a, b) == Tensor{{10, 40}, {90, 160}});
    Tensor acc = a;
    add_in_place(acc, b);
    CHECK(acc == add(a, b));
    CHECK_THROWS_AS(add(a, Tensor(1, 2)), ShapeError);
}

TEST_CASE("dot and norm") {
    std::vector<double> a{1, 2, 3};
    std::vector<double> b{4, 5, 6};
    CHECK(dot(a, b) == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(norm(a) == doctest::Approx(std::sqrt(14.0)).epsilon(1e-12));
}

TEST_CASE("cosine similarity cases") {
    std::vector<double> e1{1, 0};
    std::vector<double> e2{0, 1};
    CHECK(cosine_sim(e1, e1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_sim(e1, e2) == doctest::Approx(0.0).epsilon(1e-12));
    std::vector<double> a{1, 2, 3};
    std::vector<double> b{4, 5, 6};
    CHECK(cosine_sim(a, b) == doctest::Approx(0.9746318).epsilon(1e-6));
    std::vector<double> shorter{1.0};
    CHECK_THROWS_AS(cosine_sim(a, shorter), ShapeError);
}

TEST_CASE("cosine similarity stays clamped to [-1, 1]") {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        Tensor v = random_tensor(2, 6, rng, 1e-3);
        double s = cosine_sim(v.row(0), v.row(1));
        CHECK(s <= 1.0);
        CHECK(s >= -1.0);
    }
    // Parallel vectors of very different magnitude must not exceed 1.
    std::vector<double> a{1e-8, 2e-8};
    std::vector<double> b{1e8, 2e8};
    CHECK(cosine_sim(a, b) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cosine similarity gradient matches finite differences") {
    Rng rng(17);
    for (int t = 0; t < 10; ++t) {
        Tensor a = random_tensor(1, 5, rng);
        Tensor b = random_tensor(1, 5, rng);
        std::vector<double> ga(5), gb(5);
        cosine_sim_grad(a.row(0), b.row(0), ga, gb);
        auto f = [&]() { return cosine_sim(a.row(0), b.row(0)); };
        for (int c = 0; c < 5; ++c) {
            CHECK(rel_err(ga[static_cast<std::size_t>(c)], test::fd_entry(a, 0, c, f)) < 1e-4);
            CHECK(rel_err(gb[static_cast<std::size_t>(c)], test::fd_entry(b, 0, c, f)) < 1e-4);
        }
    }
}

TEST_CASE("finiteness checks") {
    Tensor ok{{1, 2}};
    CHECK(all_finite(ok));
    Tensor bad{{1, 2}};
    bad.at(0, 1) = std::nan("");
    CHECK_FALSE(all_finite(bad));
    CHECK_THROWS_WITH_AS(require_finite(bad, "probe"), doctest::Contains("probe"), NumericError);
    CHECK_NOTHROW(require_finite(ok, "probe"));
}

TEST_CASE("determinism of kernels") {
    Rng rng(99);
    Tensor a = random_tensor(7, 9, rng);
    Tensor b = random_tensor(9, 5, rng);
    Tensor first = matmul(a, b);
    Tensor second = matmul(a, b);
    CHECK(first == second);
}

} // TEST_SUITE
