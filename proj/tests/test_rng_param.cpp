#include <doctest.h>

#include <cmath>

#include "mocgvq/param_store.hpp"
#include "mocgvq/rng.hpp"
#include "mocgvq/tensor.hpp"

using namespace mocgvq;

TEST_SUITE("rng") {

TEST_CASE("identical seeds replay identical sequences") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(1234), d(1235);
    bool all_equal = true;
    for (int i = 0; i < 10; ++i) all_equal = all_equal && c.next_u64() == d.next_u64();
    CHECK_FALSE(all_equal);
}

TEST_CASE("uniform draws stay in range") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.next_below(7) < 7);
    }
}

TEST_CASE("state round-trip resumes the exact stream") {
    Rng a(42);
    for (int i = 0; i < 13; ++i) a.next_u64();
    std::uint64_t s = a.state();
    std::uint64_t expected = a.next_u64();
    Rng b(0);
    b.set_state(s);
    CHECK(b.next_u64() == expected);
}

TEST_CASE("set_state clears the Box-Muller cache") {
    // A normal draw leaves a cached second sample; after set_state the stream
    // must behave exactly like a fresh generator at that state.
    Rng a(7);
    a.next_normal();
    std::uint64_t s = a.state();
    a.set_state(s);
    Rng fresh(0);
    fresh.set_state(s);
    for (int i = 0; i < 8; ++i) CHECK(a.next_normal() == fresh.next_normal());
}

TEST_CASE("normal draws have plausible moments") {
    Rng rng(8);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = rng.next_normal();
        sum += x;
        sq += x * x;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("mix_seed separates substreams") {
    CHECK(mix_seed(42, 1) != mix_seed(42, 2));
    CHECK(mix_seed(42, 1) != mix_seed(43, 1));
    CHECK(mix_seed(42, 1, 2) != mix_seed(42, 2, 1));
    CHECK(mix_seed(42, 1) == mix_seed(42, 1));
}

} // TEST_SUITE

TEST_SUITE("param_store") {

TEST_CASE("registration and duplicate names") {
    ParamStore ps;
    ps.add("w", Tensor(2, 3, 1.0));
    CHECK(ps.has("w"));
    CHECK(ps.size() == 1);
    CHECK(ps.grad("w").rows() == 2);
    CHECK(ps.grad("w").cols() == 3);
    CHECK_THROWS_WITH_AS(ps.add("w", Tensor(1, 1)), doctest::Contains("w"), StateError);
    CHECK_THROWS_AS(ps.entry("missing"), StateError);
}

TEST_CASE("entries iterate in insertion order") {
    ParamStore ps;
    ps.add("zz", Tensor(1, 1));
    ps.add("aa", Tensor(1, 1));
    ps.add("mm", Tensor(1, 1));
    REQUIRE(ps.entries().size() == 3);
    CHECK(ps.entries()[0].name == "zz");
    CHECK(ps.entries()[1].name == "aa");
    CHECK(ps.entries()[2].name == "mm");
}

TEST_CASE("gradient accumulation and zeroing") {
    ParamStore ps;
    ps.add("w", Tensor(1, 2));
    ps.accumulate_grad("w", Tensor{{1, 2}});
    ps.accumulate_grad("w", Tensor{{10, 20}});
    CHECK(ps.grad("w") == Tensor{{11, 22}});
    ps.zero_grads();
    CHECK(ps.grad("w") == Tensor(1, 2, 0.0));
}

TEST_CASE("clip_grad_norm returns the pre-clip norm and rescales") {
    ParamStore ps;
    ps.add("a", Tensor(1, 1));
    ps.add("b", Tensor(1, 1));
    ps.grad("a").at(0, 0) = 3.0;
    ps.grad("b").at(0, 0) = 4.0;
    CHECK(ps.clip_grad_norm(10.0) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(ps.grad("a").at(0, 0) == 3.0); // below the cap: untouched

    CHECK(ps.clip_grad_norm(1.0) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(ps.grad("a").at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(ps.grad("b").at(0, 0) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("adamw hand-evaluated single step") {
    ParamStore ps;
    ps.add("w", Tensor(1, 1, 1.0));
    ps.grad("w").at(0, 0) = 1.0;
    adamw_step(ps, 1e-4, 0.0);
    // Bias correction makes both moment estimates exactly 1 on step one, so
    // the update is -lr / (1 + eps).
    const double expected = 1.0 - 1e-4 / (1.0 + 1e-8);
    CHECK(ps.value("w").at(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs((ps.value("w").at(0, 0) - 1.0) - (-9.99999e-5)) < 1e-9);
    CHECK(ps.step_count() == 1);
    CHECK(ps.grad("w").at(0, 0) == 0.0);
}

TEST_CASE("adamw decay-only step scales the value") {
    ParamStore ps;
    ps.add("w", Tensor(1, 1, 1.0));
    adamw_step(ps, 1e-4, 1e-5);
    CHECK(ps.value("w").at(0, 0) == doctest::Approx(1.0 - 1e-9).epsilon(1e-15));
}

TEST_CASE("adamw treats identical params identically") {
    ParamStore ps;
    ps.add("a", Tensor(1, 1, 0.7));
    ps.add("b", Tensor(1, 1, 0.7));
    for (int step = 0; step < 5; ++step) {
        ps.grad("a").at(0, 0) = 0.3 * (step + 1);
        ps.grad("b").at(0, 0) = 0.3 * (step + 1);
        adamw_step(ps, 1e-2, 1e-3);
        CHECK(ps.value("a").at(0, 0) == ps.value("b").at(0, 0));
    }
}

TEST_CASE("adamw rejects non-finite gradients and leaves the store untouched") {
    ParamStore ps;
    ps.add("good", Tensor(1, 1, 2.0));
    ps.add("bad", Tensor(1, 1, 3.0));
    ps.grad("good").at(0, 0) = 1.0;
    ps.grad("bad").at(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(adamw_step(ps, 1e-3, 0.0), doctest::Contains("bad"), NumericError);
    CHECK(ps.value("good").at(0, 0) == 2.0);
    CHECK(ps.value("bad").at(0, 0) == 3.0);
    CHECK(ps.step_count() == 0);
}

TEST_CASE("adamw matches a scalar reference implementation over several steps") {
    ParamStore ps;
    ps.add("w", Tensor(1, 1, 0.5));
    double v = 0.5, m1 = 0.0, m2 = 0.0;
    const double lr = 1e-2, wd = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Rng rng(31);
    for (int t = 1; t <= 20; ++t) {
        double g = rng.next_normal();
        ps.grad("w").at(0, 0) = g;
        adamw_step(ps, lr, wd);
        m1 = b1 * m1 + (1 - b1) * g;
        m2 = b2 * m2 + (1 - b2) * g * g;
        double mhat = m1 / (1 - std::pow(b1, t));
        double vhat = m2 / (1 - std::pow(b2, t));
        v -= lr * wd * v;
        v -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(ps.value("w").at(0, 0) == doctest::Approx(v).epsilon(1e-12));
    }
}

} // TEST_SUITE
