#include <doctest.h>

#include <cmath>

#include "mocgvq/diagnostics.hpp"
#include "mocgvq/losses.hpp"
#include "mocgvq/quantizer.hpp"
#include "test_support.hpp"

using namespace mocgvq;
using test::fd_max_rel_err;
using test::random_tensor;

namespace {

void set_identity(Tensor& t) {
    t.zero();
    for (int i = 0; i < std::min(t.rows(), t.cols()); ++i) t.at(i, i) = 1.0;
}

// Direct-summation reference for loss_con using plain loops, no max shift.
double con_oracle(const Tensor& h, const Tensor& z, double tau, bool exclude_self) {
    const int n = h.rows();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            denom += std::exp(cosine_sim(h.row(i), z.row(j)) / tau);
            if (!(exclude_self && j == i)) {
                denom += std::exp(cosine_sim(h.row(i), h.row(j)) / tau);
                denom += std::exp(cosine_sim(z.row(i), z.row(j)) / tau);
            }
        }
        double num = std::exp(cosine_sim(h.row(i), z.row(i)) / tau);
        total += -std::log(num / denom);
    }
    return total / n;
}

// Gram-Schmidt on a random square matrix: orthonormal rows.
Tensor random_rotation(int d, std::uint64_t seed) {
    Rng rng(seed);
    Tensor q = random_tensor(d, d, rng);
    for (int i = 0; i < d; ++i) {
        for (int k = 0; k < i; ++k) {
            double proj = dot(q.row(i), q.row(k));
            for (int j = 0; j < d; ++j) q.at(i, j) -= proj * q.at(k, j);
        }
        double nrm = norm(q.row(i));
        for (int j = 0; j < d; ++j) q.at(i, j) /= nrm;
    }
    return q;
}

double mean_pairwise_angle(const Tensor& rows) { return angular_uniformity(rows); }

} // namespace

TEST_SUITE("losses") {

TEST_CASE("init_heads registers both heads with the right shapes") {
    HeadConfig cfg;
    cfg.dim = 4;
    cfg.input_dim = 6;
    ParamStore ps;
    Rng rng(1);
    init_heads(ps, cfg, rng);
    CHECK(ps.value("dec.Wf").rows() == 4);
    CHECK(ps.value("dec.Wf").cols() == 6);
    CHECK(ps.value("dec.bf").rows() == 1);
    CHECK(ps.value("dec.bf").cols() == 6);
    CHECK(ps.value("dec.Wt").rows() == 4);
    CHECK(ps.value("dec.Wt").cols() == 4);
    CHECK(ps.value("dec.bt").cols() == 4);
}

TEST_CASE("feature loss vanishes on an identity reconstruction") {
    HeadConfig cfg;
    cfg.dim = 3;
    cfg.input_dim = 3;
    ParamStore ps;
    Rng rng(2);
    init_heads(ps, cfg, rng);
    set_identity(ps.value("dec.Wf"));
    ps.value("dec.bf").zero();

    Rng xr(3);
    Tensor x = random_tensor(4, 3, xr);
    ps.zero_grads();
    FeatLossGrads out = loss_feat(x, cfg, ps, x);
    CHECK(out.value == 0.0);
    CHECK(out.grad_zq == Tensor(4, 3, 0.0));
    CHECK(ps.grad("dec.Wf") == Tensor(3, 3, 0.0));
}

TEST_CASE("feature loss hand case and finite differences") {
    HeadConfig cfg;
    cfg.dim = 2;
    cfg.input_dim = 2;
    ParamStore ps;
    Rng rng(4);
    init_heads(ps, cfg, rng);
    set_identity(ps.value("dec.Wf"));
    ps.value("dec.bf").zero();

    Tensor zq{{1.0, 0.0}};
    Tensor x{{0.0, 0.0}};
    ps.zero_grads();
    FeatLossGrads out = loss_feat(zq, cfg, ps, x);
    CHECK(out.value == doctest::Approx(1.0).epsilon(1e-12));
    // d/dzq of ||zq||^2 / 1 = 2 zq.
    CHECK(out.grad_zq.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));

    HeadConfig rcfg;
    rcfg.dim = 3;
    rcfg.input_dim = 4;
    ParamStore rps;
    Rng rr(5);
    init_heads(rps, rcfg, rr);
    Rng dr(6);
    Tensor rzq = random_tensor(5, 3, dr);
    Tensor rx = random_tensor(5, 4, dr);
    auto f = [&]() { return loss_feat(rzq, rcfg, rps, rx).value; };
    rps.zero_grads();
    FeatLossGrads g = loss_feat(rzq, rcfg, rps, rx);
    // Snapshot: every probe call accumulates into the store again.
    Tensor gWf = rps.grad("dec.Wf"), gbf = rps.grad("dec.bf");
    CHECK(fd_max_rel_err(rzq, g.grad_zq, f, 1e-6) < 1e-4);
    CHECK(fd_max_rel_err(rps.value("dec.Wf"), gWf, f, 1e-6) < 1e-4);
    CHECK(fd_max_rel_err(rps.value("dec.bf"), gbf, f, 1e-6) < 1e-4);

    // Weight premultiplies gradients but not the reported value.
    rps.zero_grads();
    FeatLossGrads g3 = loss_feat(rzq, rcfg, rps, rx, 3.0);
    CHECK(g3.value == doctest::Approx(g.value).epsilon(1e-12));
    CHECK(g3.grad_zq.at(0, 0) == doctest::Approx(3.0 * g.grad_zq.at(0, 0)).epsilon(1e-12));
}

TEST_CASE("topology loss equals 2 ln 2 at zero logits") {
    HeadConfig cfg;
    cfg.dim = 2;
    cfg.input_dim = 2;
    ParamStore ps;
    Rng rng(7);
    init_heads(ps, cfg, rng);
    ps.value("dec.Wt").zero();
    ps.value("dec.bt").zero();

    Tensor zq{{1.0, 0.0}, {0.0, 1.0}};
    ps.zero_grads();
    TopoLossGrads out = loss_topo(zq, cfg, ps, {{0, 1}}, {{1, 0}});
    CHECK(out.value == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(loss_topo(zq, cfg, ps, {}, {{0, 1}}),
                         doctest::Contains("positive"), ArgumentError);
    // Empty negatives are allowed.
    TopoLossGrads pos_only = loss_topo(zq, cfg, ps, {{0, 1}}, {});
    CHECK(pos_only.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("topology loss saturates with zero gradient at the clamp") {
    HeadConfig cfg;
    cfg.dim = 2;
    cfg.input_dim = 2;
    ParamStore ps;
    Rng rng(8);
    init_heads(ps, cfg, rng);
    set_identity(ps.value("dec.Wt"));
    ps.value("dec.bt").zero();

    const double r = std::sqrt(30.0);
    Tensor at_clamp{{r, 0.0}, {r, 0.0}};
    ps.zero_grads();
    TopoLossGrads a = loss_topo(at_clamp, cfg, ps, {{0, 1}}, {});
    CHECK(a.value < 1e-12);
    CHECK(a.grad_zq == Tensor(2, 2, 0.0));
    CHECK(ps.grad("dec.Wt") == Tensor(2, 2, 0.0));

    Tensor beyond{{6.0, 0.0}, {6.0, 0.0}}; // raw logit 36, clamped to 30
    ps.zero_grads();
    TopoLossGrads b = loss_topo(beyond, cfg, ps, {{0, 1}}, {});
    CHECK(b.value == a.value);
    CHECK(b.grad_zq == Tensor(2, 2, 0.0));

    // Saturated negative side.
    Tensor neg{{r, 0.0}, {-r, 0.0}};
    ps.zero_grads();
    TopoLossGrads c = loss_topo(neg, cfg, ps, {{0, 1}}, {{0, 1}});
    CHECK(c.value > 30.0); // the positive pair at logit -30 dominates
}

TEST_CASE("topology loss matches finite differences") {
    HeadConfig cfg;
    cfg.dim = 3;
    cfg.input_dim = 3;
    ParamStore ps;
    Rng rng(9);
    init_heads(ps, cfg, rng);
    Rng zr(10);
    Tensor zq = random_tensor(5, 3, zr);
    const std::vector<std::pair<int, int>> pos = {{0, 1}, {1, 2}, {3, 4}};
    const std::vector<std::pair<int, int>> neg = {{0, 3}, {2, 4}};

    auto f = [&]() { return loss_topo(zq, cfg, ps, pos, neg).value; };
    ps.zero_grads();
    TopoLossGrads g = loss_topo(zq, cfg, ps, pos, neg);
    Tensor gWt = ps.grad("dec.Wt"), gbt = ps.grad("dec.bt");
    CHECK(fd_max_rel_err(zq, g.grad_zq, f, 1e-6) < 1e-4);
    CHECK(fd_max_rel_err(ps.value("dec.Wt"), gWt, f, 1e-6) < 1e-4);
    CHECK(fd_max_rel_err(ps.value("dec.bt"), gbt, f, 1e-6) < 1e-4);
}

TEST_CASE("contrastive loss equals ln 3 for a perfectly aligned single pair") {
    Tensor h{{0.6, 0.8}};
    Tensor z{{0.6, 0.8}};
    for (double tau : {0.3, 0.5, 1.0}) {
        ConLossGrads out = loss_con(h, z, tau);
        CHECK(std::abs(out.value - std::log(3.0)) < 1e-9);
    }
    CHECK_THROWS_AS(loss_con(h, z, 0.0), ArgumentError);
    CHECK_THROWS_AS(loss_con(h, z, -1.0), ArgumentError);
}

TEST_CASE("contrastive loss is scale and rotation invariant") {
    Rng rng(11);
    Tensor h = random_tensor(3, 4, rng);
    Tensor z = random_tensor(3, 4, rng);
    double base = loss_con(h, z, 0.5).value;

    Tensor h2 = scale(h, 2.7), z2 = scale(z, 0.31);
    CHECK(loss_con(h2, z2, 0.5).value == doctest::Approx(base).epsilon(1e-12));

    Tensor q = random_rotation(4, 12);
    CHECK(loss_con(matmul(h, q), matmul(z, q), 0.5).value
          == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("contrastive loss matches direct summation in both modes") {
    Rng rng(13);
    Tensor h = random_tensor(3, 5, rng);
    Tensor z = random_tensor(3, 5, rng);
    for (bool exclude : {false, true}) {
        ConLossGrads out = loss_con(h, z, 0.7, exclude);
        CHECK(std::abs(out.value - con_oracle(h, z, 0.7, exclude)) < 1e-9);
    }
}

TEST_CASE("contrastive gradients match finite differences") {
    Rng rng(14);
    Tensor h = random_tensor(4, 3, rng);
    Tensor z = random_tensor(4, 3, rng);
    for (bool exclude : {false, true}) {
        auto f = [&]() { return loss_con(h, z, 0.5, exclude).value; };
        ConLossGrads g = loss_con(h, z, 0.5, exclude);
        CHECK(fd_max_rel_err(h, g.grad_h, f, 1e-6) < 1e-4);
        CHECK(fd_max_rel_err(z, g.grad_zq, f, 1e-6) < 1e-4);
    }

    ConLossGrads w1 = loss_con(h, z, 0.5, false, 1.0);
    ConLossGrads w5 = loss_con(h, z, 0.5, false, 5.0);
    CHECK(w5.value == doctest::Approx(w1.value).epsilon(1e-12));
    CHECK(w5.grad_h.at(0, 0) == doctest::Approx(5.0 * w1.grad_h.at(0, 0)).epsilon(1e-12));
}

TEST_CASE("one contrastive step disperses both embedding sets") {
    const int n = 16, d = 8;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(1000 + seed);
        Tensor h = random_tensor(n, d, rng);
        Tensor z = random_tensor(n, d, rng);
        std::vector<double> hn(n), zn(n);
        for (int i = 0; i < n; ++i) {
            hn[i] = norm(h.row(i));
            zn[i] = norm(z.row(i));
        }
        double before_h = mean_pairwise_angle(h);
        double before_z = mean_pairwise_angle(z);

        ConLossGrads g = loss_con(h, z, 0.5);
        const double lr = 1e-2;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                h.at(i, j) -= lr * g.grad_h.at(i, j);
                z.at(i, j) -= lr * g.grad_zq.at(i, j);
            }
        // Renormalize to the original row norms so the comparison is purely angular.
        for (int i = 0; i < n; ++i) {
            double hs = hn[i] / norm(h.row(i));
            double zs = zn[i] / norm(z.row(i));
            for (int j = 0; j < d; ++j) {
                h.at(i, j) *= hs;
                z.at(i, j) *= zs;
            }
        }
        CHECK(mean_pairwise_angle(h) > before_h);
        CHECK(mean_pairwise_angle(z) > before_z);
    }
}

TEST_CASE("commitment loss value, stop-gradient, and finite differences") {
    Tensor h{{1.0, 0.0}};
    Tensor z{{0.0, 0.0}};
    ConLossGrads out = commitment_loss(h, z);
    CHECK(out.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.grad_h.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(out.grad_zq == Tensor(1, 2, 0.0));

    Rng rng(15);
    Tensor rh = random_tensor(4, 3, rng);
    Tensor rz = random_tensor(4, 3, rng);
    auto f = [&]() { return commitment_loss(rh, rz).value; };
    ConLossGrads g = commitment_loss(rh, rz, 2.0);
    CHECK(g.grad_zq == Tensor(4, 3, 0.0));
    // weight 2 doubles the gradient; halve before comparing against FD of the value.
    Tensor half = scale(g.grad_h, 0.5);
    CHECK(fd_max_rel_err(rh, half, f, 1e-6) < 1e-4);
}

TEST_CASE("load loss hits its closed forms") {
    Tensor onehot{{5.0, 0.0, 0.0}};
    LoadLossGrads zero = loss_load(onehot, {0});
    CHECK(zero.value == doctest::Approx(0.0).epsilon(1e-12));

    Tensor uniform{{1.0, 1.0}, {3.0, 3.0}};
    LoadLossGrads ln2 = loss_load(uniform, {0, 1});
    CHECK(ln2.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(loss_load(uniform, {0, 2}), doctest::Contains("label"),
                         ArgumentError);
    CHECK_THROWS_AS(loss_load(uniform, {0}), ArgumentError);
}

TEST_CASE("load loss matches a direct cross-entropy oracle") {
    Rng rng(16);
    const int n = 6, m = 4;
    Tensor scores(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) scores.at(i, j) = 0.05 + rng.next_double();
    std::vector<int> labels = {2, 0, 3, 1, 1, 2};

    double want = 0.0;
    for (int i = 0; i < n; ++i) {
        double rowsum = 0.0;
        for (int j = 0; j < m; ++j) rowsum += scores.at(i, j);
        want += -std::log(scores.at(i, labels[i]) / rowsum);
    }
    want /= n;
    LoadLossGrads out = loss_load(scores, labels);
    CHECK(std::abs(out.value - want) < 1e-9);

    auto f = [&]() { return loss_load(scores, labels).value; };
    CHECK(fd_max_rel_err(scores, out.grad_scores, f, 1e-6) < 1e-4);
}

TEST_CASE("gate trained against the load loss fits the domain routing") {
    BankConfig cfg;
    cfg.num_codebooks = 2;
    cfg.codes_per_book = 4;
    cfg.dim = 3;
    ParamStore ps;
    Rng rng(17);
    init_bank(ps, cfg, rng);

    Rng hr(18);
    Tensor h = random_tensor(4, 3, hr);
    const std::vector<int> labels = {0, 1, 0, 1};

    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 50; ++step) {
        GateResult g = gate(h, ps, cfg);
        LoadLossGrads ll = loss_load(g.scores, labels);
        CHECK(ll.value < prev);
        prev = ll.value;
        ps.zero_grads();
        gate_backward(h, g, ll.grad_scores, ps, cfg);
        for (auto& e : ps.entries()) {
            for (std::size_t i = 0; i < e.value.size(); ++i)
                e.value.data()[i] -= 1e-1 * e.grad.data()[i];
        }
    }
    CHECK(prev < 0.5); // well below the ln 2 of indifferent routing
}

TEST_CASE("classic load penalty is zero at uniform importance") {
    Tensor uniform(3, 4, 2.5);
    LoadLossGrads out = classic_load_loss(uniform);
    CHECK(out.value == 0.0);

    Rng rng(19);
    const int n = 5, m = 3;
    Tensor scores(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) scores.at(i, j) = 0.1 + rng.next_double();
    auto f = [&]() { return classic_load_loss(scores).value; };
    LoadLossGrads g = classic_load_loss(scores);
    CHECK(g.value > 0.0);
    CHECK(fd_max_rel_err(scores, g.grad_scores, f, 1e-6) < 1e-4);
}

TEST_CASE("total loss combines weighted parts and rejects non-finite terms") {
    LossParts parts{1.0, 1.0, 1.0, 1.0};
    LossWeights w;
    w.feat = 100.0;
    w.topo = 0.01;
    w.con = 0.001;
    w.load = 0.01;
    CHECK(std::abs(total_loss(parts, w) - 100.021) < 1e-9);

    LossWeights zero{0.0, 0.0, 0.0, 0.0};
    CHECK(total_loss(parts, zero) == 0.0);

    LossParts bad = parts;
    bad.con = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(total_loss(bad, w), doctest::Contains("con"), NumericError);
}

} // TEST_SUITE
