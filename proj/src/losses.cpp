#include "mocgvq/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mocgvq/errors.hpp"

namespace mocgvq {

namespace {

constexpr double kLogitClamp = 30.0;
constexpr double kLogEps = 1e-12;

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

Tensor gaussian_matrix(int rows, int cols, double stddev, Rng& rng) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = stddev * rng.next_normal();
    return t;
}

/// y = x @ W + b with b broadcast over rows.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < y.rows(); ++r) {
        for (int c = 0; c < y.cols(); ++c) y.at(r, c) += b.at(0, c);
    }
    return y;
}

Tensor column_sums(const Tensor& g) {
    Tensor s(1, g.cols());
    for (int r = 0; r < g.rows(); ++r) {
        for (int c = 0; c < g.cols(); ++c) s.at(0, c) += g.at(r, c);
    }
    return s;
}

} // namespace

void init_heads(ParamStore& params, const HeadConfig& cfg, Rng& rng) {
    if (cfg.dim < 1 || cfg.input_dim < 1) throw ArgumentError("head config requires positive dims");
    const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    params.add("dec.Wf", gaussian_matrix(cfg.dim, cfg.input_dim, sigma, rng));
    params.add("dec.bf", Tensor(1, cfg.input_dim));
    params.add("dec.Wt", gaussian_matrix(cfg.dim, cfg.dim, sigma, rng));
    params.add("dec.bt", Tensor(1, cfg.dim));
}

double total_loss(const LossParts& parts, const LossWeights& w) {
    if (!std::isfinite(parts.feat)) throw NumericError("total_loss: non-finite feat part");
    if (!std::isfinite(parts.topo)) throw NumericError("total_loss: non-finite topo part");
    if (!std::isfinite(parts.con)) throw NumericError("total_loss: non-finite con part");
    if (!std::isfinite(parts.load)) throw NumericError("total_loss: non-finite load part");
    return w.feat * parts.feat + w.topo * parts.topo + w.con * parts.con + w.load * parts.load;
}

FeatLossGrads loss_feat(const Tensor& zq, const HeadConfig& cfg, ParamStore& params,
                        const Tensor& x, double weight) {
    const int n = zq.rows();
    if (n == 0) throw ArgumentError("loss_feat: empty batch");
    if (zq.cols() != cfg.dim || x.rows() != n || x.cols() != cfg.input_dim) {
        throw ShapeError("loss_feat: zq " + zq.shape_str() + ", x " + x.shape_str());
    }
    const Tensor& wf = params.value("dec.Wf");
    Tensor zf = affine(zq, wf, params.value("dec.bf"));

    double value = 0.0;
    Tensor grad_zf(n, cfg.input_dim);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < cfg.input_dim; ++c) {
            double r = zf.at(i, c) - x.at(i, c);
            value += r * r;
            grad_zf.at(i, c) = weight * 2.0 * r / n;
        }
    }
    value /= n;

    params.accumulate_grad("dec.Wf", matmul_backward_b(zq, grad_zf));
    params.accumulate_grad("dec.bf", column_sums(grad_zf));
    FeatLossGrads out;
    out.value = value;
    out.grad_zq = matmul_backward_a(grad_zf, wf);
    return out;
}

TopoLossGrads loss_topo(const Tensor& zq, const HeadConfig& cfg, ParamStore& params,
                        const std::vector<std::pair<int, int>>& pos_edges,
                        const std::vector<std::pair<int, int>>& neg_edges,
                        double weight) {
    if (pos_edges.empty()) throw ArgumentError("loss_topo: empty positive edge set");
    if (zq.cols() != cfg.dim) {
        throw ShapeError("loss_topo: zq " + zq.shape_str() + " vs head dim " + std::to_string(cfg.dim));
    }
    const Tensor& wt = params.value("dec.Wt");
    Tensor zt = affine(zq, wt, params.value("dec.bt"));

    double value = 0.0;
    Tensor grad_zt(zt.rows(), zt.cols());
    auto process = [&](const std::vector<std::pair<int, int>>& edges, bool positive) {
        if (edges.empty()) return;
        const double inv = 1.0 / static_cast<double>(edges.size());
        double sum = 0.0;
        for (auto [i, j] : edges) {
            double raw = dot(zt.row(i), zt.row(j));
            double logit = std::clamp(raw, -kLogitClamp, kLogitClamp);
            // -log sigma(l) = softplus(-l); -log(1 - sigma(l)) = softplus(l).
            sum += positive ? softplus(-logit) : softplus(logit);
            double dlogit = positive ? logistic(logit) - 1.0 : logistic(logit);
            // The clamp is part of the function: saturated logits carry no gradient.
            if (raw <= -kLogitClamp || raw >= kLogitClamp) dlogit = 0.0;
            double c = weight * inv * dlogit;
            auto zi = zt.row(i);
            auto zj = zt.row(j);
            auto gi = grad_zt.row(i);
            auto gj = grad_zt.row(j);
            for (int d = 0; d < cfg.dim; ++d) {
                gi[static_cast<std::size_t>(d)] += c * zj[static_cast<std::size_t>(d)];
                gj[static_cast<std::size_t>(d)] += c * zi[static_cast<std::size_t>(d)];
            }
        }
        value += sum * inv;
    };
    process(pos_edges, true);
    process(neg_edges, false);

    params.accumulate_grad("dec.Wt", matmul_backward_b(zq, grad_zt));
    params.accumulate_grad("dec.bt", column_sums(grad_zt));
    TopoLossGrads out;
    out.value = value;
    out.grad_zq = matmul_backward_a(grad_zt, wt);
    return out;
}

ConLossGrads loss_con(const Tensor& h, const Tensor& zq, double tau,
                      bool exclude_self_sim, double weight) {
    if (tau <= 0.0) throw ArgumentError("loss_con: tau must be positive");
    const int n = h.rows();
    const int d = h.cols();
    if (n < 1) throw ArgumentError("loss_con: empty batch");
    if (!zq.same_shape(h)) {
        throw ShapeError("loss_con: h " + h.shape_str() + " vs zq " + zq.shape_str());
    }

    constexpr double kNormGuard = 1e-12;
    std::vector<double> nh(static_cast<std::size_t>(n)), nz(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        nh[static_cast<std::size_t>(i)] = std::max(norm(h.row(i)), kNormGuard);
        nz[static_cast<std::size_t>(i)] = std::max(norm(zq.row(i)), kNormGuard);
    }
    auto cos_clamped = [](double dot_v, double na, double nb) {
        return std::clamp(dot_v / (na * nb), -1.0, 1.0);
    };

    // Similarity matrices: A = S(h_i, z_j), B = S(h_i, h_j), C = S(z_i, z_j).
    Tensor a(n, n), b(n, n), c(n, n);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            a.at(i, j) = cos_clamped(dot(h.row(i), zq.row(j)), nh[static_cast<std::size_t>(i)], nz[static_cast<std::size_t>(j)]);
            b.at(i, j) = cos_clamped(dot(h.row(i), h.row(j)), nh[static_cast<std::size_t>(i)], nh[static_cast<std::size_t>(j)]);
            c.at(i, j) = cos_clamped(dot(zq.row(i), zq.row(j)), nz[static_cast<std::size_t>(i)], nz[static_cast<std::size_t>(j)]);
        }
    }

    // Per anchor: log denominator via max-shifted log-sum-exp, then softmax
    // coefficients for the backward pass.
    std::vector<double> logden(static_cast<std::size_t>(n));
    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            mx = std::max(mx, a.at(i, j) / tau);
            if (!(exclude_self_sim && j == i)) {
                mx = std::max(mx, b.at(i, j) / tau);
                mx = std::max(mx, c.at(i, j) / tau);
            }
        }
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            s += std::exp(a.at(i, j) / tau - mx);
            if (!(exclude_self_sim && j == i)) {
                s += std::exp(b.at(i, j) / tau - mx);
                s += std::exp(c.at(i, j) / tau - mx);
            }
        }
        logden[static_cast<std::size_t>(i)] = mx + std::log(s);
        value += logden[static_cast<std::size_t>(i)] - a.at(i, i) / tau;
    }
    value /= n;

    // Coefficients dL/dS for each similarity entry.
    const double base = weight / (static_cast<double>(n) * tau);
    Tensor ca(n, n), cb(n, n), cc(n, n);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        double ld = logden[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) {
            ca.at(i, j) = base * std::exp(a.at(i, j) / tau - ld);
            if (!(exclude_self_sim && j == i)) {
                cb.at(i, j) = base * std::exp(b.at(i, j) / tau - ld);
                cc.at(i, j) = base * std::exp(c.at(i, j) / tau - ld);
            }
        }
        ca.at(i, i) -= base;
    }

    ConLossGrads out;
    out.grad_h = Tensor(n, d);
    out.grad_zq = Tensor(n, d);
    // Receiver-major accumulation: row r only written by its own iteration.
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
        auto gh = out.grad_h.row(r);
        auto hr = h.row(r);
        double inh = 1.0 / nh[static_cast<std::size_t>(r)];
        for (int j = 0; j < n; ++j) {
            // A-terms where r is the anchor: S(h_r, z_j).
            double w1 = ca.at(r, j);
            auto zj = zq.row(j);
            double s1 = inh / nz[static_cast<std::size_t>(j)];
            double t1 = a.at(r, j) * inh * inh;
            // B-terms touching h_r from either side; cosine is symmetric.
            double w2 = cb.at(r, j) + cb.at(j, r);
            auto hj = h.row(j);
            double s2 = inh / nh[static_cast<std::size_t>(j)];
            double t2 = b.at(r, j) * inh * inh;
            for (int k = 0; k < d; ++k) {
                gh[static_cast<std::size_t>(k)] +=
                    w1 * (zj[static_cast<std::size_t>(k)] * s1 - t1 * hr[static_cast<std::size_t>(k)]) +
                    w2 * (hj[static_cast<std::size_t>(k)] * s2 - t2 * hr[static_cast<std::size_t>(k)]);
            }
        }
    }
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
        auto gz = out.grad_zq.row(r);
        auto zr = zq.row(r);
        double inz = 1.0 / nz[static_cast<std::size_t>(r)];
        for (int i = 0; i < n; ++i) {
            // A-terms where r is the candidate: S(h_i, z_r).
            double w1 = ca.at(i, r);
            auto hi = h.row(i);
            double s1 = inz / nh[static_cast<std::size_t>(i)];
            double t1 = a.at(i, r) * inz * inz;
            // C-terms touching z_r from either side.
            double w2 = cc.at(r, i) + cc.at(i, r);
            auto zi = zq.row(i);
            double s2 = inz / nz[static_cast<std::size_t>(i)];
            double t2 = c.at(r, i) * inz * inz;
            for (int k = 0; k < d; ++k) {
                gz[static_cast<std::size_t>(k)] +=
                    w1 * (hi[static_cast<std::size_t>(k)] * s1 - t1 * zr[static_cast<std::size_t>(k)]) +
                    w2 * (zi[static_cast<std::size_t>(k)] * s2 - t2 * zr[static_cast<std::size_t>(k)]);
            }
        }
    }
    out.value = value;
    return out;
}

ConLossGrads commitment_loss(const Tensor& h, const Tensor& zq, double weight) {
    const int n = h.rows();
    if (n == 0) throw ArgumentError("commitment_loss: empty batch");
    if (!zq.same_shape(h)) {
        throw ShapeError("commitment_loss: h " + h.shape_str() + " vs zq " + zq.shape_str());
    }
    ConLossGrads out;
    out.grad_h = Tensor(n, h.cols());
    out.grad_zq = Tensor(n, h.cols()); // stop-gradient on zq
    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < h.cols(); ++k) {
            double r = h.at(i, k) - zq.at(i, k);
            value += r * r;
            out.grad_h.at(i, k) = weight * 2.0 * r / n;
        }
    }
    out.value = value / n;
    return out;
}

LoadLossGrads loss_load(const Tensor& scores, const std::vector<int>& domain_labels,
                        double weight) {
    const int n = scores.rows();
    const int m = scores.cols();
    if (n == 0) throw ArgumentError("loss_load: empty batch");
    if (static_cast<int>(domain_labels.size()) != n) {
        throw ArgumentError("loss_load: " + std::to_string(domain_labels.size()) +
                            " labels for " + std::to_string(n) + " rows");
    }
    for (int i = 0; i < n; ++i) {
        if (domain_labels[static_cast<std::size_t>(i)] < 0 || domain_labels[static_cast<std::size_t>(i)] >= m) {
            throw ArgumentError("loss_load: label " + std::to_string(domain_labels[static_cast<std::size_t>(i)]) +
                                " outside [0, " + std::to_string(m) + ")");
        }
    }

    LoadLossGrads out;
    out.grad_scores = Tensor(n, m);
    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        double rowsum = 0.0;
        for (int j = 0; j < m; ++j) rowsum += scores.at(i, j);
        const int y = domain_labels[static_cast<std::size_t>(i)];
        double yhat = std::max(scores.at(i, y) / rowsum, kLogEps);
        value -= std::log(yhat);
        const double c = weight / (static_cast<double>(n) * rowsum);
        for (int j = 0; j < m; ++j) {
            // d(-log yhat_y)/ds_j = 1/rowsum for j != y, -(1 - yhat)/(yhat rowsum) for j = y.
            out.grad_scores.at(i, j) = j == y ? -c * (1.0 - yhat) / yhat : c;
        }
    }
    out.value = value / n;
    return out;
}

LoadLossGrads classic_load_loss(const Tensor& scores, double weight) {
    const int n = scores.rows();
    const int m = scores.cols();
    if (n == 0) throw ArgumentError("classic_load_loss: empty batch");

    // Importance of codebook j = sum_i of the row-normalized score. Rows sum
    // to one, so mean importance is exactly n/M and only the variance moves.
    Tensor yhat(n, m);
    std::vector<double> rowsum(static_cast<std::size_t>(n));
    std::vector<double> importance(static_cast<std::size_t>(m));
    for (int i = 0; i < n; ++i) {
        double rs = 0.0;
        for (int j = 0; j < m; ++j) rs += scores.at(i, j);
        rowsum[static_cast<std::size_t>(i)] = rs;
        for (int j = 0; j < m; ++j) {
            double v = scores.at(i, j) / rs;
            yhat.at(i, j) = v;
            importance[static_cast<std::size_t>(j)] += v;
        }
    }
    const double mean = static_cast<double>(n) / m;
    double var = 0.0;
    for (int j = 0; j < m; ++j) {
        double dv = importance[static_cast<std::size_t>(j)] - mean;
        var += dv * dv;
    }
    var /= m;

    std::vector<double> dimp(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        dimp[static_cast<std::size_t>(j)] =
            2.0 * (importance[static_cast<std::size_t>(j)] - mean) / (m * mean * mean);
    }
    LoadLossGrads out;
    out.value = var / (mean * mean);
    out.grad_scores = Tensor(n, m);
    for (int i = 0; i < n; ++i) {
        double mix = 0.0;
        for (int j = 0; j < m; ++j) mix += dimp[static_cast<std::size_t>(j)] * yhat.at(i, j);
        for (int j = 0; j < m; ++j) {
            out.grad_scores.at(i, j) =
                weight * (dimp[static_cast<std::size_t>(j)] - mix) / rowsum[static_cast<std::size_t>(i)];
        }
    }
    return out;
}

} // namespace mocgvq
