#include "mocgvq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mocgvq/errors.hpp"

namespace mocgvq {

namespace {

double softplus(double x) {
    // Stable on both tails.
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor gaussian_matrix(int rows, int cols, double stddev, Rng& rng) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = stddev * rng.next_normal();
    return t;
}

void check_bank(const BankConfig& cfg) {
    if (cfg.num_codebooks < 1 || cfg.codes_per_book < 1 || cfg.dim < 1) {
        throw ArgumentError("bank config requires positive M, K, d");
    }
}

} // namespace

std::string bank_gate_param_name(int codebook, const std::string& leaf) {
    return "bank.gate" + std::to_string(codebook) + "." + leaf;
}

void init_bank(ParamStore& params, const BankConfig& cfg, Rng& rng) {
    check_bank(cfg);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    params.add("bank.codes", gaussian_matrix(cfg.total_codes(), cfg.dim, sigma, rng));
    for (int i = 0; i < cfg.num_codebooks; ++i) {
        params.add(bank_gate_param_name(i, "Wh"), gaussian_matrix(cfg.dim, cfg.dim, sigma, rng));
        params.add(bank_gate_param_name(i, "bh"), Tensor(1, cfg.dim));
        params.add(bank_gate_param_name(i, "wo"), gaussian_matrix(cfg.dim, 1, sigma, rng));
        params.add(bank_gate_param_name(i, "bo"), Tensor(1, 1));
    }
}

int vq_lookup(std::span<const double> z, const Tensor& codebook) {
    if (codebook.rows() == 0) throw StateError("vq_lookup: empty codebook");
    if (static_cast<int>(z.size()) != codebook.cols()) {
        throw ShapeError("vq_lookup: query dim " + std::to_string(z.size()) +
                         " vs codebook dim " + std::to_string(codebook.cols()));
    }
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int i = 0; i < codebook.rows(); ++i) {
        auto code = codebook.row(i);
        double d = 0.0;
        for (int j = 0; j < codebook.cols(); ++j) {
            double diff = z[static_cast<std::size_t>(j)] - code[static_cast<std::size_t>(j)];
            d += diff * diff;
        }
        // Strict comparison keeps the lowest index on ties.
        if (d < best_dist) {
            best_dist = d;
            best = i;
        }
    }
    return best;
}

namespace {

/// Nearest code within codebook m of the flat (M*K) x d code matrix.
int lookup_in_book(std::span<const double> z, const Tensor& codes, int book, int codes_per_book) {
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    const int base = book * codes_per_book;
    for (int i = 0; i < codes_per_book; ++i) {
        auto code = codes.row(base + i);
        double d = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) {
            double diff = z[j] - code[j];
            d += diff * diff;
        }
        if (d < best_dist) {
            best_dist = d;
            best = i;
        }
    }
    return best;
}

} // namespace

GateResult gate(const Tensor& h, const ParamStore& params, const BankConfig& cfg) {
    check_bank(cfg);
    if (h.cols() != cfg.dim) {
        throw ShapeError("gate: input dim " + std::to_string(h.cols()) + " vs bank dim " +
                         std::to_string(cfg.dim));
    }
    GateResult out;
    out.scores = Tensor(h.rows(), cfg.num_codebooks);
    out.logits = Tensor(h.rows(), cfg.num_codebooks);
    out.hidden_preact.reserve(static_cast<std::size_t>(cfg.num_codebooks));
    for (int i = 0; i < cfg.num_codebooks; ++i) {
        const Tensor& bh = params.value(bank_gate_param_name(i, "bh"));
        const Tensor& wo = params.value(bank_gate_param_name(i, "wo"));
        const Tensor& bo = params.value(bank_gate_param_name(i, "bo"));
        Tensor pre = matmul(h, params.value(bank_gate_param_name(i, "Wh")));
#pragma omp parallel for schedule(static)
        for (int u = 0; u < pre.rows(); ++u) {
            double logit = bo.at(0, 0);
            for (int j = 0; j < pre.cols(); ++j) {
                double& p = pre.at(u, j);
                p += bh.at(0, j);
                double act = p > 0.0 ? p : 0.0;
                logit += act * wo.at(j, 0);
            }
            out.logits.at(u, i) = logit;
            out.scores.at(u, i) = softplus(logit);
        }
        out.hidden_preact.push_back(std::move(pre));
    }
    return out;
}

Tensor gate_backward(const Tensor& h, const GateResult& fwd, const Tensor& grad_scores,
                     ParamStore& params, const BankConfig& cfg) {
    if (grad_scores.rows() != h.rows() || grad_scores.cols() != cfg.num_codebooks) {
        throw ShapeError("gate_backward: grad_scores " + grad_scores.shape_str() +
                         " vs expected " + std::to_string(h.rows()) + "x" +
                         std::to_string(cfg.num_codebooks));
    }
    Tensor grad_h(h.rows(), h.cols());
    for (int i = 0; i < cfg.num_codebooks; ++i) {
        const Tensor& pre = fwd.hidden_preact[static_cast<std::size_t>(i)];
        const Tensor& wo = params.value(bank_gate_param_name(i, "wo"));

        Tensor grad_pre(h.rows(), cfg.dim);
        Tensor grad_wo(cfg.dim, 1);
        Tensor grad_bh(1, cfg.dim);
        double grad_bo = 0.0;
        for (int u = 0; u < h.rows(); ++u) {
            // d softplus / d logit = logistic(logit).
            double dl = grad_scores.at(u, i) * logistic(fwd.logits.at(u, i));
            grad_bo += dl;
            for (int j = 0; j < cfg.dim; ++j) {
                double p = pre.at(u, j);
                if (p > 0.0) {
                    grad_wo.at(j, 0) += dl * p;
                    double dpre = dl * wo.at(j, 0);
                    grad_pre.at(u, j) = dpre;
                    grad_bh.at(0, j) += dpre;
                }
            }
        }
        params.accumulate_grad(bank_gate_param_name(i, "wo"), grad_wo);
        Tensor gbo(1, 1);
        gbo.at(0, 0) = grad_bo;
        params.accumulate_grad(bank_gate_param_name(i, "bo"), gbo);
        params.accumulate_grad(bank_gate_param_name(i, "bh"), grad_bh);
        params.accumulate_grad(bank_gate_param_name(i, "Wh"), matmul_backward_b(h, grad_pre));
        add_in_place(grad_h, matmul_backward_a(grad_pre, params.value(bank_gate_param_name(i, "Wh"))));
    }
    return grad_h;
}

QuantizeOutcome quantize(const Tensor& h, const ParamStore& params, const BankConfig& cfg, int top_k) {
    check_bank(cfg);
    if (top_k < 1 || top_k > cfg.num_codebooks) {
        throw ArgumentError("quantize: top_k " + std::to_string(top_k) + " outside [1, " +
                            std::to_string(cfg.num_codebooks) + "]");
    }
    const Tensor& codes = params.value("bank.codes");
    if (codes.rows() != cfg.total_codes() || codes.cols() != cfg.dim) {
        throw ShapeError("quantize: bank.codes " + codes.shape_str() + " vs expected " +
                         std::to_string(cfg.total_codes()) + "x" + std::to_string(cfg.dim));
    }

    QuantizeOutcome out;
    out.top_k = top_k;
    out.gating = gate(h, params, cfg);
    out.active_ids.assign(static_cast<std::size_t>(h.rows()) * top_k, 0);
    out.code_indices.assign(static_cast<std::size_t>(h.rows()) * top_k, 0);
    out.weights = Tensor(h.rows(), top_k);
    out.zq = Tensor(h.rows(), cfg.dim);
    out.h_detached = h;

#pragma omp parallel for schedule(static)
    for (int u = 0; u < h.rows(); ++u) {
        std::vector<int> order(static_cast<std::size_t>(cfg.num_codebooks));
        std::iota(order.begin(), order.end(), 0);
        // stable_sort on descending score keeps the lower codebook id on ties.
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return out.gating.scores.at(u, a) > out.gating.scores.at(u, b);
        });
        order.resize(static_cast<std::size_t>(top_k));
        std::sort(order.begin(), order.end());

        double total = 0.0;
        for (int m : order) total += out.gating.scores.at(u, m);
        auto zrow = out.zq.row(u);
        for (int slot = 0; slot < top_k; ++slot) {
            int m = order[static_cast<std::size_t>(slot)];
            int idx = lookup_in_book(h.row(u), codes, m, cfg.codes_per_book);
            double w = out.gating.scores.at(u, m) / total;
            out.active_ids[static_cast<std::size_t>(u) * top_k + slot] = m;
            out.code_indices[static_cast<std::size_t>(u) * top_k + slot] = idx;
            out.weights.at(u, slot) = w;
            auto code = codes.row(m * cfg.codes_per_book + idx);
            for (int j = 0; j < cfg.dim; ++j) {
                zrow[static_cast<std::size_t>(j)] += w * code[static_cast<std::size_t>(j)];
            }
        }
    }
    return out;
}

SteGrads ste_backward(const QuantizeOutcome& outcome, const Tensor& grad_zq,
                      const ParamStore& params, const BankConfig& cfg) {
    const Tensor& h = outcome.h_detached;
    if (grad_zq.rows() != h.rows() || grad_zq.cols() != h.cols()) {
        throw ShapeError("ste_backward: grad_zq " + grad_zq.shape_str() + " vs zq " +
                         outcome.zq.shape_str());
    }
    const Tensor& codes = params.value("bank.codes");
    SteGrads out;
    out.grad_h = grad_zq; // straight-through: quantization treated as identity
    out.grad_scores = Tensor(h.rows(), cfg.num_codebooks);
    out.grad_codes = Tensor(codes.rows(), codes.cols());

    const int k = outcome.top_k;
    for (int u = 0; u < h.rows(); ++u) {
        double total = 0.0;
        for (int slot = 0; slot < k; ++slot) {
            total += outcome.gating.scores.at(u, outcome.active_id(u, slot));
        }
        auto g = grad_zq.row(u);
        // t_slot = code . grad_zq_u per active codebook.
        std::vector<double> t(static_cast<std::size_t>(k));
        double weighted_t = 0.0;
        for (int slot = 0; slot < k; ++slot) {
            int flat = outcome.active_id(u, slot) * cfg.codes_per_book + outcome.code_index(u, slot);
            auto code = codes.row(flat);
            double d = dot(code, g);
            t[static_cast<std::size_t>(slot)] = d;
            double w = outcome.weights.at(u, slot);
            weighted_t += w * d;
            for (int j = 0; j < cfg.dim; ++j) {
                out.grad_codes.at(flat, j) += w * g[static_cast<std::size_t>(j)];
            }
        }
        // Through the normalized weights: d w_m / d s_j = (delta_mj - w_m) / total
        // for active j; inactive scores get nothing from the quantizer path.
        for (int slot = 0; slot < k; ++slot) {
            out.grad_scores.at(u, outcome.active_id(u, slot)) =
                (t[static_cast<std::size_t>(slot)] - weighted_t) / total;
        }
    }
    return out;
}

} // namespace mocgvq
