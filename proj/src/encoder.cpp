#include "mocgvq/encoder.hpp"

#include <cmath>

namespace mocgvq {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;
constexpr std::uint64_t kTagDropout = 0xD80;

// Per-node incidence over kept edges: (edge_row, neighbor) pairs in edge order.
std::vector<std::vector<std::pair<int, int>>> build_incidence(const MaskedGraph& g) {
    std::vector<std::vector<std::pair<int, int>>> inc(g.base->num_nodes);
    for (int e = 0; e < g.num_kept_edges(); ++e) {
        const auto [u, v] = g.kept_edge_list[e];
        inc[u].emplace_back(e, v);
        inc[v].emplace_back(e, u);
    }
    return inc;
}

Tensor gaussian_matrix(int rows, int cols, double stddev, Rng& rng) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = stddev * rng.next_normal();
    return t;
}

} // namespace

std::string encoder_param_name(int layer, const std::string& leaf) {
    return "enc.l" + std::to_string(layer) + "." + leaf;
}

EncoderBuffers init_encoder(ParamStore& params, const EncoderConfig& cfg, Rng& rng) {
    EncoderBuffers buffers;
    for (int l = 0; l < cfg.num_layers; ++l) {
        const int din = cfg.layer_in_dim(l);
        const int d = cfg.hidden_dim;
        const double s = 1.0 / std::sqrt(static_cast<double>(din));
        for (const char* leaf : {"W1", "W2", "W3", "W4"}) {
            params.add(encoder_param_name(l, leaf), gaussian_matrix(din, d, s, rng));
        }
        params.add(encoder_param_name(l, "bn_scale"), Tensor(1, d, 1.0));
        params.add(encoder_param_name(l, "bn_shift"), Tensor(1, d, 0.0));
        buffers.bn_running_mean.push_back(Tensor(1, d, 0.0));
        buffers.bn_running_var.push_back(Tensor(1, d, 1.0));
    }
    return buffers;
}

EncodeResult encode(const MaskedGraph& g, const ParamStore& params, const EncoderConfig& cfg,
                    EncoderBuffers& buffers, bool training, std::uint64_t seed, bool keep_cache) {
    const TAGraph& base = *g.base;
    if (base.feature_dim() != cfg.input_dim) {
        throw ShapeError("encoder input_dim " + std::to_string(cfg.input_dim) +
                         " does not match graph feature dim " + std::to_string(base.feature_dim()));
    }
    const int n = base.num_nodes;
    const int kept_m = g.num_kept_edges();
    const auto incidence = build_incidence(g);

    EncodeResult result;
    result.training = training;
    result.has_cache = keep_cache;

    Tensor h = g.corrupted_features;
    Tensor e(kept_m, cfg.input_dim);
    for (int i = 0; i < kept_m; ++i) {
        const auto src = base.edge_features.row(g.kept_edge_indices[i]);
        std::copy(src.begin(), src.end(), e.row(i).begin());
    }
    if (!cfg.fuse_edges) e.zero();

    for (int l = 0; l < cfg.num_layers; ++l) {
        const int din = cfg.layer_in_dim(l);
        const int d = cfg.hidden_dim;
        const Tensor& w1 = params.value(encoder_param_name(l, "W1"));
        const Tensor& w2 = params.value(encoder_param_name(l, "W2"));
        const Tensor& w3 = params.value(encoder_param_name(l, "W3"));
        const Tensor& w4 = params.value(encoder_param_name(l, "W4"));
        if (w1.rows() != din || w1.cols() != d) {
            throw ShapeError("layer " + std::to_string(l) + " W1 has shape " + w1.shape_str() +
                             ", expected " + std::to_string(din) + "x" + std::to_string(d));
        }

        EncodeResult::LayerCache cache;
        cache.node_in = h;
        cache.edge_in = e;

        // Neighbor mean of (h_v + e_uv) per node; zero row for isolated nodes.
        Tensor agg(n, din);
#pragma omp parallel for schedule(static)
        for (int u = 0; u < n; ++u) {
            if (incidence[u].empty()) continue;
            auto out = agg.row(u);
            for (const auto& [erow, v] : incidence[u]) {
                const auto hv = h.row(v);
                if (cfg.fuse_edges) {
                    const auto ev = e.row(erow);
                    for (int j = 0; j < din; ++j) out[j] += hv[j] + ev[j];
                } else {
                    for (int j = 0; j < din; ++j) out[j] += hv[j];
                }
            }
            const double inv = 1.0 / static_cast<double>(incidence[u].size());
            for (int j = 0; j < din; ++j) out[j] *= inv;
        }
        cache.neighbor_mean = agg;

        Tensor node_preact = matmul(h, w1);
        add_in_place(node_preact, matmul(agg, w2));
        cache.node_preact = node_preact;
        Tensor node_out = relu(node_preact);

        if (cfg.batch_norm) {
            Tensor mean(1, d), var(1, d);
            if (training) {
                for (int j = 0; j < d; ++j) {
                    double mu = 0.0;
                    for (int i = 0; i < n; ++i) mu += node_out.at(i, j);
                    mu /= n;
                    double v2 = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double dlt = node_out.at(i, j) - mu;
                        v2 += dlt * dlt;
                    }
                    v2 /= n;
                    mean.at(0, j) = mu;
                    var.at(0, j) = v2;
                    buffers.bn_running_mean[l].at(0, j) =
                        kBnMomentum * buffers.bn_running_mean[l].at(0, j) + (1.0 - kBnMomentum) * mu;
                    buffers.bn_running_var[l].at(0, j) =
                        kBnMomentum * buffers.bn_running_var[l].at(0, j) + (1.0 - kBnMomentum) * v2;
                }
            } else {
                mean = buffers.bn_running_mean[l];
                var = buffers.bn_running_var[l];
            }
            const Tensor& scale_p = params.value(encoder_param_name(l, "bn_scale"));
            const Tensor& shift_p = params.value(encoder_param_name(l, "bn_shift"));
            Tensor xhat(n, d);
            for (int j = 0; j < d; ++j) {
                const double inv_std = 1.0 / std::sqrt(var.at(0, j) + kBnEps);
                const double mu = mean.at(0, j);
                for (int i = 0; i < n; ++i) xhat.at(i, j) = (node_out.at(i, j) - mu) * inv_std;
            }
            cache.bn_xhat = xhat;
            cache.bn_mean = mean;
            cache.bn_var = var;
            for (int j = 0; j < d; ++j) {
                const double gam = scale_p.at(0, j), bet = shift_p.at(0, j);
                for (int i = 0; i < n; ++i) node_out.at(i, j) = xhat.at(i, j) * gam + bet;
            }
        }

        if (training && cfg.dropout > 0.0) {
            Rng drop_rng(mix_seed(seed, kTagDropout, static_cast<std::uint64_t>(l)));
            const double keep = 1.0 - cfg.dropout;
            Tensor mask(n, d);
            const double inv_keep = 1.0 / keep;
            for (std::size_t i = 0; i < mask.size(); ++i) {
                mask.data()[i] = drop_rng.next_double() < keep ? inv_keep : 0.0;
            }
            cache.dropout_mask = mask;
            node_out = hadamard(node_out, mask);
        }

        Tensor edge_out(kept_m, d);
        if (cfg.fuse_edges) {
            // Simultaneous update: edge states read the layer-l node states.
            Tensor endpoint_sum(kept_m, din);
#pragma omp parallel for schedule(static)
            for (int i = 0; i < kept_m; ++i) {
                const auto [u, v] = g.kept_edge_list[i];
                const auto hu = h.row(u);
                const auto hv = h.row(v);
                auto out = endpoint_sum.row(i);
                for (int j = 0; j < din; ++j) out[j] = 0.5 * (hu[j] + hv[j]);
            }
            Tensor edge_preact = matmul(e, w3);
            add_in_place(edge_preact, matmul(endpoint_sum, w4));
            cache.edge_preact = edge_preact;
            edge_out = relu(edge_preact);
        }

        if (keep_cache) result.cache.push_back(std::move(cache));
        h = std::move(node_out);
        e = std::move(edge_out);
    }

    result.node_hidden = std::move(h);
    result.edge_hidden = std::move(e);
    return result;
}

EncoderInputGrads encode_backward(const MaskedGraph& g, const EncodeResult& result,
                                  const Tensor& grad_node_hidden, const Tensor& grad_edge_hidden,
                                  ParamStore& params, const EncoderConfig& cfg) {
    if (!result.has_cache || static_cast<int>(result.cache.size()) != cfg.num_layers) {
        throw StateError("encode_backward requires a forward result with its activation cache");
    }
    const int n = g.base->num_nodes;
    const int kept_m = g.num_kept_edges();
    if (grad_node_hidden.rows() != n || grad_node_hidden.cols() != cfg.hidden_dim) {
        throw ShapeError("grad_node_hidden has shape " + grad_node_hidden.shape_str());
    }
    const auto incidence = build_incidence(g);

    Tensor dh = grad_node_hidden;
    Tensor de = grad_edge_hidden;
    if (de.rows() == 0 && kept_m >= 0) de = Tensor(kept_m, cfg.hidden_dim);

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const auto& cache = result.cache[l];
        const int din = cfg.layer_in_dim(l);
        const int d = cfg.hidden_dim;
        const Tensor& w1 = params.value(encoder_param_name(l, "W1"));
        const Tensor& w2 = params.value(encoder_param_name(l, "W2"));
        const Tensor& w3 = params.value(encoder_param_name(l, "W3"));
        const Tensor& w4 = params.value(encoder_param_name(l, "W4"));

        Tensor dh_in(n, din);
        Tensor de_in(kept_m, din);

        // Edge path first: e^{l+1} = relu(e W3 + 0.5 (h_u + h_v) W4).
        if (cfg.fuse_edges && kept_m > 0) {
            Tensor d_edge_pre = relu_backward(cache.edge_preact, de);
            params.accumulate_grad(encoder_param_name(l, "W3"),
                                   matmul_backward_b(cache.edge_in, d_edge_pre));
            add_in_place(de_in, matmul_backward_a(d_edge_pre, w3));

            Tensor endpoint_sum(kept_m, din);
            for (int i = 0; i < kept_m; ++i) {
                const auto [u, v] = g.kept_edge_list[i];
                for (int j = 0; j < din; ++j) {
                    endpoint_sum.at(i, j) = 0.5 * (cache.node_in.at(u, j) + cache.node_in.at(v, j));
                }
            }
            params.accumulate_grad(encoder_param_name(l, "W4"),
                                   matmul_backward_b(endpoint_sum, d_edge_pre));
            Tensor d_endpoint = matmul_backward_a(d_edge_pre, w4);
            // h_u and h_v each receive half of the endpoint-sum gradient.
#pragma omp parallel for schedule(static)
            for (int u = 0; u < n; ++u) {
                auto out = dh_in.row(u);
                for (const auto& [erow, v] : incidence[u]) {
                    (void)v;
                    const auto ds = d_endpoint.row(erow);
                    for (int j = 0; j < din; ++j) out[j] += 0.5 * ds[j];
                }
            }
        }

        // Node path: dropout -> batch norm -> relu -> linear fusion.
        Tensor dvis = dh;
        if (cache.dropout_mask.rows() > 0) dvis = hadamard(dvis, cache.dropout_mask);

        Tensor d_node_out; // grad w.r.t. relu output
        if (cfg.batch_norm) {
            const Tensor& scale_p = params.value(encoder_param_name(l, "bn_scale"));
            Tensor dscale(1, d), dshift(1, d);
            d_node_out = Tensor(n, d);
            for (int j = 0; j < d; ++j) {
                double dg = 0.0, db = 0.0;
                for (int i = 0; i < n; ++i) {
                    dg += dvis.at(i, j) * cache.bn_xhat.at(i, j);
                    db += dvis.at(i, j);
                }
                dscale.at(0, j) = dg;
                dshift.at(0, j) = db;
                const double inv_std = 1.0 / std::sqrt(cache.bn_var.at(0, j) + kBnEps);
                const double gam = scale_p.at(0, j);
                if (result.training) {
                    // Batch statistics participated in the forward pass.
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double dxh = dvis.at(i, j) * gam;
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * cache.bn_xhat.at(i, j);
                    }
                    const double m1 = sum_dxhat / n;
                    const double m2 = sum_dxhat_xhat / n;
                    for (int i = 0; i < n; ++i) {
                        const double dxh = dvis.at(i, j) * gam;
                        d_node_out.at(i, j) = inv_std * (dxh - m1 - cache.bn_xhat.at(i, j) * m2);
                    }
                } else {
                    for (int i = 0; i < n; ++i) {
                        d_node_out.at(i, j) = dvis.at(i, j) * gam * inv_std;
                    }
                }
            }
            params.accumulate_grad(encoder_param_name(l, "bn_scale"), dscale);
            params.accumulate_grad(encoder_param_name(l, "bn_shift"), dshift);
        } else {
            d_node_out = dvis;
        }

        Tensor d_node_pre = relu_backward(cache.node_preact, d_node_out);

        params.accumulate_grad(encoder_param_name(l, "W1"),
                               matmul_backward_b(cache.node_in, d_node_pre));
        add_in_place(dh_in, matmul_backward_a(d_node_pre, w1));
        params.accumulate_grad(encoder_param_name(l, "W2"),
                               matmul_backward_b(cache.neighbor_mean, d_node_pre));
        Tensor d_agg = matmul_backward_a(d_node_pre, w2);

        // Aggregation backward, receiver-major for deterministic parallel writes:
        // node x gains dAgg_u / deg_u from every kept edge (x,u).
#pragma omp parallel for schedule(static)
        for (int x = 0; x < n; ++x) {
            auto out = dh_in.row(x);
            for (const auto& [erow, u] : incidence[x]) {
                (void)erow;
                const double inv_deg = 1.0 / static_cast<double>(incidence[u].size());
                const auto da = d_agg.row(u);
                for (int j = 0; j < din; ++j) out[j] += da[j] * inv_deg;
            }
        }
        if (cfg.fuse_edges) {
#pragma omp parallel for schedule(static)
            for (int i = 0; i < kept_m; ++i) {
                const auto [u, v] = g.kept_edge_list[i];
                const double inv_du = 1.0 / static_cast<double>(incidence[u].size());
                const double inv_dv = 1.0 / static_cast<double>(incidence[v].size());
                auto out = de_in.row(i);
                const auto dau = d_agg.row(u);
                const auto dav = d_agg.row(v);
                for (int j = 0; j < din; ++j) out[j] += dau[j] * inv_du + dav[j] * inv_dv;
            }
        }

        dh = std::move(dh_in);
        de = std::move(de_in);
    }

    EncoderInputGrads grads;
    grads.node_features = std::move(dh);
    grads.edge_features = std::move(de);
    if (!cfg.fuse_edges) grads.edge_features.zero();
    return grads;
}

} // namespace mocgvq
