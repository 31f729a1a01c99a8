#include "mocgvq/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mocgvq/errors.hpp"

namespace mocgvq {

namespace {

constexpr std::uint64_t kTagSplit = 0xF7;
constexpr std::uint64_t kTagEpisode = 0xE5;
constexpr double kNormGuard = 1e-12;

void normalize_rows(Tensor& t) {
    for (int i = 0; i < t.rows(); ++i) {
        double n = norm(t.row(i));
        if (n > kNormGuard) {
            for (double& v : t.row(i)) v /= n;
        }
    }
}

void fisher_yates(std::vector<int>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

/// Row-wise softmax in place, shifted by the row max.
void softmax_rows(Tensor& t) {
    for (int i = 0; i < t.rows(); ++i) {
        auto row = t.row(i);
        double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : row) v /= sum;
    }
}

Tensor proto_softmax(const FinetuneHead& head, const Tensor& zq) {
    Tensor scores(zq.rows(), head.num_classes);
    for (int i = 0; i < zq.rows(); ++i) {
        for (int c = 0; c < head.num_classes; ++c) {
            scores.at(i, c) = cosine_sim(zq.row(i), head.prototypes.row(c));
        }
    }
    softmax_rows(scores);
    return scores;
}

Tensor linear_softmax(const FinetuneHead& head, const Tensor& zq) {
    Tensor logits = matmul(zq, head.linear_w);
    for (int i = 0; i < logits.rows(); ++i) {
        for (int c = 0; c < logits.cols(); ++c) logits.at(i, c) += head.linear_b.at(0, c);
    }
    softmax_rows(logits);
    return logits;
}

/// Mean cross-entropy of already-softmaxed probabilities against labels.
double ce_of_probs(const Tensor& probs, const std::vector<int>& labels,
                   const std::vector<int>& subset) {
    double loss = 0.0;
    for (int idx : subset) {
        double p = std::max(probs.at(idx, labels[static_cast<std::size_t>(idx)]), 1e-12);
        loss -= std::log(p);
    }
    return loss / static_cast<double>(subset.size());
}

} // namespace

Tensor head_scores(const FinetuneHead& head, const Tensor& zq) {
    Tensor proto = proto_softmax(head, zq);
    if (head.t <= 0.0) return proto;
    Tensor lin = linear_softmax(head, zq);
    if (head.t >= 1.0) return lin;
    Tensor out(zq.rows(), head.num_classes);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = head.t * lin.data()[i] + (1.0 - head.t) * proto.data()[i];
    }
    return out;
}

std::vector<int> head_predict(const FinetuneHead& head, const Tensor& zq) {
    Tensor scores = head_scores(head, zq);
    std::vector<int> pred(static_cast<std::size_t>(zq.rows()), 0);
    for (int i = 0; i < scores.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < scores.cols(); ++c) {
            if (scores.at(i, c) > scores.at(i, best)) best = c;
        }
        pred[static_cast<std::size_t>(i)] = best;
    }
    return pred;
}

Tensor class_prototypes(const Tensor& zq, const std::vector<int>& labels,
                        const std::vector<int>& subset, int num_classes) {
    Tensor proto(num_classes, zq.cols());
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    for (int idx : subset) {
        int c = labels[static_cast<std::size_t>(idx)];
        if (c < 0 || c >= num_classes) {
            throw ArgumentError("class_prototypes: label " + std::to_string(c) + " outside [0, " +
                                std::to_string(num_classes) + ")");
        }
        ++counts[static_cast<std::size_t>(c)];
        for (int k = 0; k < zq.cols(); ++k) proto.at(c, k) += zq.at(idx, k);
    }
    for (int c = 0; c < num_classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            throw StateError("class_prototypes: class " + std::to_string(c) + " has no samples");
        }
        for (int k = 0; k < zq.cols(); ++k) proto.at(c, k) /= counts[static_cast<std::size_t>(c)];
    }
    normalize_rows(proto);
    return proto;
}

FinetuneResult finetune(Model& model, const TAGraph& g, const FinetuneConfig& cfg,
                        std::uint64_t seed) {
    if (!g.has_labels()) throw ArgumentError("finetune: graph carries no node labels");
    Embedded emb = embed_graph(g, model);
    const Tensor& zq = emb.outcome.zq;
    const int n = zq.rows();
    const int d = zq.cols();
    int num_classes = 0;
    for (int l : g.node_labels) num_classes = std::max(num_classes, l + 1);

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(mix_seed(seed, kTagSplit));
    fisher_yates(order, split_rng);
    int train_n = std::clamp(static_cast<int>(std::llround(cfg.train_fraction * n)), 1, n - 1);

    FinetuneResult out;
    out.train_nodes.assign(order.begin(), order.begin() + train_n);
    out.test_nodes.assign(order.begin() + train_n, order.end());

    out.head.t = cfg.t;
    out.head.num_classes = num_classes;
    out.head.prototypes = class_prototypes(zq, g.node_labels, out.train_nodes, num_classes);

    // Linear head: the only trainable part; the prototype term of the
    // combined loss is constant once the prototypes are fixed.
    ParamStore ft;
    Rng init_rng(mix_seed(seed, kTagSplit, 1));
    Tensor w0(d, num_classes);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < w0.size(); ++i) w0.data()[i] = sigma * init_rng.next_normal();
    ft.add("ft.W", std::move(w0));
    ft.add("ft.b", Tensor(1, num_classes));

    out.head.linear_w = ft.value("ft.W");
    out.head.linear_b = ft.value("ft.b");
    const double proto_ce = ce_of_probs(proto_softmax(out.head, zq), g.node_labels, out.train_nodes);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        out.head.linear_w = ft.value("ft.W");
        out.head.linear_b = ft.value("ft.b");
        Tensor probs = linear_softmax(out.head, zq);
        out.final_train_loss =
            cfg.lambda_proto * proto_ce + cfg.lambda_lin * ce_of_probs(probs, g.node_labels, out.train_nodes);

        Tensor grad_logits(n, num_classes);
        const double scale = cfg.lambda_lin / static_cast<double>(out.train_nodes.size());
        for (int idx : out.train_nodes) {
            for (int c = 0; c < num_classes; ++c) {
                double target = c == g.node_labels[static_cast<std::size_t>(idx)] ? 1.0 : 0.0;
                grad_logits.at(idx, c) = scale * (probs.at(idx, c) - target);
            }
        }
        ft.accumulate_grad("ft.W", matmul_backward_b(zq, grad_logits));
        Tensor gb(1, num_classes);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < num_classes; ++c) gb.at(0, c) += grad_logits.at(i, c);
        }
        ft.accumulate_grad("ft.b", gb);
        adamw_step(ft, cfg.lr, cfg.weight_decay);
    }
    out.head.linear_w = ft.value("ft.W");
    out.head.linear_b = ft.value("ft.b");

    std::vector<int> pred = head_predict(out.head, zq);
    int correct = 0;
    for (int idx : out.test_nodes) {
        if (pred[static_cast<std::size_t>(idx)] == g.node_labels[static_cast<std::size_t>(idx)]) {
            ++correct;
        }
    }
    out.test_accuracy = static_cast<double>(correct) / static_cast<double>(out.test_nodes.size());
    return out;
}

double episode_accuracy(const Tensor& zq, const std::vector<int>& labels, int n_way, int k_shot,
                        int query_size, std::uint64_t seed) {
    if (k_shot < 1) throw ArgumentError("episode_accuracy: k_shot must be at least 1");
    if (static_cast<int>(labels.size()) != zq.rows()) {
        throw ArgumentError("episode_accuracy: label count mismatch");
    }
    int num_classes = 0;
    for (int l : labels) num_classes = std::max(num_classes, l + 1);
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < zq.rows(); ++i) {
        if (labels[static_cast<std::size_t>(i)] >= 0) {
            by_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
        }
    }
    std::vector<int> eligible;
    for (int c = 0; c < num_classes; ++c) {
        if (static_cast<int>(by_class[static_cast<std::size_t>(c)].size()) >= k_shot) {
            eligible.push_back(c);
        }
    }
    if (static_cast<int>(eligible.size()) < n_way) {
        throw StateError("episode_accuracy: only " + std::to_string(eligible.size()) +
                         " classes have " + std::to_string(k_shot) + " supports, need " +
                         std::to_string(n_way));
    }

    Rng rng(mix_seed(seed, kTagEpisode));
    fisher_yates(eligible, rng);
    eligible.resize(static_cast<std::size_t>(n_way));

    Tensor proto(n_way, zq.cols());
    std::vector<std::vector<int>> queries(static_cast<std::size_t>(n_way));
    for (int w = 0; w < n_way; ++w) {
        std::vector<int> nodes = by_class[static_cast<std::size_t>(eligible[static_cast<std::size_t>(w)])];
        fisher_yates(nodes, rng);
        for (int s = 0; s < k_shot; ++s) {
            for (int k = 0; k < zq.cols(); ++k) {
                proto.at(w, k) += zq.at(nodes[static_cast<std::size_t>(s)], k) / k_shot;
            }
        }
        int take = std::min(query_size, static_cast<int>(nodes.size()) - k_shot);
        for (int q = 0; q < take; ++q) {
            queries[static_cast<std::size_t>(w)].push_back(nodes[static_cast<std::size_t>(k_shot + q)]);
        }
    }
    normalize_rows(proto);

    int total = 0;
    int correct = 0;
    for (int w = 0; w < n_way; ++w) {
        for (int idx : queries[static_cast<std::size_t>(w)]) {
            int best = 0;
            double best_s = -2.0;
            for (int c = 0; c < n_way; ++c) {
                double s = cosine_sim(zq.row(idx), proto.row(c));
                if (s > best_s) {
                    best_s = s;
                    best = c;
                }
            }
            ++total;
            if (best == w) ++correct;
        }
    }
    if (total == 0) throw StateError("episode_accuracy: no query nodes remain");
    return static_cast<double>(correct) / static_cast<double>(total);
}

double few_shot_episode(Model& model, const TAGraph& g, int n_way, int k_shot, int query_size,
                        std::uint64_t seed) {
    if (!g.has_labels()) throw ArgumentError("few_shot_episode: graph carries no node labels");
    Embedded emb = embed_graph(g, model);
    if (k_shot >= 1) {
        return episode_accuracy(emb.outcome.zq, g.node_labels, n_way, k_shot, query_size, seed);
    }

    // Zero-shot: prototypes come from class descriptors pushed through the
    // frozen backbone as isolated nodes.
    if (g.class_descriptors.rows() == 0) {
        throw StateError("few_shot_episode: zero-shot needs class descriptors");
    }
    TAGraph desc;
    desc.num_nodes = g.class_descriptors.rows();
    desc.node_features = g.class_descriptors;
    desc.edge_features = Tensor(0, g.class_descriptors.cols());
    Embedded demb = embed_graph(desc, model);

    const int num_desc = g.class_descriptors.rows();
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_desc));
    for (int i = 0; i < g.num_nodes; ++i) {
        int l = g.node_labels[static_cast<std::size_t>(i)];
        if (l >= 0 && l < num_desc) by_class[static_cast<std::size_t>(l)].push_back(i);
    }
    std::vector<int> eligible;
    for (int c = 0; c < num_desc; ++c) {
        if (!by_class[static_cast<std::size_t>(c)].empty()) eligible.push_back(c);
    }
    if (static_cast<int>(eligible.size()) < n_way) {
        throw StateError("few_shot_episode: only " + std::to_string(eligible.size()) +
                         " classes usable for zero-shot, need " + std::to_string(n_way));
    }
    Rng rng(mix_seed(seed, kTagEpisode));
    fisher_yates(eligible, rng);
    eligible.resize(static_cast<std::size_t>(n_way));

    Tensor proto(n_way, demb.outcome.zq.cols());
    for (int w = 0; w < n_way; ++w) {
        auto src = demb.outcome.zq.row(eligible[static_cast<std::size_t>(w)]);
        std::copy(src.begin(), src.end(), proto.row(w).begin());
    }
    normalize_rows(proto);

    int total = 0;
    int correct = 0;
    for (int w = 0; w < n_way; ++w) {
        std::vector<int> nodes = by_class[static_cast<std::size_t>(eligible[static_cast<std::size_t>(w)])];
        fisher_yates(nodes, rng);
        int take = std::min(query_size, static_cast<int>(nodes.size()));
        for (int q = 0; q < take; ++q) {
            int idx = nodes[static_cast<std::size_t>(q)];
            int best = 0;
            double best_s = -2.0;
            for (int c = 0; c < n_way; ++c) {
                double s = cosine_sim(emb.outcome.zq.row(idx), proto.row(c));
                if (s > best_s) {
                    best_s = s;
                    best = c;
                }
            }
            ++total;
            if (best == w) ++correct;
        }
    }
    if (total == 0) throw StateError("few_shot_episode: no query nodes remain");
    return static_cast<double>(correct) / static_cast<double>(total);
}

} // namespace mocgvq
