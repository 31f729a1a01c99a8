#include "mocgvq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mocgvq/errors.hpp"
#include "mocgvq/trainer.hpp"

namespace mocgvq {

namespace {

constexpr double kVarFloor = 1e-6;
constexpr int kBuckets = 64;

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StateError("diagnostics: cannot open \"" + path + "\"");
    return out;
}

} // namespace

std::vector<double> usage_counts(const QuantizeOutcome& outcome, const BankConfig& cfg) {
    std::vector<double> counts(static_cast<std::size_t>(cfg.total_codes()), 0.0);
    const int n = outcome.h_detached.rows();
    for (int u = 0; u < n; ++u) {
        for (int slot = 0; slot < outcome.top_k; ++slot) {
            int flat = outcome.active_id(u, slot) * cfg.codes_per_book + outcome.code_index(u, slot);
            counts[static_cast<std::size_t>(flat)] += 1.0;
        }
    }
    return counts;
}

double utilization_entropy(const std::vector<double>& joint_counts) {
    double total = 0.0;
    for (double c : joint_counts) {
        if (c < 0.0) throw ArgumentError("utilization_entropy: negative count");
        total += c;
    }
    if (joint_counts.empty() || total <= 0.0) {
        throw ArgumentError("utilization_entropy: empty histogram");
    }
    double h = 0.0;
    for (double c : joint_counts) {
        if (c > 0.0) {
            double p = c / total;
            h -= p * std::log(p);
        }
    }
    return h;
}

double angular_uniformity(const Tensor& x, int* excluded_rows) {
    constexpr double kNormGuard = 1e-12;
    std::vector<int> usable;
    usable.reserve(static_cast<std::size_t>(x.rows()));
    for (int i = 0; i < x.rows(); ++i) {
        if (norm(x.row(i)) > kNormGuard) usable.push_back(i);
    }
    if (excluded_rows != nullptr) *excluded_rows = x.rows() - static_cast<int>(usable.size());
    if (usable.size() < 2) throw ArgumentError("angular_uniformity: fewer than two nonzero rows");

    const int n = static_cast<int>(usable.size());
    double sum = 0.0;
    // Fixed pair order keeps the reduction deterministic.
    for (int a = 0; a < n; ++a) {
        double row_sum = 0.0;
        for (int b = a + 1; b < n; ++b) {
            row_sum += std::acos(cosine_sim(x.row(usable[static_cast<std::size_t>(a)]),
                                            x.row(usable[static_cast<std::size_t>(b)])));
        }
        sum += row_sum;
    }
    return sum / (static_cast<double>(n) * (n - 1) / 2.0);
}

KlHeatmap domain_kl_heatmap(const Tensor& h, const std::vector<int>& domain_labels) {
    if (static_cast<int>(domain_labels.size()) != h.rows()) {
        throw ArgumentError("domain_kl_heatmap: " + std::to_string(domain_labels.size()) +
                            " labels for " + std::to_string(h.rows()) + " rows");
    }
    int num_domains = 0;
    for (int l : domain_labels) {
        if (l < 0) throw ArgumentError("domain_kl_heatmap: negative domain label");
        num_domains = std::max(num_domains, l + 1);
    }
    const int d = h.cols();

    std::vector<int> counts(static_cast<std::size_t>(num_domains), 0);
    Tensor mean(num_domains, d);
    for (int i = 0; i < h.rows(); ++i) {
        int dom = domain_labels[static_cast<std::size_t>(i)];
        ++counts[static_cast<std::size_t>(dom)];
        for (int c = 0; c < d; ++c) mean.at(dom, c) += h.at(i, c);
    }
    for (int a = 0; a < num_domains; ++a) {
        if (counts[static_cast<std::size_t>(a)] > 0) {
            for (int c = 0; c < d; ++c) mean.at(a, c) /= counts[static_cast<std::size_t>(a)];
        }
    }
    Tensor var(num_domains, d);
    for (int i = 0; i < h.rows(); ++i) {
        int dom = domain_labels[static_cast<std::size_t>(i)];
        for (int c = 0; c < d; ++c) {
            double dv = h.at(i, c) - mean.at(dom, c);
            var.at(dom, c) += dv * dv;
        }
    }
    KlHeatmap out;
    out.defined.assign(static_cast<std::size_t>(num_domains), 0);
    for (int a = 0; a < num_domains; ++a) {
        if (counts[static_cast<std::size_t>(a)] >= 2) {
            out.defined[static_cast<std::size_t>(a)] = 1;
            for (int c = 0; c < d; ++c) {
                var.at(a, c) = std::max(var.at(a, c) / counts[static_cast<std::size_t>(a)], kVarFloor);
            }
        }
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.matrix = Tensor(num_domains, num_domains);
    for (int a = 0; a < num_domains; ++a) {
        for (int b = 0; b < num_domains; ++b) {
            if (!out.defined[static_cast<std::size_t>(a)] || !out.defined[static_cast<std::size_t>(b)]) {
                out.matrix.at(a, b) = nan;
                continue;
            }
            if (a == b) continue; // exact zero diagonal
            double kl = 0.0;
            for (int c = 0; c < d; ++c) {
                double va = var.at(a, c);
                double vb = var.at(b, c);
                double dm = mean.at(a, c) - mean.at(b, c);
                kl += 0.5 * (std::log(vb / va) + (va + dm * dm) / vb - 1.0);
            }
            out.matrix.at(a, b) = kl;
        }
    }
    return out;
}

namespace {

/// Population covariance of row-centered data.
Tensor covariance(const Tensor& x) {
    const int n = x.rows();
    const int d = x.cols();
    std::vector<double> mu(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < d; ++c) mu[static_cast<std::size_t>(c)] += x.at(i, c);
    }
    for (double& v : mu) v /= n;
    Tensor cov(d, d);
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < d; ++a) {
            double da = x.at(i, a) - mu[static_cast<std::size_t>(a)];
            for (int b = 0; b < d; ++b) {
                cov.at(a, b) += da * (x.at(i, b) - mu[static_cast<std::size_t>(b)]);
            }
        }
    }
    for (std::size_t i = 0; i < cov.size(); ++i) cov.data()[i] /= n;
    return cov;
}

} // namespace

Landscape landscape_1d(const Tensor& x, const Tensor* reference) {
    if (x.rows() < 2) throw ArgumentError("landscape_1d: need at least two rows");
    const Tensor& fit = reference != nullptr ? *reference : x;
    if (fit.rows() < 2) throw ArgumentError("landscape_1d: reference needs at least two rows");
    if (reference != nullptr && reference->cols() != x.cols()) {
        throw ShapeError("landscape_1d: x " + x.shape_str() + " vs reference " + reference->shape_str());
    }
    const int d = fit.cols();
    Tensor cov = covariance(fit);

    Landscape out;
    out.direction.assign(static_cast<std::size_t>(d), 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<double> next(static_cast<std::size_t>(d));
    for (int iter = 0; iter < 10000; ++iter) {
        for (int a = 0; a < d; ++a) {
            double s = 0.0;
            for (int b = 0; b < d; ++b) s += cov.at(a, b) * out.direction[static_cast<std::size_t>(b)];
            next[static_cast<std::size_t>(a)] = s;
        }
        double nn = norm(std::span<const double>(next));
        if (nn <= 0.0) {
            out.degenerate = true;
            break;
        }
        double delta = 0.0;
        for (int a = 0; a < d; ++a) {
            next[static_cast<std::size_t>(a)] /= nn;
            delta = std::max(delta, std::abs(next[static_cast<std::size_t>(a)] -
                                            out.direction[static_cast<std::size_t>(a)]));
        }
        out.direction = next;
        if (delta < 1e-9) break;
    }
    // Sign convention: largest-magnitude component positive.
    int arg = 0;
    for (int a = 1; a < d; ++a) {
        if (std::abs(out.direction[static_cast<std::size_t>(a)]) >
            std::abs(out.direction[static_cast<std::size_t>(arg)])) {
            arg = a;
        }
    }
    if (out.direction[static_cast<std::size_t>(arg)] < 0.0) {
        for (double& v : out.direction) v = -v;
    }
    // Rayleigh quotient on the unit direction.
    double ev = 0.0;
    for (int a = 0; a < d; ++a) {
        double s = 0.0;
        for (int b = 0; b < d; ++b) s += cov.at(a, b) * out.direction[static_cast<std::size_t>(b)];
        ev += s * out.direction[static_cast<std::size_t>(a)];
    }
    out.variance = ev;
    if (out.variance < 1e-18) out.degenerate = true;

    auto project = [&](const Tensor& data) {
        std::vector<double> p(static_cast<std::size_t>(data.rows()));
        for (int i = 0; i < data.rows(); ++i) {
            p[static_cast<std::size_t>(i)] = dot(data.row(i), std::span<const double>(out.direction));
        }
        return p;
    };
    std::vector<double> px = project(x);
    std::vector<double> pref = reference != nullptr ? project(*reference) : std::vector<double>{};

    out.lo = std::numeric_limits<double>::infinity();
    out.hi = -std::numeric_limits<double>::infinity();
    for (double v : px) {
        out.lo = std::min(out.lo, v);
        out.hi = std::max(out.hi, v);
    }
    for (double v : pref) {
        out.lo = std::min(out.lo, v);
        out.hi = std::max(out.hi, v);
    }
    if (out.hi <= out.lo) {
        // All projections coincide: one degenerate bucket.
        out.degenerate = true;
        out.hi = out.lo;
        out.hist_x.assign(1, static_cast<int>(px.size()));
        if (reference != nullptr) out.hist_ref.assign(1, static_cast<int>(pref.size()));
        return out;
    }
    auto fill_hist = [&](const std::vector<double>& p, std::vector<int>& hist) {
        hist.assign(kBuckets, 0);
        for (double v : p) {
            int b = static_cast<int>((v - out.lo) / (out.hi - out.lo) * kBuckets);
            b = std::clamp(b, 0, kBuckets - 1);
            ++hist[static_cast<std::size_t>(b)];
        }
    };
    fill_hist(px, out.hist_x);
    if (reference != nullptr) fill_hist(pref, out.hist_ref);
    return out;
}

namespace {

/// Cyclic Jacobi sweeps; enough for the small symmetric matrices here.
std::vector<double> symmetric_eigenvalues(Tensor a) {
    const int d = a.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d; ++p) {
            for (int q = p + 1; q < d; ++q) off += a.at(p, q) * a.at(p, q);
        }
        if (off < 1e-24) break;
        for (int p = 0; p < d; ++p) {
            for (int q = p + 1; q < d; ++q) {
                double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < d; ++k) {
                    double akp = a.at(k, p);
                    double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    double apk = a.at(p, k);
                    double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) ev[static_cast<std::size_t>(i)] = a.at(i, i);
    return ev;
}

} // namespace

double effective_rank(const Tensor& x) {
    if (x.rows() < 2) throw ArgumentError("effective_rank: need at least two rows");
    Tensor cov = covariance(x);
    std::vector<double> ev = symmetric_eigenvalues(cov);
    // Singular values of the centered matrix are sqrt of covariance eigenvalues
    // up to one global scale, which the normalization cancels.
    double total = 0.0;
    for (double& v : ev) {
        v = v > 0.0 ? std::sqrt(v) : 0.0;
        total += v;
    }
    if (total <= 0.0) return 1.0; // rank-0 data: a single direction at most
    double h = 0.0;
    for (double v : ev) {
        if (v > 0.0) {
            double p = v / total;
            h -= p * std::log(p);
        }
    }
    return std::exp(h);
}

double capacity_probe_entropy(const ParamStore& params, const BankConfig& cfg) {
    const Tensor& codes = params.value("bank.codes");
    std::vector<double> counts(static_cast<std::size_t>(cfg.total_codes()), 0.0);
    Tensor book(cfg.codes_per_book, cfg.dim);
    for (int m = 0; m < cfg.num_codebooks; ++m) {
        for (int i = 0; i < cfg.codes_per_book; ++i) {
            auto src = codes.row(m * cfg.codes_per_book + i);
            std::copy(src.begin(), src.end(), book.row(i).begin());
        }
        for (int i = 0; i < cfg.codes_per_book; ++i) {
            int idx = vq_lookup(codes.row(m * cfg.codes_per_book + i), book);
            counts[static_cast<std::size_t>(m * cfg.codes_per_book + idx)] += 1.0;
        }
    }
    return utilization_entropy(counts);
}

DiagnosticsReport run_diagnostics(Model& model, const DomainCorpus& corpus) {
    if (corpus.graphs.empty()) throw ArgumentError("run_diagnostics: empty corpus");
    int total_nodes = 0;
    for (const TAGraph& g : corpus.graphs) total_nodes += g.num_nodes;
    const int d = model.enc_cfg.hidden_dim;
    const int d_in = model.enc_cfg.input_dim;

    Tensor all_h(total_nodes, d);
    Tensor all_zq(total_nodes, d);
    Tensor all_x(total_nodes, d_in);
    std::vector<int> domains;
    domains.reserve(static_cast<std::size_t>(total_nodes));
    std::vector<double> counts(static_cast<std::size_t>(model.bank_cfg.total_codes()), 0.0);

    int base = 0;
    for (const TAGraph& g : corpus.graphs) {
        Embedded emb = embed_graph(g, model);
        std::vector<double> c = usage_counts(emb.outcome, model.bank_cfg);
        for (std::size_t i = 0; i < c.size(); ++i) counts[i] += c[i];
        for (int u = 0; u < g.num_nodes; ++u) {
            std::copy(emb.h.row(u).begin(), emb.h.row(u).end(), all_h.row(base + u).begin());
            std::copy(emb.outcome.zq.row(u).begin(), emb.outcome.zq.row(u).end(),
                      all_zq.row(base + u).begin());
            std::copy(g.node_features.row(u).begin(), g.node_features.row(u).end(),
                      all_x.row(base + u).begin());
            domains.push_back(g.domain_id);
        }
        base += g.num_nodes;
    }

    DiagnosticsReport report;
    report.kl = domain_kl_heatmap(all_h, domains);
    report.codebook_utilization_entropy = utilization_entropy(counts);
    report.mean_angular_h = angular_uniformity(all_h);
    report.mean_angular_zq = angular_uniformity(all_zq);
    report.effective_rank_h = effective_rank(all_h);
    report.landscape_zq = landscape_1d(all_zq);

    // Reconstructions through the feature head, projected in the original
    // feature space fitted on the true features.
    const Tensor& wf = model.params.value("dec.Wf");
    const Tensor& bf = model.params.value("dec.bf");
    Tensor recon = matmul(all_zq, wf);
    for (int i = 0; i < recon.rows(); ++i) {
        for (int c = 0; c < recon.cols(); ++c) recon.at(i, c) += bf.at(0, c);
    }
    report.landscape_recon = landscape_1d(recon, &all_x);
    return report;
}

namespace {

nlohmann::json landscape_json(const Landscape& l) {
    nlohmann::json j;
    j["direction"] = l.direction;
    j["variance"] = l.variance;
    j["lo"] = l.lo;
    j["hi"] = l.hi;
    j["hist_x"] = l.hist_x;
    j["hist_ref"] = l.hist_ref;
    j["degenerate"] = l.degenerate;
    return j;
}

void write_landscape_csv(const Landscape& l, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "bucket,lo,hi,count_x,count_ref\n";
    const int buckets = static_cast<int>(l.hist_x.size());
    const double width = buckets > 0 && l.hi > l.lo ? (l.hi - l.lo) / buckets : 0.0;
    char line[256];
    for (int b = 0; b < buckets; ++b) {
        int ref = b < static_cast<int>(l.hist_ref.size()) ? l.hist_ref[static_cast<std::size_t>(b)] : 0;
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%d,%d\n", b, l.lo + b * width,
                      l.lo + (b + 1) * width, l.hist_x[static_cast<std::size_t>(b)], ref);
        out << line;
    }
}

void write_kl_svg(const KlHeatmap& kl, const std::string& path) {
    const int n = kl.matrix.rows();
    const int cell = 40;
    double mx = 0.0;
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            double v = kl.matrix.at(a, b);
            if (std::isfinite(v)) mx = std::max(mx, v);
        }
    }
    std::ofstream out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << n * cell << "\" height=\""
        << n * cell << "\">\n";
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            double v = kl.matrix.at(a, b);
            int shade = 220;
            if (std::isfinite(v) && mx > 0.0) shade = 220 - static_cast<int>(200.0 * v / mx);
            const char* fill = std::isfinite(v) ? "rgb(%d,%d,255)" : "rgb(128,128,128)";
            char rect[256];
            std::snprintf(rect, sizeof rect,
                          "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"", b * cell,
                          a * cell, cell, cell);
            out << rect;
            char color[64];
            std::snprintf(color, sizeof color, fill, shade, shade);
            out << color << "\" stroke=\"black\"/>\n";
        }
    }
    out << "</svg>\n";
}

void write_histogram_svg(const Landscape& l, const std::string& path) {
    const int buckets = static_cast<int>(l.hist_x.size());
    const int w = 640;
    const int h = 240;
    int mx = 1;
    for (int v : l.hist_x) mx = std::max(mx, v);
    for (int v : l.hist_ref) mx = std::max(mx, v);
    std::ofstream out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\">\n";
    auto polyline = [&](const std::vector<int>& hist, const char* color) {
        if (hist.empty()) return;
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
        for (int b = 0; b < static_cast<int>(hist.size()); ++b) {
            double px = buckets > 1 ? static_cast<double>(b) * w / (buckets - 1) : w / 2.0;
            double py = h - static_cast<double>(hist[static_cast<std::size_t>(b)]) * (h - 10) / mx;
            char pt[64];
            std::snprintf(pt, sizeof pt, "%.2f,%.2f ", px, py);
            out << pt;
        }
        out << "\"/>\n";
    };
    polyline(l.hist_x, "steelblue");
    polyline(l.hist_ref, "darkorange");
    out << "</svg>\n";
}

} // namespace

void write_report_files(const DiagnosticsReport& report, const std::string& out_dir,
                        const std::string& ckpt_hash) {
    const std::string base = out_dir + "/" + ckpt_hash;

    nlohmann::json j;
    const int n = report.kl.matrix.rows();
    nlohmann::json kl_rows = nlohmann::json::array();
    for (int a = 0; a < n; ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (int b = 0; b < n; ++b) {
            double v = report.kl.matrix.at(a, b);
            if (std::isfinite(v)) {
                row.push_back(v);
            } else {
                row.push_back(nullptr);
            }
        }
        kl_rows.push_back(row);
    }
    j["pairwise_domain_kl"] = kl_rows;
    j["kl_defined"] = report.kl.defined;
    j["codebook_utilization_entropy"] = report.codebook_utilization_entropy;
    j["mean_pairwise_angular_distance_h"] = report.mean_angular_h;
    j["mean_pairwise_angular_distance_zq"] = report.mean_angular_zq;
    j["effective_rank"] = report.effective_rank_h;
    j["pca_1d_landscape_zq"] = landscape_json(report.landscape_zq);
    j["pca_1d_landscape_recon"] = landscape_json(report.landscape_recon);
    {
        std::ofstream out = open_out(base + ".report.json");
        out << j.dump(2) << "\n";
    }
    {
        std::ofstream out = open_out(base + ".kl.csv");
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                if (b > 0) out << ",";
                double v = report.kl.matrix.at(a, b);
                char buf[48];
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << (std::isfinite(v) ? buf : "nan");
            }
            out << "\n";
        }
    }
    write_landscape_csv(report.landscape_zq, base + ".landscape_zq.csv");
    write_landscape_csv(report.landscape_recon, base + ".landscape_recon.csv");
    write_kl_svg(report.kl, base + ".kl.svg");
    write_histogram_svg(report.landscape_recon, base + ".landscape.svg");
}

void write_loss_curve_svg(const std::vector<StepMetrics>& metrics, const std::string& path) {
    const int w = 640;
    const int h = 240;
    std::ofstream out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\">\n";
    if (!metrics.empty()) {
        double mx = 0.0;
        for (const StepMetrics& m : metrics) mx = std::max(mx, m.total);
        if (mx <= 0.0) mx = 1.0;
        out << "<polyline fill=\"none\" stroke=\"steelblue\" points=\"";
        const int n = static_cast<int>(metrics.size());
        for (int i = 0; i < n; ++i) {
            double px = n > 1 ? static_cast<double>(i) * w / (n - 1) : w / 2.0;
            double py = h - metrics[static_cast<std::size_t>(i)].total * (h - 10) / mx;
            char pt[64];
            std::snprintf(pt, sizeof pt, "%.2f,%.2f ", px, py);
            out << pt;
        }
        out << "\"/>\n";
    }
    out << "</svg>\n";
}

} // namespace mocgvq
