#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mocgvq/quantizer.hpp"
#include "mocgvq/tensor.hpp"

namespace mocgvq {

struct Model;
struct DomainCorpus;
struct StepMetrics;

/// Joint (codebook id, code index) activation histogram, length M*K, summed
/// over every node and active slot of the outcome.
std::vector<double> usage_counts(const QuantizeOutcome& outcome, const BankConfig& cfg);

/// Shannon entropy (nats) of the normalized histogram. Zero buckets drop out;
/// an empty or all-zero histogram is an argument error.
double utilization_entropy(const std::vector<double>& joint_counts);

/// Mean arccos(cosine similarity) over unordered row pairs. Zero rows are
/// excluded; the count of exclusions lands in *excluded_rows when given.
/// Fewer than two usable rows is an argument error.
double angular_uniformity(const Tensor& x, int* excluded_rows = nullptr);

/// Pairwise KL between per-domain diagonal Gaussians (population variance,
/// 1e-6 floor). Domains with fewer than two samples are marked undefined and
/// their rows/columns hold NaN instead of aborting.
struct KlHeatmap {
    Tensor matrix;                     // D x D; [a][b] = KL(domain a || domain b)
    std::vector<std::uint8_t> defined; // per domain
};

KlHeatmap domain_kl_heatmap(const Tensor& h, const std::vector<int>& domain_labels);

/// Top principal direction by power iteration on the population covariance
/// (tolerance 1e-9, at most 10k iterations, sign fixed so the largest-
/// magnitude component is positive), then 64-bucket histograms of the
/// projections over the pooled range. The direction is fit on `reference`
/// when given, else on x, so both datasets share one transformation.
struct Landscape {
    std::vector<double> direction;
    double variance = 0.0; // top covariance eigenvalue of the fitting set
    double lo = 0.0;
    double hi = 0.0;
    std::vector<int> hist_x;
    std::vector<int> hist_ref; // empty without a reference
    bool degenerate = false;   // zero-variance input collapses to one bucket
};

Landscape landscape_1d(const Tensor& x, const Tensor* reference = nullptr);

/// exp(entropy of the normalized singular-value spectrum) of the row-centered
/// matrix; the continuous stand-in for dim(span(X)).
double effective_rank(const Tensor& x);

/// Entropy of the forced-routing probe: every code vector is fed to its own
/// codebook, so a healthy bank touches all M*K (codebook, code) pairs.
double capacity_probe_entropy(const ParamStore& params, const BankConfig& cfg);

struct DiagnosticsReport {
    KlHeatmap kl;
    double codebook_utilization_entropy = 0.0;
    double mean_angular_h = 0.0;
    double mean_angular_zq = 0.0;
    double effective_rank_h = 0.0;
    Landscape landscape_zq;
    Landscape landscape_recon; // reconstructed features vs original features
};

/// Frozen-model sweep over the whole corpus.
DiagnosticsReport run_diagnostics(Model& model, const DomainCorpus& corpus);

/// Emits <hash>.report.json, <hash>.kl.csv, <hash>.landscape_zq.csv,
/// <hash>.landscape_recon.csv, <hash>.kl.svg, <hash>.landscape.svg.
void write_report_files(const DiagnosticsReport& report, const std::string& out_dir,
                        const std::string& ckpt_hash);

/// Loss-total curve rendered straight from the metric rows.
void write_loss_curve_svg(const std::vector<StepMetrics>& metrics, const std::string& path);

} // namespace mocgvq
