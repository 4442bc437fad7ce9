#pragma once

#include "groundgen/model_gateway.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace groundgen::metrics {

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class EmptyCandidate : public MetricsError {
public:
    using MetricsError::MetricsError;
};
class TextTooShort : public MetricsError {
public:
    using MetricsError::MetricsError;
};
class EmptyDataset : public MetricsError {
public:
    using MetricsError::MetricsError;
};
class LengthMismatch : public MetricsError {
public:
    using MetricsError::MetricsError;
};

// ROUGE-L tokens: pipeline words, ASCII-lowercased. No stemming or stopwords.
std::vector<std::string> rouge_tokens(std::string_view s);
inline constexpr std::string_view kRougeTokenizer = "pipeline-words+lowercase";

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);
RougeScore rouge_l_tokens(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);
RougeScore rouge_l(std::string_view candidate, std::string_view reference);

// Fraction of normalized candidate tokens present in the normalized content vocabulary.
double k_precision(std::string_view candidate, std::string_view content);  // throws EmptyCandidate

struct VocdConfig {
    std::size_t size_min = 35;
    std::size_t size_max = 50;
    std::size_t samples_per_size = 100;
    std::uint64_t seed = 42;
};

inline constexpr double kVocdDMax = 10000.0;

struct DiversityReport {
    double d_value = 0.0;
    bool saturated = false;  // d_value is the D_MAX sentinel
    std::size_t samples_per_size = 0;
    std::size_t size_min = 0;
    std::size_t size_max = 0;
    std::uint64_t seed = 0;
    std::vector<double> mean_ttr;  // one per sample size, size_min first
};

// Theoretical vocd curve, written as 2 / (1 + sqrt(1 + 2n/D)) to avoid cancellation.
double vocd_curve(double d, double n);

// Least-squares fit of D over (n, ttr) points; returns kVocdDMax when the fit runs to the upper bound.
double fit_vocd_d(const std::vector<double>& sizes, const std::vector<double>& ttr);

// Works on normalized tokens; randomness comes only from cfg.seed.
DiversityReport vocd_d(std::string_view text, const VocdConfig& cfg = {});
DiversityReport vocd_d_tokens(const std::vector<std::string>& tokens, const VocdConfig& cfg = {});

// Unbiased integer in [0, bound) from a 64-bit Mersenne Twister (rejection sampling),
// so samples are identical across standard libraries.
std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound);

enum class DiversityMode { pooled, per_response };

struct DatasetStats {
    std::size_t n_samples = 0;
    double mean_response_words = 0.0;
    std::optional<double> lexical_diversity;  // absent when the text is too short
    DiversityMode mode = DiversityMode::pooled;
};

DatasetStats dataset_stats(const std::vector<std::string>& responses, const VocdConfig& cfg = {},
                           DiversityMode mode = DiversityMode::pooled);

struct ExampleMetrics {
    RougeScore rouge_l;
    std::optional<double> k_precision;  // absent for a prediction with no tokens
    std::optional<double> reward;
    std::optional<double> entailment;
    std::string error;  // scorer failure, if any
};

struct Aggregate {
    RougeScore rouge_l;
    std::optional<double> k_precision;
    std::optional<double> reward;
    std::optional<double> entailment;
};

struct MetricReport {
    std::vector<ExampleMetrics> per_example;
    Aggregate aggregate;
    std::size_t n = 0;
    std::string tokenizer = std::string(kRougeTokenizer);
};

struct EvalOptions {
    bool use_reward = false;
    bool use_nli = false;
    std::size_t max_in_flight = 4;
};

struct EvalInputs {
    std::vector<std::string> preds;
    std::vector<std::string> golds;
    std::vector<std::string> contents;
    std::vector<std::string> questions;  // optional; reward instruction, falls back to content
};

MetricReport eval_predictions(const EvalInputs& in, const EvalOptions& opt, gateway::RewardClient* reward = nullptr,
                              gateway::NliClient* nli = nullptr);

std::string report_to_json(const MetricReport& r);
std::string report_to_csv(const MetricReport& r);

}  // namespace groundgen::metrics
