#pragma once

#include "groundgen/content_prep.hpp"
#include "groundgen/dataset_store.hpp"
#include "groundgen/filter_chain.hpp"
#include "groundgen/metrics.hpp"
#include "groundgen/model_gateway.hpp"
#include "groundgen/task_templates.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace groundgen::pipeline {

inline constexpr const char* kPipelineVersion = "0.1.0";

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
// Empty or unusable input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
// Endpoint unreachable at the startup probe.
class EndpointUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TaskSection {
    templates::TaskSpec spec = templates::TaskSpec::defaults(templates::TaskName::qa);
    std::string exemplars;  // JSONL path; empty = bundled pool for the task
};

struct GenerationSection {
    int max_new_tokens = 1024;
    double temperature = 0.0;
    std::size_t n_per_passage = 1;
    std::optional<std::vector<std::string>> stop;  // default: the document marker
};

struct EndpointSection {
    std::string url;
    std::string model_id;
    std::string api_key;  // never serialized
    std::int64_t timeout_ms = 60000;
    int max_attempts = 5;
    std::int64_t backoff_ms = 1000;
    gateway::RewardTransform reward_transform = gateway::RewardTransform::logistic;

    gateway::EndpointConfig to_gateway() const;
};

struct EndpointsSection {
    EndpointSection completion;
    EndpointSection nli;
    EndpointSection reward;
};

struct RunSection {
    std::uint64_t seed = 42;
    std::size_t max_in_flight = 4;
    std::string out_dir = "out";
    bool resume = false;
    std::string run_id;                     // empty: derived from config_hash
    std::optional<std::string> created_at;  // fixed timestamp for reproducible output
    std::optional<store::SplitRatios> split;
    bool dedup = true;
};

struct StatsSection {
    std::size_t size_min = 35;
    std::size_t size_max = 50;
    std::size_t samples_per_size = 100;
    metrics::DiversityMode mode = metrics::DiversityMode::pooled;
};

struct PipelineConfig {
    TaskSection task;
    content::SegmentationConfig segmentation;
    GenerationSection generation;
    filter::FilterConfig filter;
    EndpointsSection endpoints;
    RunSection run;
    StatsSection stats;

    // Defaults for the named task, endpoints from the environment.
    static PipelineConfig defaults(templates::TaskName task = templates::TaskName::qa);
    void validate() const;  // throws ConfigError

    store::DecodeParams decode_params() const;
    std::string run_id() const;
    std::string created_at() const;
    metrics::VocdConfig vocd() const;
};

// Overlays a JSON config document on top of the environment defaults.
// Unknown keys and wrong types raise ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);

// Canonical form: fixed key order, without secrets and without run-local settings
// (out_dir, resume, max_in_flight) that cannot change the produced data.
store::ojson canonical_json(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

// Header object embedded as the first line of every output file.
store::ojson output_header(const PipelineConfig& cfg, const std::string& stage);

struct Clients {
    std::shared_ptr<gateway::CompletionClient> completion;
    std::shared_ptr<gateway::NliClient> nli;
    std::shared_ptr<gateway::RewardClient> reward;
};

// Fills missing clients from the endpoint section. Throws ConfigError when a needed URL is unset.
void ensure_clients(Clients& c, const PipelineConfig& cfg, bool completion, bool scoring);

// ---- file names inside out_dir ----
inline constexpr const char* kPassagesFile = "passages.jsonl";
inline constexpr const char* kRawFile = "raw_generations.jsonl";
inline constexpr const char* kDatasetFile = "dataset.jsonl";
inline constexpr const char* kRejectsFile = "rejects.jsonl";
inline constexpr const char* kCheckpointFile = "checkpoint.json";
inline constexpr const char* kFunnelFile = "funnel.json";
inline constexpr const char* kStatsFile = "stats.json";

// ---- prepare ----

struct PrepareReport {
    std::size_t docs_in = 0;
    std::size_t passages_out = 0;
    std::size_t rejected_docs = 0;
    std::vector<std::string> rejections;  // "doc_id: reason"
    bool pre_chunked = false;
};

// input: a directory of .html files, a JSONL file of raw documents {doc_id, source_uri, html},
// or a JSONL file of ready passages {passage_id, doc_id, section_path, text}.
std::vector<content::RawDocument> load_raw_documents(const std::string& input);
PrepareReport prepare(const std::string& input, const PipelineConfig& cfg, const std::string& out_path);

std::vector<content::Passage> read_passages(const std::string& path);

// ---- generate ----

struct GenerationJob {
    std::size_t index = 0;
    const content::Passage* passage = nullptr;
    templates::PromptText prompt;
    std::string prompt_hash;
};

class Generator {
public:
    Generator(const PipelineConfig& cfg, const std::vector<content::Passage>& passages);
    std::size_t size() const { return passages_.size() * cfg_.generation.n_per_passage; }
    // Prompt for generation `index` (passage index / n_per_passage, exemplar rotation = index).
    GenerationJob job(std::size_t index) const;
    const templates::TaskSpec& task() const { return cfg_.task.spec; }

private:
    const PipelineConfig& cfg_;
    const std::vector<content::Passage>& passages_;
    std::vector<templates::Exemplar> pool_;
};

std::vector<templates::Exemplar> load_task_exemplars(const PipelineConfig& cfg);

struct GenerateOptions {
    std::optional<std::size_t> max_records;  // stop after this many new records in this invocation
};

struct GenerateReport {
    std::size_t total = 0;
    std::size_t already_committed = 0;
    std::size_t generated = 0;
    std::size_t failed = 0;  // calls that raised; stored with an "error" field
    bool complete = false;
};

// Throws ConfigError (incl. store::ConfigMismatch on resume), EndpointUnavailable, DataError.
GenerateReport generate(const std::string& passages_path, const PipelineConfig& cfg, const std::string& out_path,
                        const std::string& checkpoint_path, gateway::CompletionClient& client,
                        const GenerateOptions& opt = {});

// ---- filter ----

struct FilterReport {
    filter::Funnel funnel;
    std::size_t duplicates = 0;
    std::size_t written = 0;
    std::optional<std::array<std::size_t, 3>> split_sizes;
};

filter::GenerationRecord generation_from_json(const store::ojson& j, const templates::TaskSpec& task);
store::DatasetRecord dataset_record(const filter::GenerationRecord& g, const PipelineConfig& cfg);

FilterReport filter_stage(const std::string& raw_path, const PipelineConfig& cfg, const std::string& dataset_path,
                          const std::string& rejects_path, gateway::NliClient& nli, gateway::RewardClient& reward);

store::ojson funnel_to_json(const filter::Funnel& f);

// ---- stats / eval ----

// Response element of each record (the task's last marker).
std::vector<std::string> response_texts(const std::vector<store::DatasetRecord>& records);
store::ojson stats_to_json(const metrics::DatasetStats& s, const metrics::VocdConfig& vocd);
std::string render_stats(const metrics::DatasetStats& s);

// One value per line: a JSON string, or an object with a "text" field.
std::vector<std::string> read_text_column(const std::string& path);
std::string render_eval(const metrics::MetricReport& r);

}  // namespace groundgen::pipeline
