#pragma once

#include "groundgen/content_prep.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace groundgen::store {

using ojson = nlohmann::ordered_json;

class StoreError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class IoError : public StoreError {
public:
    using StoreError::StoreError;
};
class SchemaViolation : public StoreError {
public:
    using StoreError::StoreError;
};
class RatioError : public StoreError {
public:
    using StoreError::StoreError;
};
class ConfigMismatch : public StoreError {
public:
    using StoreError::StoreError;
};

struct DecodeParams {
    int max_new_tokens = 1024;
    double temperature = 0.0;
    std::vector<std::string> stop;
};

struct DatasetRecord {
    std::string record_id;
    content::Passage passage;
    std::string task_name;
    std::vector<std::pair<std::string, std::string>> elements;  // (name without brackets, text), task order
    std::optional<double> entailment;
    std::optional<double> reward;
    std::string model_id;
    DecodeParams decode_params;
    std::string pipeline_version;
    std::string created_at;  // ISO 8601 UTC

    // Text of the element named `name`, or nullptr.
    const std::string* element(std::string_view name) const;
};

// First 128 bits (32 hex chars) of sha256(passage_id \x1f model_id \x1f prompt_hash).
std::string make_record_id(std::string_view passage_id, std::string_view model_id, std::string_view prompt_hash);

void validate(const DatasetRecord& r);  // throws SchemaViolation

ojson passage_to_json(const content::Passage& p);
content::Passage passage_from_json(const ojson& j);  // throws SchemaViolation

ojson decode_params_to_json(const DecodeParams& d);
DecodeParams decode_params_from_json(const ojson& j);

ojson to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const ojson& j);  // throws SchemaViolation

// Seconds since the epoch -> "YYYY-MM-DDTHH:MM:SSZ".
std::string iso8601_utc(std::int64_t epoch_seconds);

// ---- JSONL files ----

inline constexpr std::string_view kHeaderKey = "__header__";

enum class FsyncPolicy { none, per_commit };

// Single-writer JSONL appender. Lines are written whole and flushed per commit.
class JsonlWriter {
public:
    // truncate=false appends to an existing file; a header is written only to an empty file.
    JsonlWriter(const std::string& path, bool truncate, const std::optional<ojson>& header = std::nullopt,
                FsyncPolicy fsync = FsyncPolicy::none);
    ~JsonlWriter();
    JsonlWriter(const JsonlWriter&) = delete;
    JsonlWriter& operator=(const JsonlWriter&) = delete;

    // Returns the committed index (0-based, header excluded).
    std::size_t append(const ojson& line);
    // Raw pre-serialized line without trailing newline.
    std::size_t append_raw(const std::string& line);
    void commit();  // flush (and fsync per policy)
    std::size_t count() const { return count_; }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::FILE* f_ = nullptr;
    FsyncPolicy fsync_;
    std::size_t count_ = 0;
};

struct JsonlContents {
    std::optional<ojson> header;
    std::vector<ojson> lines;
};

// Reads every complete line; a header line is returned separately. A final line
// without a newline is ignored (torn write). Throws IoError / SchemaViolation.
JsonlContents read_jsonl(const std::string& path);

// Drops a torn final line so the file ends with '\n'. Returns the number of data lines kept.
std::size_t repair_torn_tail(const std::string& path);

void write_records(const std::string& path, const std::vector<DatasetRecord>& records,
                   const std::optional<ojson>& header = std::nullopt);
std::vector<DatasetRecord> read_records(const std::string& path);

// ---- checkpoints ----

struct Checkpoint {
    std::string run_id;
    std::int64_t last_committed_index = -1;  // -1: nothing committed
    std::string config_hash;

    bool operator==(const Checkpoint&) const = default;
};

std::optional<Checkpoint> load_checkpoint(const std::string& path);
void save_checkpoint(const std::string& path, const Checkpoint& cp);  // write temp file, then rename

// ---- dedup / split ----

// Key over whitespace-normalized, lowercased content and elements.
std::string dedup_key(const DatasetRecord& r);
std::vector<DatasetRecord> dedup(std::vector<DatasetRecord> records);

struct SplitRatios {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
};

struct Splits {
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> dev;
    std::vector<DatasetRecord> test;
};

// Number of groups per split by largest remainder (ties favour train, then dev).
std::array<std::size_t, 3> split_counts(std::size_t groups, const SplitRatios& ratios);
Splits split(const std::vector<DatasetRecord>& records, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace groundgen::store
