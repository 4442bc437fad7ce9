#include "groundgen/dataset_store.hpp"

#include "groundgen/text.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_set>

#include <unistd.h>

namespace groundgen::store {

namespace fs = std::filesystem;
using json = ojson;

const std::string* DatasetRecord::element(std::string_view name) const {
    for (const auto& [k, v] : elements) {
        if (k == name) return &v;
    }
    return nullptr;
}

std::string make_record_id(std::string_view passage_id, std::string_view model_id, std::string_view prompt_hash) {
    std::string key;
    key.append(passage_id).push_back('\x1f');
    key.append(model_id).push_back('\x1f');
    key.append(prompt_hash);
    return text::sha256_hex(key).substr(0, 32);
}

void validate(const DatasetRecord& r) {
    auto fail = [&](const std::string& what) {
        throw SchemaViolation("record " + (r.record_id.empty() ? std::string("<no id>") : r.record_id) + ": " + what);
    };
    if (r.record_id.empty()) fail("missing record_id");
    if (r.passage.passage_id.empty()) fail("missing passage.passage_id");
    if (r.passage.doc_id.empty()) fail("missing passage.doc_id");
    if (text::trim(r.passage.text).empty()) fail("empty passage text");
    if (r.task_name.empty()) fail("missing task_name");
    if (r.elements.empty()) fail("missing elements");
    std::set<std::string> names;
    for (const auto& [k, v] : r.elements) {
        if (k.empty()) fail("element with empty name");
        if (!names.insert(k).second) fail("duplicate element '" + k + "'");
        if (text::trim(v).empty()) fail("element '" + k + "' is empty");
    }
    for (const auto& s : {r.entailment, r.reward}) {
        if (s && (!std::isfinite(*s) || *s < 0.0 || *s > 1.0)) fail("score outside [0, 1]");
    }
    if (r.model_id.empty()) fail("missing generator.model_id");
}

ojson passage_to_json(const content::Passage& p) {
    ojson j;
    j["passage_id"] = p.passage_id;
    j["doc_id"] = p.doc_id;
    j["section_path"] = p.section_path;
    j["text"] = p.text;
    j["word_count"] = p.word_count;
    if (p.below_min) j["below_min"] = true;
    return j;
}

namespace {

template <class T>
T required(const json& j, const char* key, const char* where) {
    if (!j.is_object() || !j.contains(key)) {
        throw SchemaViolation(std::string(where) + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw SchemaViolation(std::string(where) + ": field '" + key + "' has the wrong type");
    }
}

std::optional<double> optional_number(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_number()) throw SchemaViolation(std::string("field '") + key + "' is not a number");
    return j.at(key).get<double>();
}

}  // namespace

content::Passage passage_from_json(const json& j) {
    content::Passage p;
    p.passage_id = required<std::string>(j, "passage_id", "passage");
    p.doc_id = required<std::string>(j, "doc_id", "passage");
    p.text = required<std::string>(j, "text", "passage");
    if (j.contains("section_path")) p.section_path = required<std::vector<std::string>>(j, "section_path", "passage");
    p.word_count = j.contains("word_count") ? required<std::size_t>(j, "word_count", "passage") : text::word_count(p.text);
    if (j.contains("below_min")) p.below_min = required<bool>(j, "below_min", "passage");
    return p;
}

ojson decode_params_to_json(const DecodeParams& d) {
    ojson j;
    j["max_new_tokens"] = d.max_new_tokens;
    j["temperature"] = d.temperature;
    j["stop"] = d.stop;
    return j;
}

DecodeParams decode_params_from_json(const json& j) {
    DecodeParams d;
    d.max_new_tokens = required<int>(j, "max_new_tokens", "decode_params");
    d.temperature = required<double>(j, "temperature", "decode_params");
    d.stop = required<std::vector<std::string>>(j, "stop", "decode_params");
    return d;
}

ojson to_json(const DatasetRecord& r) {
    ojson j;
    j["record_id"] = r.record_id;
    ojson p;
    p["passage_id"] = r.passage.passage_id;
    p["doc_id"] = r.passage.doc_id;
    p["section_path"] = r.passage.section_path;
    p["text"] = r.passage.text;
    j["passage"] = std::move(p);
    j["task_name"] = r.task_name;
    ojson els = ojson::object();
    for (const auto& [k, v] : r.elements) els[k] = v;
    j["elements"] = std::move(els);
    j["scores"] = {{"entailment", r.entailment ? ojson(*r.entailment) : ojson(nullptr)},
                   {"reward", r.reward ? ojson(*r.reward) : ojson(nullptr)}};
    j["generator"] = {{"model_id", r.model_id}, {"decode_params", decode_params_to_json(r.decode_params)}};
    j["pipeline_version"] = r.pipeline_version;
    j["created_at"] = r.created_at;
    return j;
}

DatasetRecord record_from_json(const json& j) {
    DatasetRecord r;
    r.record_id = required<std::string>(j, "record_id", "record");
    if (!j.contains("passage")) throw SchemaViolation("record: missing field 'passage'");
    r.passage = passage_from_json(j.at("passage"));
    r.task_name = required<std::string>(j, "task_name", "record");
    if (!j.contains("elements") || !j.at("elements").is_object()) {
        throw SchemaViolation("record " + r.record_id + ": missing elements");
    }
    for (const auto& [k, v] : j.at("elements").items()) {
        if (!v.is_string()) throw SchemaViolation("record " + r.record_id + ": element '" + k + "' is not a string");
        r.elements.emplace_back(k, v.get<std::string>());
    }
    if (j.contains("scores")) {
        r.entailment = optional_number(j.at("scores"), "entailment");
        r.reward = optional_number(j.at("scores"), "reward");
    }
    const auto& gen = j.contains("generator") ? j.at("generator") : json::object();
    r.model_id = required<std::string>(gen, "model_id", "generator");
    if (gen.contains("decode_params")) r.decode_params = decode_params_from_json(gen.at("decode_params"));
    r.pipeline_version = required<std::string>(j, "pipeline_version", "record");
    r.created_at = required<std::string>(j, "created_at", "record");
    validate(r);
    return r;
}

std::string iso8601_utc(std::int64_t epoch_seconds) {
    const auto t = static_cast<std::time_t>(epoch_seconds);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---- JSONL ----

namespace {

bool is_header(const json& j) { return j.is_object() && j.size() == 1 && j.contains(std::string(kHeaderKey)); }

std::string io_message(const std::string& what, const std::string& path) {
    return what + " " + path + ": " + std::strerror(errno);
}

}  // namespace

JsonlWriter::JsonlWriter(const std::string& path, bool truncate, const std::optional<ojson>& header, FsyncPolicy fsync)
    : path_(path), fsync_(fsync) {
    if (const auto dir = fs::path(path).parent_path(); !dir.empty()) {
        std::error_code ec;
        fs::create_directories(dir, ec);
    }
    if (!truncate && fs::exists(path)) count_ = repair_torn_tail(path);
    f_ = std::fopen(path.c_str(), truncate ? "wb" : "ab");
    if (!f_) throw IoError(io_message("cannot open", path));
    if (header && std::ftell(f_) == 0) {
        ojson h;
        h[std::string(kHeaderKey)] = *header;
        const auto line = h.dump() + "\n";
        if (std::fwrite(line.data(), 1, line.size(), f_) != line.size()) throw IoError(io_message("write", path_));
        commit();
    }
}

JsonlWriter::~JsonlWriter() {
    if (f_) std::fclose(f_);
}

std::size_t JsonlWriter::append(const ojson& line) { return append_raw(line.dump()); }

std::size_t JsonlWriter::append_raw(const std::string& line) {
    if (line.find('\n') != std::string::npos) throw SchemaViolation("JSONL line contains a raw newline");
    const auto buf = line + "\n";
    if (std::fwrite(buf.data(), 1, buf.size(), f_) != buf.size()) throw IoError(io_message("write", path_));
    return count_++;
}

void JsonlWriter::commit() {
    if (std::fflush(f_) != 0) throw IoError(io_message("flush", path_));
    if (fsync_ == FsyncPolicy::per_commit && ::fsync(fileno(f_)) != 0) throw IoError(io_message("fsync", path_));
}

JsonlContents read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    JsonlContents out;
    std::size_t pos = 0, line_no = 0;
    while (pos < data.size()) {
        const auto nl = data.find('\n', pos);
        if (nl == std::string::npos) break;  // torn tail
        const std::string_view line(data.data() + pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (text::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaViolation(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (line_no == 1 && is_header(j)) {
            out.header = j.at(std::string(kHeaderKey));
            continue;
        }
        out.lines.push_back(std::move(j));
    }
    return out;
}

std::size_t repair_torn_tail(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto last_nl = data.rfind('\n');
    const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != data.size()) fs::resize_file(path, keep);
    std::size_t lines = 0;
    bool first = true;
    for (std::size_t pos = 0; pos < keep;) {
        const auto nl = data.find('\n', pos);
        const std::string_view line(data.data() + pos, nl - pos);
        pos = nl + 1;
        if (text::trim(line).empty()) continue;
        if (first && line.find(std::string("\"") + std::string(kHeaderKey) + "\"") != std::string_view::npos) {
            first = false;
            continue;
        }
        first = false;
        ++lines;
    }
    return lines;
}

void write_records(const std::string& path, const std::vector<DatasetRecord>& records,
                   const std::optional<ojson>& header) {
    JsonlWriter w(path, true, header);
    for (const auto& r : records) {
        validate(r);
        w.append(to_json(r));
    }
    w.commit();
}

std::vector<DatasetRecord> read_records(const std::string& path) {
    std::vector<DatasetRecord> out;
    for (const auto& j : read_jsonl(path).lines) out.push_back(record_from_json(j));
    return out;
}

// ---- checkpoints ----

std::optional<Checkpoint> load_checkpoint(const std::string& path) {
    if (!fs::exists(path)) return std::nullopt;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        const auto j = json::parse(in);
        Checkpoint cp;
        cp.run_id = j.at("run_id").get<std::string>();
        cp.last_committed_index = j.at("last_committed_index").get<std::int64_t>();
        cp.config_hash = j.at("config_hash").get<std::string>();
        return cp;
    } catch (const json::exception& e) {
        throw SchemaViolation("bad checkpoint " + path + ": " + e.what());
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    ojson j;
    j["run_id"] = cp.run_id;
    j["last_committed_index"] = cp.last_committed_index;
    j["config_hash"] = cp.config_hash;
    const auto tmp = path + ".tmp";
    {
        std::FILE* f = std::fopen(tmp.c_str(), "wb");
        if (!f) throw IoError(io_message("cannot open", tmp));
        const auto s = j.dump(2) + "\n";
        const bool ok = std::fwrite(s.data(), 1, s.size(), f) == s.size() && std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
        std::fclose(f);
        if (!ok) throw IoError(io_message("write", tmp));
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

// ---- dedup / split ----

std::string dedup_key(const DatasetRecord& r) {
    auto norm = [](std::string_view s) { return text::to_lower_ascii(text::normalize_whitespace(s)); };
    std::string key = norm(r.passage.text);
    for (const auto& [k, v] : r.elements) {
        key += '\x1e';
        key += k;
        key += '\x1f';
        key += norm(v);
    }
    return text::sha256_hex(key);
}

std::vector<DatasetRecord> dedup(std::vector<DatasetRecord> records) {
    std::unordered_set<std::string> seen;
    std::vector<DatasetRecord> out;
    out.reserve(records.size());
    for (auto& r : records) {
        if (seen.insert(dedup_key(r)).second) out.push_back(std::move(r));
    }
    return out;
}

std::array<std::size_t, 3> split_counts(std::size_t groups, const SplitRatios& ratios) {
    const std::array<double, 3> r{ratios.train, ratios.dev, ratios.test};
    for (const double x : r) {
        if (!std::isfinite(x) || x < 0.0) throw RatioError("split ratios must be finite and >= 0");
    }
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw RatioError("split ratios must sum to 1");
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        // Round away representation noise such as 0.8 * 10 = 8.000000000000002.
        const double exact = std::round(r[i] * static_cast<double>(groups) * 1e9) / 1e9;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < groups; ++k, ++assigned) ++counts[order[k % 3]];
    return counts;
}

Splits split(const std::vector<DatasetRecord>& records, const SplitRatios& ratios, std::uint64_t seed) {
    std::vector<std::string> docs;
    {
        std::set<std::string> s;
        for (const auto& r : records) s.insert(r.passage.doc_id);
        docs.assign(s.begin(), s.end());
    }
    const auto counts = split_counts(docs.size(), ratios);
    std::mt19937_64 rng(seed);
    for (std::size_t i = docs.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t threshold = (0 - bound) % bound;
        std::uint64_t x;
        do x = rng();
        while (x < threshold);
        std::swap(docs[i - 1], docs[x % bound]);
    }
    std::map<std::string, int> where;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        where[docs[i]] = i < counts[0] ? 0 : i < counts[0] + counts[1] ? 1 : 2;
    }
    Splits out;
    for (const auto& r : records) {
        const int s = where.at(r.passage.doc_id);
        (s == 0 ? out.train : s == 1 ? out.dev : out.test).push_back(r);
    }
    return out;
}

}  // namespace groundgen::store
