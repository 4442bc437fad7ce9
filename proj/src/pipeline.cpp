#include "groundgen/pipeline.hpp"

#include "groundgen/html.hpp"
#include "groundgen/text.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#ifndef GROUNDGEN_DEFAULT_DATA_DIR
#define GROUNDGEN_DEFAULT_DATA_DIR "data"
#endif

namespace groundgen::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using store::ojson;

// ---- config ----

gateway::EndpointConfig EndpointSection::to_gateway() const {
    gateway::EndpointConfig c;
    c.url = url;
    c.model_id = model_id.empty() ? url : model_id;
    c.api_key = api_key;
    c.timeout = std::chrono::milliseconds(timeout_ms);
    c.retry.max_attempts = max_attempts;
    c.retry.base = std::chrono::milliseconds(backoff_ms);
    c.reward_transform = reward_transform;
    return c;
}

namespace {

std::string env_or(const char* name, const std::string& fallback = {}) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

// Walks one JSON object, remembering which keys were consumed so leftovers can be rejected.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }
    ~Section() = default;

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
    }

    template <class T>
    void get_opt(const char* key, std::optional<T>& out) {
        if (!has(key)) return;
        T v{};
        get(key, v);
        out = std::move(v);
    }

    std::optional<Section> child(const char* key) {
        if (!has(key)) return std::nullopt;
        return Section(j_.at(key), where_ + "." + key);
    }

    const json& at(const char* key) const { return j_.at(key); }
    const std::string& where() const { return where_; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

template <class F>
auto convert(const std::string& where, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

templates::Rational parse_ratio(Section& s, const char* key, templates::Rational fallback) {
    if (!s.has(key)) return fallback;
    const auto& v = s.at(key);
    const auto where = s.where() + "." + key;
    return convert(where, [&] {
        if (v.is_string()) return templates::Rational::parse(v.get<std::string>());
        if (v.is_number()) return templates::Rational::from_double(v.get<double>());
        throw ConfigError(where + ": expected a number or \"a/b\"");
    });
}

void read_endpoint(Section& parent, const char* key, EndpointSection& e, bool reward) {
    auto s = parent.child(key);
    if (!s) return;
    s->get("url", e.url);
    s->get("model_id", e.model_id);
    s->get("api_key", e.api_key);
    s->get("timeout_ms", e.timeout_ms);
    s->get("max_attempts", e.max_attempts);
    s->get("backoff_ms", e.backoff_ms);
    if (reward && s->has("transform")) {
        std::string t;
        s->get("transform", t);
        if (t == "logistic") e.reward_transform = gateway::RewardTransform::logistic;
        else if (t == "identity") e.reward_transform = gateway::RewardTransform::identity;
        else throw ConfigError(s->where() + ".transform: expected logistic or identity");
    }
    s->finish();
}

std::string_view to_string(gateway::RewardTransform t) {
    return t == gateway::RewardTransform::logistic ? "logistic" : "identity";
}

std::string_view to_string(metrics::DiversityMode m) {
    return m == metrics::DiversityMode::pooled ? "pooled" : "per_response";
}

std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return text::sha256_hex(ss.str());
}

std::string exemplars_path(const PipelineConfig& cfg) {
    if (!cfg.task.exemplars.empty()) return cfg.task.exemplars;
    return std::string(GROUNDGEN_DEFAULT_DATA_DIR) + "/exemplars/" +
           std::string(templates::to_string(cfg.task.spec.task_name)) + ".jsonl";
}

}  // namespace

PipelineConfig PipelineConfig::defaults(templates::TaskName task) {
    PipelineConfig c;
    c.task.spec = templates::TaskSpec::defaults(task);
    c.filter = filter::FilterConfig::for_task(c.task.spec);
    c.endpoints.completion.url = env_or("GENIE_COMPLETION_URL");
    c.endpoints.nli.url = env_or("GENIE_NLI_URL");
    c.endpoints.reward.url = env_or("GENIE_REWARD_URL");
    const auto key = env_or("GENIE_API_KEY");
    c.endpoints.completion.api_key = c.endpoints.nli.api_key = c.endpoints.reward.api_key = key;
    return c;
}

void PipelineConfig::validate() const {
    convert("task", [&] { task.spec.validate(); });
    if (segmentation.min_words < 1 || segmentation.min_words >= segmentation.max_words) {
        throw ConfigError("segmentation: need 1 <= min_words < max_words");
    }
    if (generation.max_new_tokens < 1) throw ConfigError("generation.max_new_tokens must be >= 1");
    if (!std::isfinite(generation.temperature) || generation.temperature < 0) {
        throw ConfigError("generation.temperature must be >= 0");
    }
    if (generation.n_per_passage < 1) throw ConfigError("generation.n_per_passage must be >= 1");
    if (generation.stop) {
        for (const auto& s : *generation.stop) {
            if (s.empty()) throw ConfigError("generation.stop: empty stop sequence");
        }
    }
    convert("filter", [&] { filter.validate(); });
    for (const auto* e : {&endpoints.completion, &endpoints.nli, &endpoints.reward}) {
        if (e->timeout_ms < 1 || e->max_attempts < 1 || e->backoff_ms < 0) {
            throw ConfigError("endpoints: timeout_ms and max_attempts must be >= 1, backoff_ms >= 0");
        }
    }
    if (run.max_in_flight < 1) throw ConfigError("run.max_in_flight must be >= 1");
    if (run.split) convert("run.split", [&] { store::split_counts(0, *run.split); });
    if (stats.size_min < 1 || stats.size_min > stats.size_max || stats.samples_per_size < 1) {
        throw ConfigError("stats: need 1 <= size_min <= size_max and samples_per_size >= 1");
    }
}

store::DecodeParams PipelineConfig::decode_params() const {
    store::DecodeParams d;
    d.max_new_tokens = generation.max_new_tokens;
    d.temperature = generation.temperature;
    d.stop = generation.stop ? *generation.stop : std::vector<std::string>{task.spec.document_marker()};
    return d;
}

std::string PipelineConfig::run_id() const {
    return run.run_id.empty() ? "run-" + config_hash(*this).substr(0, 12) : run.run_id;
}

std::string PipelineConfig::created_at() const {
    if (run.created_at) return *run.created_at;
    if (const auto epoch = env_or("SOURCE_DATE_EPOCH"); !epoch.empty()) {
        try {
            return store::iso8601_utc(std::stoll(epoch));
        } catch (const std::exception&) {
            throw ConfigError("SOURCE_DATE_EPOCH is not an integer");
        }
    }
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    return store::iso8601_utc(std::chrono::duration_cast<std::chrono::seconds>(now).count());
}

metrics::VocdConfig PipelineConfig::vocd() const {
    metrics::VocdConfig v;
    v.size_min = stats.size_min;
    v.size_max = stats.size_max;
    v.samples_per_size = stats.samples_per_size;
    v.seed = run.seed;
    return v;
}

PipelineConfig config_from_json(const json& j) {
    Section root(j, "config");
    auto task_name = templates::TaskName::qa;
    std::optional<Section> task = root.child("task");
    if (task && task->has("name")) {
        std::string n;
        task->get("name", n);
        task_name = convert("task.name", [&] { return templates::task_name_from_string(n); });
    }
    auto cfg = PipelineConfig::defaults(task_name);

    if (task) {
        auto& t = *task;
        auto& spec = cfg.task.spec;
        t.get("markers", spec.markers);
        if (t.has("instruction_marker_text")) {
            std::string s;
            t.get("instruction_marker_text", s);
            spec.instruction_marker_text = s;
        }
        spec.length_ratio_cap = parse_ratio(t, "length_ratio_cap", spec.length_ratio_cap);
        t.get("min_example_words", spec.min_example_words);
        t.get("shots", spec.shots);
        t.get("exemplars", cfg.task.exemplars);
        t.finish();
    }
    cfg.filter = filter::FilterConfig::for_task(cfg.task.spec);

    if (auto s = root.child("segmentation")) {
        s->get("min_words", cfg.segmentation.min_words);
        s->get("max_words", cfg.segmentation.max_words);
        s->finish();
    }
    if (auto s = root.child("generation")) {
        s->get("max_new_tokens", cfg.generation.max_new_tokens);
        s->get("temperature", cfg.generation.temperature);
        s->get("n_per_passage", cfg.generation.n_per_passage);
        s->get_opt("stop", cfg.generation.stop);
        s->finish();
    }
    if (auto s = root.child("filter")) {
        auto& f = cfg.filter;
        s->get("min_example_words", f.min_example_words);
        f.length_ratio_cap = parse_ratio(*s, "length_ratio_cap", f.length_ratio_cap);
        s->get("entailment_threshold", f.entailment_threshold);
        s->get("reward_threshold", f.reward_threshold);
        if (s->has("gate_order")) {
            std::vector<std::string> names;
            s->get("gate_order", names);
            f.gate_order.clear();
            for (const auto& n : names) f.gate_order.push_back(convert("filter.gate_order", [&] { return filter::gate_from_string(n); }));
        }
        if (s->has("on_scoring_error")) {
            std::string v;
            s->get("on_scoring_error", v);
            f.on_scoring_error = convert("filter.on_scoring_error", [&] { return filter::on_scoring_error_from_string(v); });
        }
        if (s->has("hypothesis_mode")) {
            std::string v;
            s->get("hypothesis_mode", v);
            f.hypothesis_mode = convert("filter.hypothesis_mode", [&] { return filter::hypothesis_mode_from_string(v); });
        }
        s->get("reward_includes_content", f.reward_includes_content);
        s->finish();
    }
    if (auto s = root.child("endpoints")) {
        read_endpoint(*s, "completion", cfg.endpoints.completion, false);
        read_endpoint(*s, "nli", cfg.endpoints.nli, false);
        read_endpoint(*s, "reward", cfg.endpoints.reward, true);
        s->finish();
    }
    if (auto s = root.child("run")) {
        s->get("seed", cfg.run.seed);
        s->get("max_in_flight", cfg.run.max_in_flight);
        s->get("out_dir", cfg.run.out_dir);
        s->get("resume", cfg.run.resume);
        s->get("run_id", cfg.run.run_id);
        s->get_opt("created_at", cfg.run.created_at);
        s->get("dedup", cfg.run.dedup);
        if (auto sp = s->child("split")) {
            store::SplitRatios r;
            sp->get("train", r.train);
            sp->get("dev", r.dev);
            sp->get("test", r.test);
            sp->finish();
            cfg.run.split = r;
        }
        s->finish();
    }
    if (auto s = root.child("stats")) {
        s->get("size_min", cfg.stats.size_min);
        s->get("size_max", cfg.stats.size_max);
        s->get("samples_per_size", cfg.stats.samples_per_size);
        if (s->has("mode")) {
            std::string m;
            s->get("mode", m);
            if (m == "pooled") cfg.stats.mode = metrics::DiversityMode::pooled;
            else if (m == "per_response") cfg.stats.mode = metrics::DiversityMode::per_response;
            else throw ConfigError("stats.mode: expected pooled or per_response");
        }
        s->finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

ojson canonical_json(const PipelineConfig& cfg) {
    const auto& t = cfg.task.spec;
    ojson j;
    j["task"] = {{"name", templates::to_string(t.task_name)},
                 {"markers", t.markers},
                 {"instruction_marker_text", t.instruction_marker_text ? ojson(*t.instruction_marker_text) : ojson()},
                 {"length_ratio_cap", t.length_ratio_cap.str()},
                 {"min_example_words", t.min_example_words},
                 {"shots", t.shots},
                 {"exemplars_sha256", file_sha256(exemplars_path(cfg))}};
    j["segmentation"] = {{"min_words", cfg.segmentation.min_words}, {"max_words", cfg.segmentation.max_words}};
    j["generation"] = {{"max_new_tokens", cfg.generation.max_new_tokens},
                       {"temperature", cfg.generation.temperature},
                       {"n_per_passage", cfg.generation.n_per_passage},
                       {"stop", cfg.decode_params().stop}};
    const auto& f = cfg.filter;
    ojson gates = ojson::array();
    for (auto g : f.gate_order) gates.push_back(filter::to_string(g));
    j["filter"] = {{"min_example_words", f.min_example_words},
                   {"length_ratio_cap", f.length_ratio_cap.str()},
                   {"entailment_threshold", f.entailment_threshold},
                   {"reward_threshold", f.reward_threshold},
                   {"gate_order", gates},
                   {"on_scoring_error", filter::to_string(f.on_scoring_error)},
                   {"hypothesis_mode", filter::to_string(f.hypothesis_mode)},
                   {"reward_includes_content", f.reward_includes_content}};
    auto endpoint = [](const EndpointSection& e) { return ojson{{"url", e.url}, {"model_id", e.model_id}}; };
    j["endpoints"] = {{"completion", endpoint(cfg.endpoints.completion)},
                      {"nli", endpoint(cfg.endpoints.nli)},
                      {"reward", endpoint(cfg.endpoints.reward)}};
    j["endpoints"]["reward"]["transform"] = to_string(cfg.endpoints.reward.reward_transform);
    ojson run{{"seed", cfg.run.seed}, {"run_id", cfg.run.run_id}, {"dedup", cfg.run.dedup}};
    run["created_at"] = cfg.run.created_at ? ojson(*cfg.run.created_at) : ojson();
    run["split"] = cfg.run.split ? ojson{{"train", cfg.run.split->train}, {"dev", cfg.run.split->dev}, {"test", cfg.run.split->test}}
                                 : ojson();
    j["run"] = std::move(run);
    j["stats"] = {{"size_min", cfg.stats.size_min},
                  {"size_max", cfg.stats.size_max},
                  {"samples_per_size", cfg.stats.samples_per_size},
                  {"mode", to_string(cfg.stats.mode)}};
    return j;
}

std::string config_hash(const PipelineConfig& cfg) { return text::sha256_hex(canonical_json(cfg).dump()); }

ojson output_header(const PipelineConfig& cfg, const std::string& stage) {
    const auto canon = canonical_json(cfg);
    ojson h;
    h["tool"] = "groundgen";
    h["pipeline_version"] = kPipelineVersion;
    h["stage"] = stage;
    h["config_hash"] = text::sha256_hex(canon.dump());
    h["config"] = canon;
    return h;
}

void ensure_clients(Clients& c, const PipelineConfig& cfg, bool completion, bool scoring) {
    auto need = [](const EndpointSection& e, const char* name) {
        if (e.url.empty()) {
            throw ConfigError(std::string("no ") + name + " endpoint configured (endpoints." + name + ".url)");
        }
        return e.to_gateway();
    };
    try {
        if (completion && !c.completion) c.completion = gateway::make_completion_client(need(cfg.endpoints.completion, "completion"));
        if (scoring && !c.nli) c.nli = gateway::make_nli_client(need(cfg.endpoints.nli, "nli"));
        if (scoring && !c.reward) c.reward = gateway::make_reward_client(need(cfg.endpoints.reward, "reward"));
    } catch (const gateway::GatewayError& e) {
        throw ConfigError(e.what());
    }
}

// ---- prepare ----

namespace {

bool looks_like_passages(const ojson& first) {
    return first.is_object() && first.contains("passage_id") && first.contains("text") && !first.contains("html");
}

std::vector<ojson> jsonl_lines(const std::string& path) {
    try {
        return store::read_jsonl(path).lines;
    } catch (const store::StoreError& e) {
        throw DataError(e.what());
    }
}

}  // namespace

std::vector<content::RawDocument> load_raw_documents(const std::string& input) {
    std::vector<content::RawDocument> docs;
    std::error_code ec;
    if (fs::is_directory(input, ec)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(input)) {
            const auto ext = text::to_lower_ascii(e.path().extension().string());
            if (e.is_regular_file() && (ext == ".html" || ext == ".htm")) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::ifstream in(f, std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            docs.push_back({f.stem().string(), "file:" + f.filename().string(), ss.str(), ""});
        }
    } else if (fs::is_regular_file(input, ec)) {
        for (const auto& j : jsonl_lines(input)) {
            if (!j.is_object() || !j.contains("doc_id") || !j.contains("html")) {
                throw DataError(input + ": raw document lines need doc_id and html");
            }
            content::RawDocument d;
            d.doc_id = j.at("doc_id").get<std::string>();
            d.html = j.at("html").get<std::string>();
            d.source_uri = j.value("source_uri", "");
            d.fetched_at = j.value("fetched_at", "");
            docs.push_back(std::move(d));
        }
    } else {
        throw DataError("input not found: " + input);
    }
    std::set<std::string> ids;
    for (const auto& d : docs) {
        if (!ids.insert(d.doc_id).second) throw DataError("duplicate doc_id " + d.doc_id);
    }
    return docs;
}

PrepareReport prepare(const std::string& input, const PipelineConfig& cfg, const std::string& out_path) {
    PrepareReport rep;
    std::vector<content::Passage> passages;

    std::error_code ec;
    std::vector<ojson> lines;
    if (fs::is_regular_file(input, ec)) lines = jsonl_lines(input);
    if (!lines.empty() && looks_like_passages(lines.front())) {
        rep.pre_chunked = true;
        std::set<std::string> ids, docs;
        for (const auto& j : lines) {
            content::Passage p;
            try {
                p = store::passage_from_json(j);
            } catch (const store::SchemaViolation& e) {
                throw DataError(input + ": " + e.what());
            }
            if (text::trim(p.text).empty()) throw DataError("passage " + p.passage_id + " has no text");
            const auto wc = text::word_count(p.text);
            if (j.contains("word_count") && p.word_count != wc) {
                throw DataError("passage " + p.passage_id + ": word_count " + std::to_string(p.word_count) +
                                " but text has " + std::to_string(wc));
            }
            p.word_count = wc;
            if (!ids.insert(p.passage_id).second) throw DataError("duplicate passage_id " + p.passage_id);
            docs.insert(p.doc_id);
            passages.push_back(std::move(p));
        }
        rep.docs_in = docs.size();
    } else {
        const auto docs = load_raw_documents(input);
        rep.docs_in = docs.size();
        if (docs.empty()) throw DataError("no input documents in " + input);
        for (const auto& d : docs) {
            try {
                auto ps = content::prepare_document(d, content::CleaningConfig{}, cfg.segmentation);
                for (auto& p : ps) passages.push_back(std::move(p));
            } catch (const content::ContentError& e) {
                ++rep.rejected_docs;
                rep.rejections.push_back(d.doc_id + ": " + e.what());
            } catch (const html::MalformedHtml& e) {
                ++rep.rejected_docs;
                rep.rejections.push_back(d.doc_id + ": " + e.what());
            }
        }
    }
    rep.passages_out = passages.size();
    if (passages.empty()) throw DataError("no passages produced from " + input);

    store::JsonlWriter w(out_path, true, output_header(cfg, "prepare"));
    for (const auto& p : passages) w.append(store::passage_to_json(p));
    w.commit();
    return rep;
}

std::vector<content::Passage> read_passages(const std::string& path) {
    std::vector<content::Passage> out;
    for (const auto& j : jsonl_lines(path)) {
        try {
            out.push_back(store::passage_from_json(j));
        } catch (const store::SchemaViolation& e) {
            throw DataError(path + ": " + e.what());
        }
    }
    return out;
}

// ---- generate ----

std::vector<templates::Exemplar> load_task_exemplars(const PipelineConfig& cfg) {
    const auto path = exemplars_path(cfg);
    return convert("task.exemplars", [&] {
        auto pool = templates::load_exemplars(path);
        for (const auto& ex : pool) templates::validate_exemplar(cfg.task.spec, ex);
        if (pool.size() < cfg.task.spec.shots) {
            throw ConfigError(path + ": " + std::to_string(pool.size()) + " exemplars, " +
                              std::to_string(cfg.task.spec.shots) + " shots requested");
        }
        return pool;
    });
}

Generator::Generator(const PipelineConfig& cfg, const std::vector<content::Passage>& passages)
    : cfg_(cfg), passages_(passages), pool_(load_task_exemplars(cfg)) {}

GenerationJob Generator::job(std::size_t index) const {
    GenerationJob j;
    j.index = index;
    j.passage = &passages_.at(index / cfg_.generation.n_per_passage);
    const auto shots = templates::select_exemplars(pool_, cfg_.task.spec.shots, index);
    j.prompt = templates::build_prompt(cfg_.task.spec, shots, *j.passage);
    j.prompt_hash = text::sha256_hex(j.prompt.text);
    return j;
}

namespace {

std::optional<std::string> file_config_hash(const std::string& path) {
    std::ifstream in(path);
    std::string first;
    if (!in || !std::getline(in, first) || in.eof()) return std::nullopt;  // no complete first line
    try {
        const auto j = json::parse(first);
        if (j.contains(std::string(store::kHeaderKey))) {
            return j.at(std::string(store::kHeaderKey)).value("config_hash", "");
        }
    } catch (const json::exception&) {
    }
    return std::nullopt;
}

}  // namespace

GenerateReport generate(const std::string& passages_path, const PipelineConfig& cfg, const std::string& out_path,
                        const std::string& checkpoint_path, gateway::CompletionClient& client,
                        const GenerateOptions& opt) {
    const auto passages = read_passages(passages_path);
    if (passages.empty()) throw DataError("no passages in " + passages_path);
    const Generator gen(cfg, passages);
    const auto hash = config_hash(cfg);

    if (cfg.run.resume) {
        if (const auto cp = store::load_checkpoint(checkpoint_path); cp && cp->config_hash != hash) {
            throw store::ConfigMismatch("checkpoint " + checkpoint_path + " was written with config " +
                                        cp->config_hash.substr(0, 12) + ", active config is " + hash.substr(0, 12));
        }
        if (const auto h = file_config_hash(out_path); h && *h != hash) {
            throw store::ConfigMismatch(out_path + " was written with config " + h->substr(0, 12) +
                                        ", active config is " + hash.substr(0, 12));
        }
    }
    try {
        client.probe();
    } catch (const gateway::GatewayError& e) {
        throw EndpointUnavailable(std::string("completion endpoint unreachable: ") + e.what());
    }

    GenerateReport rep;
    rep.total = gen.size();
    if (!cfg.run.resume) fs::remove(checkpoint_path);
    store::JsonlWriter w(out_path, !cfg.run.resume, output_header(cfg, "generate"));
    rep.already_committed = std::min(w.count(), rep.total);

    const auto decode = cfg.decode_params();
    const auto run_id = cfg.run_id();
    std::size_t end = rep.total;
    if (opt.max_records) end = std::min(end, rep.already_committed + *opt.max_records);
    const std::size_t chunk = cfg.run.max_in_flight * 4;

    for (std::size_t begin = rep.already_committed; begin < end; begin += chunk) {
        std::vector<GenerationJob> jobs;
        for (std::size_t i = begin; i < std::min(end, begin + chunk); ++i) jobs.push_back(gen.job(i));
        const auto outcomes = gateway::map_batched(jobs, cfg.run.max_in_flight, [&](const GenerationJob& job) {
            gateway::CompletionRequest req;
            req.prompt = job.prompt.text;
            req.max_new_tokens = decode.max_new_tokens;
            req.temperature = decode.temperature;
            req.stop_sequences = decode.stop;
            return client.complete(req);
        });
        for (std::size_t k = 0; k < jobs.size(); ++k) {
            const auto& job = jobs[k];
            const auto& o = outcomes[k];
            const auto model = o.ok() && !o.value->model_id.empty() ? o.value->model_id : client.model_id();
            ojson line;
            line["index"] = job.index;
            line["record_id"] = store::make_record_id(job.passage->passage_id, model, job.prompt_hash);
            line["passage"] = store::passage_to_json(*job.passage);
            line["task_name"] = templates::to_string(cfg.task.spec.task_name);
            line["prompt_hash"] = job.prompt_hash;
            line["cue"] = job.prompt.cue;
            line["raw_completion"] = o.ok() ? o.value->text : std::string();
            line["model_id"] = model;
            line["decode_params"] = store::decode_params_to_json(decode);
            if (!o.ok()) {
                line["error"] = o.error_message();
                ++rep.failed;
            }
            w.append(line);
            ++rep.generated;
        }
        w.commit();
        store::save_checkpoint(checkpoint_path, {run_id, static_cast<std::int64_t>(begin + jobs.size()) - 1, hash});
    }
    rep.complete = rep.already_committed + rep.generated >= rep.total;
    return rep;
}

// ---- filter ----

filter::GenerationRecord generation_from_json(const ojson& j, const templates::TaskSpec& task) {
    filter::GenerationRecord g;
    try {
        g.index = j.at("index").get<std::size_t>();
        g.passage = store::passage_from_json(j.at("passage"));
        g.prompt_hash = j.at("prompt_hash").get<std::string>();
        g.cue = j.at("cue").get<std::string>();
        g.raw_completion = j.at("raw_completion").get<std::string>();
        g.model_id = j.at("model_id").get<std::string>();
        const auto tn = j.at("task_name").get<std::string>();
        if (tn != templates::to_string(task.task_name)) {
            throw ConfigError("generation " + std::to_string(g.index) + " is for task " + tn + ", config says " +
                              std::string(templates::to_string(task.task_name)));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed generation line: ") + e.what());
    } catch (const store::SchemaViolation& e) {
        throw DataError(std::string("malformed generation line: ") + e.what());
    }
    g.parsed = templates::parse_completion(task, g.cue, g.raw_completion);
    return g;
}

store::DatasetRecord dataset_record(const filter::GenerationRecord& g, const PipelineConfig& cfg) {
    store::DatasetRecord r;
    r.record_id = store::make_record_id(g.passage.passage_id, g.model_id, g.prompt_hash);
    r.passage = g.passage;
    r.task_name = templates::to_string(cfg.task.spec.task_name);
    if (const auto* ex = g.example()) {
        for (const auto& e : ex->elements) r.elements.emplace_back(templates::marker_name(e.marker), e.text);
    }
    r.entailment = g.entailment;
    r.reward = g.reward;
    r.model_id = g.model_id;
    r.decode_params = cfg.decode_params();
    r.pipeline_version = kPipelineVersion;
    r.created_at = cfg.created_at();
    return r;
}

namespace {

ojson verdict_json(const filter::FilterVerdict& v) {
    ojson j;
    j["gate"] = filter::to_string(v.gate);
    j["decision"] = filter::to_string(v.decision);
    j["reason"] = filter::to_string(v.reason);
    j["score"] = v.score ? ojson(*v.score) : ojson();
    if (!v.detail.empty()) j["detail"] = v.detail;
    return j;
}

ojson reject_json(const filter::GenerationRecord& g) {
    ojson j;
    j["index"] = g.index;
    j["record_id"] = store::make_record_id(g.passage.passage_id, g.model_id, g.prompt_hash);
    j["passage_id"] = g.passage.passage_id;
    j["doc_id"] = g.passage.doc_id;
    j["prompt_hash"] = g.prompt_hash;
    j["model_id"] = g.model_id;
    j["raw_completion"] = g.raw_completion;
    j["scores"] = {{"entailment", g.entailment ? ojson(*g.entailment) : ojson()},
                   {"reward", g.reward ? ojson(*g.reward) : ojson()}};
    ojson vs = ojson::array();
    for (const auto& v : g.verdicts) vs.push_back(verdict_json(v));
    j["verdicts"] = std::move(vs);
    return j;
}

}  // namespace

ojson funnel_to_json(const filter::Funnel& f) {
    ojson j;
    j["input"] = f.input;
    ojson stages = ojson::array();
    for (const auto& s : f.stages) {
        ojson rej = ojson::object();
        for (const auto& [reason, n] : s.rejected) rej[std::string(filter::to_string(reason))] = n;
        stages.push_back({{"gate", filter::to_string(s.gate)},
                          {"in", s.in},
                          {"kept", s.kept},
                          {"rejected", s.rejected_total()},
                          {"by_reason", std::move(rej)},
                          {"flagged", s.flagged}});
    }
    j["stages"] = std::move(stages);
    j["kept"] = f.kept;
    return j;
}

FilterReport filter_stage(const std::string& raw_path, const PipelineConfig& cfg, const std::string& dataset_path,
                          const std::string& rejects_path, gateway::NliClient& nli, gateway::RewardClient& reward) {
    const auto& task = cfg.task.spec;
    std::vector<filter::GenerationRecord> records;
    for (const auto& j : jsonl_lines(raw_path)) records.push_back(generation_from_json(j, task));
    if (records.empty()) throw DataError("no generations in " + raw_path);

    for (auto probe : {std::function<void()>([&] { nli.probe(); }), std::function<void()>([&] { reward.probe(); })}) {
        try {
            probe();
        } catch (const gateway::GatewayError& e) {
            throw EndpointUnavailable(std::string("scoring endpoint unreachable: ") + e.what());
        }
    }

    auto result = filter::run_chain(std::move(records), cfg.filter, task, nli, reward, cfg.run.max_in_flight);
    FilterReport rep;
    rep.funnel = filter::tally(result, cfg.filter);

    std::vector<store::DatasetRecord> kept;
    kept.reserve(result.kept.size());
    for (const auto& g : result.kept) kept.push_back(dataset_record(g, cfg));
    if (cfg.run.dedup) {
        const auto before = kept.size();
        kept = store::dedup(std::move(kept));
        rep.duplicates = before - kept.size();
    }
    rep.written = kept.size();

    const auto header = output_header(cfg, "filter");
    store::write_records(dataset_path, kept, header);
    {
        store::JsonlWriter w(rejects_path, true, header);
        for (const auto& g : result.rejected) w.append(reject_json(g));
        w.commit();
    }
    if (cfg.run.split) {
        const auto s = store::split(kept, *cfg.run.split, cfg.run.seed);
        const auto stem = fs::path(dataset_path).replace_extension("").string();
        store::write_records(stem + ".train.jsonl", s.train, header);
        store::write_records(stem + ".dev.jsonl", s.dev, header);
        store::write_records(stem + ".test.jsonl", s.test, header);
        rep.split_sizes = std::array<std::size_t, 3>{s.train.size(), s.dev.size(), s.test.size()};
    }
    return rep;
}

// ---- stats / eval ----

std::vector<std::string> response_texts(const std::vector<store::DatasetRecord>& records) {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.elements.back().second);
    return out;
}

ojson stats_to_json(const metrics::DatasetStats& s, const metrics::VocdConfig& vocd) {
    ojson j;
    j["n_samples"] = s.n_samples;
    j["mean_response_words"] = s.mean_response_words;
    j["lexical_diversity"] = s.lexical_diversity ? ojson(*s.lexical_diversity) : ojson();
    j["diversity_mode"] = to_string(s.mode);
    j["vocd"] = {{"size_min", vocd.size_min},
                 {"size_max", vocd.size_max},
                 {"samples_per_size", vocd.samples_per_size},
                 {"seed", vocd.seed}};
    return j;
}

std::string render_stats(const metrics::DatasetStats& s) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << std::left << std::setw(30) << "samples" << s.n_samples << '\n';
    os << std::left << std::setw(30) << "mean response words" << s.mean_response_words << '\n';
    os << std::left << std::setw(30) << ("lexical diversity (" + std::string(to_string(s.mode)) + ")");
    if (s.lexical_diversity) os << *s.lexical_diversity << '\n';
    else os << "n/a (text too short)\n";
    return os.str();
}

std::vector<std::string> read_text_column(const std::string& path) {
    std::vector<std::string> out;
    for (const auto& j : jsonl_lines(path)) {
        if (j.is_string()) out.push_back(j.get<std::string>());
        else if (j.is_object() && j.contains("text") && j.at("text").is_string()) out.push_back(j.at("text").get<std::string>());
        else throw DataError(path + ": each line must be a JSON string or an object with a \"text\" field");
    }
    return out;
}

std::string render_eval(const metrics::MetricReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    auto row = [&](const char* name, std::optional<double> v) {
        os << std::left << std::setw(20) << name;
        if (v) os << *v << '\n';
        else os << "n/a\n";
    };
    os << std::left << std::setw(20) << "examples" << r.n << '\n';
    row("rouge_l_precision", r.aggregate.rouge_l.precision);
    row("rouge_l_recall", r.aggregate.rouge_l.recall);
    row("rouge_l_f1", r.aggregate.rouge_l.f1);
    row("k_precision", r.aggregate.k_precision);
    row("reward", r.aggregate.reward);
    row("entailment", r.aggregate.entailment);
    return os.str();
}

}  // namespace groundgen::pipeline
