#include "groundgen/cli.hpp"

#include "groundgen/html.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>

namespace groundgen::cli {

namespace fs = std::filesystem;
using namespace groundgen::pipeline;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool resume = false;
    std::optional<std::size_t> max_in_flight;
};

struct Paths {
    std::string input, passages, raw, dataset, rejects, report, csv;
    std::string preds, golds, contents, questions;
};

struct Overrides {
    std::optional<std::size_t> max_records;
    std::optional<std::size_t> n_per_passage;
    std::optional<double> entailment_threshold;
    std::optional<double> reward_threshold;
    std::optional<std::string> stats_mode;
    bool use_reward = false;
    bool use_nli = false;
};

std::string in_out(const PipelineConfig& cfg, const std::string& given, const char* name) {
    return given.empty() ? (fs::path(cfg.run.out_dir) / name).string() : given;
}

void write_text(const std::string& path, const std::string& body) {
    if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
    std::ofstream o(path, std::ios::binary | std::ios::trunc);
    if (!o) throw store::IoError("cannot write " + path);
    o << body;
}

void warn_thresholds(const PipelineConfig& cfg, std::ostream& err) {
    for (const auto& [name, v] : {std::pair{"entailment_threshold", cfg.filter.entailment_threshold},
                                  std::pair{"reward_threshold", cfg.filter.reward_threshold}}) {
        if (v > 1.0) err << "warning: " << name << " " << v << " is above 1; every scored record will be rejected\n";
    }
}

class App {
public:
    App(std::ostream& out, std::ostream& err, Clients clients) : out_(out), err_(err), clients_(std::move(clients)) {}

    PipelineConfig config() const {
        auto cfg = g_.config.empty() ? PipelineConfig::defaults() : load_config(g_.config);
        if (g_.seed) cfg.run.seed = *g_.seed;
        if (g_.out_dir) cfg.run.out_dir = *g_.out_dir;
        if (g_.resume) cfg.run.resume = true;
        if (g_.max_in_flight) cfg.run.max_in_flight = *g_.max_in_flight;
        if (o_.n_per_passage) cfg.generation.n_per_passage = *o_.n_per_passage;
        if (o_.entailment_threshold) cfg.filter.entailment_threshold = *o_.entailment_threshold;
        if (o_.reward_threshold) cfg.filter.reward_threshold = *o_.reward_threshold;
        if (o_.stats_mode) {
            if (*o_.stats_mode == "pooled") cfg.stats.mode = metrics::DiversityMode::pooled;
            else if (*o_.stats_mode == "per_response") cfg.stats.mode = metrics::DiversityMode::per_response;
            else throw ConfigError("--mode: expected pooled or per_response");
        }
        cfg.validate();
        return cfg;
    }

    void cmd_prepare(const PipelineConfig& cfg) {
        const auto out = in_out(cfg, p_.passages, kPassagesFile);
        const auto rep = prepare(p_.input, cfg, out);
        out_ << (rep.pre_chunked ? "pre-chunked input, validated\n" : "");
        out_ << "docs in: " << rep.docs_in << "\npassages out: " << rep.passages_out
             << "\nrejected docs: " << rep.rejected_docs << '\n';
        for (const auto& r : rep.rejections) err_ << "rejected " << r << '\n';
        out_ << "wrote " << out << '\n';
    }

    void cmd_generate(const PipelineConfig& cfg) {
        ensure_clients(clients_, cfg, true, false);
        const auto raw = in_out(cfg, p_.raw, kRawFile);
        const auto cp = (fs::path(cfg.run.out_dir) / kCheckpointFile).string();
        GenerateOptions opt;
        opt.max_records = o_.max_records;
        const auto rep = generate(in_out(cfg, p_.passages, kPassagesFile), cfg, raw, cp, *clients_.completion, opt);
        out_ << "generations: " << rep.total << " planned, " << rep.already_committed << " already committed, "
             << rep.generated << " new";
        if (rep.failed) out_ << ", " << rep.failed << " failed";
        out_ << '\n';
        if (!rep.complete) out_ << "stopped early; rerun with --resume to continue\n";
        out_ << "wrote " << raw << '\n';
    }

    void cmd_filter(const PipelineConfig& cfg) {
        warn_thresholds(cfg, err_);
        ensure_clients(clients_, cfg, false, true);
        const auto dataset = in_out(cfg, p_.dataset, kDatasetFile);
        const auto rep = filter_stage(in_out(cfg, p_.raw, kRawFile), cfg, dataset,
                                      in_out(cfg, p_.rejects, kRejectsFile), *clients_.nli, *clients_.reward);
        out_ << filter::render_funnel(rep.funnel);
        if (rep.duplicates) out_ << "duplicates dropped: " << rep.duplicates << '\n';
        if (rep.split_sizes) {
            out_ << "split train/dev/test: " << (*rep.split_sizes)[0] << "/" << (*rep.split_sizes)[1] << "/"
                 << (*rep.split_sizes)[2] << '\n';
        }
        auto funnel = funnel_to_json(rep.funnel);
        funnel["duplicates"] = rep.duplicates;
        funnel["written"] = rep.written;
        write_text((fs::path(cfg.run.out_dir) / kFunnelFile).string(), funnel.dump(2) + "\n");
        out_ << "wrote " << dataset << " (" << rep.written << " records)\n";
    }

    void cmd_stats(const PipelineConfig& cfg) {
        const auto path = in_out(cfg, p_.dataset, kDatasetFile);
        std::vector<store::DatasetRecord> records;
        try {
            records = store::read_records(path);
        } catch (const store::StoreError& e) {
            throw DataError(e.what());
        }
        if (records.empty()) throw DataError("dataset " + path + " is empty");
        const auto vocd = cfg.vocd();
        const auto s = metrics::dataset_stats(response_texts(records), vocd, cfg.stats.mode);
        out_ << render_stats(s);
        const auto report = in_out(cfg, p_.report, kStatsFile);
        write_text(report, stats_to_json(s, vocd).dump(2) + "\n");
        out_ << "wrote " << report << '\n';
    }

    void cmd_eval(const PipelineConfig& cfg) {
        metrics::EvalInputs in;
        in.preds = read_text_column(p_.preds);
        in.golds = read_text_column(p_.golds);
        in.contents = read_text_column(p_.contents);
        if (!p_.questions.empty()) in.questions = read_text_column(p_.questions);
        if (in.preds.empty()) throw DataError("no predictions in " + p_.preds);
        metrics::EvalOptions opt;
        opt.use_reward = o_.use_reward;
        opt.use_nli = o_.use_nli;
        opt.max_in_flight = cfg.run.max_in_flight;
        if (opt.use_reward || opt.use_nli) ensure_clients(clients_, cfg, false, true);
        const auto r = metrics::eval_predictions(in, opt, clients_.reward.get(), clients_.nli.get());
        out_ << render_eval(r);
        const auto report = in_out(cfg, p_.report, "eval.json");
        write_text(report, metrics::report_to_json(r));
        out_ << "wrote " << report << '\n';
        if (!p_.csv.empty()) {
            write_text(p_.csv, metrics::report_to_csv(r));
            out_ << "wrote " << p_.csv << '\n';
        }
    }

    void cmd_run(const PipelineConfig& cfg) {
        out_ << "== prepare\n";
        cmd_prepare(cfg);
        out_ << "== generate\n";
        cmd_generate(cfg);
        if (o_.max_records) {
            const auto passages = read_passages(in_out(cfg, p_.passages, kPassagesFile));
            const auto raw_lines = store::read_jsonl(in_out(cfg, p_.raw, kRawFile)).lines.size();
            if (raw_lines < passages.size() * cfg.generation.n_per_passage) return;
        }
        out_ << "== filter\n";
        cmd_filter(cfg);
        out_ << "== stats\n";
        cmd_stats(cfg);
    }

    int main(int argc, const char* const* argv) {
        CLI::App app{"Builds content-grounded synthetic datasets from document corpora.", "groundgen"};
        app.set_version_flag("--version", kPipelineVersion);
        app.require_subcommand(1);
        app.add_option("--config", g_.config, "Pipeline config (JSON)");
        app.add_option("--seed", g_.seed, "Seed for splits and vocd-D sampling");
        app.add_option("--out-dir", g_.out_dir, "Output directory");
        app.add_flag("--resume", g_.resume, "Resume from checkpoint");
        app.add_option("--max-in-flight", g_.max_in_flight, "Concurrent model requests")->check(CLI::PositiveNumber);

        auto* prep = app.add_subcommand("prepare", "HTML corpus -> passages.jsonl");
        prep->add_option("--input", p_.input, "Directory of .html files, or a JSONL of documents or passages")->required();
        prep->add_option("--out", p_.passages, "Output passages file");

        auto* gen = app.add_subcommand("generate", "passages.jsonl -> raw_generations.jsonl");
        gen->add_option("--passages", p_.passages, "Passages file");
        gen->add_option("--out", p_.raw, "Output file");
        gen->add_option("--max-records", o_.max_records, "Generate at most N new records in this invocation");
        gen->add_option("--n-per-passage", o_.n_per_passage, "Generations per passage")->check(CLI::PositiveNumber);

        auto* fil = app.add_subcommand("filter", "raw_generations.jsonl -> dataset.jsonl + rejects.jsonl");
        fil->add_option("--raw", p_.raw, "Raw generations file");
        fil->add_option("--out", p_.dataset, "Output dataset file");
        fil->add_option("--rejects", p_.rejects, "Output rejects file");
        fil->add_option("--entailment-threshold", o_.entailment_threshold);
        fil->add_option("--reward-threshold", o_.reward_threshold);

        auto* sta = app.add_subcommand("stats", "Dataset statistics (size, response length, vocd-D)");
        sta->add_option("--dataset", p_.dataset, "Dataset file");
        sta->add_option("--report", p_.report, "Output JSON report");
        sta->add_option("--mode", o_.stats_mode, "pooled | per_response");

        auto* ev = app.add_subcommand("eval", "Score predictions against references");
        ev->add_option("--preds", p_.preds)->required();
        ev->add_option("--golds", p_.golds)->required();
        ev->add_option("--contents", p_.contents)->required();
        ev->add_option("--questions", p_.questions);
        ev->add_flag("--use-reward", o_.use_reward);
        ev->add_flag("--use-nli", o_.use_nli);
        ev->add_option("--report", p_.report, "Output JSON report");
        ev->add_option("--csv", p_.csv, "Per-example CSV");

        auto* run = app.add_subcommand("run", "prepare, generate, filter and stats");
        run->add_option("--input", p_.input, "Directory of .html files, or a JSONL of documents or passages")->required();
        run->add_option("--max-records", o_.max_records, "Generate at most N new records in this invocation");
        run->add_option("--n-per-passage", o_.n_per_passage)->check(CLI::PositiveNumber);

        for (auto* sub : {prep, gen, fil, sta, ev, run}) sub->fallthrough();

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out_, err_);
            return code == 0 ? kOk : kConfig;
        }

        try {
            const auto cfg = config();
            if (prep->parsed()) cmd_prepare(cfg);
            else if (gen->parsed()) cmd_generate(cfg);
            else if (fil->parsed()) cmd_filter(cfg);
            else if (sta->parsed()) cmd_stats(cfg);
            else if (ev->parsed()) cmd_eval(cfg);
            else if (run->parsed()) cmd_run(cfg);
            return kOk;
        } catch (const ConfigError& e) {
            err_ << "config error: " << e.what() << '\n';
            return kConfig;
        } catch (const store::ConfigMismatch& e) {
            err_ << "config mismatch, refusing to resume: " << e.what() << '\n';
            return kConfig;
        } catch (const templates::TemplateError& e) {
            err_ << "config error: " << e.what() << '\n';
            return kConfig;
        } catch (const EndpointUnavailable& e) {
            err_ << "endpoint error: " << e.what() << '\n';
            return kEndpoint;
        } catch (const gateway::GatewayError& e) {
            err_ << "endpoint error: " << e.what() << '\n';
            return kEndpoint;
        } catch (const DataError& e) {
            err_ << "data error: " << e.what() << '\n';
            return kData;
        } catch (const content::ContentError& e) {
            err_ << "data error: " << e.what() << '\n';
            return kData;
        } catch (const html::MalformedHtml& e) {
            err_ << "data error: " << e.what() << '\n';
            return kData;
        } catch (const store::StoreError& e) {
            err_ << "data error: " << e.what() << '\n';
            return kData;
        } catch (const metrics::MetricsError& e) {
            err_ << "data error: " << e.what() << '\n';
            return kData;
        } catch (const std::exception& e) {
            err_ << "error: " << e.what() << '\n';
            return kInternal;
        }
    }

private:
    std::ostream& out_;
    std::ostream& err_;
    Clients clients_;
    Globals g_;
    Paths p_;
    Overrides o_;
};

}  // namespace

int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err, Clients clients) {
    App app(out, err, std::move(clients));
    return app.main(argc, argv);
}

}  // namespace groundgen::cli
