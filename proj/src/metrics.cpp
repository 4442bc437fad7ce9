#include "groundgen/metrics.hpp"

#include "groundgen/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace groundgen::metrics {

std::vector<std::string> rouge_tokens(std::string_view s) {
    auto w = text::words(s);
    for (auto& t : w) t = text::to_lower_ascii(t);
    return w;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

RougeScore rouge_l_tokens(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
    RougeScore s;
    const auto l = static_cast<double>(lcs_length(candidate, reference));
    if (!candidate.empty()) s.precision = l / static_cast<double>(candidate.size());
    if (!reference.empty()) s.recall = l / static_cast<double>(reference.size());
    if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
    return rouge_l_tokens(rouge_tokens(candidate), rouge_tokens(reference));
}

double k_precision(std::string_view candidate, std::string_view content) {
    const auto cand = text::normalized_words(candidate);
    if (cand.empty()) throw EmptyCandidate("k_precision: candidate has no tokens");
    const auto ctx = text::normalized_words(content);
    const std::unordered_set<std::string> vocab(ctx.begin(), ctx.end());
    const auto hits = std::count_if(cand.begin(), cand.end(), [&](const std::string& t) { return vocab.count(t) > 0; });
    return static_cast<double>(hits) / static_cast<double>(cand.size());
}

// ---- vocd-D ----

std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("bounded_draw: bound must be > 0");
    // 2^64 mod bound; values below it would bias the modulo.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t x = rng();
        if (x >= threshold) return x % bound;
    }
}

double vocd_curve(double d, double n) { return 2.0 / (1.0 + std::sqrt(1.0 + 2.0 * n / d)); }

namespace {

constexpr double kLogDMin = -6.0;  // D down to 1e-6 so one-type texts still fit
const double kLogDMax = std::log10(kVocdDMax);

double sse(double log10_d, const std::vector<double>& sizes, const std::vector<double>& ttr) {
    const double d = std::pow(10.0, log10_d);
    double s = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const double e = ttr[i] - vocd_curve(d, sizes[i]);
        s += e * e;
    }
    return s;
}

}  // namespace

double fit_vocd_d(const std::vector<double>& sizes, const std::vector<double>& ttr) {
    if (sizes.size() != ttr.size() || sizes.empty()) throw std::invalid_argument("fit_vocd_d: bad input");
    if (std::all_of(ttr.begin(), ttr.end(), [](double t) { return t >= 1.0; })) return kVocdDMax;

    constexpr int kGrid = 2000;
    const double step = (kLogDMax - kLogDMin) / kGrid;
    int best = 0;
    double best_sse = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kGrid; ++i) {
        const double e = sse(kLogDMin + step * i, sizes, ttr);
        if (e < best_sse) {
            best_sse = e;
            best = i;
        }
    }
    if (best == kGrid) return kVocdDMax;

    // Golden-section refinement inside the bracketing grid cells.
    double lo = kLogDMin + step * std::max(0, best - 1);
    double hi = kLogDMin + step * (best + 1);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    double f1 = sse(x1, sizes, ttr), f2 = sse(x2, sizes, ttr);
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = sse(x1, sizes, ttr);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = sse(x2, sizes, ttr);
        }
    }
    return std::pow(10.0, (lo + hi) / 2.0);
}

DiversityReport vocd_d_tokens(const std::vector<std::string>& tokens, const VocdConfig& cfg) {
    if (cfg.size_min < 1 || cfg.size_min > cfg.size_max || cfg.samples_per_size < 1) {
        throw std::invalid_argument("vocd_d: invalid sampling configuration");
    }
    if (tokens.size() < cfg.size_max) {
        throw TextTooShort("vocd_d needs at least " + std::to_string(cfg.size_max) + " tokens, got " +
                           std::to_string(tokens.size()));
    }
    // Type ids by first occurrence: the sample depends only on positions, so any
    // bijective renaming of types gives bit-identical results.
    std::unordered_map<std::string, std::uint32_t> ids;
    std::vector<std::uint32_t> type_of;
    type_of.reserve(tokens.size());
    for (const auto& t : tokens) type_of.push_back(ids.emplace(t, static_cast<std::uint32_t>(ids.size())).first->second);

    DiversityReport rep;
    rep.samples_per_size = cfg.samples_per_size;
    rep.size_min = cfg.size_min;
    rep.size_max = cfg.size_max;
    rep.seed = cfg.seed;

    std::mt19937_64 rng(cfg.seed);
    const std::size_t total = tokens.size();
    std::vector<std::uint32_t> perm(total);
    std::vector<std::uint64_t> stamp(ids.size(), 0);
    std::uint64_t epoch = 0;
    std::vector<double> sizes;

    for (std::size_t n = cfg.size_min; n <= cfg.size_max; ++n) {
        double ttr_sum = 0;
        for (std::size_t s = 0; s < cfg.samples_per_size; ++s) {
            for (std::size_t i = 0; i < total; ++i) perm[i] = static_cast<std::uint32_t>(i);
            ++epoch;
            std::size_t types = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto j = i + static_cast<std::size_t>(bounded_draw(rng, total - i));
                std::swap(perm[i], perm[j]);
                const auto ty = type_of[perm[i]];
                if (stamp[ty] != epoch) {
                    stamp[ty] = epoch;
                    ++types;
                }
            }
            ttr_sum += static_cast<double>(types) / static_cast<double>(n);
        }
        sizes.push_back(static_cast<double>(n));
        rep.mean_ttr.push_back(ttr_sum / static_cast<double>(cfg.samples_per_size));
    }
    rep.d_value = fit_vocd_d(sizes, rep.mean_ttr);
    rep.saturated = rep.d_value >= kVocdDMax;
    return rep;
}

DiversityReport vocd_d(std::string_view text, const VocdConfig& cfg) {
    return vocd_d_tokens(text::normalized_words(text), cfg);
}

DatasetStats dataset_stats(const std::vector<std::string>& responses, const VocdConfig& cfg, DiversityMode mode) {
    if (responses.empty()) throw EmptyDataset("dataset_stats: empty dataset");
    DatasetStats st;
    st.mode = mode;
    st.n_samples = responses.size();
    std::size_t words = 0;
    for (const auto& r : responses) words += text::word_count(r);
    st.mean_response_words = static_cast<double>(words) / static_cast<double>(responses.size());

    if (mode == DiversityMode::pooled) {
        std::vector<std::string> pooled;
        for (const auto& r : responses) {
            auto t = text::normalized_words(r);
            pooled.insert(pooled.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
        }
        if (pooled.size() >= cfg.size_max) st.lexical_diversity = vocd_d_tokens(pooled, cfg).d_value;
    } else {
        double sum = 0;
        std::size_t n = 0;
        for (const auto& r : responses) {
            const auto t = text::normalized_words(r);
            if (t.size() < cfg.size_max) continue;
            sum += vocd_d_tokens(t, cfg).d_value;
            ++n;
        }
        if (n) st.lexical_diversity = sum / static_cast<double>(n);
    }
    return st;
}

// ---- evaluation ----

namespace {

std::optional<double> mean_of(const std::vector<ExampleMetrics>& xs, std::optional<double> ExampleMetrics::*field) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& x : xs) {
        if (const auto& v = x.*field) {
            sum += *v;
            ++n;
        }
    }
    if (!n) return std::nullopt;
    return sum / static_cast<double>(n);
}

void append_error(ExampleMetrics& m, const std::string& what) {
    if (!m.error.empty()) m.error += "; ";
    m.error += what;
}

}  // namespace

MetricReport eval_predictions(const EvalInputs& in, const EvalOptions& opt, gateway::RewardClient* reward,
                              gateway::NliClient* nli) {
    const auto n = in.preds.size();
    if (in.golds.size() != n || in.contents.size() != n || (!in.questions.empty() && in.questions.size() != n)) {
        throw LengthMismatch("eval_predictions: preds, golds, contents (and questions) must have equal length");
    }
    if (opt.use_reward && !reward) throw std::invalid_argument("eval_predictions: reward scorer not configured");
    if (opt.use_nli && !nli) throw std::invalid_argument("eval_predictions: NLI scorer not configured");

    MetricReport rep;
    rep.n = n;
    rep.per_example.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& m = rep.per_example[i];
        m.rouge_l = rouge_l(in.preds[i], in.golds[i]);
        try {
            m.k_precision = k_precision(in.preds[i], in.contents[i]);
        } catch (const EmptyCandidate&) {
        }
    }

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (opt.use_reward) {
        const auto out = gateway::map_batched(idx, opt.max_in_flight, [&](std::size_t i) {
            const auto& instr = in.questions.empty() ? in.contents[i] : in.questions[i];
            return reward->score_reward({instr, in.preds[i]}).value;
        });
        for (std::size_t i = 0; i < n; ++i) {
            if (out[i].ok()) rep.per_example[i].reward = *out[i].value;
            else append_error(rep.per_example[i], "reward: " + out[i].error_message());
        }
    }
    if (opt.use_nli) {
        const auto out = gateway::map_batched(idx, opt.max_in_flight, [&](std::size_t i) {
            return nli->score_nli({in.contents[i], in.preds[i]}).value;
        });
        for (std::size_t i = 0; i < n; ++i) {
            if (out[i].ok()) rep.per_example[i].entailment = *out[i].value;
            else append_error(rep.per_example[i], "nli: " + out[i].error_message());
        }
    }

    if (n) {
        for (const auto& m : rep.per_example) {
            rep.aggregate.rouge_l.precision += m.rouge_l.precision;
            rep.aggregate.rouge_l.recall += m.rouge_l.recall;
            rep.aggregate.rouge_l.f1 += m.rouge_l.f1;
        }
        rep.aggregate.rouge_l.precision /= static_cast<double>(n);
        rep.aggregate.rouge_l.recall /= static_cast<double>(n);
        rep.aggregate.rouge_l.f1 /= static_cast<double>(n);
    }
    rep.aggregate.k_precision = mean_of(rep.per_example, &ExampleMetrics::k_precision);
    rep.aggregate.reward = mean_of(rep.per_example, &ExampleMetrics::reward);
    rep.aggregate.entailment = mean_of(rep.per_example, &ExampleMetrics::entailment);
    return rep;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json rouge_json(const RougeScore& r) {
    return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
}

std::string csv_num(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os.precision(17);
    os << *v;
    return os.str();
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string report_to_json(const MetricReport& r) {
    nlohmann::json j;
    j["n"] = r.n;
    j["tokenizer"] = r.tokenizer;
    j["aggregate"] = {{"rouge_l", rouge_json(r.aggregate.rouge_l)},
                      {"k_precision", opt_json(r.aggregate.k_precision)},
                      {"reward", opt_json(r.aggregate.reward)},
                      {"entailment", opt_json(r.aggregate.entailment)}};
    auto& per = j["per_example"] = nlohmann::json::array();
    for (const auto& m : r.per_example) {
        nlohmann::json e{{"rouge_l", rouge_json(m.rouge_l)},
                         {"k_precision", opt_json(m.k_precision)},
                         {"reward", opt_json(m.reward)},
                         {"entailment", opt_json(m.entailment)}};
        if (!m.error.empty()) e["error"] = m.error;
        per.push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricReport& r) {
    std::ostringstream os;
    os << "index,rouge_l_precision,rouge_l_recall,rouge_l_f1,k_precision,reward,entailment,error\n";
    for (std::size_t i = 0; i < r.per_example.size(); ++i) {
        const auto& m = r.per_example[i];
        os << i << ',' << csv_num(m.rouge_l.precision) << ',' << csv_num(m.rouge_l.recall) << ','
           << csv_num(m.rouge_l.f1) << ',' << csv_num(m.k_precision) << ',' << csv_num(m.reward) << ','
           << csv_num(m.entailment) << ',' << csv_quote(m.error) << '\n';
    }
    return os.str();
}

}  // namespace groundgen::metrics
