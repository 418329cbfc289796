#include "codeicl/runner.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "codeicl/dataset_io.hpp"
#include "codeicl/errors.hpp"
#include "codeicl/instruction_compiler.hpp"

namespace fs = std::filesystem;

namespace codeicl {

std::optional<int> default_shot_count(std::string_view task_name) {
    static const std::map<std::string, int, std::less<>> shots = {
        {"sst2", 4}, {"qqp", 6}, {"mnli", 6}, {"mnli-mm", 6}, {"qnli", 4}, {"rte", 4}, {"restaurant", 6},
    };
    if (auto it = shots.find(task_name); it != shots.end()) {
        return it->second;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string resolve(const std::string& base_dir, const std::string& path) {
    if (path.empty()) {
        return path;
    }
    fs::path p(path);
    if (p.is_absolute() || base_dir.empty()) {
        return p.lexically_normal().string();
    }
    return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string require_path(const toml::table& doc, std::string_view key, const std::string& source) {
    auto value = doc[key].value<std::string>();
    if (!value || value->empty()) {
        fail(ErrorCode::Usage, source + ": missing '" + std::string(key) + "'");
    }
    return *value;
}

} // namespace

RunConfig parse_run_config(std::string_view toml_text, const std::string& base_dir, const std::string& source) {
    toml::table doc;
    try {
        doc = toml::parse(toml_text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << source << ":" << e.source().begin.line << ": " << e.description();
        fail(ErrorCode::Usage, msg.str());
    }

    RunConfig config;
    config.task_spec_path = resolve(base_dir, require_path(doc, "task_spec", source));
    config.eval_set_path = resolve(base_dir, require_path(doc, "eval_set", source));
    config.demo_pool_path = resolve(base_dir, doc["demo_pool"].value_or(std::string{}));
    config.out_dir = resolve(base_dir, require_path(doc, "out_dir", source));
    if (auto cache = doc["cache_dir"].value<std::string>()) {
        config.cache_dir = resolve(base_dir, *cache);
    }

    auto style_text = doc["style"].value_or(std::string("class_exec"));
    auto style = parse_style(style_text);
    if (!style) {
        fail(ErrorCode::Usage, source + ": unknown style '" + style_text + "'");
    }
    config.style = *style;

    if (const auto* seeds = doc["seeds"].as_array()) {
        config.seeds.clear();
        for (const auto& node : *seeds) {
            auto seed = node.value<std::int64_t>();
            if (!seed || *seed < 0) {
                fail(ErrorCode::Usage, source + ": seeds must be non-negative integers");
            }
            config.seeds.push_back(static_cast<std::uint64_t>(*seed));
        }
    }
    if (auto limit = doc["limit"].value<std::int64_t>()) {
        if (*limit < 0) {
            fail(ErrorCode::Usage, source + ": limit must be positive");
        }
        config.limit = static_cast<std::size_t>(*limit);
    }
    if (const auto* ablations = doc["ablations"].as_array()) {
        for (const auto& node : *ablations) {
            config.ablations.push_back(node.value_or(std::string{}));
        }
    }

    std::optional<int> k;
    if (const auto* policy = doc["policy"].as_table()) {
        if (auto value = (*policy)["k"].value<std::int64_t>()) {
            k = static_cast<int>(*value);
        }
        config.policy.balance = (*policy)["balance"].value_or(false);
        config.policy.adversarial_context = (*policy)["adversarial_context"].value_or(false);
    }
    if (!k) {
        // The shot count falls back to the task's default.
        auto spec = load_task_spec(config.task_spec_path);
        k = default_shot_count(spec.task_name);
        if (!k) {
            fail(ErrorCode::Usage, source + ": [policy].k is required for task " + spec.task_name);
        }
    }
    config.policy.k = *k;

    if (const auto* backend = doc["backend"].as_table()) {
        auto kind_text = (*backend)["kind"].value_or(std::string("scripted_mock"));
        auto kind = parse_backend_kind(kind_text);
        if (!kind) {
            fail(ErrorCode::Usage, source + ": unknown backend kind '" + kind_text + "'");
        }
        auto& b = config.backend;
        b.kind = *kind;
        if (auto url = (*backend)["base_url"].value<std::string>()) {
            b.base_url = *url;
        }
        b.credentials_env = (*backend)["credentials_env"].value_or(std::string("OPENAI_API_KEY"));
        b.rate_limit = (*backend)["rate_limit"].value_or(0.0);
        b.max_in_flight = static_cast<int>((*backend)["max_in_flight"].value_or(std::int64_t{4}));
        b.retry.max_retries = static_cast<int>((*backend)["max_retries"].value_or(std::int64_t{3}));
        b.retry.base_delay = std::chrono::milliseconds((*backend)["retry_base_delay_ms"].value_or(std::int64_t{1000}));
        b.timeout_seconds = static_cast<int>((*backend)["timeout_seconds"].value_or(std::int64_t{120}));
        b.vocab_size = static_cast<int>((*backend)["vocab_size"].value_or(std::int64_t{0}));
        if (auto script = (*backend)["script"].value<std::string>()) {
            b.script_path = resolve(base_dir, *script);
        }
    }
    if (const auto* decode = doc["decode"].as_table()) {
        config.decode.model_name = (*decode)["model"].value_or(std::string{});
        config.decode.temperature = (*decode)["temperature"].value_or(0.0);
        config.decode.max_tokens = static_cast<int>((*decode)["max_tokens"].value_or(std::int64_t{128}));
    }
    return config;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Usage, "cannot read run config " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    auto base = fs::absolute(fs::path(path)).parent_path().string();
    return parse_run_config(buffer.str(), base, path);
}

std::string resolved_config_toml(const RunConfig& c) {
    auto absolute = [](const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); };

    toml::table doc;
    doc.insert("task_spec", absolute(c.task_spec_path));
    doc.insert("eval_set", absolute(c.eval_set_path));
    doc.insert("demo_pool", absolute(c.demo_pool_path));
    doc.insert("out_dir", absolute(c.out_dir));
    if (c.cache_dir) {
        doc.insert("cache_dir", absolute(*c.cache_dir));
    }
    doc.insert("style", std::string(to_string(c.style)));
    toml::array seeds;
    for (auto s : c.seeds) {
        seeds.push_back(static_cast<std::int64_t>(s));
    }
    doc.insert("seeds", seeds);
    if (c.limit) {
        doc.insert("limit", static_cast<std::int64_t>(*c.limit));
    }
    toml::array ablations;
    for (const auto& a : c.ablations) {
        ablations.push_back(a);
    }
    doc.insert("ablations", ablations);

    doc.insert("policy", toml::table{{"k", static_cast<std::int64_t>(c.policy.k)},
                                     {"balance", c.policy.balance},
                                     {"adversarial_context", c.policy.adversarial_context}});

    toml::table backend{{"kind", std::string(to_string(c.backend.kind))},
                        {"credentials_env", c.backend.credentials_env},
                        {"rate_limit", c.backend.rate_limit},
                        {"max_in_flight", static_cast<std::int64_t>(c.backend.max_in_flight)},
                        {"max_retries", static_cast<std::int64_t>(c.backend.retry.max_retries)},
                        {"retry_base_delay_ms", static_cast<std::int64_t>(c.backend.retry.base_delay.count())},
                        {"timeout_seconds", static_cast<std::int64_t>(c.backend.timeout_seconds)},
                        {"vocab_size", static_cast<std::int64_t>(c.backend.vocab_size)}};
    if (c.backend.base_url) {
        backend.insert("base_url", *c.backend.base_url);
    }
    if (c.backend.script_path) {
        backend.insert("script", absolute(*c.backend.script_path));
    }
    doc.insert("backend", backend);
    doc.insert("decode", toml::table{{"model", c.decode.model_name},
                                     {"temperature", c.decode.temperature},
                                     {"max_tokens", static_cast<std::int64_t>(c.decode.max_tokens)}});

    std::ostringstream out;
    out << doc << '\n';
    return out.str();
}

void validate_run_config(const RunConfig& config) {
    if (config.seeds.empty()) {
        fail(ErrorCode::Usage, "at least one seed is required");
    }
    std::set<std::uint64_t> distinct(config.seeds.begin(), config.seeds.end());
    if (distinct.size() != config.seeds.size()) {
        fail(ErrorCode::Usage, "seeds must be distinct");
    }
    if (config.limit && *config.limit == 0) {
        fail(ErrorCode::Usage, "limit must be at least 1");
    }
    if (config.out_dir.empty()) {
        fail(ErrorCode::Usage, "out_dir is required");
    }
    if (config.policy.k > 0 && config.demo_pool_path.empty()) {
        fail(ErrorCode::Usage, "demo_pool is required when k > 0");
    }
    check_policy(config.policy);
    validate_descriptor(config.backend);
    if (config.decode.max_tokens < 1 || config.decode.temperature < 0) {
        fail(ErrorCode::Usage, "decode parameters out of range");
    }
}

// ---------------------------------------------------------------------------
// Run

namespace {

/// Exclusive claim on an output directory for the lifetime of a run.
class DirectoryLock {
public:
    explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (f == nullptr) {
            fail(ErrorCode::Usage, "another run holds " + path_.string());
        }
        std::fclose(f);
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;
    ~DirectoryLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    fs::path path_;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::Io, "cannot write " + path.string());
    }
    out << text;
}

struct Job {
    const AdvPair* pair;
    bool adversarial;
};

std::string phase_context(std::uint64_t seed, std::string_view phase, const std::string& sample_id) {
    std::string out = "[seed " + std::to_string(seed) + ", " + std::string(phase);
    if (!sample_id.empty()) {
        out += ", sample " + sample_id;
    }
    return out + "] ";
}

SeedReport score_seed(const std::string& task, const RunConfig& config, std::uint64_t seed,
                      const std::vector<Job>& jobs, const std::vector<PredictionRecord>& records,
                      std::vector<std::pair<std::uint64_t, PairedOutcome>>& outcomes) {
    SeedReport report;
    report.task_name = task;
    report.style = config.style;
    report.k = config.policy.k;
    report.adversarial_context = config.policy.adversarial_context;
    report.seed = seed;

    std::vector<PredictionRecord> clean;
    std::vector<PredictionRecord> adv;
    std::size_t unparsed = 0;
    std::map<std::string, std::pair<const PredictionRecord*, const PredictionRecord*>> by_pair;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto& r = records[i];
        ++report.predictions;
        if (r.failed()) {
            ++report.failed;
            continue;
        }
        if (!r.parsed) {
            ++unparsed;
        }
        (r.is_adversarial ? adv : clean).push_back(r);
        auto& slot = by_pair[r.sample_id];
        (r.is_adversarial ? slot.second : slot.first) = &r;
    }
    const auto answered = report.predictions - report.failed;
    report.unparsed_rate = answered ? static_cast<double>(unparsed) / static_cast<double>(answered) : 0.0;
    if (!clean.empty()) {
        report.clean_accuracy = accuracy(clean);
    }
    report.adv_accuracy = adv.empty() ? 0.0 : accuracy(adv);

    std::vector<PairedOutcome> seed_outcomes;
    for (const auto& job : jobs) {
        if (job.adversarial) {
            continue;
        }
        auto it = by_pair.find(job.pair->id());
        if (it == by_pair.end() || !it->second.first || !it->second.second) {
            continue;
        }
        PairedOutcome o;
        o.sample_id = job.pair->id();
        o.clean_pred = it->second.first->parsed;
        o.clean_truth = it->second.first->truth;
        o.adv_pred = it->second.second->parsed;
        o.adv_truth = it->second.second->truth;
        seed_outcomes.push_back(std::move(o));
    }
    report.asr = asr(seed_outcomes);
    for (auto& o : seed_outcomes) {
        outcomes.emplace_back(seed, std::move(o));
    }
    return report;
}

std::string records_jsonl(const std::vector<PredictionRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += json(r).dump();
        out += '\n';
    }
    return out;
}

} // namespace

RunResult run(const RunConfig& config, std::shared_ptr<Backend> backend) {
    validate_run_config(config);

    auto spec = load_task_spec(config.task_spec_path);
    for (const auto& text : config.ablations) {
        spec = ablate(spec, parse_ablation(text));
    }
    require_valid(spec);
    const auto instruction = render_instruction(spec, config.style).text;

    auto eval = read_eval_set(config.eval_set_path);
    check_against_spec(eval, spec);
    if (config.limit) {
        if (*config.limit > eval.pairs.size()) {
            fail(ErrorCode::Usage, "limit " + std::to_string(*config.limit) + " exceeds the " +
                                       std::to_string(eval.pairs.size()) + " pairs of " + config.eval_set_path);
        }
        eval.pairs.resize(*config.limit);
    }
    EvalSet pool;
    if (!config.demo_pool_path.empty()) {
        pool = read_eval_set(config.demo_pool_path);
        check_against_spec(pool, spec);
    }
    const auto task = eval.task_name.empty() ? spec.task_name : eval.task_name;
    const auto mode = parse_mode_for(config.style);
    const bool cot = config.style == PromptStyle::NlCot;

    // Demonstrations for every seed are fixed before any request goes out.
    std::vector<std::vector<DemoText>> demos_by_seed;
    for (auto seed : config.seeds) {
        auto policy = config.policy;
        policy.seed = seed;
        std::vector<DemoText> demos;
        auto render = [&](const Sample& s, bool adversarial) {
            auto rationale = cot ? s.rationale : std::nullopt;
            demos.push_back({render_demo(spec, config.style, s, rationale), s.id, adversarial});
        };
        try {
            if (policy.adversarial_context) {
                for (const auto& d : select_adversarial_context(pool.pairs, policy, spec.label_set)) {
                    render(d.sample, d.is_adversarial);
                }
            } else {
                for (const auto& s : select_clean(pool.clean_samples(), policy, spec.label_set)) {
                    render(s, false);
                }
            }
        } catch (const Error& e) {
            throw Error(e.code(), phase_context(seed, "select demonstrations", "") + e.what());
        }
        demos_by_seed.push_back(std::move(demos));
    }

    if (!backend) {
        backend = make_backend(config.backend);
    }
    std::unique_ptr<ResponseCache> cache;
    if (config.cache_dir) {
        cache = std::make_unique<ResponseCache>(*config.cache_dir);
    }

    const fs::path out_dir(config.out_dir);
    fs::create_directories(out_dir);
    DirectoryLock lock(out_dir);
    write_text(out_dir / "config.resolved", resolved_config_toml(config));

    std::vector<Job> jobs;
    for (const auto& pair : eval.pairs) {
        if (pair.clean) {
            jobs.push_back({&pair, false});
        }
        jobs.push_back({&pair, true});
    }

    RunResult result;
    std::vector<std::pair<std::uint64_t, PairedOutcome>> outcomes;
    const auto workers = static_cast<std::size_t>(std::max(1, config.backend.max_in_flight));

    for (std::size_t s = 0; s < config.seeds.size(); ++s) {
        const auto seed = config.seeds[s];
        std::vector<PredictionRecord> records(jobs.size());
        std::vector<char> done(jobs.size(), 0);
        std::atomic<std::size_t> next{0};
        std::atomic<bool> abort{false};
        std::exception_ptr fatal;
        std::string fatal_context;
        std::mutex fatal_mutex;

        auto worker = [&] {
            while (!abort.load()) {
                const auto i = next.fetch_add(1);
                if (i >= jobs.size()) {
                    return;
                }
                const auto& job = jobs[i];
                const auto& sample = job.adversarial ? job.pair->adversarial : *job.pair->clean;
                try {
                    auto test = render_test_prompt(spec, config.style, sample);
                    auto bundle = assemble_prompt(instruction, demos_by_seed[s], test, config.style,
                                                  static_cast<std::size_t>(config.policy.k));
                    records[i] = predict(cache.get(), *backend, bundle, spec.label_set, mode, config.decode,
                                         PredictionTarget{sample.id, job.adversarial, sample.label, seed});
                    done[i] = 1;
                } catch (...) {
                    std::lock_guard guard(fatal_mutex);
                    if (!fatal) {
                        fatal = std::current_exception();
                        fatal_context = phase_context(seed, "predict", sample.id);
                    }
                    abort = true;
                }
            }
        };
        std::vector<std::thread> pool_threads;
        for (std::size_t w = 0; w < std::min(workers, jobs.size()); ++w) {
            pool_threads.emplace_back(worker);
        }
        for (auto& t : pool_threads) {
            t.join();
        }

        for (std::size_t i = 0; i < jobs.size(); ++i) {
            if (done[i]) {
                result.records.push_back(records[i]);
            }
        }
        if (fatal) {
            write_text(out_dir / "records.jsonl", records_jsonl(result.records));
            try {
                std::rethrow_exception(fatal);
            } catch (const Error& e) {
                throw Error(e.code(), fatal_context + e.what());
            }
        }
        auto seed_report = score_seed(task, config, seed, jobs, records, outcomes);
        spdlog::info("{} seed {}: adv acc {:.4f}, failed {}", task, seed, seed_report.adv_accuracy, seed_report.failed);
        result.per_seed.push_back(std::move(seed_report));
    }

    result.report = aggregate(result.per_seed);
    if (result.report.failed > 0) {
        result.report.notes.push_back(std::to_string(result.report.failed) +
                                      " predictions failed and were left out of the metrics");
    }

    write_text(out_dir / "records.jsonl", records_jsonl(result.records));
    std::string outcome_lines;
    for (const auto& [seed, outcome] : outcomes) {
        json line = outcome;
        line["seed"] = seed;
        outcome_lines += line.dump();
        outcome_lines += '\n';
    }
    write_text(out_dir / "outcomes.jsonl", outcome_lines);
    json report_doc = result.report;
    report_doc["per_seed"] = result.per_seed;
    write_text(out_dir / "report.json", report_doc.dump(2) + "\n");
    write_text(out_dir / "report.md", render_report_table({result.report}, TableFormat::Markdown));
    return result;
}

// ---------------------------------------------------------------------------

std::string build_draft_prompt(const std::vector<TaskSpec>& examples, const std::string& new_task_description) {
    if (examples.empty()) {
        fail(ErrorCode::Usage, "draft needs at least one example task");
    }
    std::string prompt = "Below are code-style definitions of text classification tasks.";
    for (const auto& spec : examples) {
        prompt += kBlockSeparator;
        prompt += render_instruction(spec, PromptStyle::ClassExec).text;
    }
    prompt += kBlockSeparator;
    prompt += "New task: " + new_task_description;
    prompt += kBlockSeparator;
    prompt +=
        "Write a definition for the new task in the same style: a class named after the task, a docstring "
        "annotation with a Parameters section, an __init__ that stores every input, and an implementation "
        "method with one branch printing each label.";
    return prompt;
}

std::string draft_prompt(Backend& backend, const std::vector<TaskSpec>& examples,
                         const std::string& new_task_description, const DecodeParams& params) {
    return backend.complete(build_draft_prompt(examples, new_task_description), params).text;
}

std::vector<std::pair<std::string, std::string>> perplexity_items(const TaskSpec& spec, PromptStyle style,
                                                                  const std::vector<Sample>& samples) {
    const auto instruction = render_instruction(spec, style).text;
    std::vector<std::pair<std::string, std::string>> items;
    items.reserve(samples.size());
    for (const auto& s : samples) {
        auto context = instruction + std::string(kBlockSeparator) + render_test_prompt(spec, style, s) + "\n";
        items.emplace_back(std::move(context), render_answer_line(style, s.label));
    }
    return items;
}

} // namespace codeicl
