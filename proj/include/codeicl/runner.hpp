#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "codeicl/demo_composer.hpp"
#include "codeicl/evaluation.hpp"
#include "codeicl/model_backend.hpp"
#include "codeicl/task_model.hpp"

namespace codeicl {

struct RunConfig {
    std::string task_spec_path;
    std::string eval_set_path;
    std::string demo_pool_path;
    PromptStyle style = PromptStyle::ClassExec;
    DemoPolicy policy; // policy.seed is overwritten per run seed
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    BackendDescriptor backend;
    DecodeParams decode;
    std::optional<std::size_t> limit;
    std::string out_dir;
    std::optional<std::string> cache_dir;
    /// Ablations applied to the spec before rendering, in CLI syntax.
    std::vector<std::string> ablations;
};

/// Shot counts used for each task unless the config sets policy.k.
std::optional<int> default_shot_count(std::string_view task_name);

/// Reads a TOML run config; relative paths resolve against the file's
/// directory. When [policy].k is absent the task's default shot count is
/// used.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(std::string_view toml_text, const std::string& base_dir,
                           const std::string& source = "<string>");

/// TOML text that reproduces the run when fed back to load_run_config.
std::string resolved_config_toml(const RunConfig& config);

/// Checks that need no file access: seeds, limit, shot count, backend.
/// Errors: Usage, OddShotCount.
void validate_run_config(const RunConfig& config);

struct RunResult {
    RunReport report;
    std::vector<SeedReport> per_seed;
    std::vector<PredictionRecord> records;
};

/// Runs every seed: selects demonstrations, prompts each pair's clean and
/// adversarial sample, scores the predictions and aggregates. Writes
/// config.resolved, records.jsonl, outcomes.jsonl, report.json and
/// report.md into config.out_dir. `backend` overrides the configured one.
RunResult run(const RunConfig& config, std::shared_ptr<Backend> backend = nullptr);

/// Meta-prompt asking a model to write a code-style definition for a new
/// task, seeded with the class_exec renderings of the example specs.
std::string build_draft_prompt(const std::vector<TaskSpec>& examples, const std::string& new_task_description);

/// Sends the draft prompt and returns the raw completion for human review.
/// Errors: Usage when no examples are given; backend errors.
std::string draft_prompt(Backend& backend, const std::vector<TaskSpec>& examples,
                         const std::string& new_task_description, const DecodeParams& params);

/// (context, target) pairs for perplexity: the instruction and test prompt
/// as context, the rendered answer line as target.
std::vector<std::pair<std::string, std::string>> perplexity_items(const TaskSpec& spec, PromptStyle style,
                                                                  const std::vector<Sample>& samples);

enum class TableFormat { Markdown, Csv };

/// Cross-run matrix: one row per method (style, adversarial context), one
/// column per task with the ASR mean in percent, plus Avg(ASR) and Avg(Acc)
/// (mean adversarial accuracy). Missing cells render as "–".
std::string render_report_table(const std::vector<RunReport>& reports, TableFormat format);

/// Loads report.json from each directory and renders the table.
/// Errors: Schema on a malformed report, Io on a missing one.
std::string report(const std::vector<std::string>& results_dirs, TableFormat format);

RunReport read_report(const std::string& results_dir);

} // namespace codeicl
