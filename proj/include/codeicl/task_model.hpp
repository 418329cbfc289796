#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace codeicl {

using json = nlohmann::json;

/// A class label in canonical form: lowercase, trimmed, no inner whitespace.
/// Underscores are allowed ("not_entailment").
class Label {
public:
    Label() = default;
    /// Canonicalizes (trim + lowercase); throws InvalidSpec when the result
    /// is empty or contains whitespace.
    explicit Label(std::string_view raw);

    const std::string& str() const noexcept { return value_; }
    bool empty() const noexcept { return value_.empty(); }

    auto operator<=>(const Label&) const = default;

private:
    std::string value_;
};

struct LabelSet {
    std::string task_name;
    std::vector<Label> labels;

    bool contains(const Label& label) const;
    std::optional<std::size_t> index_of(const Label& label) const;
    std::size_t size() const noexcept { return labels.size(); }

    bool operator==(const LabelSet&) const = default;
};

struct InputField {
    std::string name;
    std::string description;
    /// Caption used by natural-language renderings ("Premise"). Empty means
    /// derive from the name.
    std::string display;

    std::string display_name() const;

    bool operator==(const InputField&) const = default;
};

struct ImplBranch {
    std::string subtask;
    Label label;

    bool operator==(const ImplBranch&) const = default;
};

struct TaskSpec {
    std::string task_name;
    std::string class_name;
    std::string method_name;
    std::string annotation;
    std::vector<InputField> fields;
    LabelSet label_set;
    std::vector<ImplBranch> branches;
    std::optional<Label> fallback;
    std::string nl_instruction;

    // Surface options for the code renderings.
    bool typed_init = false;          // `name: str` in the initializer signature
    char label_quote = '"';           // quote used around printed labels
    std::string answer_slot = "label"; // trailing class_init parameter
    std::optional<std::string> returns_doc; // func_exec "Returns:" text

    std::vector<std::string> field_names() const;

    bool operator==(const TaskSpec&) const = default;
};

struct Violation {
    std::string field;
    std::string rule;

    bool operator==(const Violation&) const = default;
};

struct ValidationResult {
    std::vector<Violation> violations;

    bool ok() const noexcept { return violations.empty(); }
    bool has_rule(std::string_view rule) const;
    std::string describe() const;
};

bool is_identifier(std::string_view text) noexcept;

ValidationResult validate_spec(const TaskSpec& spec);

/// Throws InvalidSpec listing every violation.
void require_valid(const TaskSpec& spec);

struct Sample {
    std::string id;
    std::map<std::string, std::string> field_values;
    Label label;
    /// Worked reasoning, only consumed by chain-of-thought demonstrations.
    std::optional<std::string> rationale;

    bool operator==(const Sample&) const = default;
};

/// True when the sample's field keys are exactly the spec's field names.
bool conforms(const Sample& sample, const TaskSpec& spec);

enum class Transformation { RevTgt, RevNon, AddDiff, AdvGlue, Other };

std::string_view to_string(Transformation t) noexcept;
std::optional<Transformation> parse_transformation(std::string_view text);

struct AdvPair {
    std::optional<Sample> clean; // absent when no clean counterpart was joined
    Sample adversarial;
    Transformation transformation = Transformation::Other;

    const std::string& id() const noexcept { return adversarial.id; }

    bool operator==(const AdvPair&) const = default;
};

enum class PromptStyle { Nl, NlCot, ClassExec, ClassInit, FuncExec };

std::string_view to_string(PromptStyle style) noexcept;
std::optional<PromptStyle> parse_style(std::string_view text);
bool is_code_style(PromptStyle style) noexcept;
const std::vector<PromptStyle>& all_styles();

struct DemoText {
    std::string text;
    std::string source_id;
    bool is_adversarial = false;

    bool operator==(const DemoText&) const = default;
};

struct PromptBundle {
    std::string instruction;
    std::vector<DemoText> demos;
    std::string test_prompt;
    PromptStyle style = PromptStyle::ClassExec;
    std::string full_text;

    bool operator==(const PromptBundle&) const = default;
};

struct DecodeParams {
    std::string model_name;
    double temperature = 0.0;
    int max_tokens = 128;

    bool operator==(const DecodeParams&) const = default;
};

struct PredictionRecord {
    std::string sample_id;
    bool is_adversarial = false;
    std::uint64_t seed = 0;
    Label truth;
    std::string raw_completion;
    std::optional<Label> parsed; // nullopt is the Unparsed marker
    std::string prompt_hash;
    DecodeParams decode;
    std::optional<std::vector<double>> token_logprobs;
    bool from_cache = false;
    std::optional<std::string> error; // set when the prediction failed

    bool failed() const noexcept { return error.has_value(); }
    bool correct() const { return !failed() && parsed && *parsed == truth; }

    bool operator==(const PredictionRecord&) const = default;
};

struct MetricSummary {
    double mean = 0.0;
    std::optional<double> stddev; // present iff aggregated over >= 2 seeds

    bool operator==(const MetricSummary&) const = default;
};

/// Metrics of a single seed.
struct SeedReport {
    std::string task_name;
    PromptStyle style = PromptStyle::ClassExec;
    int k = 0;
    bool adversarial_context = false;
    std::uint64_t seed = 0;
    std::optional<double> clean_accuracy;
    double adv_accuracy = 0.0;
    std::optional<double> asr;
    double unparsed_rate = 0.0;
    std::size_t predictions = 0;
    std::size_t failed = 0;

    bool operator==(const SeedReport&) const = default;
};

struct RunReport {
    std::string task_name;
    PromptStyle style = PromptStyle::ClassExec;
    int k = 0;
    bool adversarial_context = false;
    std::vector<std::uint64_t> seeds;
    std::optional<MetricSummary> clean_accuracy;
    MetricSummary adv_accuracy;
    std::optional<MetricSummary> asr;
    double unparsed_rate = 0.0;
    std::size_t failed = 0;
    std::optional<double> ppl;
    std::vector<std::string> notes;

    bool operator==(const RunReport&) const = default;
};

// JSON encodings (nlohmann ADL hooks).
void to_json(json& j, const Label& v);
void from_json(const json& j, Label& v);
void to_json(json& j, const LabelSet& v);
void from_json(const json& j, LabelSet& v);
void to_json(json& j, const InputField& v);
void from_json(const json& j, InputField& v);
void to_json(json& j, const ImplBranch& v);
void from_json(const json& j, ImplBranch& v);
void to_json(json& j, const TaskSpec& v);
void from_json(const json& j, TaskSpec& v);
void to_json(json& j, const Sample& v);
void from_json(const json& j, Sample& v);
void to_json(json& j, const AdvPair& v);
void from_json(const json& j, AdvPair& v);
void to_json(json& j, const PromptStyle& v);
void from_json(const json& j, PromptStyle& v);
void to_json(json& j, const DemoText& v);
void from_json(const json& j, DemoText& v);
void to_json(json& j, const PromptBundle& v);
void from_json(const json& j, PromptBundle& v);
void to_json(json& j, const DecodeParams& v);
void from_json(const json& j, DecodeParams& v);
void to_json(json& j, const PredictionRecord& v);
void from_json(const json& j, PredictionRecord& v);
void to_json(json& j, const MetricSummary& v);
void from_json(const json& j, MetricSummary& v);
void to_json(json& j, const SeedReport& v);
void from_json(const json& j, SeedReport& v);
void to_json(json& j, const RunReport& v);
void from_json(const json& j, RunReport& v);

/// Reads a task specification from a TOML document.
TaskSpec parse_task_spec(std::string_view toml_text, const std::string& source = "<string>");
TaskSpec load_task_spec(const std::string& path);

} // namespace codeicl
