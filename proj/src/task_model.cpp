#include "codeicl/task_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "codeicl/errors.hpp"

namespace codeicl {

namespace {

std::string trim(std::string_view text) {
    auto begin = text.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) {
        return {};
    }
    auto end = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(begin, end - begin + 1));
}

constexpr std::string_view kReservedFieldNames[] = {"label", "rationale"};

} // namespace

Label::Label(std::string_view raw) : value_(trim(raw)) {
    std::transform(value_.begin(), value_.end(), value_.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (value_.empty()) {
        fail(ErrorCode::InvalidSpec, "empty label");
    }
    if (std::any_of(value_.begin(), value_.end(),
                    [](unsigned char c) { return std::isspace(c) != 0; })) {
        fail(ErrorCode::InvalidSpec, "label contains whitespace: '" + value_ + "'");
    }
}

bool LabelSet::contains(const Label& label) const {
    return index_of(label).has_value();
}

std::optional<std::size_t> LabelSet::index_of(const Label& label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - labels.begin());
}

std::string InputField::display_name() const {
    if (!display.empty()) {
        return display;
    }
    std::string out = name;
    std::replace(out.begin(), out.end(), '_', ' ');
    if (!out.empty()) {
        out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    }
    return out;
}

std::vector<std::string> TaskSpec::field_names() const {
    std::vector<std::string> names;
    names.reserve(fields.size());
    for (const auto& f : fields) {
        names.push_back(f.name);
    }
    return names;
}

bool ValidationResult::has_rule(std::string_view rule) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.rule == rule; });
}

std::string ValidationResult::describe() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < violations.size(); ++i) {
        if (i) {
            out << "; ";
        }
        out << violations[i].field << ": " << violations[i].rule;
    }
    return out.str();
}

bool is_identifier(std::string_view text) noexcept {
    if (text.empty() || std::isdigit(static_cast<unsigned char>(text.front()))) {
        return false;
    }
    return std::all_of(text.begin(), text.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_';
    });
}

ValidationResult validate_spec(const TaskSpec& spec) {
    ValidationResult result;
    auto flag = [&](std::string field, std::string rule) {
        result.violations.push_back({std::move(field), std::move(rule)});
    };

    if (spec.task_name.empty()) {
        flag("task_name", "empty");
    }
    if (!is_identifier(spec.class_name)) {
        flag("class_name", "invalid identifier");
    }
    if (!is_identifier(spec.method_name)) {
        flag("method_name", "invalid identifier");
    }
    if (!is_identifier(spec.answer_slot)) {
        flag("answer_slot", "invalid identifier");
    }
    if (spec.label_quote != '"' && spec.label_quote != '\'') {
        flag("label_quote", "must be a single or double quote");
    }

    if (spec.fields.empty()) {
        flag("fields", "no input fields");
    }
    std::set<std::string> field_names;
    for (const auto& f : spec.fields) {
        if (!is_identifier(f.name)) {
            flag("fields." + f.name, "invalid identifier");
        }
        if (std::find(std::begin(kReservedFieldNames), std::end(kReservedFieldNames), f.name) !=
            std::end(kReservedFieldNames)) {
            flag("fields." + f.name, "reserved field name");
        }
        if (!field_names.insert(f.name).second) {
            flag("fields." + f.name, "duplicate identifier");
        }
    }

    const auto& labels = spec.label_set.labels;
    if (labels.empty()) {
        flag("label_set", "empty label set");
    }
    std::set<Label> distinct(labels.begin(), labels.end());
    if (distinct.size() != labels.size()) {
        flag("label_set", "duplicate label");
    }

    std::set<std::string> subtasks;
    for (const auto& b : spec.branches) {
        if (!is_identifier(b.subtask)) {
            flag("impl_branches." + b.subtask, "invalid identifier");
        }
        if (!subtasks.insert(b.subtask).second) {
            flag("impl_branches." + b.subtask, "duplicate identifier");
        }
    }

    // Every label must be printed by exactly one branch (fallback included).
    std::map<Label, int> printed;
    for (const auto& b : spec.branches) {
        ++printed[b.label];
    }
    if (spec.fallback) {
        ++printed[*spec.fallback];
    }
    for (const auto& [label, count] : printed) {
        if (!distinct.count(label)) {
            flag("impl_branches", "label not in label set: " + label.str());
        } else if (count > 1) {
            flag("impl_branches", "label covered more than once: " + label.str());
        }
    }
    for (const auto& label : distinct) {
        if (!printed.count(label)) {
            flag("impl_branches", "label coverage incomplete");
            break;
        }
    }
    if (spec.branches.empty()) {
        flag("impl_branches", "no branches");
    }
    return result;
}

void require_valid(const TaskSpec& spec) {
    auto result = validate_spec(spec);
    if (!result.ok()) {
        fail(ErrorCode::InvalidSpec, spec.task_name + ": " + result.describe());
    }
}

bool conforms(const Sample& sample, const TaskSpec& spec) {
    if (sample.field_values.size() != spec.fields.size()) {
        return false;
    }
    return std::all_of(spec.fields.begin(), spec.fields.end(), [&](const InputField& f) {
        return sample.field_values.count(f.name) == 1;
    });
}

std::string_view to_string(Transformation t) noexcept {
    switch (t) {
    case Transformation::RevTgt: return "revtgt";
    case Transformation::RevNon: return "revnon";
    case Transformation::AddDiff: return "adddiff";
    case Transformation::AdvGlue: return "advglue";
    case Transformation::Other: return "other";
    }
    return "other";
}

std::optional<Transformation> parse_transformation(std::string_view text) {
    for (auto t : {Transformation::RevTgt, Transformation::RevNon, Transformation::AddDiff,
                   Transformation::AdvGlue, Transformation::Other}) {
        if (to_string(t) == text) {
            return t;
        }
    }
    return std::nullopt;
}

std::string_view to_string(PromptStyle style) noexcept {
    switch (style) {
    case PromptStyle::Nl: return "nl";
    case PromptStyle::NlCot: return "nl_cot";
    case PromptStyle::ClassExec: return "class_exec";
    case PromptStyle::ClassInit: return "class_init";
    case PromptStyle::FuncExec: return "func_exec";
    }
    return "class_exec";
}

const std::vector<PromptStyle>& all_styles() {
    static const std::vector<PromptStyle> styles = {PromptStyle::Nl, PromptStyle::NlCot,
                                                    PromptStyle::ClassExec, PromptStyle::ClassInit,
                                                    PromptStyle::FuncExec};
    return styles;
}

std::optional<PromptStyle> parse_style(std::string_view text) {
    for (auto s : all_styles()) {
        if (to_string(s) == text) {
            return s;
        }
    }
    return std::nullopt;
}

bool is_code_style(PromptStyle style) noexcept {
    return style == PromptStyle::ClassExec || style == PromptStyle::ClassInit ||
           style == PromptStyle::FuncExec;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& value) {
    if (value) {
        j[key] = *value;
    }
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& value) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        value = it->get<T>();
    } else {
        value.reset();
    }
}

// JSON has no infinity; an unbounded perplexity is written as "inf".
json ppl_to_json(const std::optional<double>& ppl) {
    if (!ppl) {
        return nullptr;
    }
    if (std::isinf(*ppl)) {
        return "inf";
    }
    return *ppl;
}

std::optional<double> ppl_from_json(const json& j) {
    if (j.is_null()) {
        return std::nullopt;
    }
    if (j.is_string() && j.get<std::string>() == "inf") {
        return std::numeric_limits<double>::infinity();
    }
    return j.get<double>();
}

} // namespace

void to_json(json& j, const Label& v) { j = v.str(); }
void from_json(const json& j, Label& v) { v = Label(j.get<std::string>()); }

void to_json(json& j, const LabelSet& v) {
    j = json{{"task_name", v.task_name}, {"labels", v.labels}};
}
void from_json(const json& j, LabelSet& v) {
    j.at("task_name").get_to(v.task_name);
    j.at("labels").get_to(v.labels);
}

void to_json(json& j, const InputField& v) {
    j = json{{"name", v.name}, {"description", v.description}, {"display", v.display}};
}
void from_json(const json& j, InputField& v) {
    j.at("name").get_to(v.name);
    v.description = j.value("description", "");
    v.display = j.value("display", "");
}

void to_json(json& j, const ImplBranch& v) {
    j = json{{"subtask", v.subtask}, {"label", v.label}};
}
void from_json(const json& j, ImplBranch& v) {
    j.at("subtask").get_to(v.subtask);
    j.at("label").get_to(v.label);
}

void to_json(json& j, const TaskSpec& v) {
    j = json{{"task_name", v.task_name},
             {"class_name", v.class_name},
             {"method_name", v.method_name},
             {"annotation", v.annotation},
             {"fields", v.fields},
             {"label_set", v.label_set},
             {"branches", v.branches},
             {"nl_instruction", v.nl_instruction},
             {"typed_init", v.typed_init},
             {"label_quote", std::string(1, v.label_quote)},
             {"answer_slot", v.answer_slot}};
    put_optional(j, "fallback", v.fallback);
    put_optional(j, "returns_doc", v.returns_doc);
}
void from_json(const json& j, TaskSpec& v) {
    j.at("task_name").get_to(v.task_name);
    j.at("class_name").get_to(v.class_name);
    j.at("method_name").get_to(v.method_name);
    v.annotation = j.value("annotation", "");
    j.at("fields").get_to(v.fields);
    j.at("label_set").get_to(v.label_set);
    j.at("branches").get_to(v.branches);
    v.nl_instruction = j.value("nl_instruction", "");
    v.typed_init = j.value("typed_init", false);
    auto quote = j.value("label_quote", std::string("\""));
    v.label_quote = quote.empty() ? '"' : quote.front();
    v.answer_slot = j.value("answer_slot", std::string("label"));
    get_optional(j, "fallback", v.fallback);
    get_optional(j, "returns_doc", v.returns_doc);
}

void to_json(json& j, const Sample& v) {
    j = json{{"id", v.id}, {"fields", v.field_values}, {"label", v.label}};
    put_optional(j, "rationale", v.rationale);
}
void from_json(const json& j, Sample& v) {
    j.at("id").get_to(v.id);
    j.at("fields").get_to(v.field_values);
    j.at("label").get_to(v.label);
    get_optional(j, "rationale", v.rationale);
}

void to_json(json& j, const AdvPair& v) {
    j = json{{"adversarial", v.adversarial}, {"transformation", std::string(to_string(v.transformation))}};
    put_optional(j, "clean", v.clean);
}
void from_json(const json& j, AdvPair& v) {
    j.at("adversarial").get_to(v.adversarial);
    get_optional(j, "clean", v.clean);
    auto tag = j.at("transformation").get<std::string>();
    auto t = parse_transformation(tag);
    if (!t) {
        fail(ErrorCode::UnknownTransformation, tag);
    }
    v.transformation = *t;
}

void to_json(json& j, const PromptStyle& v) { j = std::string(to_string(v)); }
void from_json(const json& j, PromptStyle& v) {
    auto text = j.get<std::string>();
    auto style = parse_style(text);
    if (!style) {
        fail(ErrorCode::Schema, "unknown prompt style '" + text + "'");
    }
    v = *style;
}

void to_json(json& j, const DemoText& v) {
    j = json{{"text", v.text}, {"source_id", v.source_id}, {"is_adversarial", v.is_adversarial}};
}
void from_json(const json& j, DemoText& v) {
    j.at("text").get_to(v.text);
    j.at("source_id").get_to(v.source_id);
    j.at("is_adversarial").get_to(v.is_adversarial);
}

void to_json(json& j, const PromptBundle& v) {
    j = json{{"instruction", v.instruction},
             {"demos", v.demos},
             {"test_prompt", v.test_prompt},
             {"style", v.style},
             {"full_text", v.full_text}};
}
void from_json(const json& j, PromptBundle& v) {
    j.at("instruction").get_to(v.instruction);
    j.at("demos").get_to(v.demos);
    j.at("test_prompt").get_to(v.test_prompt);
    j.at("style").get_to(v.style);
    j.at("full_text").get_to(v.full_text);
}

void to_json(json& j, const DecodeParams& v) {
    j = json{{"model_name", v.model_name}, {"temperature", v.temperature}, {"max_tokens", v.max_tokens}};
}
void from_json(const json& j, DecodeParams& v) {
    v.model_name = j.value("model_name", "");
    v.temperature = j.value("temperature", 0.0);
    v.max_tokens = j.value("max_tokens", 128);
}

void to_json(json& j, const PredictionRecord& v) {
    j = json{{"sample_id", v.sample_id},
             {"is_adversarial", v.is_adversarial},
             {"seed", v.seed},
             {"truth", v.truth},
             {"raw_completion", v.raw_completion},
             {"parsed", v.parsed ? json(v.parsed->str()) : json(nullptr)},
             {"prompt_hash", v.prompt_hash},
             {"decode", v.decode},
             {"from_cache", v.from_cache}};
    put_optional(j, "token_logprobs", v.token_logprobs);
    put_optional(j, "error", v.error);
}
void from_json(const json& j, PredictionRecord& v) {
    j.at("sample_id").get_to(v.sample_id);
    j.at("is_adversarial").get_to(v.is_adversarial);
    v.seed = j.value("seed", std::uint64_t{0});
    j.at("truth").get_to(v.truth);
    j.at("raw_completion").get_to(v.raw_completion);
    get_optional(j, "parsed", v.parsed);
    j.at("prompt_hash").get_to(v.prompt_hash);
    j.at("decode").get_to(v.decode);
    v.from_cache = j.value("from_cache", false);
    get_optional(j, "token_logprobs", v.token_logprobs);
    get_optional(j, "error", v.error);
}

void to_json(json& j, const MetricSummary& v) {
    j = json{{"mean", v.mean}};
    put_optional(j, "std", v.stddev);
}
void from_json(const json& j, MetricSummary& v) {
    j.at("mean").get_to(v.mean);
    get_optional(j, "std", v.stddev);
}

void to_json(json& j, const SeedReport& v) {
    j = json{{"task", v.task_name},
             {"style", v.style},
             {"k", v.k},
             {"adversarial_context", v.adversarial_context},
             {"seed", v.seed},
             {"clean_accuracy", v.clean_accuracy ? json(*v.clean_accuracy) : json(nullptr)},
             {"adv_accuracy", v.adv_accuracy},
             {"asr", v.asr ? json(*v.asr) : json(nullptr)},
             {"unparsed_rate", v.unparsed_rate},
             {"predictions", v.predictions},
             {"failed", v.failed}};
}
void from_json(const json& j, SeedReport& v) {
    j.at("task").get_to(v.task_name);
    j.at("style").get_to(v.style);
    j.at("k").get_to(v.k);
    j.at("adversarial_context").get_to(v.adversarial_context);
    j.at("seed").get_to(v.seed);
    get_optional(j, "clean_accuracy", v.clean_accuracy);
    j.at("adv_accuracy").get_to(v.adv_accuracy);
    get_optional(j, "asr", v.asr);
    j.at("unparsed_rate").get_to(v.unparsed_rate);
    j.at("predictions").get_to(v.predictions);
    j.at("failed").get_to(v.failed);
}

void to_json(json& j, const RunReport& v) {
    j = json{{"task", v.task_name},
             {"style", v.style},
             {"k", v.k},
             {"adversarial_context", v.adversarial_context},
             {"seeds", v.seeds},
             {"clean_accuracy", v.clean_accuracy ? json(*v.clean_accuracy) : json(nullptr)},
             {"adv_accuracy", v.adv_accuracy},
             {"asr", v.asr ? json(*v.asr) : json(nullptr)},
             {"unparsed_rate", v.unparsed_rate},
             {"failed", v.failed},
             {"ppl", ppl_to_json(v.ppl)},
             {"notes", v.notes}};
}
void from_json(const json& j, RunReport& v) {
    j.at("task").get_to(v.task_name);
    j.at("style").get_to(v.style);
    j.at("k").get_to(v.k);
    v.adversarial_context = j.value("adversarial_context", false);
    j.at("seeds").get_to(v.seeds);
    get_optional(j, "clean_accuracy", v.clean_accuracy);
    j.at("adv_accuracy").get_to(v.adv_accuracy);
    get_optional(j, "asr", v.asr);
    j.at("unparsed_rate").get_to(v.unparsed_rate);
    v.failed = j.value("failed", std::size_t{0});
    v.ppl = ppl_from_json(j.value("ppl", json(nullptr)));
    v.notes = j.value("notes", std::vector<std::string>{});
}

} // namespace codeicl
