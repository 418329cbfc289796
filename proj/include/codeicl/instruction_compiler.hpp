#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "codeicl/task_model.hpp"

namespace codeicl {

struct InstructionText {
    std::string text;
    PromptStyle style = PromptStyle::ClassExec;
    std::string spec_fingerprint; // sha256 over the spec's canonical JSON

    bool operator==(const InstructionText&) const = default;
};

/// Renders the task definition: a pseudo-code class or function for the code
/// styles, the task's natural-language instruction for nl / nl_cot.
/// Throws UnsupportedStyle when an nl style is requested and the spec has no
/// nl_instruction, InvalidSpec when the spec does not validate.
InstructionText render_instruction(const TaskSpec& spec, PromptStyle style);

/// One demonstration: the sample's input in the style's surface form followed
/// by its label on the last line. nl_cot needs a rationale (MissingRationale).
std::string render_demo(const TaskSpec& spec, PromptStyle style, const Sample& sample,
                        const std::optional<std::string>& rationale = std::nullopt);

/// The demonstration text without the answer: what the model has to continue.
std::string render_test_prompt(const TaskSpec& spec, PromptStyle style, const Sample& sample);

/// The final line of a demonstration, i.e. the text a model is expected to
/// produce (`positive` for code styles, `Answer: positive` for nl styles).
std::string render_answer_line(PromptStyle style, const Label& label);

inline constexpr std::string_view kBlockSeparator = "\n\n";

/// Joins instruction, demonstrations and the test prompt with one blank line
/// between pieces. Throws Usage when demos.size() != expected_k.
PromptBundle assemble_prompt(const std::string& instruction, std::vector<DemoText> demos,
                             const std::string& test_prompt, PromptStyle style,
                             std::size_t expected_k);

struct ReplaceClassName {
    std::string new_name;
};
struct ReplaceSubtaskNames {
    std::map<std::string, std::string> renames;
};
struct StripAnnotation {};

using AblationTransform = std::variant<ReplaceClassName, ReplaceSubtaskNames, StripAnnotation>;

/// Applies a structural ablation. Renamed identifiers must be valid; unknown
/// subtask names raise UnknownSubtask.
TaskSpec ablate(const TaskSpec& spec, const AblationTransform& transform);

/// Parses the CLI form: `strip_annotation`, `class_name=Foo`,
/// `subtask=old:new[,old2:new2]`.
AblationTransform parse_ablation(std::string_view text);

} // namespace codeicl
