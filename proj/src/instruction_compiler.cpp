#include "codeicl/instruction_compiler.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <type_traits>

#include "codeicl/digest.hpp"
#include "codeicl/errors.hpp"

namespace codeicl {

namespace {

constexpr std::string_view kIndent = "    ";

class Lines {
public:
    void add(std::string_view indent_level, std::string_view text) {
        std::string line;
        if (!text.empty()) {
            line.append(indent_level);
            line.append(text);
        }
        lines_.push_back(std::move(line));
    }
    void blank() { lines_.emplace_back(); }

    std::string join() const {
        std::string out;
        for (std::size_t i = 0; i < lines_.size(); ++i) {
            if (i) {
                out += '\n';
            }
            out += lines_[i];
        }
        return out;
    }

private:
    std::vector<std::string> lines_;
};

std::string indent(int levels) {
    std::string out;
    for (int i = 0; i < levels; ++i) {
        out += kIndent;
    }
    return out;
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto end = text.find('\n', start);
        auto line = text.substr(start, end == std::string_view::npos ? text.size() - start : end - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        // Trailing spaces never survive into a rendering.
        auto last = line.find_last_not_of(" \t");
        out.emplace_back(last == std::string_view::npos ? std::string_view{} : line.substr(0, last + 1));
        if (end == std::string_view::npos) {
            break;
        }
        start = end + 1;
    }
    return out;
}

void add_annotation(Lines& lines, const std::string& annotation, const std::string& pad) {
    for (const auto& line : split_lines(annotation)) {
        lines.add(pad, line);
    }
}

std::string quoted_label(const TaskSpec& spec, const Label& label) {
    std::string out(1, spec.label_quote);
    out += label.str();
    out += spec.label_quote;
    return out;
}

/// Python-ish string literal for a field value.
std::string quote_value(std::string_view value) {
    std::string out = "\"";
    for (char c : value) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '"': out += "\\\""; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        default: out += c;
        }
    }
    out += '"';
    return out;
}

/// Single-line form of free text for the natural-language renderings.
std::string flatten(std::string_view value) {
    std::string out;
    bool in_break = false;
    for (char c : value) {
        if (c == '\n' || c == '\r') {
            if (!in_break) {
                out += ' ';
            }
            in_break = true;
            continue;
        }
        in_break = false;
        out += c;
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) {
            out += sep;
        }
        out += parts[i];
    }
    return out;
}

std::string default_returns_doc(const TaskSpec& spec) {
    const auto& labels = spec.label_set.labels;
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i > 0) {
            out += (i + 1 == labels.size()) ? " or " : ", ";
        }
        out += "\"" + labels[i].str() + "\"";
    }
    return out + ".";
}

/// if / elif / else chain printing one label per branch.
void add_branches(Lines& lines, const TaskSpec& spec, const std::string& args, int depth) {
    const auto pad = indent(depth);
    const auto body = indent(depth + 1);
    for (std::size_t i = 0; i < spec.branches.size(); ++i) {
        const auto& branch = spec.branches[i];
        lines.add(pad, std::string(i == 0 ? "if " : "elif ") + branch.subtask + "(" + args + "):");
        lines.add(body, "print(" + quoted_label(spec, branch.label) + ")");
    }
    if (spec.fallback) {
        lines.add(pad, "else:");
        lines.add(body, "print(" + quoted_label(spec, *spec.fallback) + ")");
    }
}

std::string render_class(const TaskSpec& spec, bool with_answer_slot) {
    Lines lines;
    const auto pad1 = indent(1);
    const auto pad2 = indent(2);
    lines.add("", "class " + spec.class_name + ":");

    if (!spec.annotation.empty()) {
        lines.add(pad1, "\"\"\"");
        add_annotation(lines, spec.annotation, pad1);
        lines.blank();
        lines.add(pad1, "Parameters");
        lines.add(pad1, "----------");
        for (const auto& f : spec.fields) {
            lines.add(pad1, f.name + " : str");
            if (!f.description.empty()) {
                lines.add(pad2, f.description);
            }
        }
        lines.add(pad1, "\"\"\"");
    }

    std::vector<std::string> params = {"self"};
    for (const auto& f : spec.fields) {
        params.push_back(spec.typed_init ? f.name + ": str" : f.name);
    }
    if (with_answer_slot) {
        params.push_back(spec.typed_init ? spec.answer_slot + ": str" : spec.answer_slot);
    }
    lines.add(pad1, "def __init__(" + join(params, ", ") + "):");
    for (const auto& f : spec.fields) {
        lines.add(pad2, "self." + f.name + " = " + f.name);
    }
    if (with_answer_slot) {
        lines.add(pad2, "self." + spec.answer_slot + " = " + spec.answer_slot);
        return lines.join();
    }

    lines.blank();
    lines.add(pad1, "def " + spec.method_name + "(self):");
    std::vector<std::string> args;
    for (const auto& f : spec.fields) {
        args.push_back("self." + f.name);
    }
    add_branches(lines, spec, join(args, ", "), 2);
    return lines.join();
}

std::string render_function(const TaskSpec& spec) {
    Lines lines;
    const auto pad1 = indent(1);
    const auto pad2 = indent(2);
    std::vector<std::string> params;
    std::vector<std::string> args;
    for (const auto& f : spec.fields) {
        params.push_back(f.name + ": str");
        args.push_back(f.name);
    }
    lines.add("", "def " + spec.class_name + "(" + join(params, ", ") + "):");

    if (!spec.annotation.empty()) {
        lines.add(pad1, "\"\"\"");
        add_annotation(lines, spec.annotation, pad1);
        lines.blank();
        lines.add(pad1, "Args:");
        for (const auto& f : spec.fields) {
            auto entry = f.name + " (str):";
            if (!f.description.empty()) {
                entry += " " + f.description;
            }
            lines.add(pad2, entry);
        }
        lines.blank();
        lines.add(pad1, "Returns:");
        lines.add(pad2, "str: " + spec.returns_doc.value_or(default_returns_doc(spec)));
        lines.add(pad1, "\"\"\"");
        lines.blank();
    }
    add_branches(lines, spec, join(args, ", "), 1);
    return lines.join();
}

void require_conforming(const TaskSpec& spec, const Sample& sample) {
    if (!conforms(sample, spec)) {
        fail(ErrorCode::Schema, "sample '" + sample.id + "' fields do not match task " + spec.task_name);
    }
}

/// Everything a demonstration shows before its answer line.
std::vector<std::string> input_lines(const TaskSpec& spec, PromptStyle style, const Sample& sample) {
    std::vector<std::string> out;
    switch (style) {
    case PromptStyle::Nl:
    case PromptStyle::NlCot:
        for (const auto& f : spec.fields) {
            out.push_back(f.display_name() + ": " + flatten(sample.field_values.at(f.name)));
        }
        break;
    case PromptStyle::ClassExec:
    case PromptStyle::ClassInit:
    case PromptStyle::FuncExec: {
        std::vector<std::string> kwargs;
        for (const auto& f : spec.fields) {
            kwargs.push_back(f.name + " = " + quote_value(sample.field_values.at(f.name)));
        }
        auto call = spec.class_name + "(" + join(kwargs, ", ") + ")";
        if (style == PromptStyle::FuncExec) {
            out.push_back(call);
        } else {
            out.push_back("res = " + call);
        }
        if (style == PromptStyle::ClassExec) {
            out.push_back("res." + spec.method_name + "()");
        }
        break;
    }
    }
    return out;
}

} // namespace

InstructionText render_instruction(const TaskSpec& spec, PromptStyle style) {
    require_valid(spec);
    InstructionText out;
    out.style = style;
    out.spec_fingerprint = sha256_hex(json(spec).dump());
    switch (style) {
    case PromptStyle::Nl:
    case PromptStyle::NlCot:
        if (spec.nl_instruction.empty()) {
            fail(ErrorCode::UnsupportedStyle,
                 spec.task_name + " has no nl_instruction for style " + std::string(to_string(style)));
        }
        out.text = spec.nl_instruction;
        break;
    case PromptStyle::ClassExec:
        out.text = render_class(spec, false);
        break;
    case PromptStyle::ClassInit:
        out.text = render_class(spec, true);
        break;
    case PromptStyle::FuncExec:
        out.text = render_function(spec);
        break;
    }
    return out;
}

std::string render_answer_line(PromptStyle style, const Label& label) {
    if (style == PromptStyle::Nl || style == PromptStyle::NlCot) {
        return "Answer: " + label.str();
    }
    return label.str();
}

std::string render_demo(const TaskSpec& spec, PromptStyle style, const Sample& sample,
                        const std::optional<std::string>& rationale) {
    require_conforming(spec, sample);
    auto lines = input_lines(spec, style, sample);
    if (style == PromptStyle::NlCot) {
        if (!rationale) {
            fail(ErrorCode::MissingRationale, "nl_cot demonstration '" + sample.id + "' has no rationale");
        }
        lines.push_back("Reasoning: " + flatten(*rationale));
    }
    lines.push_back(render_answer_line(style, sample.label));
    return join(lines, "\n");
}

std::string render_test_prompt(const TaskSpec& spec, PromptStyle style, const Sample& sample) {
    require_conforming(spec, sample);
    return join(input_lines(spec, style, sample), "\n");
}

PromptBundle assemble_prompt(const std::string& instruction, std::vector<DemoText> demos,
                             const std::string& test_prompt, PromptStyle style,
                             std::size_t expected_k) {
    if (demos.size() != expected_k) {
        fail(ErrorCode::Usage, "expected " + std::to_string(expected_k) + " demonstrations, got " +
                                   std::to_string(demos.size()));
    }
    PromptBundle bundle;
    bundle.instruction = instruction;
    bundle.test_prompt = test_prompt;
    bundle.style = style;
    bundle.full_text = instruction;
    for (const auto& demo : demos) {
        bundle.full_text += kBlockSeparator;
        bundle.full_text += demo.text;
    }
    bundle.full_text += kBlockSeparator;
    bundle.full_text += test_prompt;
    bundle.demos = std::move(demos);
    return bundle;
}

namespace {

/// Replaces whole-identifier occurrences of `from` with `to`.
std::string rename_identifier(const std::string& text, const std::string& from, const std::string& to) {
    auto is_ident_char = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    };
    std::string out;
    std::size_t pos = 0;
    while (true) {
        auto hit = text.find(from, pos);
        if (hit == std::string::npos) {
            out.append(text, pos, std::string::npos);
            return out;
        }
        auto after = hit + from.size();
        bool bounded = (hit == 0 || !is_ident_char(text[hit - 1])) &&
                       (after >= text.size() || !is_ident_char(text[after]));
        out.append(text, pos, hit - pos);
        out += bounded ? to : from;
        pos = after;
    }
}

} // namespace

TaskSpec ablate(const TaskSpec& spec, const AblationTransform& transform) {
    TaskSpec out = spec;
    std::visit(
        [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, ReplaceClassName>) {
                if (!is_identifier(t.new_name)) {
                    fail(ErrorCode::Usage, "invalid class name '" + t.new_name + "'");
                }
                out.annotation = rename_identifier(out.annotation, spec.class_name, t.new_name);
                out.class_name = t.new_name;
            } else if constexpr (std::is_same_v<T, ReplaceSubtaskNames>) {
                for (const auto& [from, to] : t.renames) {
                    auto it = std::find_if(out.branches.begin(), out.branches.end(),
                                           [&](const ImplBranch& b) { return b.subtask == from; });
                    if (it == out.branches.end()) {
                        fail(ErrorCode::UnknownSubtask, "'" + from + "' is not a subtask of " + spec.task_name);
                    }
                    if (!is_identifier(to)) {
                        fail(ErrorCode::Usage, "invalid subtask name '" + to + "'");
                    }
                }
                // Renames apply simultaneously, so swaps work.
                for (auto& branch : out.branches) {
                    if (auto it = t.renames.find(spec.branches[&branch - out.branches.data()].subtask);
                        it != t.renames.end()) {
                        branch.subtask = it->second;
                    }
                }
            } else {
                out.annotation.clear();
            }
        },
        transform);
    return out;
}

AblationTransform parse_ablation(std::string_view text) {
    if (text == "strip_annotation") {
        return StripAnnotation{};
    }
    auto eq = text.find('=');
    if (eq == std::string_view::npos) {
        fail(ErrorCode::Usage, "unknown ablation '" + std::string(text) + "'");
    }
    auto kind = text.substr(0, eq);
    auto arg = std::string(text.substr(eq + 1));
    if (kind == "class_name") {
        return ReplaceClassName{arg};
    }
    if (kind == "subtask") {
        ReplaceSubtaskNames renames;
        std::istringstream parts(arg);
        std::string part;
        while (std::getline(parts, part, ',')) {
            auto colon = part.find(':');
            if (colon == std::string::npos) {
                fail(ErrorCode::Usage, "subtask rename must be old:new, got '" + part + "'");
            }
            renames.renames[part.substr(0, colon)] = part.substr(colon + 1);
        }
        return renames;
    }
    fail(ErrorCode::Usage, "unknown ablation '" + std::string(text) + "'");
}

} // namespace codeicl
