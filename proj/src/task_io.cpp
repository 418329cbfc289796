#include <fstream>
#include <sstream>

#include <toml.hpp>

#include "codeicl/errors.hpp"
#include "codeicl/task_model.hpp"

namespace codeicl {

namespace {

std::string require_string(const toml::table& table, std::string_view key, const std::string& where) {
    auto value = table[key].value<std::string>();
    if (!value) {
        fail(ErrorCode::Schema, where + ": missing string key '" + std::string(key) + "'");
    }
    return *value;
}

Label parse_label(const std::string& text, const std::string& where) {
    try {
        return Label(text);
    } catch (const Error& e) {
        fail(ErrorCode::Schema, where + ": " + e.what());
    }
}

} // namespace

TaskSpec parse_task_spec(std::string_view toml_text, const std::string& source) {
    toml::table doc;
    try {
        doc = toml::parse(toml_text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << source << ":" << e.source().begin.line << ": " << e.description();
        fail(ErrorCode::Schema, msg.str());
    }

    TaskSpec spec;
    spec.task_name = require_string(doc, "task_name", source);
    spec.class_name = require_string(doc, "class_name", source);
    spec.method_name = require_string(doc, "method_name", source);
    spec.annotation = doc["annotation"].value_or(std::string{});
    spec.nl_instruction = doc["nl_instruction"].value_or(std::string{});
    spec.typed_init = doc["typed_init"].value_or(false);
    spec.answer_slot = doc["answer_slot"].value_or(std::string("label"));
    if (auto quote = doc["label_quote"].value<std::string>()) {
        if (quote->size() != 1) {
            fail(ErrorCode::Schema, source + ": label_quote must be one character");
        }
        spec.label_quote = quote->front();
    }
    if (auto returns = doc["returns_doc"].value<std::string>()) {
        spec.returns_doc = *returns;
    }

    // Annotations are written as TOML multi-line strings; a trailing newline
    // is an artifact of the closing delimiter.
    while (!spec.annotation.empty() && spec.annotation.back() == '\n') {
        spec.annotation.pop_back();
    }

    spec.label_set.task_name = spec.task_name;
    const auto* labels = doc["labels"].as_array();
    if (!labels) {
        fail(ErrorCode::Schema, source + ": missing array 'labels'");
    }
    for (const auto& node : *labels) {
        auto text = node.value<std::string>();
        if (!text) {
            fail(ErrorCode::Schema, source + ": labels must be strings");
        }
        spec.label_set.labels.push_back(parse_label(*text, source));
    }

    if (const auto* fields = doc["fields"].as_array()) {
        for (const auto& node : *fields) {
            const auto* table = node.as_table();
            if (!table) {
                fail(ErrorCode::Schema, source + ": [[fields]] entries must be tables");
            }
            InputField field;
            field.name = require_string(*table, "name", source + " [[fields]]");
            field.description = (*table)["description"].value_or(std::string{});
            field.display = (*table)["display"].value_or(std::string{});
            spec.fields.push_back(std::move(field));
        }
    }

    if (const auto* branches = doc["branches"].as_array()) {
        for (const auto& node : *branches) {
            const auto* table = node.as_table();
            if (!table) {
                fail(ErrorCode::Schema, source + ": [[branches]] entries must be tables");
            }
            ImplBranch branch;
            branch.subtask = require_string(*table, "subtask", source + " [[branches]]");
            branch.label = parse_label(require_string(*table, "label", source + " [[branches]]"), source);
            spec.branches.push_back(std::move(branch));
        }
    }
    if (auto fallback = doc["fallback"].value<std::string>()) {
        spec.fallback = parse_label(*fallback, source);
    }
    return spec;
}

TaskSpec load_task_spec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Io, "cannot read task spec " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_task_spec(buffer.str(), path);
}

} // namespace codeicl
