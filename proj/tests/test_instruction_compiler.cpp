#include <doctest.h>

#include <toml.hpp>

#include "codeicl/errors.hpp"
#include "codeicl/evaluation.hpp"
#include "codeicl/instruction_compiler.hpp"
#include "support.hpp"

using namespace codeicl;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
        out.push_back(line);
    }
    return out;
}

std::size_t count_of(const std::string& haystack, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) {
        ++n;
    }
    return n;
}

bool contains_identifier(const std::string& text, const std::string& name) {
    auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    for (auto pos = text.find(name); pos != std::string::npos; pos = text.find(name, pos + 1)) {
        bool left = pos == 0 || !is_word(text[pos - 1]);
        bool right = pos + name.size() == text.size() || !is_word(text[pos + name.size()]);
        if (left && right) {
            return true;
        }
    }
    return false;
}

std::string strip_last_line(const std::string& text) {
    auto cut = text.rfind('\n');
    return cut == std::string::npos ? std::string{} : text.substr(0, cut);
}

} // namespace

TEST_SUITE("instruction_compiler") {

TEST_CASE("golden files match the renderer byte for byte") {
    const auto manifest_path = testing::data_path("golden/golden.toml");
    auto manifest = toml::parse_file(manifest_path);
    const auto* entries = manifest["entry"].as_array();
    REQUIRE(entries);
    CHECK(entries->size() == 8);
    for (const auto& node : *entries) {
        const auto& entry = *node.as_table();
        const auto file = testing::data_path("golden/" + entry["file"].value_or(std::string{}));
        CAPTURE(file);
        auto spec = load_task_spec(testing::data_path("golden/" + entry["spec"].value_or(std::string{})));
        auto style = parse_style(entry["style"].value_or(std::string{}));
        REQUIRE(style);
        auto expected = testing::read_file(file);
        REQUIRE(!expected.empty());
        CHECK(expected.back() == '\n');
        expected.pop_back();
        CHECK(expected.find('\r') == std::string::npos);
        CHECK(expected.find(" \n") == std::string::npos);
        CHECK(render_instruction(spec, *style).text == expected);
    }
}

TEST_CASE("class_exec shape for SST-2") {
    auto text = render_instruction(testing::task("sst2"), PromptStyle::ClassExec).text;
    CHECK(text.rfind("class Sentiment_Classification:\n", 0) == 0);
    CHECK(text.find("    def sentiment_classification(self):") != std::string::npos);
    CHECK(text.find("print('positive')") != std::string::npos);
    CHECK(text.find("print('negative')") != std::string::npos);
}

TEST_CASE("func_exec header for QNLI") {
    auto text = render_instruction(testing::task("qnli"), PromptStyle::FuncExec).text;
    CHECK(text.rfind("def Answer_Verification(question: str, text: str):\n", 0) == 0);
    CHECK(text.find("Args:") != std::string::npos);
    CHECK(text.find("Returns:") != std::string::npos);
}

TEST_CASE("class_init takes the answer slot and has no method") {
    auto text = render_instruction(testing::task("qnli"), PromptStyle::ClassInit).text;
    CHECK(text.find("def __init__(self, question, text, relationship):") != std::string::npos);
    CHECK(text.find("self.relationship = relationship") != std::string::npos);
    CHECK(text.find("print(") == std::string::npos);
}

TEST_CASE("nl styles return the instruction verbatim") {
    auto spec = testing::task("sst2");
    const std::string expected = "Please classify the following sentence into either positive or negative. "
                                 "Answer me with \"positive\" or \"negative\", just one word.";
    CHECK(render_instruction(spec, PromptStyle::Nl).text == expected);
    CHECK(render_instruction(spec, PromptStyle::NlCot).text == expected);
    spec.nl_instruction.clear();
    CHECK_THROWS_WITH_AS(render_instruction(spec, PromptStyle::Nl), doctest::Contains("UnsupportedStyle"), Error);
    CHECK_NOTHROW(render_instruction(spec, PromptStyle::ClassExec));
}

TEST_CASE("invalid specs are refused") {
    auto spec = testing::task("mnli");
    spec.fallback.reset();
    CHECK_THROWS_WITH_AS(render_instruction(spec, PromptStyle::ClassExec), doctest::Contains("InvalidSpec"), Error);
}

TEST_CASE("rendering is deterministic and fingerprints the spec") {
    auto spec = testing::task("rte");
    auto a = render_instruction(spec, PromptStyle::ClassExec);
    auto b = render_instruction(spec, PromptStyle::ClassExec);
    CHECK(a == b);
    CHECK(a.spec_fingerprint.size() == 64);
    spec.annotation += " More.";
    CHECK(render_instruction(spec, PromptStyle::ClassExec).spec_fingerprint != a.spec_fingerprint);
}

TEST_CASE("class_exec demo is three lines ending in the label") {
    auto spec = testing::task("sst2");
    Sample s{"1", {{"input_text", "great movie"}}, Label("positive"), std::nullopt};
    auto demo = render_demo(spec, PromptStyle::ClassExec, s);
    auto lines = lines_of(demo);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "res = Sentiment_Classification(input_text = \"great movie\")");
    CHECK(lines[1] == "res.sentiment_classification()");
    CHECK(lines[2] == "positive");
}

TEST_CASE("empty field values render as empty strings") {
    auto spec = testing::task("sst2");
    Sample s{"1", {{"input_text", ""}}, Label("negative"), std::nullopt};
    CHECK(lines_of(render_demo(spec, PromptStyle::ClassExec, s))[0] == "res = Sentiment_Classification(input_text = \"\")");
    CHECK(lines_of(render_demo(spec, PromptStyle::Nl, s))[0] == "Sentence: ");
}

TEST_CASE("MNLI nl demo") {
    auto spec = testing::task("mnli");
    Sample s{"1", {{"premise", "A man sleeps."}, {"hypothesis", "A person rests."}}, Label("neutral"), std::nullopt};
    CHECK(render_demo(spec, PromptStyle::Nl, s) == "Premise: A man sleeps.\nHypothesis: A person rests.\nAnswer: neutral");
}

TEST_CASE("chain-of-thought demos need a rationale") {
    auto spec = testing::task("sst2");
    Sample s{"1", {{"input_text", "fine"}}, Label("positive"), std::nullopt};
    CHECK_THROWS_WITH_AS(render_demo(spec, PromptStyle::NlCot, s), doctest::Contains("MissingRationale"), Error);
    CHECK(render_demo(spec, PromptStyle::NlCot, s, std::string("It is upbeat.")) ==
          "Sentence: fine\nReasoning: It is upbeat.\nAnswer: positive");
}

TEST_CASE("values are escaped in code and flattened in prose") {
    auto spec = testing::task("sst2");
    Sample s{"1", {{"input_text", "say \"hi\"\\\nbye"}}, Label("positive"), std::nullopt};
    CHECK(lines_of(render_demo(spec, PromptStyle::ClassExec, s))[0] ==
          "res = Sentiment_Classification(input_text = \"say \\\"hi\\\"\\\\\\nbye\")");
    CHECK(lines_of(render_demo(spec, PromptStyle::Nl, s))[0] == "Sentence: say \"hi\"\\ bye");
}

TEST_CASE("test prompt is the demo without its answer") {
    for (const auto& name : testing::task_names()) {
        auto spec = testing::task(name);
        auto s = testing::make_sample(spec, "x", spec.label_set.labels.back().str(), "gre at movie");
        for (auto style : all_styles()) {
            CAPTURE(name);
            CAPTURE(to_string(style));
            auto test = render_test_prompt(spec, style, s);
            CHECK(test.find("gre at movie") != std::string::npos);
            if (style == PromptStyle::NlCot) {
                auto demo = render_demo(spec, style, s, std::string("why"));
                CHECK(strip_last_line(strip_last_line(demo)) == test);
            } else {
                CHECK(strip_last_line(render_demo(spec, style, s)) == test);
            }
        }
    }
}

TEST_CASE("parsing the rendered answer line recovers the label") {
    for (const auto& name : testing::task_names()) {
        auto spec = testing::task(name);
        for (const auto& label : spec.label_set.labels) {
            auto s = testing::make_sample(spec, "x", label.str(), "text");
            for (auto style : all_styles()) {
                CAPTURE(name);
                CAPTURE(label.str());
                CAPTURE(to_string(style));
                auto demo = render_demo(spec, style, s, std::string("reasoning about entailment"));
                auto last = lines_of(demo).back();
                CHECK(last == render_answer_line(style, label));
                CHECK(parse_label(last, spec.label_set, parse_mode_for(style)) == label);
            }
        }
    }
}

TEST_CASE("assemble joins pieces with blank lines") {
    auto spec = testing::task("sst2");
    auto instruction = render_instruction(spec, PromptStyle::Nl).text;
    auto test = render_test_prompt(spec, PromptStyle::Nl, testing::make_sample(spec, "t", "positive", "t"));

    auto zero = assemble_prompt(instruction, {}, test, PromptStyle::Nl, 0);
    CHECK(zero.full_text == instruction + "\n\n" + test);

    std::vector<DemoText> demos;
    for (int i = 0; i < 4; ++i) {
        auto s = testing::make_sample(spec, std::to_string(i), i % 2 ? "positive" : "negative", "demo");
        demos.push_back({render_demo(spec, PromptStyle::Nl, s), s.id, false});
    }
    auto four = assemble_prompt(instruction, demos, test, PromptStyle::Nl, 4);
    CHECK(count_of(four.full_text, "\n\n") == 5);
    CHECK(four.demos.size() == 4);
    CHECK(four.instruction == instruction);
    CHECK(four.test_prompt == test);
    CHECK(assemble_prompt(instruction, demos, test, PromptStyle::Nl, 4) == four);
    CHECK_THROWS_WITH_AS(assemble_prompt(instruction, demos, test, PromptStyle::Nl, 3), doctest::Contains("Usage"), Error);
}

TEST_CASE("strip_annotation removes the docstring and is idempotent") {
    for (const auto& name : testing::task_names()) {
        CAPTURE(name);
        auto spec = testing::task(name);
        auto once = ablate(spec, StripAnnotation{});
        CHECK(ablate(once, StripAnnotation{}) == once);
        for (auto style : {PromptStyle::ClassExec, PromptStyle::ClassInit, PromptStyle::FuncExec}) {
            auto text = render_instruction(once, style).text;
            CHECK(text.find("\"\"\"") == std::string::npos);
            CHECK(text.find("Parameters") == std::string::npos);
        }
        // Only the docstring region changes.
        auto before = lines_of(render_instruction(spec, PromptStyle::ClassExec).text);
        auto after = lines_of(render_instruction(once, PromptStyle::ClassExec).text);
        auto close = std::find(before.begin() + 2, before.end(), "    \"\"\"");
        REQUIRE(close != before.end());
        std::vector<std::string> outside(before.begin(), before.begin() + 1);
        outside.insert(outside.end(), close + 1, before.end());
        CHECK(outside == after);
    }
}

TEST_CASE("replace_class_name leaves no trace of the old name") {
    for (const auto& name : testing::task_names()) {
        CAPTURE(name);
        auto spec = testing::task(name);
        const auto old_name = spec.class_name;
        auto renamed = ablate(spec, ReplaceClassName{"Foo"});
        auto s = testing::make_sample(spec, "x", spec.label_set.labels.front().str(), "text");
        for (auto style : {PromptStyle::ClassExec, PromptStyle::ClassInit, PromptStyle::FuncExec}) {
            auto text = render_instruction(renamed, style).text + render_demo(renamed, style, s) +
                        render_test_prompt(renamed, style, s);
            CHECK_FALSE(contains_identifier(text, old_name));
            CHECK(contains_identifier(text, "Foo"));
        }
    }
    CHECK_THROWS_AS(ablate(testing::task("sst2"), ReplaceClassName{"not valid"}), Error);
}

TEST_CASE("replace_subtask_names renames branches only") {
    auto spec = testing::task("sst2");
    auto renamed = ablate(spec, ReplaceSubtaskNames{{{"is_positive", "f_1"}}});
    auto text = render_instruction(renamed, PromptStyle::ClassExec).text;
    CHECK(text.find("if f_1(self.input_text):") != std::string::npos);
    CHECK(text.find("is_positive") == std::string::npos);
    CHECK(text.find("print('positive')") != std::string::npos);
    CHECK(renamed.label_set == spec.label_set);

    auto swapped = ablate(spec, ReplaceSubtaskNames{{{"is_positive", "is_negative"}, {"is_negative", "is_positive"}}});
    CHECK(swapped.branches[0].subtask == "is_negative");
    CHECK(swapped.branches[0].label.str() == "positive");

    CHECK_THROWS_WITH_AS(ablate(spec, ReplaceSubtaskNames{{{"is_neutral", "f"}}}), doctest::Contains("UnknownSubtask"), Error);
}

TEST_CASE("ablations parse from their CLI form") {
    CHECK(std::holds_alternative<StripAnnotation>(parse_ablation("strip_annotation")));
    auto rename = parse_ablation("class_name=Foo");
    REQUIRE(std::holds_alternative<ReplaceClassName>(rename));
    CHECK(std::get<ReplaceClassName>(rename).new_name == "Foo");
    auto subtasks = parse_ablation("subtask=a:b,c:d");
    REQUIRE(std::holds_alternative<ReplaceSubtaskNames>(subtasks));
    CHECK(std::get<ReplaceSubtaskNames>(subtasks).renames == std::map<std::string, std::string>{{"a", "b"}, {"c", "d"}});
    CHECK_THROWS_AS(parse_ablation("rename"), Error);
    CHECK_THROWS_AS(parse_ablation("subtask=a"), Error);
}

}
