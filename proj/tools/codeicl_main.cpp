#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <toml.hpp>

#include "codeicl/dataset_io.hpp"
#include "codeicl/errors.hpp"
#include "codeicl/evaluation.hpp"
#include "codeicl/instruction_compiler.hpp"
#include "codeicl/runner.hpp"

namespace fs = std::filesystem;
using namespace codeicl;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Io, "cannot read " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

PromptStyle style_or_fail(const std::string& text) {
    auto style = parse_style(text);
    if (!style) {
        fail(ErrorCode::Usage, "unknown style '" + text + "'");
    }
    return *style;
}

TaskSpec load_ablated(const std::string& path, const std::vector<std::string>& ablations) {
    auto spec = load_task_spec(path);
    for (const auto& a : ablations) {
        spec = ablate(spec, parse_ablation(a));
    }
    return spec;
}

// --- compile ---------------------------------------------------------------

struct CompileArgs {
    std::string task;
    std::string style = "class_exec";
    std::vector<std::string> ablations;
    std::string golden;
};

/// Renders every entry of golden.toml and diffs it against its frozen file.
int golden_check(const std::string& manifest_path) {
    auto manifest = toml::parse_file(manifest_path);
    const auto base = fs::path(manifest_path).parent_path();
    const auto* entries = manifest["entry"].as_array();
    if (!entries || entries->empty()) {
        fail(ErrorCode::Schema, manifest_path + ": no [[entry]] tables");
    }
    int drift = 0;
    for (const auto& node : *entries) {
        const auto* entry = node.as_table();
        if (!entry) {
            fail(ErrorCode::Schema, manifest_path + ": [[entry]] must be a table");
        }
        auto spec_path = (base / (*entry)["spec"].value_or(std::string{})).string();
        auto file = (base / (*entry)["file"].value_or(std::string{})).string();
        auto style = style_or_fail((*entry)["style"].value_or(std::string{}));
        auto rendered = render_instruction(load_task_spec(spec_path), style).text;
        auto frozen = read_file(file);
        if (!frozen.empty() && frozen.back() == '\n') {
            frozen.pop_back();
        }
        if (rendered == frozen) {
            std::cout << "ok     " << file << '\n';
        } else {
            std::cout << "DRIFT  " << file << '\n';
            ++drift;
        }
    }
    if (drift) {
        fail(ErrorCode::Schema, std::to_string(drift) + " golden file(s) drifted");
    }
    return 0;
}

int do_compile(const CompileArgs& args) {
    if (!args.golden.empty()) {
        auto manifest = fs::is_directory(args.golden) ? (fs::path(args.golden) / "golden.toml").string() : args.golden;
        return golden_check(manifest);
    }
    if (args.task.empty()) {
        fail(ErrorCode::Usage, "compile needs --task or --golden-check");
    }
    auto spec = load_ablated(args.task, args.ablations);
    std::cout << render_instruction(spec, style_or_fail(args.style)).text << '\n';
    return 0;
}

// --- ingest ----------------------------------------------------------------

struct IngestArgs {
    std::string format;
    std::vector<std::string> inputs;
    std::string clean;
    std::string task;
    std::string profiles;
    std::string out;
    std::size_t subset = 0;
    std::uint64_t seed = 1;
    bool lenient = false;
};

void write_provenance(const EvalSet& set, const std::string& out) {
    json issues = json::array();
    for (const auto& issue : set.provenance.issues) {
        issues.push_back({{"record", issue.record}, {"message", issue.message}});
    }
    json doc = {{"task", set.task_name},
                {"pairs", set.pairs.size()},
                {"sources", set.provenance.sources},
                {"options", set.provenance.options},
                {"input_records", set.provenance.input_records},
                {"issues", issues}};
    std::ofstream(out + ".provenance.json", std::ios::binary) << doc.dump(2) << '\n';
}

int do_ingest(const IngestArgs& args) {
    IngestOptions options{args.lenient};
    EvalSet set;
    if (args.format == "advglue") {
        if (args.inputs.size() != 1 || args.task.empty()) {
            fail(ErrorCode::Usage, "ingest advglue needs one --in and --task");
        }
        auto profiles = load_advglue_profiles(args.profiles);
        auto it = profiles.find(args.task);
        if (it == profiles.end()) {
            fail(ErrorCode::Usage, "no label profile for task " + args.task + " in " + args.profiles);
        }
        std::optional<std::string> clean;
        if (!args.clean.empty()) {
            clean = args.clean;
        }
        set = ingest_advglue(args.inputs.front(), clean, args.task, it->second, options);
        if (args.subset) {
            set = sample_subset(set, args.subset, args.seed);
        }
    } else if (args.format == "restaurant") {
        // Each input is TAG=PATH; subsetting applies per transformation.
        std::vector<EvalSet> parts;
        for (const auto& input : args.inputs) {
            auto eq = input.find('=');
            if (eq == std::string::npos) {
                fail(ErrorCode::Usage, "restaurant inputs take the form revtgt=PATH");
            }
            auto part = ingest_restaurant(input.substr(eq + 1), input.substr(0, eq), options);
            if (args.subset) {
                part = sample_subset(part, args.subset, args.seed);
            }
            parts.push_back(std::move(part));
        }
        if (parts.empty()) {
            fail(ErrorCode::Usage, "ingest restaurant needs at least one --in");
        }
        set = parts.size() == 1 ? std::move(parts.front()) : merge_sets(parts, "restaurant");
    } else {
        fail(ErrorCode::Usage, "unknown ingest format " + args.format);
    }
    write_eval_set(set, args.out);
    write_provenance(set, args.out);
    std::cout << set.task_name << ": " << set.pairs.size() << " pairs";
    if (!set.provenance.issues.empty()) {
        std::cout << ", " << set.provenance.issues.size() << " records skipped";
    }
    std::cout << " -> " << args.out << '\n';
    return 0;
}

// --- run / report ----------------------------------------------------------

int do_run(const std::string& config_path) {
    auto result = run(load_run_config(config_path));
    const auto& r = result.report;
    std::cout << r.task_name << " " << to_string(r.style) << (r.adversarial_context ? "+adv" : "") << " k=" << r.k
              << ": adv_acc=" << r.adv_accuracy.mean;
    if (r.clean_accuracy) {
        std::cout << " clean_acc=" << r.clean_accuracy->mean;
    }
    std::cout << " asr=" << (r.asr ? std::to_string(r.asr->mean) : std::string("undefined"))
              << " unparsed=" << r.unparsed_rate << " failed=" << r.failed << '\n';
    for (const auto& note : r.notes) {
        std::cout << "note: " << note << '\n';
    }
    return 0;
}

// --- ppl -------------------------------------------------------------------

struct PplArgs {
    std::string task;
    std::string style = "class_exec";
    std::string eval_set;
    int vocab = 0;
    std::string script;
    std::size_t limit = 0;
};

int do_ppl(const PplArgs& args) {
    auto spec = load_task_spec(args.task);
    auto set = read_eval_set(args.eval_set);
    std::vector<Sample> samples;
    for (const auto& pair : set.pairs) {
        samples.push_back(pair.adversarial);
        if (args.limit && samples.size() == args.limit) {
            break;
        }
    }
    std::unique_ptr<Backend> scorer;
    if (!args.script.empty()) {
        scorer = ScriptedMockBackend::from_script_file(args.script, {});
    } else if (args.vocab > 0) {
        scorer = std::make_unique<UniformScorer>(args.vocab);
    } else {
        fail(ErrorCode::Usage, "ppl needs --vocab or --script");
    }
    std::cout << perplexity(*scorer, perplexity_items(spec, style_or_fail(args.style), samples)) << '\n';
    return 0;
}

// --- draft -----------------------------------------------------------------

struct DraftArgs {
    std::vector<std::string> examples;
    std::string description;
    std::string backend = "openai_compatible";
    std::string base_url;
    std::string model = "gpt-4";
    std::string script;
};

int do_draft(const DraftArgs& args) {
    std::vector<TaskSpec> specs;
    for (const auto& path : args.examples) {
        specs.push_back(load_task_spec(path));
    }
    BackendDescriptor descriptor;
    auto kind = parse_backend_kind(args.backend);
    if (!kind) {
        fail(ErrorCode::Usage, "unknown backend " + args.backend);
    }
    descriptor.kind = *kind;
    if (!args.base_url.empty()) {
        descriptor.base_url = args.base_url;
    }
    if (!args.script.empty()) {
        descriptor.script_path = args.script;
    }
    auto backend = make_backend(descriptor);
    DecodeParams params;
    params.model_name = args.model;
    params.max_tokens = 1024;
    std::cout << draft_prompt(*backend, specs, args.description, params) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Code-style in-context learning evaluation harness"};
    app.require_subcommand(1);

    CompileArgs compile_args;
    auto* compile = app.add_subcommand("compile", "Render a task's instruction or check golden files");
    compile->add_option("--task", compile_args.task, "Task spec TOML");
    compile->add_option("--style", compile_args.style, "Prompt style");
    compile->add_option("--ablate", compile_args.ablations,
                        "strip_annotation | class_name=NAME | subtask=OLD:NEW[,OLD:NEW]");
    compile->add_option("--golden-check", compile_args.golden, "Golden directory or manifest");

    IngestArgs ingest_args;
    auto* ingest = app.add_subcommand("ingest", "Convert a raw dataset release to paired JSONL");
    ingest->add_option("format", ingest_args.format, "advglue | restaurant")->required();
    ingest->add_option("--in", ingest_args.inputs, "Raw file (restaurant: TAG=PATH, repeatable)")->required();
    ingest->add_option("--clean", ingest_args.clean, "GLUE file joined as the clean side");
    ingest->add_option("--task", ingest_args.task, "Task name (advglue)");
    ingest->add_option("--label-map", ingest_args.profiles, "Label profile TOML")
        ->default_val("data/ingest/advglue.toml");
    ingest->add_option("--out", ingest_args.out, "Output JSONL")->required();
    ingest->add_option("--subset", ingest_args.subset, "Seeded subset size");
    ingest->add_option("--seed", ingest_args.seed, "Subset seed");
    ingest->add_flag("--lenient", ingest_args.lenient, "Skip bad records instead of failing");

    std::string run_config;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment config");
    run_cmd->add_option("config", run_config, "Run config TOML")->required();

    std::vector<std::string> report_dirs;
    bool csv = false;
    auto* report_cmd = app.add_subcommand("report", "Cross-run table from result directories");
    report_cmd->add_option("dirs", report_dirs, "Result directories")->required();
    report_cmd->add_flag("--csv", csv, "CSV instead of markdown");

    PplArgs ppl_args;
    auto* ppl = app.add_subcommand("ppl", "Mean perplexity of the rendered answers");
    ppl->add_option("--task", ppl_args.task)->required();
    ppl->add_option("--style", ppl_args.style);
    ppl->add_option("--set", ppl_args.eval_set, "Paired JSONL")->required();
    ppl->add_option("--vocab", ppl_args.vocab, "Uniform scorer vocabulary size");
    ppl->add_option("--script", ppl_args.script, "Scripted scorer JSON");
    ppl->add_option("--limit", ppl_args.limit);

    DraftArgs draft_args;
    auto* draft = app.add_subcommand("draft", "Ask a model to draft a code-style definition for a new task");
    draft->add_option("--example", draft_args.examples, "Example task spec (repeatable)")->required();
    draft->add_option("--description", draft_args.description, "New task description")->required();
    draft->add_option("--backend", draft_args.backend);
    draft->add_option("--base-url", draft_args.base_url);
    draft->add_option("--model", draft_args.model);
    draft->add_option("--script", draft_args.script, "Scripted mock JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*compile) {
            return do_compile(compile_args);
        }
        if (*ingest) {
            return do_ingest(ingest_args);
        }
        if (*run_cmd) {
            return do_run(run_config);
        }
        if (*report_cmd) {
            std::cout << report(report_dirs, csv ? TableFormat::Csv : TableFormat::Markdown);
            return 0;
        }
        if (*ppl) {
            return do_ppl(ppl_args);
        }
        if (*draft) {
            return do_draft(draft_args);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const toml::parse_error& e) {
        std::cerr << "error: " << e.description() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
