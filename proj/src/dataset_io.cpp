#include "codeicl/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "codeicl/errors.hpp"
#include "codeicl/random.hpp"

namespace codeicl {

std::vector<Sample> EvalSet::clean_samples() const {
    std::vector<Sample> out;
    for (const auto& pair : pairs) {
        if (pair.clean) {
            out.push_back(*pair.clean);
        }
    }
    return out;
}

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

/// Whole-document JSON if it parses as one value, otherwise JSON Lines.
std::vector<json> read_records(const std::string& text, const std::string& source) {
    auto whole = json::parse(text, nullptr, false);
    if (!whole.is_discarded()) {
        if (whole.is_array()) {
            return whole.get<std::vector<json>>();
        }
        return {whole};
    }
    std::vector<json> records;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            records.push_back(json::parse(line));
        } catch (const json::exception& e) {
            fail(ErrorCode::Schema, source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

std::string string_field(const json& record, const std::string& key, const std::string& where) {
    auto it = record.find(key);
    if (it == record.end() || !it->is_string()) {
        fail(ErrorCode::Schema, where + ": missing string field '" + key + "'");
    }
    return it->get<std::string>();
}

std::string string_field(const json& record, std::initializer_list<const char*> keys, const std::string& where) {
    for (const char* key : keys) {
        if (auto it = record.find(key); it != record.end() && it->is_string()) {
            return it->get<std::string>();
        }
    }
    fail(ErrorCode::Schema, where + ": missing string field '" + std::string(*keys.begin()) + "'");
}

long long integer_field(const json& record, const char* key, const std::string& where) {
    auto it = record.find(key);
    if (it == record.end() || !it->is_number_integer()) {
        fail(ErrorCode::Schema, where + ": missing integer field '" + key + "'");
    }
    return it->get<long long>();
}

/// Runs `fn` for one record; in lenient mode a data error is recorded instead
/// of propagated.
template <typename Fn>
void guarded(const IngestOptions& options, Provenance& provenance, const std::string& record, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        if (!options.lenient || e.category() != ErrorCategory::Data) {
            throw;
        }
        provenance.issues.push_back({record, e.what()});
    }
}

json sample_to_json(const Sample& s) {
    json j = json::object();
    for (const auto& [name, value] : s.field_values) {
        j[name] = value;
    }
    j["label"] = s.label.str();
    if (s.rationale) {
        j["rationale"] = *s.rationale;
    }
    return j;
}

Sample sample_from_json(const json& j, const std::string& id, const std::string& where) {
    if (!j.is_object()) {
        fail(ErrorCode::Schema, where + ": sample must be an object");
    }
    Sample s;
    s.id = id;
    for (const auto& [key, value] : j.items()) {
        if (key == "label") {
            if (!value.is_string()) {
                fail(ErrorCode::Schema, where + ": label must be a string");
            }
            s.label = Label(value.get<std::string>());
        } else if (key == "rationale") {
            s.rationale = value.get<std::string>();
        } else {
            if (!value.is_string()) {
                fail(ErrorCode::Schema, where + ": field '" + key + "' must be a string");
            }
            s.field_values[key] = value.get<std::string>();
        }
    }
    if (s.label.empty()) {
        fail(ErrorCode::Schema, where + ": sample has no label");
    }
    return s;
}

} // namespace

std::map<std::string, AdvGlueProfile> load_advglue_profiles(const std::string& path) {
    toml::table doc;
    try {
        doc = toml::parse_file(path);
    } catch (const toml::parse_error& e) {
        fail(ErrorCode::Schema, path + ": " + std::string(e.description()));
    }
    std::map<std::string, AdvGlueProfile> out;
    for (const auto& [task, node] : doc) {
        const auto* table = node.as_table();
        if (!table) {
            continue;
        }
        AdvGlueProfile profile;
        profile.source_key = (*table)["key"].value_or(std::string(task.str()));
        if (const auto* labels = (*table)["labels"].as_table()) {
            for (const auto& [id, value] : *labels) {
                long long code = 0;
                try {
                    code = std::stoll(std::string(id.str()));
                } catch (const std::exception&) {
                    fail(ErrorCode::Schema, path + ": label key '" + std::string(id.str()) + "' is not an integer");
                }
                auto text = value.value<std::string>();
                if (!text) {
                    fail(ErrorCode::Schema, path + ": label values must be strings");
                }
                profile.labels.emplace(code, Label(*text));
            }
        }
        if (const auto* fields = (*table)["fields"].as_table()) {
            for (const auto& [name, value] : *fields) {
                profile.fields.emplace(std::string(name.str()), value.value_or(std::string{}));
            }
        }
        out.emplace(std::string(task.str()), std::move(profile));
    }
    return out;
}

EvalSet ingest_advglue(const std::string& raw_path, const std::optional<std::string>& clean_path,
                       const std::string& task_name, const AdvGlueProfile& profile,
                       const IngestOptions& options) {
    auto records_of = [&](const std::string& path) -> std::vector<json> {
        auto docs = read_records(read_file(path), path);
        if (docs.size() == 1 && docs[0].is_object() && docs[0].contains(profile.source_key)) {
            const auto& list = docs[0][profile.source_key];
            if (!list.is_array()) {
                fail(ErrorCode::Schema, path + ": '" + profile.source_key + "' is not a list");
            }
            return list.get<std::vector<json>>();
        }
        if (docs.size() == 1 && docs[0].is_object() && !docs[0].contains("idx")) {
            fail(ErrorCode::Schema, path + ": no '" + profile.source_key + "' task key");
        }
        return docs;
    };

    auto to_sample = [&](const json& record, const std::string& where) {
        if (!record.is_object()) {
            fail(ErrorCode::Schema, where + ": record is not an object");
        }
        auto idx = integer_field(record, "idx", where);
        auto code = integer_field(record, "label", where);
        Sample sample;
        sample.id = std::to_string(idx);
        auto label = profile.labels.find(code);
        if (label == profile.labels.end()) {
            fail(ErrorCode::LabelMap, "unmapped label " + std::to_string(code) + " at idx " + sample.id);
        }
        sample.label = label->second;
        if (profile.fields.empty()) {
            for (const auto& [key, value] : record.items()) {
                if (key != "idx" && key != "label") {
                    sample.field_values[key] = string_field(record, key, where);
                }
            }
        } else {
            for (const auto& [field, key] : profile.fields) {
                sample.field_values[field] = string_field(record, key, where);
            }
        }
        return sample;
    };

    EvalSet set;
    set.task_name = task_name;
    set.provenance.sources.push_back(raw_path);
    set.provenance.options["format"] = "advglue";
    set.provenance.options["key"] = profile.source_key;

    std::map<long long, json> clean_by_idx;
    if (clean_path) {
        set.provenance.sources.push_back(*clean_path);
        for (const auto& record : records_of(*clean_path)) {
            if (record.is_object() && record.contains("idx") && record["idx"].is_number_integer()) {
                clean_by_idx.emplace(record["idx"].get<long long>(), record);
            }
        }
    }

    const auto records = records_of(raw_path);
    set.provenance.input_records = records.size();
    std::set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto where = raw_path + " record " + std::to_string(i);
        guarded(options, set.provenance, where, [&] {
            AdvPair pair;
            pair.transformation = Transformation::AdvGlue;
            pair.adversarial = to_sample(records[i], where);
            if (!seen.insert(pair.id()).second) {
                fail(ErrorCode::Schema, where + ": duplicate idx " + pair.id());
            }
            if (clean_path) {
                auto it = clean_by_idx.find(std::stoll(pair.id()));
                if (it == clean_by_idx.end()) {
                    fail(ErrorCode::Join, "idx " + pair.id() + " not found in " + *clean_path);
                }
                pair.clean = to_sample(it->second, *clean_path + " idx " + pair.id());
            }
            set.pairs.push_back(std::move(pair));
        });
    }
    return set;
}

EvalSet ingest_restaurant(const std::string& raw_path, const std::string& transformation,
                          const IngestOptions& options) {
    auto tag = parse_transformation(transformation);
    if (!tag || (*tag != Transformation::RevTgt && *tag != Transformation::RevNon &&
                 *tag != Transformation::AddDiff)) {
        fail(ErrorCode::UnknownTransformation, "'" + transformation + "' (expected revtgt, revnon or adddiff)");
    }

    auto docs = read_records(read_file(raw_path), raw_path);
    // A single object keyed by record id is the layout of the original release.
    std::vector<std::pair<std::string, json>> records;
    if (docs.size() == 1 && docs[0].is_object() && !docs[0].contains("sentence")) {
        for (const auto& [key, value] : docs[0].items()) {
            records.emplace_back(key, value);
        }
    } else {
        for (std::size_t i = 0; i < docs.size(); ++i) {
            records.emplace_back(std::to_string(i), docs[i]);
        }
    }

    EvalSet set;
    set.task_name = "restaurant";
    set.provenance.sources.push_back(raw_path);
    set.provenance.options["format"] = "restaurant";
    set.provenance.options["transformation"] = std::string(to_string(*tag));
    set.provenance.input_records = records.size();

    std::set<std::string> seen;
    for (const auto& [key, record] : records) {
        const auto where = raw_path + " record " + key;
        guarded(options, set.provenance, where, [&] {
            if (!record.is_object()) {
                fail(ErrorCode::Schema, where + ": record is not an object");
            }
            std::string raw_id = key;
            if (auto it = record.find("id"); it != record.end()) {
                raw_id = it->is_string() ? it->get<std::string>() : it->dump();
            }
            const auto id = std::string(to_string(*tag)) + ":" + raw_id;
            const auto aspect = string_field(record, {"aspect", "term"}, where);

            AdvPair pair;
            pair.transformation = *tag;
            Sample clean;
            clean.id = id;
            clean.field_values["sentence"] = string_field(record, "sentence", where);
            clean.field_values["aspect"] = aspect;
            clean.label = Label(string_field(record, {"label", "polarity"}, where));

            Sample adv;
            adv.id = id;
            adv.field_values["sentence"] = string_field(record, "adv_sentence", where);
            adv.field_values["aspect"] =
                record.contains("adv_aspect") ? string_field(record, "adv_aspect", where) : aspect;
            adv.label = Label(string_field(record, "adv_label", where));

            if (!seen.insert(id).second) {
                fail(ErrorCode::Schema, where + ": duplicate id " + id);
            }
            pair.clean = std::move(clean);
            pair.adversarial = std::move(adv);
            set.pairs.push_back(std::move(pair));
        });
    }
    return set;
}

EvalSet sample_subset(const EvalSet& set, std::size_t n, std::uint64_t seed) {
    if (n > set.pairs.size()) {
        fail(ErrorCode::SubsetTooLarge, "requested " + std::to_string(n) + " of " +
                                            std::to_string(set.pairs.size()) + " pairs");
    }
    std::vector<std::size_t> indices(set.pairs.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        indices[i] = i;
    }
    SeededRng rng(seed);
    rng.shuffle(indices);
    indices.resize(n);
    std::sort(indices.begin(), indices.end());

    EvalSet out;
    out.task_name = set.task_name;
    out.provenance = set.provenance;
    out.provenance.options["subset_n"] = std::to_string(n);
    out.provenance.options["subset_seed"] = std::to_string(seed);
    out.pairs.reserve(n);
    for (auto i : indices) {
        out.pairs.push_back(set.pairs[i]);
    }
    return out;
}

EvalSet merge_sets(const std::vector<EvalSet>& sets, const std::string& task_name) {
    EvalSet out;
    out.task_name = task_name;
    std::set<std::string> seen;
    for (const auto& set : sets) {
        for (const auto& source : set.provenance.sources) {
            out.provenance.sources.push_back(source);
        }
        out.provenance.input_records += set.provenance.input_records;
        for (const auto& pair : set.pairs) {
            if (!seen.insert(pair.id()).second) {
                fail(ErrorCode::Schema, "duplicate pair id '" + pair.id() + "' while merging");
            }
            out.pairs.push_back(pair);
        }
    }
    return out;
}

std::string to_jsonl(const EvalSet& set) {
    std::string out;
    for (const auto& pair : set.pairs) {
        json line{{"id", pair.id()},
                  {"task", set.task_name},
                  {"transformation", std::string(to_string(pair.transformation))},
                  {"clean", pair.clean ? sample_to_json(*pair.clean) : json(nullptr)},
                  {"adversarial", sample_to_json(pair.adversarial)}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

EvalSet parse_jsonl(std::string_view text, const std::string& source) {
    EvalSet set;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto where = source + ":" + std::to_string(line_no);
        try {
            auto doc = json::parse(line);
            AdvPair pair;
            auto id = doc.at("id").get<std::string>();
            auto task = doc.at("task").get<std::string>();
            if (set.task_name.empty()) {
                set.task_name = task;
            } else if (task != set.task_name) {
                fail(ErrorCode::Schema, where + ": mixed tasks '" + set.task_name + "' and '" + task + "'");
            }
            auto tag_text = doc.at("transformation").get<std::string>();
            auto tag = parse_transformation(tag_text);
            if (!tag) {
                fail(ErrorCode::UnknownTransformation, where + ": '" + tag_text + "'");
            }
            pair.transformation = *tag;
            pair.adversarial = sample_from_json(doc.at("adversarial"), id, where);
            if (const auto& clean = doc.at("clean"); !clean.is_null()) {
                pair.clean = sample_from_json(clean, id, where);
            }
            if (!seen.insert(id).second) {
                fail(ErrorCode::Schema, where + ": duplicate id '" + id + "'");
            }
            set.pairs.push_back(std::move(pair));
        } catch (const json::exception& e) {
            fail(ErrorCode::Schema, where + ": " + e.what());
        }
    }
    set.provenance.sources.push_back(source);
    set.provenance.input_records = set.pairs.size();
    return set;
}

EvalSet read_eval_set(const std::string& path) {
    return parse_jsonl(read_file(path), path);
}

void write_eval_set(const EvalSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::Io, "cannot write " + path);
    }
    out << to_jsonl(set);
    if (!out) {
        fail(ErrorCode::Io, "short write to " + path);
    }
}

void check_against_spec(const EvalSet& set, const TaskSpec& spec) {
    auto check = [&](const Sample& s, const char* side) {
        if (!conforms(s, spec)) {
            fail(ErrorCode::Schema, "pair '" + s.id + "' " + side + " fields do not match task " + spec.task_name);
        }
        if (!spec.label_set.contains(s.label)) {
            fail(ErrorCode::Schema, "pair '" + s.id + "' " + side + " label '" + s.label.str() +
                                        "' is not in the label set of " + spec.task_name);
        }
    };
    for (const auto& pair : set.pairs) {
        if (pair.clean) {
            check(*pair.clean, "clean");
        }
        check(pair.adversarial, "adversarial");
    }
}

} // namespace codeicl
