#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "codeicl/task_model.hpp"

namespace codeicl {

struct IngestIssue {
    std::string record; // index / id of the offending record
    std::string message;
};

struct Provenance {
    std::vector<std::string> sources;
    std::map<std::string, std::string> options;
    std::size_t input_records = 0;
    std::vector<IngestIssue> issues;
};

struct EvalSet {
    std::string task_name;
    std::vector<AdvPair> pairs;
    Provenance provenance;

    /// Clean samples of all pairs that have one, in pair order.
    std::vector<Sample> clean_samples() const;
};

/// How AdvGLUE records of one task map onto a TaskSpec.
struct AdvGlueProfile {
    std::string source_key;                      // top-level key in the release ("sst2")
    std::map<long long, Label> labels;           // integer label -> canonical label
    std::map<std::string, std::string> fields;   // spec field -> record key; empty keeps record keys
};

/// Reads profiles from a TOML file with one table per task:
///   [sst2]
///   key = "sst2"
///   labels = { 0 = "negative", 1 = "positive" }
///   fields = { input_text = "sentence" }
std::map<std::string, AdvGlueProfile> load_advglue_profiles(const std::string& path);

struct IngestOptions {
    /// Record per-record failures in provenance instead of throwing the first.
    bool lenient = false;
};

/// Adversarial records become AdvPair::adversarial; when clean_path is given
/// the GLUE record with the same idx is joined as the clean side.
/// Errors: Schema, LabelMap, Join (strict mode).
EvalSet ingest_advglue(const std::string& raw_path, const std::optional<std::string>& clean_path,
                       const std::string& task_name, const AdvGlueProfile& profile,
                       const IngestOptions& options = {});

/// Records (JSON array or JSONL) with keys id, sentence, aspect (or term),
/// label (or polarity), adv_sentence, adv_label. transformation must be one
/// of revtgt / revnon / adddiff (UnknownTransformation otherwise).
EvalSet ingest_restaurant(const std::string& raw_path, const std::string& transformation,
                          const IngestOptions& options = {});

/// Seeded subset of n pairs keeping the original relative order.
/// Errors: SubsetTooLarge.
EvalSet sample_subset(const EvalSet& set, std::size_t n, std::uint64_t seed);

/// Concatenates sets of the same task. Errors: Schema on duplicate ids.
EvalSet merge_sets(const std::vector<EvalSet>& sets, const std::string& task_name);

/// Canonical paired JSONL: one object per pair
/// {id, task, transformation, clean:{<fields>, label}, adversarial:{<fields>, label}}
/// with sorted keys and LF line endings. A missing clean side is written as null.
std::string to_jsonl(const EvalSet& set);
EvalSet parse_jsonl(std::string_view text, const std::string& source = "<string>");

EvalSet read_eval_set(const std::string& path);
void write_eval_set(const EvalSet& set, const std::string& path);

/// Throws Schema unless every sample carries exactly the spec's fields and
/// labels from its label set.
void check_against_spec(const EvalSet& set, const TaskSpec& spec);

} // namespace codeicl
