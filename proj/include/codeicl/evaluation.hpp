#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "codeicl/model_backend.hpp"
#include "codeicl/task_model.hpp"

namespace codeicl {

enum class ParseMode { Direct, Cot };

ParseMode parse_mode_for(PromptStyle style) noexcept;

/// Maps a completion to a label; nullopt is Unparsed.
///
/// direct: lowercase and trim; return the first token (split on whitespace
/// and punctuation, underscore kept) if it is a label, else the first label
/// occurrence in the text. Occurrences must start at a word boundary and
/// longer labels win at the same position, so "not_entailment" is never read
/// as "entailment".
/// cot: apply the direct rules to the text after the last "answer" marker,
/// then fall back to the last label occurrence anywhere.
std::optional<Label> parse_label(std::string_view completion, const LabelSet& labels, ParseMode mode);

struct PredictionTarget {
    std::string sample_id;
    bool is_adversarial = false;
    Label truth;
    std::uint64_t seed = 0;
};

/// Completes the bundle (through the cache when given) and parses the answer.
/// Transport, provider and prompt-length failures produce a failed record;
/// authentication, capability and usage errors propagate.
PredictionRecord predict(ResponseCache* cache, Backend& backend, const PromptBundle& bundle,
                         const LabelSet& labels, ParseMode mode, const DecodeParams& params,
                         const PredictionTarget& target);

/// Fraction of records whose parsed label equals the truth (Unparsed counts
/// as wrong). Errors: EmptyInput.
double accuracy(const std::vector<PredictionRecord>& records);

struct PairedOutcome {
    std::string sample_id;
    std::optional<Label> clean_pred;
    Label clean_truth;
    std::optional<Label> adv_pred;
    Label adv_truth;

    bool clean_correct() const { return clean_pred && *clean_pred == clean_truth; }
    bool adv_correct() const { return adv_pred && *adv_pred == adv_truth; }

    bool operator==(const PairedOutcome&) const = default;
};

void to_json(json& j, const PairedOutcome& v);
void from_json(const json& j, PairedOutcome& v);

/// Attack success rate: among pairs whose clean prediction is right, the
/// fraction whose adversarial prediction is wrong. nullopt when no clean
/// prediction is right (the ratio is undefined).
std::optional<double> asr(const std::vector<PairedOutcome>& outcomes);

/// exp of the negated mean log-probability; +inf if any token has zero
/// probability. Errors: EmptyTarget for an empty list.
double sequence_perplexity(const std::vector<double>& logprobs);

/// Mean per-item perplexity of (context, target) pairs under the scorer.
/// Errors: Capability, EmptyTarget, EmptyInput.
double perplexity(Backend& scorer, const std::vector<std::pair<std::string, std::string>>& items);

/// Mean and sample standard deviation across seeds. An undefined ASR in any
/// seed leaves the aggregate ASR undefined and adds a note.
/// Errors: EmptyInput, MismatchedConfig.
RunReport aggregate(const std::vector<SeedReport>& per_seed);

} // namespace codeicl
