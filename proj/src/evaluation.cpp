#include "codeicl/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "codeicl/errors.hpp"

namespace codeicl {

ParseMode parse_mode_for(PromptStyle style) noexcept {
    return style == PromptStyle::NlCot ? ParseMode::Cot : ParseMode::Direct;
}

namespace {

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::string lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view text) {
    auto begin = text.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) {
        return {};
    }
    auto end = text.find_last_not_of(" \t\r\n");
    return text.substr(begin, end - begin + 1);
}

/// Labels ordered longest first so that superstrings win at one position.
std::vector<const Label*> by_length(const LabelSet& labels) {
    std::vector<const Label*> out;
    for (const auto& l : labels.labels) {
        out.push_back(&l);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Label* a, const Label* b) { return a->str().size() > b->str().size(); });
    return out;
}

/// Label text at `pos`; an underscore in the label also accepts a space or a
/// hyphen ("not entailment").
bool label_at(std::string_view text, std::size_t pos, const std::string& label) {
    if (pos + label.size() > text.size()) {
        return false;
    }
    for (std::size_t i = 0; i < label.size(); ++i) {
        const char t = text[pos + i];
        if (label[i] == '_') {
            if (t != '_' && t != ' ' && t != '-') {
                return false;
            }
        } else if (t != label[i]) {
            return false;
        }
    }
    return true;
}

const Label* match_at(std::string_view text, std::size_t pos, const std::vector<const Label*>& ordered) {
    if (pos > 0 && is_word_char(text[pos - 1])) {
        return nullptr;
    }
    for (const auto* label : ordered) {
        if (label_at(text, pos, label->str())) {
            return label;
        }
    }
    return nullptr;
}

std::optional<Label> first_occurrence(std::string_view text, const std::vector<const Label*>& ordered) {
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        if (const auto* hit = match_at(text, pos, ordered)) {
            return *hit;
        }
    }
    return std::nullopt;
}

std::optional<Label> last_occurrence(std::string_view text, const std::vector<const Label*>& ordered) {
    std::optional<Label> last;
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        if (const auto* hit = match_at(text, pos, ordered)) {
            last = *hit;
            pos += hit->str().size() - 1;
        }
    }
    return last;
}

std::optional<Label> parse_direct(std::string_view completion, const LabelSet& labels,
                                  const std::vector<const Label*>& ordered) {
    const auto text = lower(trim(completion));
    std::size_t start = 0;
    while (start < text.size() && !is_word_char(text[start])) {
        ++start;
    }
    std::size_t end = start;
    while (end < text.size() && is_word_char(text[end])) {
        ++end;
    }
    if (end > start) {
        const auto token = text.substr(start, end - start);
        for (const auto& l : labels.labels) {
            if (l.str() == token) {
                return l;
            }
        }
    }
    return first_occurrence(text, ordered);
}

} // namespace

std::optional<Label> parse_label(std::string_view completion, const LabelSet& labels, ParseMode mode) {
    const auto ordered = by_length(labels);
    if (mode == ParseMode::Direct) {
        return parse_direct(completion, labels, ordered);
    }
    const auto text = lower(completion);
    static constexpr std::string_view kMarker = "answer";
    if (auto marker = text.rfind(kMarker); marker != std::string::npos) {
        if (auto label = parse_direct(std::string_view(text).substr(marker + kMarker.size()), labels, ordered)) {
            return label;
        }
    }
    return last_occurrence(text, ordered);
}

PredictionRecord predict(ResponseCache* cache, Backend& backend, const PromptBundle& bundle,
                         const LabelSet& labels, ParseMode mode, const DecodeParams& params,
                         const PredictionTarget& target) {
    PredictionRecord record;
    record.sample_id = target.sample_id;
    record.is_adversarial = target.is_adversarial;
    record.truth = target.truth;
    record.seed = target.seed;
    record.decode = params;
    record.prompt_hash = request_digest(backend.id(), params, bundle.full_text);
    try {
        auto completion = cached_complete(cache, backend, bundle.full_text, params);
        record.raw_completion = completion.text;
        record.from_cache = completion.from_cache;
        if (completion.token_logprobs) {
            std::vector<double> logprobs;
            for (const auto& t : *completion.token_logprobs) {
                logprobs.push_back(t.logprob);
            }
            record.token_logprobs = std::move(logprobs);
        }
        record.parsed = parse_label(completion.text, labels, mode);
    } catch (const Error& e) {
        switch (e.code()) {
        case ErrorCode::Transport:
        case ErrorCode::Provider:
        case ErrorCode::PromptTooLong:
            record.error = e.what();
            break;
        default:
            throw;
        }
    }
    return record;
}

double accuracy(const std::vector<PredictionRecord>& records) {
    if (records.empty()) {
        fail(ErrorCode::EmptyInput, "accuracy of an empty record list");
    }
    auto correct = std::count_if(records.begin(), records.end(),
                                 [](const PredictionRecord& r) { return r.correct(); });
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

void to_json(json& j, const PairedOutcome& v) {
    j = json{{"sample_id", v.sample_id},
             {"clean_pred", v.clean_pred ? json(v.clean_pred->str()) : json(nullptr)},
             {"clean_truth", v.clean_truth},
             {"adv_pred", v.adv_pred ? json(v.adv_pred->str()) : json(nullptr)},
             {"adv_truth", v.adv_truth}};
}

void from_json(const json& j, PairedOutcome& v) {
    j.at("sample_id").get_to(v.sample_id);
    j.at("clean_truth").get_to(v.clean_truth);
    j.at("adv_truth").get_to(v.adv_truth);
    v.clean_pred.reset();
    v.adv_pred.reset();
    if (!j.at("clean_pred").is_null()) {
        v.clean_pred = j["clean_pred"].get<Label>();
    }
    if (!j.at("adv_pred").is_null()) {
        v.adv_pred = j["adv_pred"].get<Label>();
    }
}

std::optional<double> asr(const std::vector<PairedOutcome>& outcomes) {
    std::size_t clean_correct = 0;
    std::size_t flipped = 0;
    for (const auto& o : outcomes) {
        if (!o.clean_correct()) {
            continue;
        }
        ++clean_correct;
        if (!o.adv_correct()) {
            ++flipped;
        }
    }
    if (clean_correct == 0) {
        return std::nullopt;
    }
    return static_cast<double>(flipped) / static_cast<double>(clean_correct);
}

double sequence_perplexity(const std::vector<double>& logprobs) {
    if (logprobs.empty()) {
        fail(ErrorCode::EmptyTarget, "perplexity of an empty token sequence");
    }
    double sum = 0.0;
    for (double lp : logprobs) {
        if (std::isinf(lp) && lp < 0) {
            return std::numeric_limits<double>::infinity();
        }
        sum += lp;
    }
    return std::exp(-sum / static_cast<double>(logprobs.size()));
}

double perplexity(Backend& scorer, const std::vector<std::pair<std::string, std::string>>& items) {
    if (items.empty()) {
        fail(ErrorCode::EmptyInput, "perplexity over zero items");
    }
    if (!scorer.can_score()) {
        fail(ErrorCode::Capability, scorer.id() + " backend cannot score sequences");
    }
    double total = 0.0;
    for (const auto& [context, target] : items) {
        total += sequence_perplexity(scorer.score_sequence(context, target));
    }
    return total / static_cast<double>(items.size());
}

namespace {

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary out;
    // Summing offsets from the first value keeps identical seeds exact.
    const double base = values.front();
    double offset = 0.0;
    for (double v : values) {
        offset += v - base;
    }
    out.mean = base + offset / static_cast<double>(values.size());
    if (values.size() >= 2) {
        double sq = 0.0;
        for (double v : values) {
            sq += (v - out.mean) * (v - out.mean);
        }
        out.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
    }
    return out;
}

} // namespace

RunReport aggregate(const std::vector<SeedReport>& per_seed) {
    if (per_seed.empty()) {
        fail(ErrorCode::EmptyInput, "no per-seed reports to aggregate");
    }
    const auto& first = per_seed.front();
    RunReport report;
    report.task_name = first.task_name;
    report.style = first.style;
    report.k = first.k;
    report.adversarial_context = first.adversarial_context;

    std::vector<double> clean;
    std::vector<double> adv;
    std::vector<double> attack;
    std::vector<double> unparsed;
    bool clean_defined = true;
    bool asr_defined = true;
    for (const auto& r : per_seed) {
        if (r.task_name != first.task_name || r.style != first.style || r.k != first.k ||
            r.adversarial_context != first.adversarial_context) {
            fail(ErrorCode::MismatchedConfig, "seed " + std::to_string(r.seed) + " was run with a different configuration");
        }
        report.seeds.push_back(r.seed);
        adv.push_back(r.adv_accuracy);
        unparsed.push_back(r.unparsed_rate);
        report.failed += r.failed;
        if (r.clean_accuracy) {
            clean.push_back(*r.clean_accuracy);
        } else {
            clean_defined = false;
        }
        if (r.asr) {
            attack.push_back(*r.asr);
        } else {
            asr_defined = false;
            report.notes.push_back("ASR undefined for seed " + std::to_string(r.seed) +
                                   " (no clean prediction was correct)");
        }
    }
    report.adv_accuracy = summarize(adv);
    report.unparsed_rate = summarize(unparsed).mean;
    if (clean_defined) {
        report.clean_accuracy = summarize(clean);
    }
    if (asr_defined) {
        report.asr = summarize(attack);
    } else {
        report.notes.push_back("aggregate ASR undefined");
    }
    return report;
}

} // namespace codeicl
