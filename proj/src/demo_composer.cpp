#include "codeicl/demo_composer.hpp"

#include <set>

#include "codeicl/errors.hpp"
#include "codeicl/random.hpp"

namespace codeicl {

namespace {

/// Indices of `count` picks, balanced over label_set when requested.
/// `label_of(i)` yields the label of candidate i; ordering follows the
/// documented round-robin-then-shuffle layout.
template <typename LabelOf>
std::vector<std::size_t> pick(std::size_t candidates, std::size_t count, bool balance,
                              const LabelSet& label_set, SeededRng& rng, LabelOf label_of,
                              ErrorCode shortage) {
    if (count == 0) {
        return {};
    }
    if (candidates == 0 || count > candidates) {
        fail(shortage, "need " + std::to_string(count) + " demonstrations, pool has " +
                           std::to_string(candidates));
    }

    if (!balance) {
        std::vector<std::size_t> order(candidates);
        for (std::size_t i = 0; i < candidates; ++i) {
            order[i] = i;
        }
        rng.shuffle(order);
        order.resize(count);
        return order;
    }

    const auto n_labels = label_set.size();
    if (n_labels == 0 || count % n_labels != 0) {
        fail(ErrorCode::UnbalancedK, std::to_string(count) + " demonstrations cannot be split evenly over " +
                                         std::to_string(n_labels) + " labels");
    }
    const auto per_label = count / n_labels;

    std::vector<std::vector<std::size_t>> by_label(n_labels);
    for (std::size_t i = 0; i < candidates; ++i) {
        if (auto idx = label_set.index_of(label_of(i))) {
            by_label[*idx].push_back(i);
        }
    }
    for (std::size_t l = 0; l < n_labels; ++l) {
        if (by_label[l].size() < per_label) {
            fail(shortage, "label '" + label_set.labels[l].str() + "' has " + std::to_string(by_label[l].size()) +
                               " pool entries, need " + std::to_string(per_label));
        }
        rng.shuffle(by_label[l]);
    }

    std::vector<std::size_t> order;
    order.reserve(count);
    for (std::size_t round = 0; round < per_label; ++round) {
        for (std::size_t l = 0; l < n_labels; ++l) {
            order.push_back(by_label[l][round]);
        }
    }
    rng.shuffle(order);
    return order;
}

} // namespace

void check_policy(const DemoPolicy& policy) {
    if (policy.k < 0) {
        fail(ErrorCode::Usage, "shot count must be >= 0");
    }
    if (policy.adversarial_context && policy.k % 2 != 0) {
        fail(ErrorCode::OddShotCount,
             "adversarial context needs an even shot count, got " + std::to_string(policy.k));
    }
}

std::vector<Sample> select_clean(const std::vector<Sample>& pool, const DemoPolicy& policy,
                                 const LabelSet& label_set) {
    check_policy(policy);
    SeededRng rng(policy.seed);
    auto order = pick(pool.size(), static_cast<std::size_t>(policy.k), policy.balance, label_set, rng,
                      [&](std::size_t i) -> const Label& { return pool[i].label; },
                      ErrorCode::InsufficientPool);
    std::vector<Sample> out;
    out.reserve(order.size());
    for (auto i : order) {
        out.push_back(pool[i]);
    }
    return out;
}

std::vector<ContextDemo> select_adversarial_context(const std::vector<AdvPair>& pairs,
                                                    const DemoPolicy& policy,
                                                    const LabelSet& label_set) {
    if (!policy.adversarial_context) {
        fail(ErrorCode::Usage, "policy does not request adversarial context");
    }
    check_policy(policy);

    std::vector<const AdvPair*> usable;
    std::set<std::string> ids;
    for (const auto& pair : pairs) {
        if (!ids.insert(pair.id()).second) {
            fail(ErrorCode::Schema, "duplicate pair id '" + pair.id() + "' in demonstration pool");
        }
        if (pair.clean) {
            usable.push_back(&pair);
        }
    }

    SeededRng rng(policy.seed);
    const auto pair_count = static_cast<std::size_t>(policy.k / 2);
    auto order = pick(usable.size(), pair_count, policy.balance, label_set, rng,
                      [&](std::size_t i) -> const Label& { return usable[i]->clean->label; },
                      ErrorCode::InsufficientPairs);

    std::vector<ContextDemo> out;
    out.reserve(order.size() * 2);
    for (auto i : order) {
        out.push_back({*usable[i]->clean, false});
        out.push_back({usable[i]->adversarial, true});
    }
    return out;
}

} // namespace codeicl
