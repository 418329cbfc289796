#pragma once

#include <cstdint>
#include <vector>

#include "codeicl/task_model.hpp"

namespace codeicl {

struct DemoPolicy {
    int k = 0;
    bool balance = false;
    bool adversarial_context = false;
    std::uint64_t seed = 0;
};

/// Throws Usage for k < 0, OddShotCount for an odd k in adversarial mode.
void check_policy(const DemoPolicy& policy);

/// Picks k clean demonstrations from the pool.
///
/// Without balance: a seeded shuffle of the pool, first k taken.
/// With balance: k / |labels| samples per label, each drawn by a seeded
/// shuffle of that label's pool entries (pool order is the base order).
/// The picks are laid out round-robin over label_set order and the
/// resulting sequence is shuffled with the same generator.
///
/// Errors: InsufficientPool (empty pool, k larger than the pool, or a label
/// short of samples), UnbalancedK (balance with k not divisible by the
/// label count).
std::vector<Sample> select_clean(const std::vector<Sample>& pool, const DemoPolicy& policy,
                                 const LabelSet& label_set);

struct ContextDemo {
    Sample sample;
    bool is_adversarial = false;
};

/// Picks k / 2 pairs (balanced on clean labels when policy.balance) and lays
/// each out as clean then adversarial, keeping every sample's own label.
/// Pair blocks stay in selection order.
///
/// Errors: OddShotCount, InsufficientPairs, UnbalancedK, Schema (duplicate
/// pair ids in the pool).
std::vector<ContextDemo> select_adversarial_context(const std::vector<AdvPair>& pairs,
                                                    const DemoPolicy& policy,
                                                    const LabelSet& label_set);

} // namespace codeicl
