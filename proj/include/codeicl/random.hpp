#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace codeicl {

/// Seeded generator for demonstration selection and subsetting.
///
/// Engine: std::mt19937_64 (MT19937-64, whose output sequence the C++
/// standard fixes). Bounded draws use rejection sampling on the raw 64-bit
/// output (`x % n` over the largest multiple of n), and shuffles are
/// Fisher-Yates from the back, so a given seed yields the same selection on
/// every platform. std::uniform_int_distribution and std::shuffle are avoided
/// because their algorithms are implementation-defined.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n; // 2^64 mod n
        while (true) {
            const std::uint64_t x = engine_();
            if (x >= threshold) {
                return x % n;
            }
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

} // namespace codeicl
