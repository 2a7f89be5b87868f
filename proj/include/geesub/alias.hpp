#pragma once

#include <cstddef>
#include <vector>

#include "geesub/rng.hpp"

namespace geesub {

/// Walker/Vose alias table for O(1) draws from a discrete distribution.
/// Construction is O(m) and walks the probabilities in index order, so the
/// table (and therefore every draw sequence) is a pure function of the
/// probability vector.
class AliasTable {
public:
    explicit AliasTable(const std::vector<double>& probs)
        : prob_(probs.size()), alias_(probs.size(), 0) {
        const std::size_t m = probs.size();
        std::vector<std::size_t> small, large;
        small.reserve(m);
        large.reserve(m);
        for (std::size_t i = 0; i < m; ++i) {
            prob_[i] = static_cast<double>(m) * probs[i];
            (prob_[i] < 1.0 ? small : large).push_back(i);
        }
        // stacks processed LIFO; topology fixed by index order above
        while (!small.empty() && !large.empty()) {
            const std::size_t s = small.back();
            const std::size_t l = large.back();
            small.pop_back();
            large.pop_back();
            alias_[s] = l;
            prob_[l] -= 1.0 - prob_[s];
            (prob_[l] < 1.0 ? small : large).push_back(l);
        }
        for (std::size_t i : small) prob_[i] = 1.0;
        for (std::size_t i : large) prob_[i] = 1.0;
    }

    std::size_t sample(Rng& rng) const {
        const std::size_t k = static_cast<std::size_t>(rng.uniform_below(prob_.size()));
        return rng.uniform01() < prob_[k] ? k : alias_[k];
    }

private:
    std::vector<double> prob_;
    std::vector<std::size_t> alias_;
};

} // namespace geesub
