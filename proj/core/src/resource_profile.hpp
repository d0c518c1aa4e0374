// SPDX-License-Identifier: Apache-2.0
//
// Cumulative GPU usage over time as a step function.
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "lorasched/errors.hpp"
#include "lorasched/inter_sched.hpp"

namespace lorasched::inter {

class ResourceProfile {
public:
    explicit ResourceProfile(int capacity) : capacity_(capacity) { steps_.push_back({0, 0}); }

    int capacity() const { return capacity_; }

    int used_at(Micros x) const { return steps_[index_of(x)].used; }

    /// Earliest t >= from such that usage + g <= capacity throughout [t, t + d).
    Micros earliest_fit(Micros from, Micros d, int g) const {
        Micros t = from;
        if (d <= 0) return t;
        for (;;) {
            std::size_t i = index_of(t);
            bool ok = true;
            for (std::size_t j = i; j < steps_.size() && steps_[j].t < t + d; ++j) {
                if (steps_[j].used + g > capacity_) {
                    ok = false;
                    check_invariant(j + 1 < steps_.size(), "resource profile never frees capacity");
                    t = steps_[j + 1].t;
                    break;
                }
            }
            if (ok) return t;
        }
    }

    void add(Micros s, Micros e, int g) {
        if (e <= s) return;
        const std::size_t a = split(s);
        const std::size_t b = split(e);
        for (std::size_t j = a; j < b; ++j) {
            steps_[j].used += g;
            check_invariant(steps_[j].used <= capacity_, "resource profile over capacity");
        }
    }

    /// Smallest T with the free area in [from, T) at least `area`.
    Micros area_completion(Micros from, std::int64_t area) const {
        if (area <= 0) return from;
        std::int64_t acc = 0;
        std::size_t i = index_of(from);
        Micros t = from;
        for (;; ++i) {
            const int free = capacity_ - steps_[i].used;
            const bool last = i + 1 == steps_.size();
            const Micros seg_end = last ? std::numeric_limits<Micros>::max() : steps_[i + 1].t;
            if (free > 0) {
                const std::int64_t need = area - acc;
                const std::int64_t len = last ? need : static_cast<std::int64_t>(seg_end - t);
                if (static_cast<std::int64_t>(free) * len >= need) {
                    return t + static_cast<Micros>((need + free - 1) / free);
                }
                acc += static_cast<std::int64_t>(free) * len;
            }
            check_invariant(!last, "resource profile never frees capacity");
            t = seg_end;
        }
    }

private:
    struct Step {
        Micros t;
        int used;
    };

    std::size_t index_of(Micros x) const {
        auto it = std::upper_bound(steps_.begin(), steps_.end(), x, [](Micros v, const Step& s) { return v < s.t; });
        return static_cast<std::size_t>(it - steps_.begin()) - 1;
    }

    std::size_t split(Micros x) {
        const std::size_t i = index_of(x);
        if (steps_[i].t == x) return i;
        steps_.insert(steps_.begin() + static_cast<std::ptrdiff_t>(i) + 1, Step{x, steps_[i].used});
        return i + 1;
    }

    int capacity_;
    std::vector<Step> steps_;
};

}  // namespace lorasched::inter
