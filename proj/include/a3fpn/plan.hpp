#pragma once

#include <vector>

#include "a3fpn/config.hpp"

namespace a3fpn {

// The DAG of one asymptotic column: which levels are fused, and the up/down
// sampling gaps each reference level reads its sources through.
struct ColumnPlan {
    struct Source {
        int level;   // source level index (1-based)
        int gap;     // |source - reference|
        bool is_up;  // true: source is coarser and gets upsampled
    };
    struct Reference {
        int level;                   // reference level index (1-based)
        std::vector<Source> sources; // fusion order = ascending level index
    };

    int column = 1; // 1-based
    int width = 2;  // **min**
    std::vector<int> ref_levels;
    std::vector<Reference> refs;
};

// Bottom-up widths follow min(j+1, n); the top-down variant mirrors the level
// assignment, counting reference levels from the top.
inline std::vector<ColumnPlan> plan_columns(const PyramidConfig& cfg) {
    cfg.validate();
    std::vector<ColumnPlan> plans;
    plans.reserve(static_cast<std::size_t>(cfg.columns));
    for (int j = 1; j <= cfg.columns; ++j) {
        ColumnPlan plan;
        plan.column = j;
        plan.width = std::min(j + 1, cfg.n_levels);
        const int lo = cfg.orientation == Orientation::kBottomUp ? 1 : cfg.n_levels - plan.width + 1;
        for (int i = lo; i < lo + plan.width; ++i) plan.ref_levels.push_back(i);
        for (int i : plan.ref_levels) {
            ColumnPlan::Reference ref;
            ref.level = i;
            for (int k : plan.ref_levels) {
                if (k == i) continue;
                // Level 1 is the highest-resolution map, so a source with a
                // larger index is spatially coarser and must be upsampled.
                ref.sources.push_back(ColumnPlan::Source{k, std::abs(k - i), k > i});
            }
            plan.refs.push_back(std::move(ref));
        }
        plans.push_back(std::move(plan));
    }
    return plans;
}

} // namespace a3fpn
