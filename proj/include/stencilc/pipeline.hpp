#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stencilc/symbolic.hpp"

// Staged lowering: equation lowering and clustering, symbolic optimization
// at two intensity levels, and construction of the iteration/expression
// tree that the interpreter and the code emitters consume.

namespace stencilc::pipeline {

enum class DseLevel { basic, aggressive };

const char* to_string(DseLevel level);
DseLevel parse_dse_level(const std::string& text);

struct Assignment {
    sym::ExprPtr target;  // an Indexed node
    sym::ExprPtr update;
};

struct Bounds {
    int lo = 0;
    int hi = 0;  // inclusive
};

// Expressions grouped by a shared iteration space.  Bounds are grid
// coordinates; point clusters (source injection) have extent-1 bounds.
struct Cluster {
    sym::GridPtr grid;
    std::vector<Assignment> exprs;
    std::vector<Bounds> bounds;               // one per space dimension
    std::vector<sym::FunctionPtr> functions;  // accessed, in declaration order

    bool is_point() const {
        for (const auto& b : bounds)
            if (b.lo != b.hi) return false;
        return true;
    }
};

struct Binding {
    sym::ExprPtr temp;   // a Symbol node
    sym::ExprPtr value;
    unsigned free_dims = 0;      // space dimensions the value varies along
    bool step_dependent = false;
};

struct OptimizedCluster {
    Cluster cluster;                    // as lowered
    DseLevel level = DseLevel::basic;
    std::vector<Binding> hoisted;       // loop-invariant bindings
    std::vector<Binding> local_temps;   // per-point bindings
    std::vector<Assignment> exprs;      // stores, rewritten to reference temps
    std::int64_t flops = 0;             // scalar float ops per grid point
};

// One cluster per distinct iteration space.  Interior bounds shrink the
// grid by the widest halo among accessed functions; equations with a
// pinned point (source updates) get extent-1 bounds at that point.
std::vector<Cluster> lower(const std::vector<sym::Equation>& equations,
                           const std::vector<sym::FunctionPtr>& targets,
                           const std::vector<std::optional<std::vector<int>>>& points = {});

// basic: expressions pass through untouched.  aggressive: common-factor
// extraction across sum terms, CSE over repeated subexpressions, and
// hoisting of space-invariant subexpressions out of the point loop.
// Temp names start at r<first_temp_id>.
OptimizedCluster optimize(const Cluster& c, DseLevel level, int first_temp_id = 0);

// Optimizes every cluster with a shared temp-name sequence.
std::vector<OptimizedCluster> optimize_all(const std::vector<Cluster>& clusters,
                                           DseLevel level);

// Scalar float operations per grid point: distinct +,-,*,/ over the
// per-point bindings and stores, shared subexpressions counted once.
std::int64_t flop_count(const OptimizedCluster& oc);

// Same counting rule applied to raw expressions (no temps).
std::int64_t count_scalar_ops(const std::vector<sym::ExprPtr>& roots);

// --- iteration/expression tree -------------------------------------------

enum class IetKind { block, time_loop, space_loop, bind, exprs, kernel_call };

struct IetNode;
using IetNodePtr = std::shared_ptr<const IetNode>;

struct IetNode {
    IetKind kind;

    // time_loop
    int time_steps = 0;
    int time_levels = 0;

    // space_loop
    int dim_index = 0;
    Bounds range;

    // bind
    Binding binding;

    // exprs: per-point temps then stores, innermost statement
    std::vector<Binding> point_temps;
    std::vector<Assignment> stores;
    int cluster_index = -1;

    // kernel_call
    int kernel_index = -1;

    std::vector<IetNodePtr> children;
};

// Tree with the time loop as the unique outermost loop.  Bindings land at
// the deepest loop level where they are still invariant: space-free
// step-independent ones above the time loop, step-dependent ones at the
// top of the time loop body, dimension-dependent ones under their deepest
// referenced space loop.
IetNodePtr build_iet(const std::vector<OptimizedCluster>& ocs, int time_steps,
                     int time_order);

std::string iet_dump(const IetNodePtr& node);
std::uint64_t iet_hash(const IetNodePtr& node);

}  // namespace stencilc::pipeline
