#include "stencilc/pipeline.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace stencilc::pipeline {

using sym::Expr;
using sym::ExprKind;
using sym::ExprPtr;

const char* to_string(DseLevel level) {
    return level == DseLevel::basic ? "basic" : "aggressive";
}

DseLevel parse_dse_level(const std::string& text) {
    if (text == "basic") return DseLevel::basic;
    if (text == "aggressive") return DseLevel::aggressive;
    throw std::invalid_argument("unknown dse level '" + text + "' (basic|aggressive)");
}

// --- lowering --------------------------------------------------------------

namespace {

void collect_functions(const ExprPtr& e, std::vector<sym::FunctionPtr>& out) {
    if (e->kind == ExprKind::indexed || e->kind == ExprKind::derivative) {
        for (const auto& f : out)
            if (f.get() == e->function.get()) goto children;
        out.push_back(e->function);
    }
children:
    for (const auto& c : e->children) collect_functions(c, out);
}

bool is_forward_point_update(const sym::Equation& eq, const sym::FunctionPtr& target) {
    const auto& l = eq.lhs;
    return l->kind == ExprKind::indexed && l->function.get() == target.get() &&
           l->time_offset == 1;
}

}  // namespace

std::vector<Cluster> lower(const std::vector<sym::Equation>& equations,
                           const std::vector<sym::FunctionPtr>& targets,
                           const std::vector<std::optional<std::vector<int>>>& points) {
    if (equations.size() != targets.size())
        throw std::invalid_argument("lower: one target per equation required");
    if (!points.empty() && points.size() != equations.size())
        throw std::invalid_argument("lower: one point entry per equation when given");

    std::vector<Cluster> clusters;
    for (size_t i = 0; i < equations.size(); ++i) {
        const auto& eq = equations[i];
        const auto& target = targets[i];

        Assignment assign;
        if (is_forward_point_update(eq, target)) {
            assign.target = eq.lhs;
            assign.update = sym::expand_fd(eq.rhs);
        } else {
            assign.target = sym::at(target, 1);
            assign.update = sym::solve_forward(eq, target);
        }

        std::vector<sym::FunctionPtr> fns;
        collect_functions(assign.target, fns);
        collect_functions(assign.update, fns);
        std::sort(fns.begin(), fns.end(),
                  [](const auto& a, const auto& b) { return a->id() < b->id(); });

        const sym::GridPtr& grid = target->grid();
        int rank = grid->rank();
        std::vector<Bounds> bounds(rank);
        int shrink = 0;
        for (const auto& f : fns) shrink = std::max(shrink, f->halo());
        for (int d = 0; d < rank; ++d) {
            bounds[d] = {shrink, grid->shape()[d] - 1 - shrink};
            if (bounds[d].lo > bounds[d].hi)
                throw std::invalid_argument(
                    "grid extent " + std::to_string(grid->shape()[d]) + " in " +
                    grid->space_dims()[d].name + " is too small for halo " +
                    std::to_string(shrink));
        }
        if (!points.empty() && points[i]) {
            const auto& p = *points[i];
            if (static_cast<int>(p.size()) != rank)
                throw std::invalid_argument("point coordinate count must match grid rank");
            for (int d = 0; d < rank; ++d) {
                if (p[d] < bounds[d].lo || p[d] > bounds[d].hi)
                    throw std::invalid_argument(
                        "point coordinate " + std::to_string(p[d]) + " in " +
                        grid->space_dims()[d].name + " lies outside the updatable interior");
                bounds[d] = {p[d], p[d]};
            }
        }

        Cluster* home = nullptr;
        for (auto& c : clusters) {
            if (c.grid.get() != grid.get()) continue;
            bool same = true;
            for (int d = 0; d < rank; ++d)
                same &= c.bounds[d].lo == bounds[d].lo && c.bounds[d].hi == bounds[d].hi;
            if (same) { home = &c; break; }
        }
        if (!home) {
            clusters.push_back(Cluster{grid, {}, bounds, {}});
            home = &clusters.back();
        }

        // Data-parallel check: no expression may write what another reads.
        for (const auto& other : home->exprs) {
            auto conflicts = [](const Assignment& writer, const Assignment& reader) {
                for (const auto& acc : sym::collect_indexed(reader.update))
                    if (acc->function.get() == writer.target->function.get() &&
                        acc->time_offset == writer.target->time_offset)
                        return true;
                return false;
            };
            if (conflicts(other, assign) || conflicts(assign, other))
                throw std::invalid_argument(
                    "expressions in one iteration space have a write/read conflict on " +
                    target->name());
        }

        home->exprs.push_back(std::move(assign));
        for (const auto& f : fns) {
            bool seen = false;
            for (const auto& g : home->functions) seen |= g.get() == f.get();
            if (!seen) home->functions.push_back(f);
        }
        std::sort(home->functions.begin(), home->functions.end(),
                  [](const auto& a, const auto& b) { return a->id() < b->id(); });
    }
    return clusters;
}

// --- operation counting -----------------------------------------------------

namespace {

struct ExprKey {
    ExprPtr node;
};

struct ExprKeyHash {
    size_t operator()(const ExprKey& k) const { return static_cast<size_t>(k.node->hash); }
};

struct ExprKeyEq {
    bool operator()(const ExprKey& a, const ExprKey& b) const {
        return sym::equal(a.node, b.node);
    }
};

template <typename V>
using ExprMap = std::unordered_map<ExprKey, V, ExprKeyHash, ExprKeyEq>;

// Rendered cost of one node: an Add with k terms is k-1 additions; a
// product renders as numerator/denominator with one division; repeated
// bases cost exponent-1 multiplies.
std::int64_t node_cost(const ExprPtr& e) {
    switch (e->kind) {
        case ExprKind::add:
            return static_cast<std::int64_t>(e->children.size()) - 1;
        case ExprKind::mul:
        case ExprKind::pow: {
            sym::MulParts parts = sym::mul_parts(e);
            std::int64_t num = parts.coeff.abs().is_one() ? 0 : 1;
            std::int64_t internal = 0;
            for (const auto& [base, exp] : parts.numerator) {
                num += 1;
                internal += exp - 1;
            }
            std::int64_t cost = std::max<std::int64_t>(num - 1, 0) + internal;
            if (!parts.denominator.empty()) {
                std::int64_t den = 0;
                for (const auto& [base, exp] : parts.denominator) {
                    den += 1;
                    cost += exp - 1;
                }
                cost += den - 1 + 1;  // combine denominator, one division
            }
            return cost;
        }
        default:
            return 0;
    }
}

void count_unique(const ExprPtr& e, ExprMap<bool>& seen, std::int64_t& total) {
    if (seen.contains(ExprKey{e})) return;
    seen.emplace(ExprKey{e}, true);
    total += node_cost(e);
    for (const auto& c : e->children) count_unique(c, seen, total);
}

}  // namespace

std::int64_t count_scalar_ops(const std::vector<ExprPtr>& roots) {
    ExprMap<bool> seen;
    std::int64_t total = 0;
    for (const auto& r : roots) count_unique(r, seen, total);
    return total;
}

std::int64_t flop_count(const OptimizedCluster& oc) { return oc.flops; }

// --- aggressive rewriting ----------------------------------------------------

namespace {

// One multiplicative factor usable as an extraction candidate: either a
// (base, signed exponent) pair or a plain rational magnitude.
struct FactorKey {
    ExprPtr base;  // null for rational candidates
    int exponent = 0;
    Rational magnitude{1};

    bool matches(const FactorKey& o) const {
        if ((base == nullptr) != (o.base == nullptr)) return false;
        if (base) return exponent == o.exponent && sym::equal(base, o.base);
        return magnitude == o.magnitude;
    }
};

std::vector<FactorKey> term_factors(const ExprPtr& term) {
    std::vector<FactorKey> keys;
    sym::MulParts parts = sym::mul_parts(term);
    if (!parts.coeff.abs().is_one() && !parts.coeff.is_zero())
        keys.push_back(FactorKey{nullptr, 0, parts.coeff.abs()});
    for (const auto& [base, exp] : parts.numerator)
        keys.push_back(FactorKey{base, exp, Rational(1)});
    for (const auto& [base, exp] : parts.denominator)
        keys.push_back(FactorKey{base, -exp, Rational(1)});
    return keys;
}

ExprPtr strip_factor(const ExprPtr& term, const FactorKey& key) {
    sym::MulParts parts = sym::mul_parts(term);
    std::vector<ExprPtr> factors;
    if (key.base == nullptr) {
        Rational c = parts.coeff.is_negative() ? -key.magnitude : key.magnitude;
        factors.push_back(sym::number(parts.coeff / c));
    } else {
        factors.push_back(sym::number(parts.coeff));
    }
    for (const auto& [base, exp] : parts.numerator) {
        if (key.base && key.exponent == exp && sym::equal(base, key.base)) continue;
        factors.push_back(sym::pow(base, exp));
    }
    for (const auto& [base, exp] : parts.denominator) {
        if (key.base && key.exponent == -exp && sym::equal(base, key.base)) continue;
        factors.push_back(sym::pow(base, -exp));
    }
    return sym::mul(factors);
}

ExprPtr factor_sum(std::vector<ExprPtr> terms);

ExprPtr factor_expr(const ExprPtr& e) {
    switch (e->kind) {
        case ExprKind::add: {
            std::vector<ExprPtr> terms;
            for (const auto& t : e->children) terms.push_back(factor_expr(t));
            return factor_sum(std::move(terms));
        }
        case ExprKind::mul:
        case ExprKind::pow: {
            std::vector<ExprPtr> children;
            bool changed = false;
            for (const auto& c : e->children) {
                children.push_back(factor_expr(c));
                changed |= children.back() != c;
            }
            if (!changed) return e;
            if (e->kind == ExprKind::mul) return sym::mul(children);
            return sym::pow(children[0], e->exponent);
        }
        default:
            return e;
    }
}

// Greedy extraction of the most common factor across sum terms; recurses
// into both the factored group and the remainder.
ExprPtr factor_sum(std::vector<ExprPtr> terms) {
    if (terms.size() < 2) return sym::add(terms);

    std::vector<FactorKey> candidates;
    std::vector<int> counts;
    for (const auto& t : terms) {
        for (const auto& k : term_factors(t)) {
            bool found = false;
            for (size_t i = 0; i < candidates.size(); ++i)
                if (candidates[i].matches(k)) { ++counts[i], found = true; break; }
            if (!found) { candidates.push_back(k); counts.push_back(1); }
        }
    }

    int best = -1;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (counts[i] < 2) continue;
        if (best < 0 || counts[i] > counts[best])
            best = static_cast<int>(i);
        else if (counts[i] == counts[best]) {
            // Deterministic tie-break: expression factors before rational
            // magnitudes, then canonical order.
            const auto& a = candidates[i];
            const auto& b = candidates[best];
            if (a.base && !b.base) best = static_cast<int>(i);
            else if (a.base && b.base && sym::compare(*a.base, *b.base) < 0)
                best = static_cast<int>(i);
            else if (!a.base && !b.base && a.magnitude < b.magnitude)
                best = static_cast<int>(i);
        }
    }
    if (best < 0) return sym::add(terms);

    const FactorKey key = candidates[best];
    std::vector<ExprPtr> inside, outside;
    for (const auto& t : terms) {
        bool has = false;
        for (const auto& k : term_factors(t))
            if (key.matches(k)) { has = true; break; }
        (has ? inside : outside).push_back(t);
    }

    std::vector<ExprPtr> stripped;
    stripped.reserve(inside.size());
    for (const auto& t : inside) stripped.push_back(strip_factor(t, key));
    ExprPtr factor = key.base ? sym::pow(key.base, key.exponent)
                              : sym::number(key.magnitude);
    ExprPtr group = sym::mul({factor, factor_sum(std::move(stripped))});
    if (outside.empty()) return group;
    ExprPtr rest = factor_sum(std::move(outside));
    std::vector<ExprPtr> sum{group, rest};
    // Plain n-ary merge; re-canonicalizing here would re-distribute nothing
    // but could re-collect the factored group, so keep the two halves.
    return sym::add(sum);
}

// --- CSE --------------------------------------------------------------------

struct TempInfo {
    unsigned free_dims = 0;
    bool step_dependent = false;
};

struct CseState {
    ExprMap<int> refcount;
    ExprMap<ExprPtr> replacement;  // keyed by pre-rewrite structure
    ExprMap<ExprPtr> hoisted_map;  // keyed by post-rewrite structure
    std::vector<Binding> temps;
    std::unordered_map<std::string, TempInfo> temp_info;
    int next_id = 0;
};

bool is_composite(const ExprPtr& e) {
    return e->kind == ExprKind::add || e->kind == ExprKind::mul ||
           e->kind == ExprKind::pow;
}

// Dimension/step analysis that sees through temp symbols.
unsigned resolved_dims(const ExprPtr& e, const CseState& st) {
    if (e->kind == ExprKind::symbol) {
        if (auto it = st.temp_info.find(e->name); it != st.temp_info.end())
            return it->second.free_dims;
        return sym::free_space_dims(e);
    }
    unsigned mask = sym::free_space_dims(e);
    std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
        if (n->kind == ExprKind::symbol)
            if (auto it = st.temp_info.find(n->name); it != st.temp_info.end())
                mask |= it->second.free_dims;
        for (const auto& c : n->children) walk(c);
    };
    walk(e);
    return mask;
}

bool resolved_step(const ExprPtr& e, const CseState& st) {
    if (sym::depends_on_step(e)) return true;
    bool dep = false;
    std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
        if (n->kind == ExprKind::symbol)
            if (auto it = st.temp_info.find(n->name); it != st.temp_info.end())
                dep |= it->second.step_dependent;
        for (const auto& c : n->children) walk(c);
    };
    walk(e);
    return dep;
}

ExprPtr make_temp(const ExprPtr& value, CseState& st) {
    ExprPtr temp = sym::symbol("r" + std::to_string(st.next_id++));
    TempInfo info{resolved_dims(value, st), resolved_step(value, st)};
    st.temps.push_back(Binding{temp, value, info.free_dims, info.step_dependent});
    st.temp_info.emplace(temp->name, info);
    return temp;
}

void tally(const ExprPtr& e, ExprMap<int>& refcount, ExprMap<bool>& visited) {
    if (is_composite(e)) {
        int& n = refcount[ExprKey{e}];
        ++n;
        if (n > 1) return;  // children already tallied through the first copy
    }
    if (visited.contains(ExprKey{e})) return;
    visited.emplace(ExprKey{e}, true);
    for (const auto& c : e->children) tally(c, refcount, visited);
}

ExprPtr rewrite_with_temps(const ExprPtr& e, CseState& st) {
    if (auto it = st.replacement.find(ExprKey{e}); it != st.replacement.end())
        return it->second;
    std::vector<ExprPtr> children;
    bool changed = false;
    for (const auto& c : e->children) {
        children.push_back(rewrite_with_temps(c, st));
        changed |= children.back() != c;
    }
    ExprPtr rebuilt = e;
    if (changed) {
        if (e->kind == ExprKind::add) rebuilt = sym::add(children);
        else if (e->kind == ExprKind::mul) rebuilt = sym::mul(children);
        else if (e->kind == ExprKind::pow) rebuilt = sym::pow(children[0], e->exponent);
    }
    if (is_composite(e) && st.refcount[ExprKey{e}] >= 2) {
        ExprPtr temp = make_temp(rebuilt, st);
        st.replacement.emplace(ExprKey{e}, temp);
        return temp;
    }
    st.replacement.emplace(ExprKey{e}, rebuilt);
    return rebuilt;
}

// Bind space-invariant composite subexpressions that CSE left inline so
// they can move out of the point loop.  Operates on post-CSE trees.
ExprPtr hoist_invariants(const ExprPtr& e, CseState& st) {
    if (is_composite(e) && resolved_dims(e, st) == 0) {
        if (auto it = st.hoisted_map.find(ExprKey{e}); it != st.hoisted_map.end())
            return it->second;
        ExprPtr temp = make_temp(e, st);
        st.hoisted_map.emplace(ExprKey{e}, temp);
        return temp;
    }
    std::vector<ExprPtr> children;
    bool changed = false;
    for (const auto& c : e->children) {
        children.push_back(hoist_invariants(c, st));
        changed |= children.back() != c;
    }
    if (!changed) return e;
    if (e->kind == ExprKind::add) return sym::add(children);
    if (e->kind == ExprKind::mul) return sym::mul(children);
    if (e->kind == ExprKind::pow) return sym::pow(children[0], e->exponent);
    return e;
}

}  // namespace

OptimizedCluster optimize(const Cluster& c, DseLevel level, int first_temp_id) {
    OptimizedCluster oc;
    oc.cluster = c;
    oc.level = level;
    if (level == DseLevel::basic) {
        oc.exprs = c.exprs;
        std::vector<ExprPtr> roots;
        for (const auto& a : oc.exprs) roots.push_back(a.update);
        oc.flops = count_scalar_ops(roots);
        return oc;
    }

    std::vector<Assignment> stores;
    for (const auto& a : c.exprs) stores.push_back({a.target, factor_expr(a.update)});

    CseState st;
    st.next_id = first_temp_id;
    {
        ExprMap<bool> visited;
        for (const auto& a : stores) tally(a.update, st.refcount, visited);
    }
    for (auto& a : stores) a.update = rewrite_with_temps(a.update, st);
    for (auto& a : stores) a.update = hoist_invariants(a.update, st);
    // New temps may be appended while scanning, so index rather than iterate.
    for (size_t i = 0; i < st.temps.size(); ++i) {
        if (st.temps[i].free_dims != 0)
            st.temps[i].value = hoist_invariants(st.temps[i].value, st);
    }

    // A hoisted binding never references a per-point temp (its value would
    // then vary in space), so splitting the creation sequence keeps every
    // reference pointing backwards.
    for (const auto& b : st.temps) {
        if (b.free_dims == 0)
            oc.hoisted.push_back(b);
        else
            oc.local_temps.push_back(b);
    }
    oc.exprs = std::move(stores);

    std::vector<ExprPtr> roots;
    for (const auto& b : oc.local_temps) roots.push_back(b.value);
    for (const auto& a : oc.exprs) roots.push_back(a.update);
    oc.flops = count_scalar_ops(roots);
    return oc;
}

std::vector<OptimizedCluster> optimize_all(const std::vector<Cluster>& clusters,
                                           DseLevel level) {
    std::vector<OptimizedCluster> out;
    int next_temp = 0;
    for (const auto& c : clusters) {
        out.push_back(optimize(c, level, next_temp));
        next_temp += static_cast<int>(out.back().hoisted.size() +
                                      out.back().local_temps.size());
    }
    return out;
}

// --- IET ---------------------------------------------------------------------

namespace {

IetNodePtr make_node(IetNode node) { return std::make_shared<const IetNode>(std::move(node)); }

int deepest_dim(unsigned mask) {
    int d = -1;
    for (int i = 0; i < 32; ++i)
        if (mask & (1u << i)) d = i;
    return d;
}

}  // namespace

IetNodePtr build_iet(const std::vector<OptimizedCluster>& ocs, int time_steps,
                     int time_order) {
    if (ocs.empty()) throw std::invalid_argument("build_iet: need at least one cluster");
    if (time_steps < 1) throw std::invalid_argument("build_iet: time_steps must be >= 1");
    if (time_order < 1) throw std::invalid_argument("build_iet: time_order must be >= 1");

    std::vector<IetNodePtr> top;
    std::vector<IetNodePtr> step_body;

    for (size_t ci = 0; ci < ocs.size(); ++ci) {
        const auto& oc = ocs[ci];
        int rank = oc.cluster.grid->rank();

        // Partition hoisted bindings by placement level.
        std::vector<Binding> above_time, at_step;
        std::vector<std::vector<Binding>> at_dim(rank);
        for (const auto& b : oc.hoisted) {
            int d = deepest_dim(b.free_dims);
            if (d >= 0)
                at_dim[d].push_back(b);
            else if (b.step_dependent)
                at_step.push_back(b);
            else
                above_time.push_back(b);
        }

        for (const auto& b : above_time)
            top.push_back(make_node({.kind = IetKind::bind, .binding = b}));
        for (const auto& b : at_step)
            step_body.push_back(make_node({.kind = IetKind::bind, .binding = b}));

        IetNode leaf{.kind = IetKind::exprs};
        leaf.point_temps = oc.local_temps;
        leaf.stores = oc.exprs;
        leaf.cluster_index = static_cast<int>(ci);
        IetNodePtr inner = make_node(std::move(leaf));

        for (int d = rank - 1; d >= 0; --d) {
            IetNode loop{.kind = IetKind::space_loop};
            loop.dim_index = d;
            loop.range = oc.cluster.bounds[d];
            for (const auto& b : at_dim[d])
                loop.children.push_back(make_node({.kind = IetKind::bind, .binding = b}));
            loop.children.push_back(inner);
            inner = make_node(std::move(loop));
        }
        step_body.push_back(inner);
    }

    IetNode time_loop{.kind = IetKind::time_loop};
    time_loop.time_steps = time_steps;
    time_loop.time_levels = time_order + 1;
    time_loop.children = std::move(step_body);

    top.push_back(make_node(std::move(time_loop)));
    if (top.size() == 1) return top[0];
    IetNode root{.kind = IetKind::block};
    root.children = std::move(top);
    return make_node(std::move(root));
}

namespace {

void dump_node(std::ostringstream& os, const IetNodePtr& n, int depth) {
    std::string pad(static_cast<size_t>(depth) * 2, ' ');
    switch (n->kind) {
        case IetKind::block:
            os << pad << "block {\n";
            for (const auto& c : n->children) dump_node(os, c, depth + 1);
            os << pad << "}\n";
            return;
        case IetKind::time_loop:
            os << pad << "timeloop steps=" << n->time_steps
               << " levels=" << n->time_levels << " {\n";
            for (const auto& c : n->children) dump_node(os, c, depth + 1);
            os << pad << "}\n";
            return;
        case IetKind::space_loop:
            os << pad << "loop dim=" << n->dim_index << " [" << n->range.lo << ","
               << n->range.hi << "] {\n";
            for (const auto& c : n->children) dump_node(os, c, depth + 1);
            os << pad << "}\n";
            return;
        case IetKind::bind:
            os << pad << "bind " << sym::to_string(n->binding.temp) << " = "
               << sym::to_string(n->binding.value) << "\n";
            return;
        case IetKind::exprs:
            os << pad << "exprs cluster=" << n->cluster_index << " {\n";
            for (const auto& b : n->point_temps)
                os << pad << "  " << sym::to_string(b.temp) << " = "
                   << sym::to_string(b.value) << "\n";
            for (const auto& a : n->stores)
                os << pad << "  " << sym::to_string(a.target) << " = "
                   << sym::to_string(a.update) << "\n";
            os << pad << "}\n";
            return;
        case IetKind::kernel_call:
            os << pad << "call kernel=" << n->kernel_index << "\n";
            return;
    }
}

}  // namespace

std::string iet_dump(const IetNodePtr& node) {
    std::ostringstream os;
    dump_node(os, node, 0);
    return os.str();
}

std::uint64_t iet_hash(const IetNodePtr& node) {
    std::string text = iet_dump(node);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) { h ^= c; h *= 1099511628211ULL; }
    return h;
}

}  // namespace stencilc::pipeline
