#include "stencilc/symbolic.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace stencilc::sym {

namespace {

const char* kSpaceNames[3] = {"x", "y", "z"};
const char* kSpacingNames[3] = {"h_x", "h_y", "h_z"};

std::uint64_t fnv(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

std::uint64_t hash_string(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) { h ^= c; h *= 1099511628211ULL; }
    return h;
}

std::atomic<std::uint64_t> g_function_counter{0};

}  // namespace

Grid::Grid(std::vector<int> shape, std::vector<double> spacing)
    : shape_(std::move(shape)), spacing_(std::move(spacing)) {
    if (shape_.empty() || shape_.size() > 3)
        throw std::invalid_argument("grid must have 1 to 3 space dimensions");
    if (spacing_.size() != shape_.size())
        throw std::invalid_argument("grid spacing count must match shape");
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (shape_[i] <= 0)
            throw std::invalid_argument("grid extent must be positive in " +
                                        std::string(kSpaceNames[i]));
        if (!(spacing_[i] > 0.0))
            throw std::invalid_argument("grid spacing must be positive in " +
                                        std::string(kSpaceNames[i]));
    }
    for (size_t i = 0; i < shape_.size(); ++i)
        space_dims_.push_back({kSpaceNames[i], DimKind::space, kSpacingNames[i]});
    time_dim_ = {"t", DimKind::time, "dt"};
}

GridFunction::GridFunction(std::string name, GridPtr grid, int space_order,
                           std::optional<int> time_order)
    : name_(std::move(name)), grid_(std::move(grid)), space_order_(space_order),
      time_order_(time_order), id_(g_function_counter.fetch_add(1)) {
    if (name_.empty()) throw std::invalid_argument("grid function needs a name");
    if (!grid_) throw std::invalid_argument("grid function needs a grid");
    if (space_order_ < 2 || space_order_ % 2 != 0)
        throw std::invalid_argument("space_order of " + name_ +
                                    " must be an even integer >= 2");
    if (time_order_ && *time_order_ < 1)
        throw std::invalid_argument("time_order of " + name_ + " must be positive");
}

// --- canonical construction ---------------------------------------------

namespace {

int rank_of(ExprKind k) {
    switch (k) {
        case ExprKind::number: return 0;
        case ExprKind::symbol: return 1;
        case ExprKind::indexed: return 2;
        case ExprKind::derivative: return 3;
        case ExprKind::pow: return 4;
        case ExprKind::mul: return 5;
        case ExprKind::add: return 6;
    }
    return 7;
}

int cmp3(std::int64_t a, std::int64_t b) { return a < b ? -1 : (a > b ? 1 : 0); }

ExprPtr finish(Expr node) {
    std::uint64_t h = fnv(0, static_cast<std::uint64_t>(node.kind));
    switch (node.kind) {
        case ExprKind::number:
            h = fnv(h, static_cast<std::uint64_t>(node.value.num()));
            h = fnv(h, static_cast<std::uint64_t>(node.value.den()));
            break;
        case ExprKind::symbol:
            h = fnv(h, hash_string(node.name));
            h = fnv(h, static_cast<std::uint64_t>(node.scope));
            if (node.symbol_dim) h = fnv(h, node.symbol_dim->index + 1);
            break;
        case ExprKind::indexed:
            h = fnv(h, node.function->id());
            h = fnv(h, static_cast<std::uint64_t>(node.time_offset + 1000));
            for (int o : node.offsets) h = fnv(h, static_cast<std::uint64_t>(o + 1000));
            break;
        case ExprKind::derivative:
            h = fnv(h, node.function->id());
            h = fnv(h, static_cast<std::uint64_t>(node.dim.kind));
            h = fnv(h, node.dim.index);
            h = fnv(h, node.deriv_order);
            break;
        case ExprKind::pow:
            h = fnv(h, static_cast<std::uint64_t>(node.exponent + 1000));
            break;
        default:
            break;
    }
    for (const auto& c : node.children) h = fnv(h, c->hash);
    node.hash = h;
    return std::make_shared<const Expr>(std::move(node));
}

// Splits a term into (rational coefficient, remaining core) without
// rebuilding when the term carries no leading number.
std::pair<Rational, ExprPtr> split_coeff(const ExprPtr& e);

}  // namespace

int compare(const Expr& a, const Expr& b) {
    if (&a == &b) return 0;
    if (int r = cmp3(rank_of(a.kind), rank_of(b.kind)); r != 0) return r;
    switch (a.kind) {
        case ExprKind::number: {
            if (a.value == b.value) return 0;
            return a.value < b.value ? -1 : 1;
        }
        case ExprKind::symbol: {
            if (int r = a.name.compare(b.name); r != 0) return r < 0 ? -1 : 1;
            return cmp3(static_cast<int>(a.scope), static_cast<int>(b.scope));
        }
        case ExprKind::indexed: {
            if (int r = a.function->name().compare(b.function->name()); r != 0)
                return r < 0 ? -1 : 1;
            if (int r = cmp3(a.function->id(), b.function->id()); r != 0) return r;
            // Later time levels first so u[t] terms precede u[t-1] terms.
            if (int r = cmp3(b.time_offset, a.time_offset); r != 0) return r;
            for (size_t i = 0; i < a.offsets.size() && i < b.offsets.size(); ++i)
                if (int r = cmp3(a.offsets[i], b.offsets[i]); r != 0) return r;
            return cmp3(a.offsets.size(), b.offsets.size());
        }
        case ExprKind::derivative: {
            if (int r = a.function->name().compare(b.function->name()); r != 0)
                return r < 0 ? -1 : 1;
            if (int r = cmp3(static_cast<int>(a.dim.kind), static_cast<int>(b.dim.kind)); r != 0)
                return r;
            if (int r = cmp3(a.dim.index, b.dim.index); r != 0) return r;
            return cmp3(a.deriv_order, b.deriv_order);
        }
        case ExprKind::pow: {
            if (int r = compare(*a.children[0], *b.children[0]); r != 0) return r;
            return cmp3(a.exponent, b.exponent);
        }
        case ExprKind::mul:
        case ExprKind::add: {
            size_t n = std::min(a.children.size(), b.children.size());
            for (size_t i = 0; i < n; ++i)
                if (int r = compare(*a.children[i], *b.children[i]); r != 0) return r;
            return cmp3(a.children.size(), b.children.size());
        }
    }
    return 0;
}

bool equal(const Expr& a, const Expr& b) {
    if (&a == &b) return true;
    if (a.hash != b.hash) return false;
    return compare(a, b) == 0;
}

bool equal(const ExprPtr& a, const ExprPtr& b) { return equal(*a, *b); }

ExprPtr number(Rational v) {
    Expr e;
    e.kind = ExprKind::number;
    e.value = v;
    return finish(std::move(e));
}

ExprPtr number(std::int64_t v) { return number(Rational(v)); }

ExprPtr symbol(std::string name, SymbolScope scope, std::optional<DimRef> dim) {
    if (name.empty()) throw std::invalid_argument("symbol needs a name");
    Expr e;
    e.kind = ExprKind::symbol;
    e.name = std::move(name);
    e.scope = scope;
    e.symbol_dim = dim;
    return finish(std::move(e));
}

ExprPtr indexed(FunctionPtr fn, std::vector<int> offsets, int time_offset) {
    if (!fn) throw std::invalid_argument("indexed access needs a function");
    if (static_cast<int>(offsets.size()) != fn->grid()->rank())
        throw std::invalid_argument("indexed access offset count must match grid rank");
    if (time_offset != 0 && !fn->is_time_buffered())
        throw std::invalid_argument(fn->name() + " is time-invariant; no time offset allowed");
    Expr e;
    e.kind = ExprKind::indexed;
    e.function = std::move(fn);
    e.offsets = std::move(offsets);
    e.time_offset = time_offset;
    return finish(std::move(e));
}

ExprPtr at(const FunctionPtr& fn, int time_offset) {
    return indexed(fn, std::vector<int>(fn->grid()->rank(), 0), time_offset);
}

ExprPtr shifted(const FunctionPtr& fn, int dim_index, int offset, int time_offset) {
    std::vector<int> offs(fn->grid()->rank(), 0);
    offs.at(dim_index) = offset;
    return indexed(fn, std::move(offs), time_offset);
}

ExprPtr derivative(FunctionPtr fn, DimRef dim, int order) {
    if (!fn) throw std::invalid_argument("derivative needs a function");
    if (order < 1 || order > 2)
        throw std::invalid_argument("only derivative orders 1 and 2 are supported");
    if (dim.kind == DimKind::space && dim.index >= fn->grid()->rank())
        throw std::invalid_argument("derivative dimension out of range");
    Expr e;
    e.kind = ExprKind::derivative;
    e.function = std::move(fn);
    e.dim = dim;
    e.deriv_order = order;
    return finish(std::move(e));
}

ExprPtr pow(ExprPtr base, int exponent) {
    if (exponent == 0) return number(1);
    if (exponent == 1) return base;
    if (base->kind == ExprKind::number) return number(base->value.pow(exponent));
    if (base->kind == ExprKind::pow)
        return pow(base->children[0], base->exponent * exponent);
    Expr e;
    e.kind = ExprKind::pow;
    e.exponent = exponent;
    e.children = {std::move(base)};
    return finish(std::move(e));
}

namespace {

std::pair<Rational, ExprPtr> split_coeff(const ExprPtr& e) {
    if (e->kind == ExprKind::number) return {e->value, nullptr};
    if (e->kind == ExprKind::mul && e->children[0]->kind == ExprKind::number) {
        Rational c = e->children[0]->value;
        if (e->children.size() == 2) return {c, e->children[1]};
        Expr core;
        core.kind = ExprKind::mul;
        core.children.assign(e->children.begin() + 1, e->children.end());
        return {c, finish(std::move(core))};
    }
    return {Rational(1), e};
}

ExprPtr with_coeff(const Rational& c, const ExprPtr& core) {
    if (!core) return number(c);
    if (c.is_zero()) return number(0);
    if (c.is_one()) return core;
    std::vector<ExprPtr> fs;
    fs.push_back(number(c));
    if (core->kind == ExprKind::mul)
        fs.insert(fs.end(), core->children.begin(), core->children.end());
    else
        fs.push_back(core);
    Expr e;
    e.kind = ExprKind::mul;
    e.children = std::move(fs);
    return finish(std::move(e));
}

}  // namespace

ExprPtr mul(std::span<const ExprPtr> factors) {
    Rational coeff(1);
    // base -> accumulated exponent, discovered order irrelevant (sorted below)
    std::vector<std::pair<ExprPtr, int>> bases;
    std::function<void(const ExprPtr&, int)> absorb = [&](const ExprPtr& f, int exp) {
        if (f->kind == ExprKind::number) {
            coeff *= f->value.pow(exp);
            return;
        }
        if (f->kind == ExprKind::mul) {
            for (const auto& c : f->children) absorb(c, exp);
            return;
        }
        if (f->kind == ExprKind::pow) {
            absorb(f->children[0], f->exponent * exp);
            return;
        }
        for (auto& [b, e] : bases)
            if (equal(b, f)) { e += exp; return; }
        bases.emplace_back(f, exp);
    };
    for (const auto& f : factors) {
        if (!f) throw std::invalid_argument("null factor");
        absorb(f, 1);
    }
    if (coeff.is_zero()) return number(0);
    std::vector<ExprPtr> children;
    std::erase_if(bases, [](const auto& p) { return p.second == 0; });
    std::sort(bases.begin(), bases.end(),
              [](const auto& a, const auto& b) { return compare(*a.first, *b.first) < 0; });
    for (auto& [b, e] : bases) children.push_back(pow(b, e));
    if (children.empty()) return number(coeff);
    if (children.size() == 1 && coeff.is_one()) return children[0];
    if (!coeff.is_one()) children.insert(children.begin(), number(coeff));
    Expr e;
    e.kind = ExprKind::mul;
    e.children = std::move(children);
    return finish(std::move(e));
}

ExprPtr mul(std::initializer_list<ExprPtr> factors) {
    return mul(std::span<const ExprPtr>(factors.begin(), factors.size()));
}

ExprPtr add(std::span<const ExprPtr> terms) {
    // core -> coefficient, collecting like terms
    std::vector<std::pair<ExprPtr, Rational>> collected;
    Rational constant(0);
    std::function<void(const ExprPtr&)> absorb = [&](const ExprPtr& t) {
        if (t->kind == ExprKind::add) {
            for (const auto& c : t->children) absorb(c);
            return;
        }
        auto [c, core] = split_coeff(t);
        if (!core) { constant += c; return; }
        for (auto& [k, acc] : collected)
            if (equal(k, core)) { acc += c; return; }
        collected.emplace_back(core, c);
    };
    for (const auto& t : terms) {
        if (!t) throw std::invalid_argument("null term");
        absorb(t);
    }
    std::erase_if(collected, [](const auto& p) { return p.second.is_zero(); });
    std::sort(collected.begin(), collected.end(),
              [](const auto& a, const auto& b) { return compare(*a.first, *b.first) < 0; });
    std::vector<ExprPtr> children;
    for (auto& [core, c] : collected) children.push_back(with_coeff(c, core));
    if (!constant.is_zero()) children.push_back(number(constant));  // constants last
    if (children.empty()) return number(0);
    if (children.size() == 1) return children[0];
    Expr e;
    e.kind = ExprKind::add;
    e.children = std::move(children);
    return finish(std::move(e));
}

ExprPtr add(std::initializer_list<ExprPtr> terms) {
    return add(std::span<const ExprPtr>(terms.begin(), terms.size()));
}

ExprPtr neg(const ExprPtr& e) { return mul({number(-1), e}); }
ExprPtr sub(const ExprPtr& a, const ExprPtr& b) { return add({a, neg(b)}); }
ExprPtr div(const ExprPtr& a, const ExprPtr& b) { return mul({a, pow(b, -1)}); }

ExprPtr operator+(const ExprPtr& a, const ExprPtr& b) { return add({a, b}); }
ExprPtr operator-(const ExprPtr& a, const ExprPtr& b) { return sub(a, b); }
ExprPtr operator*(const ExprPtr& a, const ExprPtr& b) { return mul({a, b}); }
ExprPtr operator/(const ExprPtr& a, const ExprPtr& b) { return div(a, b); }

// --- linearized views ----------------------------------------------------

MulParts mul_parts(const ExprPtr& e) {
    MulParts parts;
    auto push = [&](const ExprPtr& base, int exp) {
        if (exp > 0)
            parts.numerator.emplace_back(base, exp);
        else
            parts.denominator.emplace_back(base, -exp);
    };
    if (e->kind == ExprKind::mul) {
        for (const auto& c : e->children) {
            if (c->kind == ExprKind::number)
                parts.coeff = c->value;
            else if (c->kind == ExprKind::pow)
                push(c->children[0], c->exponent);
            else
                push(c, 1);
        }
    } else if (e->kind == ExprKind::pow) {
        push(e->children[0], e->exponent);
    } else if (e->kind == ExprKind::number) {
        parts.coeff = e->value;
    } else {
        push(e, 1);
    }
    return parts;
}

std::vector<AddTerm> add_terms(const ExprPtr& e) {
    std::vector<AddTerm> out;
    auto one = [&](const ExprPtr& t) {
        auto [c, core] = split_coeff(t);
        if (c.is_negative())
            out.push_back({true, with_coeff(-c, core)});
        else
            out.push_back({false, t});
    };
    if (e->kind == ExprKind::add)
        for (const auto& t : e->children) one(t);
    else
        one(e);
    return out;
}

// --- derivative operators -------------------------------------------------

ExprPtr dt2(const FunctionPtr& u) {
    if (!u->is_time_buffered())
        throw std::invalid_argument(u->name() + " is time-invariant; dt2 undefined");
    if (*u->time_order() < 2)
        throw std::invalid_argument(u->name() + " needs time_order >= 2 for dt2");
    return derivative(u, DimRef{DimKind::time, 0}, 2);
}

ExprPtr dt1(const FunctionPtr& u) {
    if (!u->is_time_buffered())
        throw std::invalid_argument(u->name() + " is time-invariant; dt undefined");
    if (*u->time_order() < 2)
        throw std::invalid_argument(u->name() + " needs time_order >= 2 for dt");
    return derivative(u, DimRef{DimKind::time, 0}, 1);
}

ExprPtr laplace(const FunctionPtr& u) {
    if (u->grid()->rank() < 1)
        throw std::invalid_argument("laplace needs at least one space dimension");
    std::vector<ExprPtr> terms;
    for (int d = 0; d < u->grid()->rank(); ++d)
        terms.push_back(derivative(u, DimRef{DimKind::space, d}, 2));
    return add(terms);
}

namespace {

ExprPtr expand_derivative(const Expr& d) {
    const FunctionPtr& fn = d.function;
    int accuracy;
    std::string spacing_name;
    if (d.dim.kind == DimKind::time) {
        if (!fn->is_time_buffered() || *fn->time_order() < 2 || *fn->time_order() % 2 != 0)
            throw std::invalid_argument("cannot expand time derivative of " + fn->name() +
                                        " in t: time_order must be even and >= 2");
        accuracy = *fn->time_order();
        spacing_name = fn->grid()->time_dim().spacing_symbol;
    } else {
        accuracy = fn->space_order();
        spacing_name = fn->grid()->space_dims()[d.dim.index].spacing_symbol;
    }
    auto weights = fd_coefficients(d.deriv_order, accuracy);
    ExprPtr inv_spacing = pow(symbol(spacing_name), -d.deriv_order);
    std::vector<ExprPtr> terms;
    for (const auto& [offset, w] : weights) {
        if (w.is_zero()) continue;
        ExprPtr access = d.dim.kind == DimKind::time
                             ? at(fn, offset)
                             : shifted(fn, d.dim.index, offset);
        terms.push_back(mul({number(w), access, inv_spacing}));
    }
    return add(terms);
}

}  // namespace

ExprPtr expand_fd(const ExprPtr& e) {
    switch (e->kind) {
        case ExprKind::derivative:
            return expand_derivative(*e);
        case ExprKind::add:
        case ExprKind::mul:
        case ExprKind::pow: {
            std::vector<ExprPtr> children;
            children.reserve(e->children.size());
            bool changed = false;
            for (const auto& c : e->children) {
                children.push_back(expand_fd(c));
                changed |= children.back() != c;
            }
            if (!changed) return e;
            if (e->kind == ExprKind::add) return add(children);
            if (e->kind == ExprKind::mul) return mul(children);
            return pow(children[0], e->exponent);
        }
        default:
            return e;
    }
}

ExprPtr distribute(const ExprPtr& e) {
    switch (e->kind) {
        case ExprKind::add: {
            std::vector<ExprPtr> children;
            for (const auto& c : e->children) children.push_back(distribute(c));
            return add(children);
        }
        case ExprKind::mul: {
            // Cross-multiply positive Add factors; everything else rides along.
            std::vector<ExprPtr> expanded_terms{number(1)};
            for (const auto& c : e->children) {
                ExprPtr f = distribute(c);
                if (f->kind == ExprKind::add) {
                    std::vector<ExprPtr> next;
                    next.reserve(expanded_terms.size() * f->children.size());
                    for (const auto& t : expanded_terms)
                        for (const auto& s : f->children) next.push_back(mul({t, s}));
                    expanded_terms = std::move(next);
                } else {
                    for (auto& t : expanded_terms) t = mul({t, f});
                }
            }
            return add(expanded_terms);
        }
        default:
            return e;
    }
}

Equation make_equation(ExprPtr lhs, ExprPtr rhs) {
    // Both sides must live on one grid.
    const Grid* grid = nullptr;
    std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& e) {
        if (e->kind == ExprKind::indexed || e->kind == ExprKind::derivative) {
            const Grid* g = e->function->grid().get();
            if (grid && grid != g)
                throw std::invalid_argument("equation mixes functions from different grids");
            grid = g;
        }
        for (const auto& c : e->children) walk(c);
    };
    walk(lhs);
    walk(rhs);
    return Equation{std::move(lhs), std::move(rhs)};
}

ExprPtr solve_forward(const Equation& eq, const FunctionPtr& target) {
    if (!target->is_time_buffered())
        throw std::invalid_argument("solve_forward target must be time-buffered");
    ExprPtr residual = distribute(expand_fd(sub(eq.lhs, eq.rhs)));

    ExprPtr forward_access;  // the unique target[t+1] access
    auto is_forward = [&](const ExprPtr& e) {
        return e->kind == ExprKind::indexed && e->function.get() == target.get() &&
               e->time_offset == 1;
    };
    std::function<void(const ExprPtr&)> scan = [&](const ExprPtr& e) {
        if (is_forward(e)) {
            if (forward_access && !equal(forward_access, e))
                throw std::invalid_argument(
                    "cannot solve: multiple distinct forward-time accesses of " +
                    target->name());
            if (!forward_access) forward_access = e;
            return;
        }
        for (const auto& c : e->children) scan(c);
    };
    scan(residual);
    if (!forward_access)
        throw std::invalid_argument("cannot solve: no forward-time access of " +
                                    target->name() + " in equation");

    std::vector<ExprPtr> coeff_terms;  // A in A*target[t+1] + B == 0
    std::vector<ExprPtr> rest_terms;   // B
    std::vector<ExprPtr> terms = residual->kind == ExprKind::add
                                     ? residual->children
                                     : std::vector<ExprPtr>{residual};
    for (const auto& term : terms) {
        MulParts parts = mul_parts(term);
        int hits = 0;
        std::vector<ExprPtr> remaining;
        remaining.push_back(number(parts.coeff));
        for (const auto& [base, exp] : parts.numerator) {
            bool contains = false;
            std::function<void(const ExprPtr&)> deep = [&](const ExprPtr& e) {
                if (is_forward(e)) contains = true;
                for (const auto& c : e->children) deep(c);
            };
            deep(base);
            if (contains) {
                if (base->kind != ExprKind::indexed || exp != 1)
                    throw std::invalid_argument("equation is nonlinear in " + target->name() +
                                                "[t+1]; cannot solve");
                hits += exp;
                if (exp > 1) remaining.push_back(pow(base, exp - 1));
            } else {
                remaining.push_back(pow(base, exp));
            }
        }
        for (const auto& [base, exp] : parts.denominator) {
            bool contains = false;
            std::function<void(const ExprPtr&)> deep = [&](const ExprPtr& e) {
                if (is_forward(e)) contains = true;
                for (const auto& c : e->children) deep(c);
            };
            deep(base);
            if (contains)
                throw std::invalid_argument("equation is nonlinear in " + target->name() +
                                            "[t+1]; cannot solve");
            remaining.push_back(pow(base, -exp));
        }
        if (hits > 1)
            throw std::invalid_argument("equation is nonlinear in " + target->name() +
                                        "[t+1]; cannot solve");
        if (hits == 1)
            coeff_terms.push_back(mul(remaining));
        else
            rest_terms.push_back(term);
    }
    ExprPtr coeff = add(coeff_terms);
    if (coeff->is_zero())
        throw std::invalid_argument("forward-time coefficient vanishes; cannot solve for " +
                                    target->name());
    ExprPtr rest = add(rest_terms);
    return distribute(mul({number(-1), rest, pow(coeff, -1)}));
}

// --- evaluation and inspection -------------------------------------------

double evaluate(const ExprPtr& e, const EvalContext& ctx) {
    switch (e->kind) {
        case ExprKind::number:
            return e->value.to_double();
        case ExprKind::symbol:
            return ctx.symbol_value(*e);
        case ExprKind::indexed:
            return ctx.indexed_value(*e);
        case ExprKind::derivative:
            throw std::logic_error("cannot evaluate unexpanded derivative of " +
                                   e->function->name());
        case ExprKind::add: {
            double acc = 0.0;
            for (const auto& c : e->children) acc += evaluate(c, ctx);
            return acc;
        }
        case ExprKind::mul: {
            double acc = 1.0;
            for (const auto& c : e->children) acc *= evaluate(c, ctx);
            return acc;
        }
        case ExprKind::pow: {
            double base = evaluate(e->children[0], ctx);
            int n = e->exponent < 0 ? -e->exponent : e->exponent;
            double acc = 1.0;
            while (n-- > 0) acc *= base;
            return e->exponent < 0 ? 1.0 / acc : acc;
        }
    }
    return 0.0;
}

namespace {

void print(std::ostringstream& os, const ExprPtr& e, int parent_prec);

void print_factor(std::ostringstream& os, const ExprPtr& base, int exp) {
    bool parens = base->kind == ExprKind::add || base->kind == ExprKind::mul;
    for (int i = 0; i < exp; ++i) {
        if (i) os << "*";
        if (parens) os << "(";
        print(os, base, 2);
        if (parens) os << ")";
    }
}

void print(std::ostringstream& os, const ExprPtr& e, int parent_prec) {
    switch (e->kind) {
        case ExprKind::number:
            os << e->value.str();
            return;
        case ExprKind::symbol:
            os << e->name;
            return;
        case ExprKind::indexed: {
            os << e->function->name();
            if (e->function->is_time_buffered()) {
                os << "[t";
                if (e->time_offset > 0) os << "+" << e->time_offset;
                if (e->time_offset < 0) os << e->time_offset;
                os << "]";
            }
            const auto& dims = e->function->grid()->space_dims();
            for (size_t d = 0; d < e->offsets.size(); ++d) {
                os << "[" << dims[d].name;
                if (e->offsets[d] > 0) os << "+" << e->offsets[d];
                if (e->offsets[d] < 0) os << e->offsets[d];
                os << "]";
            }
            return;
        }
        case ExprKind::derivative:
            os << "d" << e->deriv_order << "(" << e->function->name() << ", "
               << (e->dim.kind == DimKind::time ? "t"
                                                : e->function->grid()->space_dims()[e->dim.index].name)
               << ")";
            return;
        case ExprKind::add: {
            if (parent_prec > 1) os << "(";
            auto terms = add_terms(e);
            for (size_t i = 0; i < terms.size(); ++i) {
                if (i) os << (terms[i].negative ? " - " : " + ");
                else if (terms[i].negative) os << "-";
                print(os, terms[i].term, 1);
            }
            if (parent_prec > 1) os << ")";
            return;
        }
        case ExprKind::mul:
        case ExprKind::pow: {
            MulParts parts = mul_parts(e);
            bool first = true;
            if (parts.coeff.is_negative()) { os << "-"; parts.coeff = -parts.coeff; }
            if (!parts.coeff.is_one() || parts.numerator.empty()) {
                os << parts.coeff.str();
                first = false;
            }
            for (const auto& [base, exp] : parts.numerator) {
                if (!first) os << "*";
                print_factor(os, base, exp);
                first = false;
            }
            if (!parts.denominator.empty()) {
                os << "/";
                bool need_parens = parts.denominator.size() > 1 ||
                                   parts.denominator[0].second > 1 ||
                                   parts.denominator[0].first->kind == ExprKind::add ||
                                   parts.denominator[0].first->kind == ExprKind::mul;
                if (need_parens) os << "(";
                bool dfirst = true;
                for (const auto& [base, exp] : parts.denominator) {
                    if (!dfirst) os << "*";
                    print_factor(os, base, exp);
                    dfirst = false;
                }
                if (need_parens) os << ")";
            }
            return;
        }
    }
}

}  // namespace

std::string to_string(const ExprPtr& e) {
    std::ostringstream os;
    print(os, e, 0);
    return os.str();
}

std::vector<ExprPtr> collect_indexed(const ExprPtr& e) {
    std::vector<ExprPtr> out;
    std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
        if (n->kind == ExprKind::indexed) {
            for (const auto& seen : out)
                if (equal(seen, n)) return;
            out.push_back(n);
            return;
        }
        for (const auto& c : n->children) walk(c);
    };
    walk(e);
    std::sort(out.begin(), out.end(),
              [](const ExprPtr& a, const ExprPtr& b) { return compare(*a, *b) < 0; });
    return out;
}

unsigned free_space_dims(const ExprPtr& e) {
    unsigned mask = 0;
    std::function<void(const ExprPtr&)> walk = [&](const ExprPtr& n) {
        if (n->kind == ExprKind::indexed)
            mask |= (1u << n->function->grid()->rank()) - 1u;
        if (n->kind == ExprKind::symbol && n->symbol_dim)
            mask |= 1u << n->symbol_dim->index;
        for (const auto& c : n->children) walk(c);
    };
    walk(e);
    return mask;
}

bool depends_on_step(const ExprPtr& e) {
    if (e->kind == ExprKind::symbol && e->scope == SymbolScope::step) return true;
    if (e->kind == ExprKind::indexed && e->function->is_time_buffered()) return true;
    for (const auto& c : e->children)
        if (depends_on_step(c)) return true;
    return false;
}

}  // namespace stencilc::sym
