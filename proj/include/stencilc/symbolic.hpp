#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stencilc/rational.hpp"

// Symbolic expression core: structured grids, grid functions, derivative
// operators, finite-difference weight derivation, FD expansion and the
// forward-time solve that turns an implicit update equation into an
// explicit stencil.  Everything here is immutable after construction and
// safe to share across threads.

namespace stencilc::sym {

enum class DimKind { space, time };

struct Dimension {
    std::string name;            // x, y, z, t
    DimKind kind;
    std::string spacing_symbol;  // h_x ... for space, dt for time
};

// Structured grid: shape and physical spacing per space dimension, plus
// the single time dimension.  Dimension names follow x, y, z order.
class Grid {
public:
    Grid(std::vector<int> shape, std::vector<double> spacing);

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    const std::vector<double>& spacing() const { return spacing_; }
    const std::vector<Dimension>& space_dims() const { return space_dims_; }
    const Dimension& time_dim() const { return time_dim_; }

private:
    std::vector<int> shape_;
    std::vector<double> spacing_;
    std::vector<Dimension> space_dims_;
    Dimension time_dim_;
};

using GridPtr = std::shared_ptr<const Grid>;

// A named field over a grid.  space_order sets the spatial FD accuracy and
// the halo width (space_order/2 per side).  Time-buffered functions carry
// time_order+1 storage levels; time-invariant ones have no time axis.
class GridFunction {
public:
    GridFunction(std::string name, GridPtr grid, int space_order,
                 std::optional<int> time_order = std::nullopt);

    const std::string& name() const { return name_; }
    const GridPtr& grid() const { return grid_; }
    int space_order() const { return space_order_; }
    std::optional<int> time_order() const { return time_order_; }
    bool is_time_buffered() const { return time_order_.has_value(); }
    int time_levels() const { return time_order_.value_or(0) + 1; }
    int halo() const { return space_order_ / 2; }
    std::uint64_t id() const { return id_; }  // monotone declaration order

private:
    std::string name_;
    GridPtr grid_;
    int space_order_;
    std::optional<int> time_order_;
    std::uint64_t id_;
};

using FunctionPtr = std::shared_ptr<const GridFunction>;

enum class ExprKind { number, symbol, indexed, derivative, pow, mul, add };

// Scope of a symbol decides how far its value may be hoisted: constants
// are fixed for a whole run, step symbols change every timestep, and a
// dim-scoped symbol varies along one space dimension.
enum class SymbolScope { constant, step };

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct DimRef {
    DimKind kind = DimKind::space;
    int index = 0;  // space dimension index; ignored for time

    friend bool operator==(const DimRef&, const DimRef&) = default;
};

// Immutable expression node.  Add/Mul are n-ary with canonically sorted
// children; Pow keeps an integer exponent; Indexed is a grid access with
// integer offsets relative to the iteration point.
class Expr {
public:
    ExprKind kind;

    // number
    Rational value;

    // symbol
    std::string name;
    SymbolScope scope = SymbolScope::constant;
    std::optional<DimRef> symbol_dim;  // set for values varying along one dimension

    // indexed
    FunctionPtr function;
    std::vector<int> offsets;  // one per space dimension
    int time_offset = 0;

    // derivative
    DimRef dim;
    int deriv_order = 0;

    // pow
    int exponent = 0;

    std::vector<ExprPtr> children;

    std::uint64_t hash = 0;

    bool is_number() const { return kind == ExprKind::number; }
    bool is_zero() const { return is_number() && value.is_zero(); }
    bool is_one() const { return is_number() && value.is_one(); }
};

// --- construction (canonicalizing) ------------------------------------

ExprPtr number(Rational v);
ExprPtr number(std::int64_t v);
ExprPtr symbol(std::string name, SymbolScope scope = SymbolScope::constant,
               std::optional<DimRef> dim = std::nullopt);
ExprPtr indexed(FunctionPtr fn, std::vector<int> offsets, int time_offset = 0);
// Access at the iteration point (all space offsets zero).
ExprPtr at(const FunctionPtr& fn, int time_offset = 0);
ExprPtr shifted(const FunctionPtr& fn, int dim_index, int offset, int time_offset = 0);
ExprPtr derivative(FunctionPtr fn, DimRef dim, int order);
ExprPtr add(std::span<const ExprPtr> terms);
ExprPtr add(std::initializer_list<ExprPtr> terms);
ExprPtr mul(std::span<const ExprPtr> factors);
ExprPtr mul(std::initializer_list<ExprPtr> factors);
ExprPtr pow(ExprPtr base, int exponent);
ExprPtr neg(const ExprPtr& e);
ExprPtr sub(const ExprPtr& a, const ExprPtr& b);
ExprPtr div(const ExprPtr& a, const ExprPtr& b);

ExprPtr operator+(const ExprPtr& a, const ExprPtr& b);
ExprPtr operator-(const ExprPtr& a, const ExprPtr& b);
ExprPtr operator*(const ExprPtr& a, const ExprPtr& b);
ExprPtr operator/(const ExprPtr& a, const ExprPtr& b);

// Total deterministic order used for canonical child sorting.
int compare(const Expr& a, const Expr& b);
bool equal(const Expr& a, const Expr& b);
bool equal(const ExprPtr& a, const ExprPtr& b);

// --- linearized views (shared by printers, the interpreter and the
//     operation counter so they agree on evaluation order) --------------

struct MulParts {
    Rational coeff{1};
    std::vector<std::pair<ExprPtr, int>> numerator;    // (base, exponent > 0)
    std::vector<std::pair<ExprPtr, int>> denominator;  // (base, exponent > 0)
};
MulParts mul_parts(const ExprPtr& e);

struct AddTerm {
    bool negative = false;
    ExprPtr term;  // with the sign stripped off the leading coefficient
};
std::vector<AddTerm> add_terms(const ExprPtr& e);

// --- derivative operators ----------------------------------------------

// Central FD weights for d/dx^order at the given even accuracy, as exact
// rationals before division by spacing^order.  Returns accuracy+1 entries
// with offsets -accuracy/2 .. accuracy/2 (zero weights included).
std::vector<std::pair<int, Rational>> fd_coefficients(int derivative_order, int accuracy_order);

ExprPtr dt2(const FunctionPtr& u);
ExprPtr dt1(const FunctionPtr& u);
ExprPtr laplace(const FunctionPtr& u);

// Replace every Derivative node by its weighted sum of Indexed accesses
// (space derivatives at the function's space_order, time derivatives at
// its time_order).  Idempotent.
ExprPtr expand_fd(const ExprPtr& e);

// Distribute products over sums (negative powers are left in place).
ExprPtr distribute(const ExprPtr& e);

struct Equation {
    ExprPtr lhs;
    ExprPtr rhs;
};

Equation make_equation(ExprPtr lhs, ExprPtr rhs);

// Solve expand_fd(lhs - rhs) == 0 for target[t+1] at the iteration point.
// The result is the fully distributed explicit update expression.
ExprPtr solve_forward(const Equation& eq, const FunctionPtr& target);

// --- evaluation ---------------------------------------------------------

struct EvalContext {
    std::function<double(const Expr&)> symbol_value;
    std::function<double(const Expr&)> indexed_value;
};

// Numeric evaluation with exact-rational constants widened to double.
double evaluate(const ExprPtr& e, const EvalContext& ctx);

// Plain math rendering for diagnostics and error messages.
std::string to_string(const ExprPtr& e);

// All distinct Indexed nodes in the expression, in canonical order.
std::vector<ExprPtr> collect_indexed(const ExprPtr& e);

// Space dimensions the expression depends on (via grid accesses or
// dim-scoped symbols), as a bitmask over dimension indices.
unsigned free_space_dims(const ExprPtr& e);

// True if any contained symbol has step scope or any access touches a
// time-buffered function.
bool depends_on_step(const ExprPtr& e);

}  // namespace stencilc::sym
