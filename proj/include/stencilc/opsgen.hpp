#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stencilc/pipeline.hpp"
#include "stencilc/wave_model.hpp"

// Translation of the iteration/expression tree into OPS-API source text:
// macro-indexed access rewriting, user-kernel outlining, and emission of
// the kernel header plus the host program (ops_init .. ops_end).  Also
// emits a plain nested-loop C reference of the same computation.

namespace stencilc::opsgen {

enum class AccessMode { read, write, read_write };

struct OpsArg {
    std::string dat_name;                 // ut10, ut00, m, ...
    sym::FunctionPtr base_function;
    int time_offset = 0;
    int acc_index = 0;
    AccessMode mode = AccessMode::read;
    sym::FunctionPtr dat_function;        // synthetic function carrying dat_name
    std::vector<std::vector<int>> stencil_points;  // sorted unique offsets
};

struct ScalarParam {
    std::string name;  // passed as a read-only pointer, e.g. src_amp
};

// Argument registry for one kernel.  Arguments are either pre-registered
// in a fixed order (kernel outlining) or registered on first encounter
// (direct expression translation, write side first).
class OpsContext {
public:
    int lookup_or_register(const sym::FunctionPtr& fn, int time_offset, AccessMode mode);
    void note_point(int arg_index, const std::vector<int>& offsets);
    const OpsArg* arg_for(const sym::GridFunction* dat_fn) const;
    void note_scalar(const std::string& name);

    std::vector<OpsArg> args;
    std::vector<ScalarParam> scalar_params;
};

// Deterministic dat naming: time offset d >= 0 maps to <name>t<d>0,
// d < 0 to <name>tm<|d|>0; time-invariant functions keep their bare name.
std::string name_time_access(const sym::GridFunction& fn, int time_offset);

// Recursive structural copy: symbols and numbers pass through, each grid
// access becomes a macro access registered in ctx, other nodes recurse.
sym::ExprPtr make_ops_ast(const sym::ExprPtr& e, OpsContext& ctx,
                          AccessMode mode = AccessMode::read);

// Renders an expression already in OPS form, macro accesses as
// dat[OPS_ACCk(...)] with k taken from ctx.
std::string render_ops_expr(const sym::ExprPtr& e, const OpsContext& ctx);

// Translates "target = update" into OPS syntax (no trailing semicolon).
std::string translate_statement(const pipeline::Assignment& a, OpsContext& ctx);

struct OpsKernel {
    std::string name;
    OpsContext ctx;  // argument registry in final order
    std::vector<pipeline::Binding> point_temps;  // OPS form, emission order
    std::vector<pipeline::Assignment> stores;    // OPS form
    std::vector<pipeline::Bounds> iteration_range;  // inclusive grid bounds
    sym::GridPtr grid;
};

// Outlines one optimized cluster: write target first, then reads of
// time-buffered functions by descending time offset, then time-invariant
// functions in declaration order.  Hoisted bindings become per-point
// temps; an OPS user kernel has no loop-invariant scope.
OpsKernel outline_kernel(const pipeline::OptimizedCluster& oc, const std::string& name);

struct OpsProgram {
    std::string kernels_file;  // <name>_kernels.h
    std::string host_file;     // <name>_host.c
    std::string kernels_source;
    std::string host_source;
};

// Emits the kernel definitions file and the host program: ops_init, block
// and dat declarations, constants, stencils, ops_partition, the time loop
// with one ops_par_loop per kernel and rotated dat arguments, a result
// fetch and ops_end.
OpsProgram emit_program(const std::vector<OpsKernel>& kernels,
                        const exec::WaveProblem& problem, const std::string& name);

// Plain nested-loop C translation of the tree (no OPS API), suitable for
// golden diffing and independent compilation.
std::string emit_reference_c(const pipeline::IetNodePtr& iet,
                             const exec::WaveProblem& problem, const std::string& name);

// --- shared C rendering helpers -------------------------------------------

// Integral rationals render as integers, everything else as FP32 decimal
// literals with an F suffix and nine significant digits.
std::string c_literal(const Rational& r);

using AccessPrinter = std::function<std::string(const sym::Expr&)>;
using SymbolPrinter = std::function<std::string(const sym::Expr&)>;

// C expression rendering with the same evaluation order the interpreter
// uses: canonical term order, one division per product.
std::string render_c_expr(const sym::ExprPtr& e, const AccessPrinter& access,
                          const SymbolPrinter& symbol);

}  // namespace stencilc::opsgen
