#include "stencilc/opsgen.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stencilc::opsgen {

using pipeline::Assignment;
using pipeline::Binding;
using pipeline::Bounds;
using pipeline::OptimizedCluster;
using sym::Expr;
using sym::ExprKind;
using sym::ExprPtr;

// --- naming and literals -----------------------------------------------------

std::string name_time_access(const sym::GridFunction& fn, int time_offset) {
    if (!fn.is_time_buffered()) {
        if (time_offset != 0)
            throw std::invalid_argument(fn.name() + " is time-invariant");
        return fn.name();
    }
    if (std::abs(time_offset) > *fn.time_order())
        throw std::invalid_argument("time offset " + std::to_string(time_offset) +
                                    " of " + fn.name() + " exceeds its time order");
    if (time_offset >= 0)
        return fn.name() + "t" + std::to_string(time_offset) + "0";
    return fn.name() + "tm" + std::to_string(-time_offset) + "0";
}

std::string c_literal(const Rational& r) {
    if (r.is_integer()) return std::to_string(r.num());
    float f = static_cast<float>(r.to_double());
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(f));
    return std::string(buf) + "F";
}

// --- expression rendering ------------------------------------------------------

namespace {

void render(std::ostringstream& os, const ExprPtr& e, const AccessPrinter& access,
            const SymbolPrinter& symbol, bool in_product);

void render_factor(std::ostringstream& os, const ExprPtr& base, int copies,
                   const AccessPrinter& access, const SymbolPrinter& symbol) {
    bool parens = base->kind == ExprKind::add || base->kind == ExprKind::mul ||
                  base->kind == ExprKind::pow;
    for (int i = 0; i < copies; ++i) {
        if (i) os << "*";
        if (parens) os << "(";
        render(os, base, access, symbol, !parens);
        if (parens) os << ")";
    }
}

void render(std::ostringstream& os, const ExprPtr& e, const AccessPrinter& access,
            const SymbolPrinter& symbol, bool in_product) {
    switch (e->kind) {
        case ExprKind::number:
            os << c_literal(e->value);
            return;
        case ExprKind::symbol:
            os << symbol(*e);
            return;
        case ExprKind::indexed:
            os << access(*e);
            return;
        case ExprKind::derivative:
            throw std::logic_error("cannot render an unexpanded derivative");
        case ExprKind::add: {
            if (in_product) os << "(";
            auto terms = sym::add_terms(e);
            for (size_t i = 0; i < terms.size(); ++i) {
                if (i) os << (terms[i].negative ? " - " : " + ");
                else if (terms[i].negative) os << "-";
                render(os, terms[i].term, access, symbol, false);
            }
            if (in_product) os << ")";
            return;
        }
        case ExprKind::mul:
        case ExprKind::pow: {
            sym::MulParts parts = sym::mul_parts(e);
            bool negative = parts.coeff.is_negative();
            Rational coeff = parts.coeff.abs();
            if (negative) os << "-";
            bool first = true;
            if (!coeff.is_one() || parts.numerator.empty()) {
                os << c_literal(coeff);
                first = false;
            }
            for (const auto& [base, exp] : parts.numerator) {
                if (!first) os << "*";
                render_factor(os, base, exp, access, symbol);
                first = false;
            }
            if (!parts.denominator.empty()) {
                os << "/";
                bool simple = parts.denominator.size() == 1 &&
                              parts.denominator[0].second == 1 &&
                              (parts.denominator[0].first->kind == ExprKind::symbol ||
                               parts.denominator[0].first->kind == ExprKind::indexed);
                if (!simple) os << "(";
                bool dfirst = true;
                for (const auto& [base, exp] : parts.denominator) {
                    if (!dfirst) os << "*";
                    render_factor(os, base, exp, access, symbol);
                    dfirst = false;
                }
                if (!simple) os << ")";
            }
            return;
        }
    }
}

}  // namespace

std::string render_c_expr(const ExprPtr& e, const AccessPrinter& access,
                          const SymbolPrinter& symbol) {
    std::ostringstream os;
    render(os, e, access, symbol, false);
    return os.str();
}

// --- OPS context -----------------------------------------------------------------

int OpsContext::lookup_or_register(const sym::FunctionPtr& fn, int time_offset,
                                   AccessMode mode) {
    for (size_t i = 0; i < args.size(); ++i) {
        OpsArg& a = args[i];
        if (a.base_function.get() == fn.get() && a.time_offset == time_offset) {
            if (mode != AccessMode::read && a.mode == AccessMode::read)
                a.mode = AccessMode::read_write;
            if (mode == AccessMode::read && a.mode == AccessMode::write)
                a.mode = AccessMode::read_write;
            return static_cast<int>(i);
        }
    }
    OpsArg arg;
    arg.dat_name = name_time_access(*fn, time_offset);
    arg.base_function = fn;
    arg.time_offset = time_offset;
    arg.acc_index = static_cast<int>(args.size());
    arg.mode = mode;
    arg.dat_function =
        std::make_shared<sym::GridFunction>(arg.dat_name, fn->grid(), fn->space_order());
    args.push_back(std::move(arg));
    return static_cast<int>(args.size()) - 1;
}

void OpsContext::note_point(int arg_index, const std::vector<int>& offsets) {
    auto& pts = args[static_cast<size_t>(arg_index)].stencil_points;
    if (std::find(pts.begin(), pts.end(), offsets) == pts.end()) {
        pts.push_back(offsets);
        std::sort(pts.begin(), pts.end());
    }
}

const OpsArg* OpsContext::arg_for(const sym::GridFunction* dat_fn) const {
    for (const auto& a : args)
        if (a.dat_function.get() == dat_fn) return &a;
    return nullptr;
}

void OpsContext::note_scalar(const std::string& name) {
    for (const auto& s : scalar_params)
        if (s.name == name) return;
    scalar_params.push_back(ScalarParam{name});
}

// --- translation -------------------------------------------------------------------

sym::ExprPtr make_ops_ast(const ExprPtr& e, OpsContext& ctx, AccessMode mode) {
    switch (e->kind) {
        case ExprKind::number:
            return e;
        case ExprKind::symbol:
            if (e->scope == sym::SymbolScope::step) ctx.note_scalar(e->name);
            return e;
        case ExprKind::indexed: {
            if (e->function->is_time_buffered() &&
                std::abs(e->time_offset) > *e->function->time_order())
                throw std::invalid_argument("unresolved time offset on " +
                                            e->function->name());
            int idx = ctx.lookup_or_register(e->function, e->time_offset, mode);
            ctx.note_point(idx, e->offsets);
            return sym::indexed(ctx.args[static_cast<size_t>(idx)].dat_function,
                                e->offsets, 0);
        }
        case ExprKind::derivative:
            throw std::invalid_argument("expression must be FD-expanded before translation");
        case ExprKind::add:
        case ExprKind::mul: {
            std::vector<ExprPtr> children;
            for (const auto& c : e->children)
                children.push_back(make_ops_ast(c, ctx, mode));
            return e->kind == ExprKind::add ? sym::add(children) : sym::mul(children);
        }
        case ExprKind::pow:
            return sym::pow(make_ops_ast(e->children[0], ctx, mode), e->exponent);
    }
    throw std::logic_error("unreachable expression kind");
}

namespace {

std::string ops_access_text(const Expr& ix, const OpsContext& ctx) {
    const OpsArg* arg = ctx.arg_for(ix.function.get());
    if (!arg)
        throw std::logic_error("access to unregistered dat " + ix.function->name());
    std::ostringstream os;
    os << arg->dat_name << "[OPS_ACC" << arg->acc_index << "(";
    for (size_t d = 0; d < ix.offsets.size(); ++d) {
        if (d) os << ",";
        os << ix.offsets[d];
    }
    os << ")]";
    return os.str();
}

std::string ops_symbol_text(const Expr& s, const OpsContext& ctx) {
    for (const auto& p : ctx.scalar_params)
        if (p.name == s.name) return s.name + "[0]";  // gbl args arrive as pointers
    return s.name;
}

}  // namespace

std::string render_ops_expr(const ExprPtr& e, const OpsContext& ctx) {
    return render_c_expr(
        e, [&](const Expr& ix) { return ops_access_text(ix, ctx); },
        [&](const Expr& s) { return ops_symbol_text(s, ctx); });
}

std::string translate_statement(const Assignment& a, OpsContext& ctx) {
    ExprPtr lhs = make_ops_ast(a.target, ctx, AccessMode::write);
    ExprPtr rhs = make_ops_ast(a.update, ctx, AccessMode::read);
    return render_ops_expr(lhs, ctx) + " = " + render_ops_expr(rhs, ctx);
}

// --- kernel outlining -----------------------------------------------------------------

OpsKernel outline_kernel(const OptimizedCluster& oc, const std::string& name) {
    OpsKernel k;
    k.name = name;
    k.grid = oc.cluster.grid;
    k.iteration_range = oc.cluster.bounds;

    // Access census over the whole body.
    struct Pair {
        sym::FunctionPtr fn;
        int toff;
    };
    std::vector<Pair> reads;
    auto note_read = [&](const sym::FunctionPtr& fn, int toff) {
        for (const auto& p : reads)
            if (p.fn.get() == fn.get() && p.toff == toff) return;
        reads.push_back({fn, toff});
    };
    auto scan = [&](const ExprPtr& e) {
        for (const auto& ix : sym::collect_indexed(e))
            note_read(ix->function, ix->time_offset);
    };
    for (const auto& b : oc.hoisted) scan(b.value);
    for (const auto& b : oc.local_temps) scan(b.value);
    for (const auto& a : oc.exprs) scan(a.update);

    if (oc.exprs.empty()) throw std::invalid_argument("cluster has no stores to outline");
    const ExprPtr& target = oc.exprs.front().target;

    // Write target first, then time-buffered reads by descending time
    // offset, then time-invariant functions in declaration order.
    k.ctx.lookup_or_register(target->function, target->time_offset, AccessMode::write);
    std::stable_sort(reads.begin(), reads.end(), [](const Pair& a, const Pair& b) {
        bool at = a.fn->is_time_buffered(), bt = b.fn->is_time_buffered();
        if (at != bt) return at > bt;
        if (at && bt) {
            if (a.fn->id() != b.fn->id()) return a.fn->id() < b.fn->id();
            return a.toff > b.toff;
        }
        return a.fn->id() < b.fn->id();
    });
    for (const auto& p : reads)
        k.ctx.lookup_or_register(p.fn, p.toff, AccessMode::read);

    // An OPS user kernel runs once per point, so loop-invariant bindings
    // re-materialize as per-point temps ahead of the local ones.
    for (const auto& b : oc.hoisted) {
        Binding nb = b;
        nb.value = make_ops_ast(b.value, k.ctx, AccessMode::read);
        k.point_temps.push_back(std::move(nb));
    }
    for (const auto& b : oc.local_temps) {
        Binding nb = b;
        nb.value = make_ops_ast(b.value, k.ctx, AccessMode::read);
        k.point_temps.push_back(std::move(nb));
    }
    for (const auto& a : oc.exprs) {
        Assignment na;
        na.target = make_ops_ast(a.target, k.ctx, AccessMode::write);
        na.update = make_ops_ast(a.update, k.ctx, AccessMode::read);
        k.stores.push_back(std::move(na));
    }
    return k;
}

// --- program emission ---------------------------------------------------------------

namespace {

const char* mode_text(AccessMode m) {
    switch (m) {
        case AccessMode::read: return "OPS_READ";
        case AccessMode::write: return "OPS_WRITE";
        case AccessMode::read_write: return "OPS_RW";
    }
    return "OPS_RW";
}

std::string kernel_signature(const OpsKernel& k) {
    std::ostringstream os;
    os << "void " << k.name << "(";
    bool first = true;
    for (const auto& a : k.ctx.args) {
        if (!first) os << ", ";
        first = false;
        if (a.mode == AccessMode::read) os << "const ";
        os << "float *" << a.dat_name;
    }
    for (const auto& s : k.ctx.scalar_params) {
        if (!first) os << ", ";
        first = false;
        os << "const float *" << s.name;
    }
    os << ")";
    return os.str();
}

std::string kernel_body(const OpsKernel& k) {
    std::ostringstream os;
    for (const auto& b : k.point_temps)
        os << "  float " << b.temp->name << " = " << render_ops_expr(b.value, k.ctx)
           << ";\n";
    for (const auto& a : k.stores)
        os << "  " << render_ops_expr(a.target, k.ctx) << " = "
           << render_ops_expr(a.update, k.ctx) << ";\n";
    return os.str();
}

std::string upper_ident(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

std::string float_text(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
    std::string s(buf);
    return s + "F";
}

}  // namespace

OpsProgram emit_program(const std::vector<OpsKernel>& kernels,
                        const exec::WaveProblem& problem, const std::string& name) {
    if (kernels.empty())
        throw std::invalid_argument("emit_program: need at least one kernel");
    for (const auto& k : kernels)
        if (k.stores.empty())
            throw std::invalid_argument("emit_program: kernel " + k.name +
                                        " has an empty body");

    const sym::Grid& grid = *problem.grid;
    const int rank = grid.rank();
    OpsProgram out;
    out.kernels_file = name + "_kernels.h";
    out.host_file = name + "_host.c";

    // ---- kernel definitions file ----
    {
        std::ostringstream os;
        std::string guard = upper_ident(name) + "_KERNELS_H";
        os << "/* " << out.kernels_file << "\n"
           << " * OPS user kernels for the " << name << " stencil program.\n"
           << " * Generated; do not edit.\n"
           << " */\n"
           << "#ifndef " << guard << "\n"
           << "#define " << guard << "\n\n";
        os << "extern float " << grid.time_dim().spacing_symbol << ";\n";
        for (int d = 0; d < rank; ++d)
            os << "extern float " << grid.space_dims()[d].spacing_symbol << ";\n";
        os << "\n";
        for (const auto& k : kernels) {
            os << kernel_signature(k) << "\n{\n" << kernel_body(k) << "}\n\n";
        }
        os << "#endif /* " << guard << " */\n";
        out.kernels_source = os.str();
    }

    // ---- host file ----
    std::ostringstream os;
    os << "/* " << out.host_file << "\n"
       << " * OPS host program for the " << name << " stencil problem.\n"
       << " * Generated; do not edit.\n"
       << " */\n"
       << "#include <stdio.h>\n"
       << "#include <stdlib.h>\n"
       << "#include <math.h>\n\n"
       << "#define OPS_" << rank << "D\n"
       << "#include \"ops_seq.h\"\n"
       << "#include \"" << out.kernels_file << "\"\n\n";

    // Constants referenced from the kernels.
    os << "float " << grid.time_dim().spacing_symbol << ";\n";
    for (int d = 0; d < rank; ++d)
        os << "float " << grid.space_dims()[d].spacing_symbol << ";\n";
    os << "\n";

    // Source amplitude helper.
    if (problem.source) {
        os << "static float source_amplitude(int step)\n"
           << "{\n"
           << "  float tau = step * " << float_text(problem.dt) << " - "
           << float_text(1.0 / problem.source->frequency) << ";\n"
           << "  float a = " << float_text(3.14159265358979323846) << " * "
           << float_text(problem.source->frequency) << " * tau;\n"
           << "  a = a * a;\n"
           << "  return (1.0F - 2.0F * a) * expf(-a);\n"
           << "}\n\n";
    }

    os << "int main(int argc, const char **argv)\n{\n";
    os << "  ops_init(argc, argv, 1);\n\n";

    os << "  " << grid.time_dim().spacing_symbol << " = " << float_text(problem.dt)
       << ";\n";
    for (int d = 0; d < rank; ++d)
        os << "  " << grid.space_dims()[d].spacing_symbol << " = "
           << float_text(grid.spacing()[d]) << ";\n";
    os << "  ops_decl_const(\"" << grid.time_dim().spacing_symbol
       << "\", 1, \"float\", &" << grid.time_dim().spacing_symbol << ");\n";
    for (int d = 0; d < rank; ++d)
        os << "  ops_decl_const(\"" << grid.space_dims()[d].spacing_symbol
           << "\", 1, \"float\", &" << grid.space_dims()[d].spacing_symbol << ");\n";
    os << "\n";

    os << "  ops_block grid = ops_decl_block(" << rank << ", \"grid\");\n\n";

    std::size_t cells = problem.cell_count();
    os << "  int size[] = {";
    for (int d = 0; d < rank; ++d) os << (d ? ", " : "") << grid.shape()[d];
    os << "};\n"
       << "  int base[] = {";
    for (int d = 0; d < rank; ++d) os << (d ? ", " : "") << 0;
    os << "};\n"
       << "  int d_m[] = {";
    for (int d = 0; d < rank; ++d) os << (d ? ", " : "") << 0;
    os << "};\n"
       << "  int d_p[] = {";
    for (int d = 0; d < rank; ++d) os << (d ? ", " : "") << 0;
    os << "};\n"
       << "  size_t cells = " << cells << "u;\n\n";

    // Wave-field levels plus coefficient fields, zero-initialized.
    int levels = problem.time_order + 1;
    for (int l = 0; l < levels; ++l)
        os << "  float *u_" << l << "_data = (float *)calloc(cells, sizeof(float));\n";
    os << "  float *m_data = (float *)calloc(cells, sizeof(float));\n"
       << "  float *damp_data = (float *)calloc(cells, sizeof(float));\n";

    // Coefficient fills.
    bool uniform = true;
    for (float c : problem.velocity) uniform &= c == problem.velocity.front();
    if (uniform) {
        os << "  for (size_t i = 0; i < cells; ++i)\n"
           << "    m_data[i] = " << float_text(1.0 /
                  (static_cast<double>(problem.velocity.front()) *
                   static_cast<double>(problem.velocity.front())))
           << ";\n";
    } else {
        os << "  {\n"
           << "    FILE *f = fopen(\"" << name << "_m.f32\", \"rb\");\n"
           << "    if (!f || fread(m_data, sizeof(float), cells, f) != cells) {\n"
           << "      fprintf(stderr, \"cannot read " << name << "_m.f32\\n\");\n"
           << "      return 1;\n"
           << "    }\n"
           << "    fclose(f);\n"
           << "  }\n";
    }
    if (problem.damp_max > 0.0f && problem.damp_width > 0) {
        os << "  {\n";
        std::string idx;
        for (int d = 0; d < rank; ++d) {
            std::string v(1, static_cast<char>('i' + d));
            os << std::string(4 + 2 * d, ' ') << "for (int " << v << " = 0; " << v
               << " < " << grid.shape()[d] << "; ++" << v << ")\n";
        }
        os << std::string(4 + 2 * rank, ' ') << "{\n";
        os << std::string(6 + 2 * rank, ' ') << "int dist = " << grid.shape()[0]
           << ";\n";
        for (int d = 0; d < rank; ++d) {
            std::string v(1, static_cast<char>('i' + d));
            os << std::string(6 + 2 * rank, ' ') << "if (" << v << " < dist) dist = "
               << v << ";\n"
               << std::string(6 + 2 * rank, ' ') << "if (" << grid.shape()[d] - 1
               << " - " << v << " < dist) dist = " << grid.shape()[d] - 1 << " - " << v
               << ";\n";
        }
        std::string flat;
        for (int d = 0; d < rank; ++d) {
            std::string v(1, static_cast<char>('i' + d));
            flat = d == 0 ? v : "(" + flat + ") * " + std::to_string(grid.shape()[d]) +
                                    " + " + v;
        }
        os << std::string(6 + 2 * rank, ' ') << "if (dist < " << problem.damp_width
           << ")\n"
           << std::string(8 + 2 * rank, ' ') << "damp_data[" << flat << "] = "
           << float_text(problem.damp_max) << " * (1.0F - (float)dist / "
           << float_text(problem.damp_width) << ");\n";
        os << std::string(4 + 2 * rank, ' ') << "}\n";
        os << "  }\n";
    }
    os << "\n";

    for (int l = 0; l < levels; ++l)
        os << "  ops_dat u_" << l << " = ops_decl_dat(grid, 1, size, base, d_m, d_p, u_"
           << l << "_data, \"float\", \"u_" << l << "\");\n";
    os << "  ops_dat m = ops_decl_dat(grid, 1, size, base, d_m, d_p, m_data, \"float\", "
          "\"m\");\n"
       << "  ops_dat damp = ops_decl_dat(grid, 1, size, base, d_m, d_p, damp_data, "
          "\"float\", \"damp\");\n";
    os << "  ops_dat u_levels[] = {";
    for (int l = 0; l < levels; ++l) os << (l ? ", " : "") << "u_" << l;
    os << "};\n\n";

    // Stencil declarations.
    for (const auto& k : kernels) {
        for (const auto& a : k.ctx.args) {
            std::string sname = "s" + std::to_string(rank) + "d_" + k.name + "_" +
                                a.dat_name;
            os << "  int " << sname << "_pts[] = {";
            bool first = true;
            for (const auto& p : a.stencil_points)
                for (int o : p) {
                    os << (first ? "" : ", ") << o;
                    first = false;
                }
            os << "};\n";
            os << "  ops_stencil " << sname << " = ops_decl_stencil(" << rank << ", "
               << a.stencil_points.size() << ", " << sname << "_pts, \"" << sname
               << "\");\n";
        }
    }
    os << "\n  ops_partition(\"\");\n\n";

    // Iteration ranges (exclusive upper bounds).
    for (const auto& k : kernels) {
        os << "  int " << k.name << "_range[] = {";
        for (int d = 0; d < rank; ++d)
            os << (d ? ", " : "") << k.iteration_range[d].lo << ", "
               << k.iteration_range[d].hi + 1;
        os << "};\n";
    }
    os << "\n";

    os << "  for (int time = 0; time < " << problem.steps << "; time += 1)\n  {\n";
    if (problem.source)
        os << "    float src_amp = source_amplitude(time);\n";
    for (const auto& k : kernels) {
        os << "    ops_par_loop(" << k.name << ", \"" << k.name << "\", grid, " << rank
           << ", " << k.name << "_range";
        for (const auto& a : k.ctx.args) {
            std::string sname = "s" + std::to_string(rank) + "d_" + k.name + "_" +
                                a.dat_name;
            os << ",\n                 ops_arg_dat(";
            if (a.base_function->is_time_buffered())
                os << "u_levels[(time + "
                   << ((a.time_offset % levels) + levels) % levels << ") % " << levels
                   << "]";
            else
                os << a.base_function->name();
            os << ", 1, " << sname << ", \"float\", " << mode_text(a.mode) << ")";
        }
        for (const auto& s : k.ctx.scalar_params)
            os << ",\n                 ops_arg_gbl(&" << s.name
               << ", 1, \"float\", OPS_READ)";
        os << ");\n";
    }
    os << "  }\n\n";

    os << "  float *u_result = (float *)malloc(cells * sizeof(float));\n"
       << "  ops_dat_fetch_data(u_levels[" << problem.steps % levels
       << "], 0, (char *)u_result);\n"
       << "  float u_max = 0.0F;\n"
       << "  for (size_t i = 0; i < cells; ++i) {\n"
       << "    float a = fabsf(u_result[i]);\n"
       << "    if (a > u_max) u_max = a;\n"
       << "  }\n"
       << "  printf(\"max |u| = %g after " << problem.steps << " steps\\n\", u_max);\n"
       << "  free(u_result);\n\n";

    os << "  ops_end();\n"
       << "  return 0;\n"
       << "}\n";
    out.host_source = os.str();
    return out;
}

}  // namespace stencilc::opsgen
