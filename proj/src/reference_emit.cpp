#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "stencilc/opsgen.hpp"

// Plain nested-loop C translation of the iteration tree, shaped like the
// interpreter's execution: padded arrays, rotating time levels, bounds
// symbols x_m/x_M with numeric defaults, and the point source folded to
// literal indices.

namespace stencilc::opsgen {

using pipeline::IetKind;
using pipeline::IetNode;
using pipeline::IetNodePtr;
using sym::Expr;
using sym::ExprKind;
using sym::ExprPtr;

namespace {

std::string fp32_text(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
    std::string s(buf);
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
        s += ".0";
    return s + "F";
}

struct RefEmitter {
    const exec::WaveProblem& problem;
    std::ostringstream os;
    int time_levels = 3;
    std::vector<std::string> dim_names;
    std::vector<bool> dim_pinned;  // extent-1 loop folded to a literal index
    std::vector<int> dim_value;    // pinned coordinate

    explicit RefEmitter(const exec::WaveProblem& p) : problem(p) {
        for (const auto& d : p.grid->space_dims()) dim_names.push_back(d.name);
        dim_pinned.assign(dim_names.size(), false);
        dim_value.assign(dim_names.size(), 0);
    }

    std::string time_label(int toff) const {
        int idx = ((toff % time_levels) + time_levels) % time_levels;
        return "t" + std::to_string(idx);
    }

    std::string access_text(const Expr& ix) const {
        std::ostringstream as;
        as << ix.function->name();
        if (ix.function->is_time_buffered()) as << "[" << time_label(ix.time_offset) << "]";
        int halo = ix.function->halo();
        for (size_t d = 0; d < ix.offsets.size(); ++d) {
            as << "[";
            if (dim_pinned[d]) {
                as << dim_value[d] + ix.offsets[d] + halo;
            } else {
                as << dim_names[d];
                int shift = ix.offsets[d] + halo;
                if (shift > 0) as << " + " << shift;
                if (shift < 0) as << " - " << -shift;
            }
            as << "]";
        }
        return as.str();
    }

    std::string symbol_text(const Expr& s) const {
        if (s.scope == sym::SymbolScope::step && s.name == exec::kSourceAmpSymbol)
            return "src[time]";
        return s.name;
    }

    std::string expr_text(const ExprPtr& e) const {
        return render_c_expr(
            e, [&](const Expr& ix) { return access_text(ix); },
            [&](const Expr& s) { return symbol_text(s); });
    }

    void indent(int depth) { os << std::string(static_cast<size_t>(depth) * 2, ' '); }

    void emit_bind(const pipeline::Binding& b, int depth, bool constant) {
        indent(depth);
        os << (constant ? "const float " : "float ") << b.temp->name << " = "
           << expr_text(b.value) << ";\n";
    }

    void emit_statements(const IetNodePtr& n, int depth) {
        switch (n->kind) {
            case IetKind::bind:
                emit_bind(n->binding, depth, false);
                return;
            case IetKind::space_loop: {
                int d = n->dim_index;
                if (n->range.lo == n->range.hi) {
                    dim_pinned[static_cast<size_t>(d)] = true;
                    dim_value[static_cast<size_t>(d)] = n->range.lo;
                    for (const auto& c : n->children) emit_statements(c, depth);
                    dim_pinned[static_cast<size_t>(d)] = false;
                    return;
                }
                const std::string& v = dim_names[static_cast<size_t>(d)];
                indent(depth);
                os << "for (int " << v << " = " << v << "_m; " << v << " <= " << v
                   << "_M; " << v << " += 1)\n";
                indent(depth);
                os << "{\n";
                for (const auto& c : n->children) emit_statements(c, depth + 1);
                indent(depth);
                os << "}\n";
                return;
            }
            case IetKind::exprs: {
                for (const auto& b : n->point_temps) emit_bind(b, depth, false);
                for (const auto& a : n->stores) {
                    indent(depth);
                    os << expr_text(a.target) << " = " << expr_text(a.update) << ";\n";
                }
                return;
            }
            default:
                throw std::invalid_argument("unexpected node inside the time loop");
        }
    }
};

}  // namespace

std::string emit_reference_c(const IetNodePtr& iet, const exec::WaveProblem& problem,
                             const std::string& name) {
    RefEmitter em(problem);
    const sym::Grid& grid = *problem.grid;
    int rank = grid.rank();

    const IetNode* time_loop = nullptr;
    std::vector<const IetNode*> globals;
    std::function<void(const IetNodePtr&)> find = [&](const IetNodePtr& n) {
        if (n->kind == IetKind::time_loop) { time_loop = n.get(); return; }
        if (n->kind == IetKind::bind) { globals.push_back(n.get()); return; }
        if (n->kind == IetKind::block)
            for (const auto& c : n->children) find(c);
    };
    find(iet);
    if (!time_loop) throw std::invalid_argument("tree has no time loop");
    em.time_levels = time_loop->time_levels;

    auto& os = em.os;
    os << "/* " << name << "_reference.c\n"
       << " * Plain C reference loop nest for the " << name << " stencil program.\n"
       << " * Generated; do not edit.\n"
       << " */\n\n";

    // Padded array extents per field.
    auto dim_of = [&](const sym::GridFunction& fn, int d) {
        return grid.shape()[d] + 2 * fn.halo();
    };
    auto cast_type = [&](const sym::GridFunction& fn, bool is_const) {
        std::ostringstream t;
        t << (is_const ? "const float (*" : "float (*") << fn.name() << ")";
        int first = fn.is_time_buffered() ? 0 : 1;
        for (int d = first; d < rank; ++d) t << "[" << dim_of(fn, d) << "]";
        return t.str();
    };

    os << "void " << name << "_reference(float *u_data, const float *m_data,\n"
       << "                " << std::string(name.size(), ' ')
       << "const float *damp_data, const float *src, int steps)\n"
       << "{\n";

    auto emit_cast = [&](const sym::GridFunction& fn, const char* data,
                         bool is_const) {
        os << "  " << cast_type(fn, is_const) << " =\n      (" ;
        os << (is_const ? "const float (*)" : "float (*)");
        int first = fn.is_time_buffered() ? 0 : 1;
        for (int d = first; d < rank; ++d) os << "[" << dim_of(fn, d) << "]";
        os << ")" << data << ";\n";
    };
    emit_cast(*problem.u, "u_data", false);
    emit_cast(*problem.m, "m_data", true);
    emit_cast(*problem.damp, "damp_data", true);
    if (!problem.source) os << "  (void)src;\n";
    os << "\n";

    os << "  const float " << grid.time_dim().spacing_symbol << " = "
       << fp32_text(problem.dt) << ";\n";
    for (int d = 0; d < rank; ++d)
        os << "  const float " << grid.space_dims()[d].spacing_symbol << " = "
           << fp32_text(grid.spacing()[d]) << ";\n";

    // Bounds symbols with numeric defaults, from the first non-point loop
    // nest in the tree.
    std::function<const IetNode*(const IetNode*)> first_loops =
        [&](const IetNode* n) -> const IetNode* {
        if (n->kind == IetKind::space_loop && n->range.lo != n->range.hi) return n;
        for (const auto& c : n->children)
            if (const IetNode* r = first_loops(c.get())) return r;
        return nullptr;
    };
    for (const auto& c : time_loop->children) {
        const IetNode* loop = first_loops(c.get());
        if (!loop) continue;
        const IetNode* node = loop;
        while (node && node->kind == IetKind::space_loop) {
            const std::string& v = em.dim_names[static_cast<size_t>(node->dim_index)];
            os << "  const int " << v << "_m = " << node->range.lo << ";\n"
               << "  const int " << v << "_M = " << node->range.hi << ";\n";
            const IetNode* next = nullptr;
            for (const auto& ch : node->children)
                if (ch->kind == IetKind::space_loop) next = ch.get();
            node = next;
        }
        break;
    }
    os << "\n";

    for (const auto* g : globals) em.emit_bind(g->binding, 1, true);
    if (!globals.empty()) os << "\n";

    os << "  for (int time = 0; time < steps; time += 1)\n  {\n";
    for (int l = 0; l < time_loop->time_levels; ++l) {
        os << "    const int t" << l << " = (time";
        if (l) os << " + " << l;
        os << ") % " << time_loop->time_levels << ";\n";
    }
    for (const auto& c : time_loop->children) em.emit_statements(c, 2);
    os << "  }\n}\n";
    return em.os.str();
}

}  // namespace stencilc::opsgen
