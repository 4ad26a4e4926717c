#include "stencilc/executor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#ifdef STENCILC_HAVE_OPENMP
#include <omp.h>
#endif

namespace stencilc::exec {

using pipeline::Assignment;
using pipeline::Binding;
using pipeline::Bounds;
using pipeline::IetKind;
using pipeline::IetNodePtr;
using sym::Expr;
using sym::ExprKind;
using sym::ExprPtr;

// --- Field -------------------------------------------------------------------

Field::Field(sym::FunctionPtr fn)
    : fn_(std::move(fn)), levels_(fn_->time_levels() > 0 ? fn_->time_levels() : 1),
      halo_(fn_->halo()) {
    if (!fn_->is_time_buffered()) levels_ = 1;
    const auto& shape = fn_->grid()->shape();
    for (int s : shape) padded_.push_back(s + 2 * halo_);
    strides_.assign(padded_.size(), 1);
    for (int d = static_cast<int>(padded_.size()) - 2; d >= 0; --d)
        strides_[d] = strides_[d + 1] * static_cast<std::size_t>(padded_[d + 1]);
    cells_ = strides_[0] * static_cast<std::size_t>(padded_[0]);
    data_.assign(cells_ * static_cast<std::size_t>(levels_), 0.0f);
}

std::size_t Field::cell_index(std::span<const int> point) const {
    std::size_t idx = 0;
    for (size_t d = 0; d < point.size(); ++d)
        idx += static_cast<std::size_t>(point[d] + halo_) * strides_[d];
    return idx;
}

float& Field::at(int level, std::span<const int> point) {
    return data_[cells_ * static_cast<std::size_t>(level) + cell_index(point)];
}

float Field::at(int level, std::span<const int> point) const {
    return data_[cells_ * static_cast<std::size_t>(level) + cell_index(point)];
}

std::vector<float> Field::interior(int level) const {
    const auto& shape = fn_->grid()->shape();
    int rank = fn_->grid()->rank();
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    std::vector<float> out(n);
    std::vector<int> p(rank, 0);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = at(level, p);
        for (int d = rank - 1; d >= 0; --d) {
            if (++p[d] < shape[d]) break;
            p[d] = 0;
        }
    }
    return out;
}

void Field::fill_interior(int level, std::span<const float> values) {
    const auto& shape = fn_->grid()->shape();
    int rank = fn_->grid()->rank();
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    if (values.size() != n)
        throw std::invalid_argument("interior data size does not match the grid");
    std::vector<int> p(rank, 0);
    for (std::size_t i = 0; i < n; ++i) {
        at(level, p) = values[i];
        for (int d = rank - 1; d >= 0; --d) {
            if (++p[d] < shape[d]) break;
            p[d] = 0;
        }
    }
}

// --- compiled programs ---------------------------------------------------------

namespace {

enum class Op : std::uint8_t {
    imm, sym, load, add, sub, mul, div, neg, store_temp, store_field
};

struct Instr {
    Op op;
    int a = -1;
    int b = -1;
    double imm = 0.0;
    int slot = -1;     // symbol/temp slot
    int chan = -1;     // load/store channel
    std::ptrdiff_t delta = 0;
    int access = -1;   // offsets table entry for bounds checking
};

struct Access {
    int field = -1;
    int toff = 0;
    std::vector<int> offsets;
};

using Program = std::vector<Instr>;

struct Channel {
    int field = -1;
    int toff = 0;
    float* ptr = nullptr;  // resolved level base, updated every step
};

struct CompiledLoop {
    int dim = 0;
    Bounds range;
    std::vector<Program> binds;
};

struct CompiledCluster {
    std::vector<CompiledLoop> loops;
    Program point;
    std::uint64_t points_per_step = 1;
};

// Rounded the same way emitted source rounds literals.
double rounded_const(const Rational& r) {
    return static_cast<double>(static_cast<float>(r.to_double()));
}

class Engine {
public:
    Engine(const IetNodePtr& iet, const WaveProblem& problem, const RunOptions& options)
        : problem_(problem), options_(options) {
        collect_fields(iet);
        bind_symbols();
        compile_tree(iet);
        prepare_data();
    }

    RunResult execute();

private:
    // -- setup --

    void collect_fields(const IetNodePtr& n) {
        std::function<void(const ExprPtr&)> walk_expr = [&](const ExprPtr& e) {
            if (e->kind == ExprKind::indexed) {
                if (field_slot_.find(e->function->id()) == field_slot_.end()) {
                    field_slot_[e->function->id()] = static_cast<int>(fields_.size());
                    fields_.emplace_back(e->function);
                }
            }
            for (const auto& c : e->children) walk_expr(c);
        };
        std::function<void(const IetNodePtr&)> walk = [&](const IetNodePtr& node) {
            if (node->kind == IetKind::bind) walk_expr(node->binding.value);
            if (node->kind == IetKind::exprs) {
                for (const auto& b : node->point_temps) walk_expr(b.value);
                for (const auto& a : node->stores) {
                    walk_expr(a.target);
                    walk_expr(a.update);
                }
            }
            for (const auto& c : node->children) walk(c);
        };
        iet_root_ = n;
        walk(n);
    }

    int symbol_slot(const std::string& name) {
        auto it = sym_slot_.find(name);
        if (it != sym_slot_.end()) return it->second;
        int slot = static_cast<int>(env_.size());
        sym_slot_[name] = slot;
        env_.push_back(0.0);
        return slot;
    }

    void bind_symbols() {
        const auto& grid = *problem_.grid;
        env_value(grid.time_dim().spacing_symbol, problem_.dt);
        for (int d = 0; d < grid.rank(); ++d)
            env_value(grid.space_dims()[d].spacing_symbol,
                      static_cast<float>(grid.spacing()[d]));
    }

    void env_value(const std::string& name, float value) {
        env_[static_cast<size_t>(symbol_slot(name))] = static_cast<double>(value);
    }

    int channel(int field, int toff) {
        for (size_t i = 0; i < channels_.size(); ++i)
            if (channels_[i].field == field && channels_[i].toff == toff)
                return static_cast<int>(i);
        channels_.push_back(Channel{field, toff, nullptr});
        return static_cast<int>(channels_.size()) - 1;
    }

    // -- expression compilation (evaluation order shared with the emitters) --

    int emit(Program& prog, Instr instr) {
        prog.push_back(instr);
        return static_cast<int>(prog.size()) - 1;
    }

    int compile_expr(const ExprPtr& e, Program& prog) {
        switch (e->kind) {
            case ExprKind::number:
                return emit(prog, {.op = Op::imm, .imm = rounded_const(e->value)});
            case ExprKind::symbol: {
                if (e->symbol_dim)
                    throw std::invalid_argument("dimension-scoped symbol " + e->name +
                                                " is not executable");
                return emit(prog, {.op = Op::sym, .slot = symbol_slot(e->name)});
            }
            case ExprKind::indexed: {
                int field = field_slot_.at(e->function->id());
                std::ptrdiff_t delta = 0;
                for (size_t d = 0; d < e->offsets.size(); ++d)
                    delta += static_cast<std::ptrdiff_t>(e->offsets[d]) *
                             static_cast<std::ptrdiff_t>(fields_[field].strides()[d]);
                int access = -1;
                if (options_.check_bounds) {
                    accesses_.push_back(Access{field, e->time_offset, e->offsets});
                    access = static_cast<int>(accesses_.size()) - 1;
                }
                return emit(prog, {.op = Op::load,
                                   .chan = channel(field, e->time_offset),
                                   .delta = delta,
                                   .access = access});
            }
            case ExprKind::derivative:
                throw std::logic_error("tree contains an unexpanded derivative");
            case ExprKind::add: {
                auto terms = sym::add_terms(e);
                int reg = compile_expr(terms[0].term, prog);
                if (terms[0].negative) reg = emit(prog, {.op = Op::neg, .a = reg});
                for (size_t i = 1; i < terms.size(); ++i) {
                    int t = compile_expr(terms[i].term, prog);
                    reg = emit(prog, {.op = terms[i].negative ? Op::sub : Op::add,
                                      .a = reg, .b = t});
                }
                return reg;
            }
            case ExprKind::mul:
            case ExprKind::pow: {
                sym::MulParts parts = sym::mul_parts(e);
                bool negate = parts.coeff.is_negative();
                Rational coeff = parts.coeff.abs();
                int reg = -1;
                if (!coeff.is_one() || parts.numerator.empty())
                    reg = emit(prog, {.op = Op::imm, .imm = rounded_const(coeff)});
                for (const auto& [base, exp] : parts.numerator) {
                    int b = compile_expr(base, prog);
                    for (int k = 0; k < exp; ++k)
                        reg = reg < 0 && k == 0
                                  ? b
                                  : emit(prog, {.op = Op::mul, .a = reg, .b = b});
                }
                if (!parts.denominator.empty()) {
                    int den = -1;
                    for (const auto& [base, exp] : parts.denominator) {
                        int b = compile_expr(base, prog);
                        for (int k = 0; k < exp; ++k)
                            den = den < 0 && k == 0
                                      ? b
                                      : emit(prog, {.op = Op::mul, .a = den, .b = b});
                    }
                    reg = emit(prog, {.op = Op::div, .a = reg, .b = den});
                }
                if (negate) reg = emit(prog, {.op = Op::neg, .a = reg});
                return reg;
            }
        }
        throw std::logic_error("unreachable expression kind");
    }

    Program compile_binding(const Binding& b) {
        Program prog;
        int reg = compile_expr(b.value, prog);
        emit(prog, {.op = Op::store_temp, .a = reg, .slot = symbol_slot(b.temp->name)});
        return prog;
    }

    void compile_tree(const IetNodePtr& root) {
        auto handle_cluster = [&](const IetNodePtr& loop_root) {
            CompiledCluster cc;
            IetNodePtr node = loop_root;
            while (node->kind == IetKind::space_loop) {
                CompiledLoop lvl;
                lvl.dim = node->dim_index;
                lvl.range = node->range;
                cc.points_per_step *=
                    static_cast<std::uint64_t>(node->range.hi - node->range.lo + 1);
                IetNodePtr next;
                for (const auto& c : node->children) {
                    if (c->kind == IetKind::bind)
                        lvl.binds.push_back(compile_binding(c->binding));
                    else
                        next = c;
                }
                cc.loops.push_back(std::move(lvl));
                if (!next) throw std::logic_error("space loop without a body");
                node = next;
            }
            if (node->kind != IetKind::exprs)
                throw std::invalid_argument("tree is not executable (kernel call sites?)");
            for (const auto& b : node->point_temps) {
                Program p = compile_binding(b);
                cc.point.insert(cc.point.end(), p.begin(), p.end());
                reindex_tail(cc.point, p.size());
            }
            for (const auto& a : node->stores) {
                Program p;
                int reg = compile_expr(a.update, p);
                const ExprPtr& t = a.target;
                int field = field_slot_.at(t->function->id());
                std::ptrdiff_t delta = 0;
                for (size_t d = 0; d < t->offsets.size(); ++d)
                    delta += static_cast<std::ptrdiff_t>(t->offsets[d]) *
                             static_cast<std::ptrdiff_t>(fields_[field].strides()[d]);
                int access = -1;
                if (options_.check_bounds) {
                    accesses_.push_back(Access{field, t->time_offset, t->offsets});
                    access = static_cast<int>(accesses_.size()) - 1;
                }
                emit(p, {.op = Op::store_field, .a = reg,
                         .chan = channel(field, t->time_offset),
                         .delta = delta, .access = access});
                cc.point.insert(cc.point.end(), p.begin(), p.end());
                reindex_tail(cc.point, p.size());
            }
            clusters_.push_back(std::move(cc));
        };

        std::function<void(const IetNodePtr&)> walk_top = [&](const IetNodePtr& n) {
            switch (n->kind) {
                case IetKind::block:
                    for (const auto& c : n->children) walk_top(c);
                    return;
                case IetKind::bind:
                    global_binds_.push_back(compile_binding(n->binding));
                    return;
                case IetKind::time_loop:
                    time_steps_ = n->time_steps;
                    time_levels_ = n->time_levels;
                    for (const auto& c : n->children) {
                        if (c->kind == IetKind::bind)
                            step_binds_.push_back(compile_binding(c->binding));
                        else
                            handle_cluster(c);
                    }
                    return;
                default:
                    throw std::invalid_argument("unexpected node at tree top level");
            }
        };
        walk_top(root);
        if (time_steps_ <= 0) throw std::invalid_argument("tree has no time loop");
    }

    // Register operands inside an appended subprogram must shift by its
    // start position; programs are compiled standalone then concatenated.
    void reindex_tail(Program& prog, size_t tail_len) {
        size_t start = prog.size() - tail_len;
        int shift = static_cast<int>(start);
        for (size_t i = start; i < prog.size(); ++i) {
            if (prog[i].a >= 0) prog[i].a += shift;
            if (prog[i].b >= 0) prog[i].b += shift;
        }
    }

    void prepare_data() {
        for (auto& f : fields_) {
            const auto* fn = f.function().get();
            if (fn == problem_.u.get()) {
                if (options_.initial_u) {
                    const auto& init = *options_.initial_u;
                    if (static_cast<int>(init.size()) > f.levels())
                        throw std::invalid_argument("more initial levels than storage levels");
                    for (size_t l = 0; l < init.size(); ++l)
                        f.fill_interior(static_cast<int>(l), init[l]);
                }
            } else if (fn == problem_.m.get()) {
                f.fill_interior(0, problem_.m_data());
            } else if (fn == problem_.damp.get()) {
                f.fill_interior(0, problem_.damp_data());
            } else {
                throw std::invalid_argument("tree references function '" + fn->name() +
                                            "' unknown to the problem");
            }
        }
    }

    // -- execution --

    void resolve_channels(int step) {
        for (auto& ch : channels_) {
            Field& f = fields_[static_cast<size_t>(ch.field)];
            int level = 0;
            if (f.levels() > 1)
                level = ((step + ch.toff) % f.levels() + f.levels()) % f.levels();
            ch.ptr = f.level_data(level);
        }
    }

    void check_access(const Instr& ins, std::span<const int> point, int step) const {
        const Access& acc = accesses_[static_cast<size_t>(ins.access)];
        const Field& f = fields_[static_cast<size_t>(acc.field)];
        for (size_t d = 0; d < point.size(); ++d) {
            int idx = point[d] + acc.offsets[d] + f.halo();
            if (idx < 0 || idx >= f.padded_shape()[d])
                throw std::out_of_range(
                    "access to " + f.function()->name() + " leaves the allocation in " +
                    f.function()->grid()->space_dims()[d].name + " at step " +
                    std::to_string(step));
        }
    }

    void run_program(const Program& prog, std::vector<double>& regs,
                     std::vector<double>& env, const std::vector<std::size_t>& cell_base,
                     std::span<const int> point, int step) const {
        if (regs.size() < prog.size()) regs.resize(prog.size());
        for (size_t i = 0; i < prog.size(); ++i) {
            const Instr& ins = prog[i];
            switch (ins.op) {
                case Op::imm: regs[i] = ins.imm; break;
                case Op::sym: regs[i] = env[static_cast<size_t>(ins.slot)]; break;
                case Op::load: {
                    const Channel& ch = channels_[static_cast<size_t>(ins.chan)];
                    if (ins.access >= 0) check_access(ins, point, step);
                    regs[i] = static_cast<double>(
                        ch.ptr[static_cast<std::ptrdiff_t>(
                                   cell_base[static_cast<size_t>(ch.field)]) +
                               ins.delta]);
                    break;
                }
                case Op::add: regs[i] = regs[ins.a] + regs[ins.b]; break;
                case Op::sub: regs[i] = regs[ins.a] - regs[ins.b]; break;
                case Op::mul: regs[i] = regs[ins.a] * regs[ins.b]; break;
                case Op::div: regs[i] = regs[ins.a] / regs[ins.b]; break;
                case Op::neg: regs[i] = -regs[ins.a]; break;
                case Op::store_temp:
                    env[static_cast<size_t>(ins.slot)] = regs[ins.a];
                    regs[i] = regs[ins.a];
                    break;
                case Op::store_field: {
                    const Channel& ch = channels_[static_cast<size_t>(ins.chan)];
                    if (ins.access >= 0) check_access(ins, point, step);
                    ch.ptr[static_cast<std::ptrdiff_t>(
                               cell_base[static_cast<size_t>(ch.field)]) +
                           ins.delta] = static_cast<float>(regs[ins.a]);
                    regs[i] = regs[ins.a];
                    break;
                }
            }
        }
    }

    void cell_bases(std::span<const int> point, std::vector<std::size_t>& out) const {
        for (size_t f = 0; f < fields_.size(); ++f)
            out[f] = fields_[f].cell_index(point);
    }

    void run_cluster(const CompiledCluster& cc, int step, int nthreads) {
        const int rank = static_cast<int>(cc.loops.size());
        const auto& l0 = cc.loops[0];
        (void)nthreads;
#ifdef STENCILC_HAVE_OPENMP
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
#endif
        for (int x = l0.range.lo; x <= l0.range.hi; ++x) {
            std::vector<double> env = env_;
            std::vector<double> regs;
            std::vector<int> point(static_cast<size_t>(rank), 0);
            std::vector<std::size_t> bases(fields_.size(), 0);
            point[0] = x;

            auto descend = [&](auto&& self, int depth) -> void {
                for (const auto& bp : cc.loops[static_cast<size_t>(depth)].binds) {
                    cell_bases(point, bases);
                    run_program(bp, regs, env, bases, point, step);
                }
                if (depth + 1 == rank) {
                    cell_bases(point, bases);
                    run_program(cc.point, regs, env, bases, point, step);
                    return;
                }
                const auto& next = cc.loops[static_cast<size_t>(depth + 1)];
                for (int v = next.range.lo; v <= next.range.hi; ++v) {
                    point[static_cast<size_t>(depth + 1)] = v;
                    self(self, depth + 1);
                }
            };
            descend(descend, 0);
        }
    }

    const WaveProblem& problem_;
    const RunOptions& options_;
    IetNodePtr iet_root_;

    std::vector<Field> fields_;
    std::unordered_map<std::uint64_t, int> field_slot_;
    std::unordered_map<std::string, int> sym_slot_;
    std::vector<double> env_;
    std::vector<Channel> channels_;
    std::vector<Access> accesses_;
    std::vector<Program> global_binds_;
    std::vector<Program> step_binds_;
    std::vector<CompiledCluster> clusters_;
    int time_steps_ = 0;
    int time_levels_ = 0;
};

float max_abs_interior(const Field& f, int level) {
    const auto& shape = f.function()->grid()->shape();
    int rank = f.function()->grid()->rank();
    std::vector<int> p(rank, 0);
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    float best = 0.0f;
    bool finite = true;
    for (std::size_t i = 0; i < n; ++i) {
        float v = f.at(level, p);
        if (!std::isfinite(v)) finite = false;
        best = std::max(best, std::abs(v));
        for (int d = rank - 1; d >= 0; --d) {
            if (++p[d] < shape[d]) break;
            p[d] = 0;
        }
    }
    return finite ? best : std::numeric_limits<float>::quiet_NaN();
}

RunResult Engine::execute() {
    int nthreads = options_.threads;
#ifdef STENCILC_HAVE_OPENMP
    if (nthreads == 0) nthreads = omp_get_max_threads();
#else
    nthreads = 1;
#endif
    if (options_.check_bounds) nthreads = 1;  // diagnostics stay single-threaded

    int u_slot = -1;
    for (size_t f = 0; f < fields_.size(); ++f)
        if (fields_[f].function().get() == problem_.u.get()) u_slot = static_cast<int>(f);
    if (u_slot < 0) throw std::invalid_argument("tree never touches the wave field");

    std::vector<float> step_max_abs;
    std::uint64_t point_updates = 0;

    std::vector<double> regs;
    std::vector<std::size_t> bases(fields_.size(), 0);
    std::vector<int> origin(problem_.grid->rank(), 0);

    auto t0 = std::chrono::steady_clock::now();
    resolve_channels(0);
    for (const auto& p : global_binds_) run_program(p, regs, env_, bases, origin, -1);

    int amp_slot = sym_slot_.contains(kSourceAmpSymbol)
                       ? sym_slot_.at(kSourceAmpSymbol)
                       : -1;
    if (amp_slot >= 0 && !problem_.source)
        throw std::invalid_argument("tree needs a source wavelet, problem has none");

    for (int step = 0; step < time_steps_; ++step) {
        resolve_channels(step);
        if (amp_slot >= 0)
            env_[static_cast<size_t>(amp_slot)] =
                static_cast<double>(problem_.source->wavelet[static_cast<size_t>(step)]);
        for (const auto& p : step_binds_) run_program(p, regs, env_, bases, origin, step);
        for (const auto& cc : clusters_) {
            run_cluster(cc, step, nthreads);
            point_updates += cc.points_per_step;
        }

        int newest = (step + 1) % time_levels_;
        float peak = max_abs_interior(fields_[static_cast<size_t>(u_slot)], newest);
        if (!std::isfinite(peak))
            throw InstabilityError(step, "non-finite wave field at step " +
                                             std::to_string(step) +
                                             " (unstable dt?)");
        step_max_abs.push_back(peak);
        if (options_.on_step)
            options_.on_step(step, fields_[static_cast<size_t>(u_slot)], newest);
    }
    auto t1 = std::chrono::steady_clock::now();

    RunResult result{std::move(fields_[static_cast<size_t>(u_slot)])};
    result.step_max_abs = std::move(step_max_abs);
    result.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    result.point_updates = point_updates;
    result.final_level = time_steps_ % time_levels_;
    return result;
}

}  // namespace

RunResult run(const IetNodePtr& iet, const WaveProblem& problem, const RunOptions& options) {
    Engine engine(iet, problem, options);
    return engine.execute();
}

// --- serial tree-walking reference -------------------------------------------

namespace {

struct RefState {
    const WaveProblem& problem;
    std::vector<Field> fields;
    std::unordered_map<const sym::GridFunction*, int> slot;
    std::unordered_map<std::string, double> env;
    int step = 0;
    int levels = 3;

    Field& field_of(const sym::GridFunction* fn) {
        return fields[static_cast<size_t>(slot.at(fn))];
    }

    int level_for(const Field& f, int toff) const {
        if (f.levels() == 1) return 0;
        return ((step + toff) % f.levels() + f.levels()) % f.levels();
    }
};

// Mirrors the compiled evaluation order exactly: canonical term order,
// single division per product, constants rounded through FP32.
double ref_eval(const ExprPtr& e, RefState& st, std::span<const int> point) {
    switch (e->kind) {
        case ExprKind::number:
            return rounded_const(e->value);
        case ExprKind::symbol:
            return st.env.at(e->name);
        case ExprKind::indexed: {
            Field& f = st.field_of(e->function.get());
            std::vector<int> p(point.begin(), point.end());
            for (size_t d = 0; d < e->offsets.size(); ++d) p[d] += e->offsets[d];
            return static_cast<double>(f.at(st.level_for(f, e->time_offset), p));
        }
        case ExprKind::derivative:
            throw std::logic_error("reference evaluation of unexpanded derivative");
        case ExprKind::add: {
            auto terms = sym::add_terms(e);
            double acc = ref_eval(terms[0].term, st, point);
            if (terms[0].negative) acc = -acc;
            for (size_t i = 1; i < terms.size(); ++i) {
                double v = ref_eval(terms[i].term, st, point);
                acc = terms[i].negative ? acc - v : acc + v;
            }
            return acc;
        }
        case ExprKind::mul:
        case ExprKind::pow: {
            sym::MulParts parts = sym::mul_parts(e);
            bool negate = parts.coeff.is_negative();
            Rational coeff = parts.coeff.abs();
            double acc = 0.0;
            bool have = false;
            if (!coeff.is_one() || parts.numerator.empty()) {
                acc = rounded_const(coeff);
                have = true;
            }
            for (const auto& [base, exp] : parts.numerator) {
                double b = ref_eval(base, st, point);
                for (int k = 0; k < exp; ++k) {
                    acc = have ? acc * b : b;
                    have = true;
                }
            }
            if (!parts.denominator.empty()) {
                double den = 0.0;
                bool dhave = false;
                for (const auto& [base, exp] : parts.denominator) {
                    double b = ref_eval(base, st, point);
                    for (int k = 0; k < exp; ++k) {
                        den = dhave ? den * b : b;
                        dhave = true;
                    }
                }
                acc /= den;
            }
            return negate ? -acc : acc;
        }
    }
    throw std::logic_error("unreachable expression kind");
}

void ref_statements(const IetNodePtr& node, RefState& st, std::vector<int>& point) {
    switch (node->kind) {
        case IetKind::bind:
            st.env[node->binding.temp->name] = ref_eval(node->binding.value, st, point);
            return;
        case IetKind::space_loop: {
            for (int v = node->range.lo; v <= node->range.hi; ++v) {
                point[static_cast<size_t>(node->dim_index)] = v;
                for (const auto& c : node->children) ref_statements(c, st, point);
            }
            return;
        }
        case IetKind::exprs: {
            for (const auto& b : node->point_temps)
                st.env[b.temp->name] = ref_eval(b.value, st, point);
            for (const auto& a : node->stores) {
                double v = ref_eval(a.update, st, point);
                Field& f = st.field_of(a.target->function.get());
                std::vector<int> p(point.begin(), point.end());
                for (size_t d = 0; d < a.target->offsets.size(); ++d)
                    p[d] += a.target->offsets[d];
                f.at(st.level_for(f, a.target->time_offset), p) = static_cast<float>(v);
            }
            return;
        }
        default:
            throw std::invalid_argument("unexpected node inside the time loop");
    }
}

}  // namespace

RunResult reference_run(const IetNodePtr& iet, const WaveProblem& problem,
                        const RunOptions& options) {
    RefState st{problem};

    std::function<void(const ExprPtr&)> discover_expr = [&](const ExprPtr& e) {
        if (e->kind == ExprKind::indexed && !st.slot.contains(e->function.get())) {
            st.slot[e->function.get()] = static_cast<int>(st.fields.size());
            st.fields.emplace_back(e->function);
        }
        for (const auto& c : e->children) discover_expr(c);
    };
    std::function<void(const IetNodePtr&)> discover = [&](const IetNodePtr& n) {
        if (n->kind == IetKind::bind) discover_expr(n->binding.value);
        if (n->kind == IetKind::exprs) {
            for (const auto& b : n->point_temps) discover_expr(b.value);
            for (const auto& a : n->stores) {
                discover_expr(a.target);
                discover_expr(a.update);
            }
        }
        for (const auto& c : n->children) discover(c);
    };
    discover(iet);

    for (auto& f : st.fields) {
        const auto* fn = f.function().get();
        if (fn == problem.u.get()) {
            if (options.initial_u)
                for (size_t l = 0; l < options.initial_u->size(); ++l)
                    f.fill_interior(static_cast<int>(l), (*options.initial_u)[l]);
        } else if (fn == problem.m.get()) {
            f.fill_interior(0, problem.m_data());
        } else if (fn == problem.damp.get()) {
            f.fill_interior(0, problem.damp_data());
        }
    }

    st.env[problem.grid->time_dim().spacing_symbol] =
        static_cast<double>(problem.dt);
    for (int d = 0; d < problem.grid->rank(); ++d)
        st.env[problem.grid->space_dims()[d].spacing_symbol] =
            static_cast<double>(static_cast<float>(problem.grid->spacing()[d]));

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
    st.levels = time_loop->time_levels;

    RunResult result{Field(problem.u)};
    std::vector<int> point(problem.grid->rank(), 0);
    auto t0 = std::chrono::steady_clock::now();

    for (const auto* g : globals)
        st.env[g->binding.temp->name] = ref_eval(g->binding.value, st, point);

    for (int step = 0; step < time_loop->time_steps; ++step) {
        st.step = step;
        if (problem.source)
            st.env[kSourceAmpSymbol] = static_cast<double>(
                problem.source->wavelet[static_cast<size_t>(step)]);
        for (const auto& c : time_loop->children) ref_statements(c, st, point);

        Field& u = st.field_of(problem.u.get());
        int newest = (step + 1) % time_loop->time_levels;
        float peak = max_abs_interior(u, newest);
        if (!std::isfinite(peak))
            throw InstabilityError(step, "non-finite wave field at step " +
                                             std::to_string(step) + " (unstable dt?)");
        result.step_max_abs.push_back(peak);
        if (options.on_step) options.on_step(step, u, newest);
    }
    auto t1 = std::chrono::steady_clock::now();
    result.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    result.final_level = time_loop->time_steps % time_loop->time_levels;
    result.u = std::move(st.field_of(problem.u.get()));
    return result;
}

void write_snapshot(const std::string& directory, const std::string& stem, int step,
                    const Field& field, int level, const WaveProblem& problem) {
    namespace fs = std::filesystem;
    fs::create_directories(directory);
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "_%06d", step);
    fs::path base = fs::path(directory) / (stem + suffix);

    std::vector<float> data = field.interior(level);
    std::ofstream bin(base.string() + ".f32", std::ios::binary);
    bin.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));

    std::ofstream meta(base.string() + ".meta");
    meta << "shape=";
    const auto& shape = problem.grid->shape();
    for (size_t d = 0; d < shape.size(); ++d) meta << (d ? "," : "") << shape[d];
    meta << "\nspacing=";
    for (size_t d = 0; d < shape.size(); ++d)
        meta << (d ? "," : "") << problem.grid->spacing()[d];
    meta << "\nstep=" << step << "\n";
}

}  // namespace stencilc::exec
