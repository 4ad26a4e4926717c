#include "stencilc/wave_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stencilc::exec {

std::size_t WaveProblem::cell_count() const {
    std::size_t n = 1;
    for (int s : grid->shape()) n *= static_cast<std::size_t>(s);
    return n;
}

std::vector<float> WaveProblem::m_data() const {
    std::vector<float> out(velocity.size());
    for (size_t i = 0; i < velocity.size(); ++i) {
        float c = velocity[i];
        out[i] = 1.0f / (c * c);
    }
    return out;
}

std::vector<float> WaveProblem::damp_data() const {
    const auto& shape = grid->shape();
    int rank = grid->rank();
    std::vector<float> out(cell_count(), 0.0f);
    if (damp_max <= 0.0f || damp_width <= 0) return out;

    std::vector<int> p(rank, 0);
    for (std::size_t idx = 0; idx < out.size(); ++idx) {
        int dist = INT32_MAX;
        for (int d = 0; d < rank; ++d)
            dist = std::min({dist, p[d], shape[d] - 1 - p[d]});
        if (dist < damp_width)
            out[idx] = damp_max *
                       (1.0f - static_cast<float>(dist) / static_cast<float>(damp_width));
        for (int d = rank - 1; d >= 0; --d) {
            if (++p[d] < shape[d]) break;
            p[d] = 0;
        }
    }
    return out;
}

WaveProblem make_wave_problem(const WaveProblemConfig& config) {
    WaveProblem p;
    p.grid = std::make_shared<sym::Grid>(config.shape, config.spacing);
    if (config.space_order < 2 || config.space_order % 2 != 0)
        throw std::invalid_argument("space_order must be an even integer >= 2");
    if (config.time_order != 2)
        throw std::invalid_argument("time_order must be 2 for the second-order wave model");
    if (config.steps < 1) throw std::invalid_argument("steps must be >= 1");
    p.space_order = config.space_order;
    p.time_order = config.time_order;
    p.steps = config.steps;
    p.damp_max = static_cast<float>(config.damp_max);
    p.damp_width = config.damp_width;
    if (p.damp_max < 0.0f) throw std::invalid_argument("damp_max must be nonnegative");

    std::size_t cells = 1;
    for (int s : config.shape) cells *= static_cast<std::size_t>(s);
    if (!config.velocity_field.empty()) {
        if (config.velocity_field.size() != cells)
            throw std::invalid_argument("velocity field size does not match the grid");
        p.velocity = config.velocity_field;
    } else {
        if (!(config.velocity > 0.0))
            throw std::invalid_argument("velocity must be positive");
        p.velocity.assign(cells, static_cast<float>(config.velocity));
    }
    for (float c : p.velocity)
        if (!(c > 0.0f) || !std::isfinite(c))
            throw std::invalid_argument("velocity must be positive and finite everywhere");

    p.u = std::make_shared<sym::GridFunction>("u", p.grid, p.space_order, p.time_order);
    p.m = std::make_shared<sym::GridFunction>("m", p.grid, 2);
    p.damp = std::make_shared<sym::GridFunction>("damp", p.grid, 2);

    p.dt = static_cast<float>(config.dt > 0.0 ? config.dt : cfl_dt(p));
    if (!(p.dt > 0.0f)) throw std::invalid_argument("dt must be positive");

    if (config.with_source) {
        SourceSpec src;
        src.point = config.source_point;
        if (src.point.empty())
            for (int s : config.shape) src.point.push_back(s / 2);
        if (static_cast<int>(src.point.size()) != p.grid->rank())
            throw std::invalid_argument("source point rank does not match the grid");
        int halo = p.u->halo();
        for (int d = 0; d < p.grid->rank(); ++d)
            if (src.point[d] < halo || src.point[d] > config.shape[d] - 1 - halo)
                throw std::invalid_argument("source point must lie in the updatable interior");
        src.frequency = config.source_frequency;
        src.wavelet = config.source_wavelet.empty()
                          ? ricker_wavelet(config.source_frequency, p.dt, p.steps)
                          : config.source_wavelet;
        if (static_cast<int>(src.wavelet.size()) < p.steps)
            throw std::invalid_argument("source wavelet shorter than the number of steps");
        p.source = std::move(src);
    }
    return p;
}

WaveEquations wave_equations(const WaveProblem& p) {
    using namespace sym;
    WaveEquations out;

    ExprPtr lhs = add({mul({at(p.m), dt2(p.u)}),
                       mul({at(p.damp), dt1(p.u)}),
                       neg(laplace(p.u))});
    out.equations.push_back(make_equation(lhs, number(0)));
    out.targets.push_back(p.u);
    out.points.push_back(std::nullopt);

    if (p.source) {
        ExprPtr amp = symbol(kSourceAmpSymbol, SymbolScope::step);
        ExprPtr dt_sym = symbol(p.grid->time_dim().spacing_symbol);
        ExprPtr inject = add({at(p.u, 1), mul({amp, pow(dt_sym, 2), pow(at(p.m), -1)})});
        out.equations.push_back(make_equation(at(p.u, 1), inject));
        out.targets.push_back(p.u);
        out.points.push_back(p.source->point);
    }
    return out;
}

double ricker_amplitude(double peak_frequency, double tau) {
    double a = std::numbers::pi * peak_frequency * tau;
    a *= a;
    return (1.0 - 2.0 * a) * std::exp(-a);
}

std::vector<float> ricker_wavelet(double peak_frequency, double dt, int steps) {
    if (!(peak_frequency > 0.0))
        throw std::invalid_argument("ricker peak frequency must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("ricker dt must be positive");
    std::vector<float> out(static_cast<size_t>(std::max(steps, 0)));
    double shift = 1.0 / peak_frequency;
    for (int i = 0; i < steps; ++i)
        out[static_cast<size_t>(i)] =
            static_cast<float>(ricker_amplitude(peak_frequency, i * dt - shift));
    return out;
}

double cfl_dt(const WaveProblem& p) {
    double min_h = *std::min_element(p.grid->spacing().begin(), p.grid->spacing().end());
    double max_c = *std::max_element(p.velocity.begin(), p.velocity.end());
    double base = (min_h / max_c) / std::sqrt(static_cast<double>(p.grid->rank())) * 0.9;
    double coeff_sum = 0.0;
    for (const auto& [offset, w] : sym::fd_coefficients(2, p.space_order))
        coeff_sum += std::abs(w.to_double());
    return base * (4.0 / coeff_sum);
}

}  // namespace stencilc::exec
