#pragma once

#include <optional>
#include <vector>

#include "stencilc/symbolic.hpp"

// Acoustic wave forward model: grid functions for the wave field, the
// squared-slowness coefficient and the absorbing-boundary mask, the damped
// wave equation, the point source and the stability bound.

namespace stencilc::exec {

struct SourceSpec {
    std::vector<int> point;       // grid coordinates
    std::vector<float> wavelet;   // amplitude per timestep
    double frequency = 0.0;       // Hz, informational once the series exists
};

struct WaveProblem {
    sym::GridPtr grid;
    int space_order = 2;
    int time_order = 2;
    float dt = 0.0f;
    int steps = 0;
    std::vector<float> velocity;  // grid-sized, m/s
    float damp_max = 0.0f;
    int damp_width = 10;
    std::optional<SourceSpec> source;

    // declared in this order: u, m, damp
    sym::FunctionPtr u;
    sym::FunctionPtr m;
    sym::FunctionPtr damp;

    std::size_t cell_count() const;
    std::vector<float> m_data() const;     // 1/velocity^2 per cell
    std::vector<float> damp_data() const;  // boundary taper mask
};

struct WaveProblemConfig {
    std::vector<int> shape;
    std::vector<double> spacing;
    int space_order = 8;
    int time_order = 2;
    double dt = 0.0;  // <= 0 selects the stability bound
    int steps = 100;
    double velocity = 1500.0;
    std::vector<float> velocity_field;  // overrides the constant when set
    double damp_max = 0.0;
    int damp_width = 10;
    bool with_source = true;
    std::vector<int> source_point;      // defaults to the grid center
    double source_frequency = 10.0;
    std::vector<float> source_wavelet;  // overrides the Ricker series when set
};

WaveProblem make_wave_problem(const WaveProblemConfig& config);

struct WaveEquations {
    std::vector<sym::Equation> equations;
    std::vector<sym::FunctionPtr> targets;
    std::vector<std::optional<std::vector<int>>> points;
};

// The damped propagation update plus, when a source is present, the point
// injection u[t+1] += amp * dt^2 / m with amp bound per step.
WaveEquations wave_equations(const WaveProblem& problem);

// Name of the per-step source amplitude symbol.
inline constexpr const char* kSourceAmpSymbol = "src_amp";

// Ricker pulse value at time tau relative to the peak.
double ricker_amplitude(double peak_frequency, double tau);

// Ricker series sampled at dt, shifted by 1/f so the first sample is close
// to zero; peak amplitude 1.
std::vector<float> ricker_wavelet(double peak_frequency, double dt, int steps);

// Largest stable dt: (min spacing / max velocity) / sqrt(rank) * 0.9,
// scaled for higher orders by the ratio of absolute-coefficient sums of
// the order-2 and order-so second-derivative stencils.
double cfl_dt(const WaveProblem& problem);

}  // namespace stencilc::exec
