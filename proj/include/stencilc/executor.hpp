#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stencilc/pipeline.hpp"
#include "stencilc/wave_model.hpp"

// Reference interpreter for the iteration/expression tree: dense FP32
// fields with halo padding, explicit time stepping with modular buffer
// rotation, point-source injection and per-step statistics.  The hot path
// runs a compiled per-point program, optionally OpenMP-parallel over the
// outermost space dimension; a serial tree-walking evaluator is kept as an
// independent cross-check.

namespace stencilc::exec {

// Dense storage for one grid function: time levels x (shape + 2*halo per
// space dimension), C order, single precision.
class Field {
public:
    explicit Field(sym::FunctionPtr fn);

    const sym::FunctionPtr& function() const { return fn_; }
    int levels() const { return levels_; }
    int halo() const { return halo_; }
    const std::vector<int>& padded_shape() const { return padded_; }
    std::size_t cells_per_level() const { return cells_; }

    float* level_data(int level) { return data_.data() + cells_ * level; }
    const float* level_data(int level) const { return data_.data() + cells_ * level; }

    // Grid-coordinate access (coordinates exclude the halo shift).
    float& at(int level, std::span<const int> point);
    float at(int level, std::span<const int> point) const;

    // Flattened offset of a grid point inside one level.
    std::size_t cell_index(std::span<const int> point) const;
    const std::vector<std::size_t>& strides() const { return strides_; }

    std::vector<float> interior(int level) const;            // grid-sized copy
    void fill_interior(int level, std::span<const float> values);

    std::vector<float>& raw() { return data_; }
    const std::vector<float>& raw() const { return data_; }

private:
    sym::FunctionPtr fn_;
    int levels_;
    int halo_;
    std::vector<int> padded_;
    std::vector<std::size_t> strides_;
    std::size_t cells_;
    std::vector<float> data_;
};

class InstabilityError : public std::runtime_error {
public:
    InstabilityError(int step, const std::string& what)
        : std::runtime_error(what), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

struct RunOptions {
    int threads = 1;           // 1 serial, 0 all hardware threads
    bool check_bounds = false; // validate every access against the allocation
    // Initial wave-field levels (grid-sized interior data, one per level).
    std::optional<std::vector<std::vector<float>>> initial_u;
    // Called after each completed step with the newest level index.
    std::function<void(int step, const Field& u, int newest_level)> on_step;
};

struct RunResult {
    Field u;
    std::vector<float> step_max_abs;  // per step, over the newest level interior
    double wall_seconds = 0.0;
    std::uint64_t point_updates = 0;
    int final_level = 0;
};

// Execute the tree over the problem's fields.
RunResult run(const pipeline::IetNodePtr& iet, const WaveProblem& problem,
              const RunOptions& options = {});

// Serial tree-walking interpretation of the same tree; bit-identical to
// run() with threads == 1 and kept as the testing reference.
RunResult reference_run(const pipeline::IetNodePtr& iet, const WaveProblem& problem,
                        const RunOptions& options = {});

// Interior snapshot: flat little-endian FP32 in C order plus a text
// sidecar carrying shape, spacing and step.
void write_snapshot(const std::string& directory, const std::string& stem, int step,
                    const Field& field, int level, const WaveProblem& problem);

}  // namespace stencilc::exec
