#pragma once

#include "obsmhe/core.hpp"

#include <cstdint>
#include <vector>

namespace obsmhe {

/// Per-step record of one closed-loop run, indexed t = 0 .. t_sim.
///
/// `observer` is the parallel observer-only trajectory started at the same
/// initial guess as the estimator, so observer[0] is that initial guess.
struct SimTrace {
    std::vector<Vector> x;        // true states
    std::vector<Vector> u;        // inputs (empty vectors when m = 0)
    std::vector<Vector> w;        // process disturbances
    std::vector<Vector> v;        // measurement noise
    std::vector<Vector> y;        // measurements
    std::vector<Vector> xhat;     // published estimates
    std::vector<Vector> observer; // observer-only reference z_t
    std::vector<double> lyapunov; // V_o(xhat_t, x_t)
    std::vector<double> cost;     // J_t at the returned solution
    std::vector<double> candidate_cost;
    std::vector<int> horizon;     // M_t
    std::vector<std::uint8_t> fallback;

    // Per-step wall clock of the estimator, seconds. Not persisted.
    std::vector<double> step_seconds;

    std::size_t size() const { return x.size(); }
    bool empty() const { return x.empty(); }

    /// Throws TraceSchemaError naming the first field whose length differs from x.
    void validate() const;
};

}  // namespace obsmhe
