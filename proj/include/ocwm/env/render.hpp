#pragma once

#include "ocwm/env/sim.hpp"

namespace ocwm::env {

// Deterministic rasterization at 4x supersampling: light-gray board, dark
// border, filled colored shapes, dark-gray effector disk. resolution must be
// one of {32, 64, 128}.
Frame render(const EnvState& s, int resolution);

// Board + border only (what render produces for a state with no blocks and
// the effector parked off-table).
Frame render_background(int resolution);

}  // namespace ocwm::env
