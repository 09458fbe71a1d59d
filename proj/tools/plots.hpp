#pragma once

#include <string>

#include "pegring/executor/executor.hpp"

namespace pegring::plots {

/// Top-down view of both gripper paths over the pegs and the starting rings, with
/// gripper height against time underneath.
std::string trajectory_svg(const executor::Trajectory& tr, const world::SceneState& initial);

/// One lane per arm, one bar per executed action; failed actions are outlined red
/// and every plan start is a dashed vertical line.
std::string gantt_svg(const executor::RunReport& report);

}  // namespace pegring::plots
