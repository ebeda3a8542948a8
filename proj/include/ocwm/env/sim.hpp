#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ocwm/util/errors.hpp"

namespace ocwm::env {

enum class Color { red, blue, green, yellow };
enum class Shape { moon, cube, star, pentagon };

const char* to_string(Color c);
const char* to_string(Shape s);
Color color_from_string(const std::string& s);
Shape shape_from_string(const std::string& s);

struct BlockSpec {
  Color color = Color::red;
  Shape shape = Shape::moon;
  double x = 0, y = 0;
  double radius = 0;
};

struct Effector {
  double x = 0, y = 0;
  double radius = 0;
};

struct Action {
  double dx = 0, dy = 0;
};

// The table is the unit square; every radius/distance below is in table units.
struct EnvConfig {
  int blocks = 4;
  double radius_block = 0.06;
  double radius_effector = 0.03;
  double a_max = 0.03;
  int resolution = 64;
  int min_episode_length = 16;   // frames
  int max_expert_steps = 120;    // frame budget for the scripted expert
  bool expert_noise = true;
  double expert_noise_scale = 0.2;  // fraction of a_max
  // color-shape pairing; the harness swaps entries for unseen-blocks runs
  std::vector<std::pair<Color, Shape>> combos = {
      {Color::red, Shape::moon},
      {Color::blue, Shape::cube},
      {Color::green, Shape::star},
      {Color::yellow, Shape::pentagon},
  };
};

struct EnvState {
  std::vector<BlockSpec> blocks;
  Effector effector;
  int source_idx = 0;
  int target_idx = 1;
  int step_count = 0;
  std::uint64_t rng_seed = 0;
};

using Frame = std::vector<float>;  // C x H x W, row-major, values in [0,1]

struct Episode {
  std::vector<Frame> frames;
  std::vector<Action> actions;
  std::vector<EnvState> states;
  std::string instruction;
  std::uint64_t seed = 0;
  int resolution = 0;
};

// Blocks placed by rejection sampling (pairwise center distance >= 2.5 r);
// throws ConfigError after 1000 failed attempts.
EnvState reset(const EnvConfig& cfg, std::uint64_t seed);

// Kinematic step: clamp action, move + clamp effector, push any penetrated
// block out along the effector->block direction until tangent. Blocks do not
// interact with each other.
EnvState step(const EnvState& s, Action a, const EnvConfig& cfg);

// Surface gap between source and target, floored at zero.
double goal_distance(const EnvState& s);

// Two-phase script: approach the staging point behind the source, then push
// along source->target. Pure in (state, cfg): noise derives from
// (state.rng_seed, state.step_count).
Action expert_action(const EnvState& s, const EnvConfig& cfg);

// Staging point the expert steers to (exposed for tests).
std::array<double, 2> expert_staging_point(const EnvState& s, const EnvConfig& cfg);

std::string make_instruction(const EnvState& s, std::uint64_t seed);

// Expert rollout with rejection (success within the frame budget, minimum
// length); throws after 50 consecutive rejections.
Episode generate_episode(const EnvConfig& cfg, std::uint64_t seed);

}  // namespace ocwm::env
