#include "ocwm/env/sim.hpp"

#include <algorithm>
#include <cmath>

#include "ocwm/env/render.hpp"
#include "ocwm/util/rng.hpp"

namespace ocwm::env {

const char* to_string(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::blue: return "blue";
    case Color::green: return "green";
    case Color::yellow: return "yellow";
  }
  return "?";
}

const char* to_string(Shape s) {
  switch (s) {
    case Shape::moon: return "moon";
    case Shape::cube: return "cube";
    case Shape::star: return "star";
    case Shape::pentagon: return "pentagon";
  }
  return "?";
}

Color color_from_string(const std::string& s) {
  for (Color c : {Color::red, Color::blue, Color::green, Color::yellow})
    if (s == to_string(c)) return c;
  throw FormatError("unknown color: " + s);
}

Shape shape_from_string(const std::string& s) {
  for (Shape sh : {Shape::moon, Shape::cube, Shape::star, Shape::pentagon})
    if (s == to_string(sh)) return sh;
  throw FormatError("unknown shape: " + s);
}

namespace {

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double dist(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

}  // namespace

EnvState reset(const EnvConfig& cfg, std::uint64_t seed) {
  if (cfg.blocks < 2 || cfg.blocks > static_cast<int>(cfg.combos.size()))
    throw ConfigError("reset: blocks must be in [2, " + std::to_string(cfg.combos.size()) + "]");
  const double r = cfg.radius_block;
  const double min_sep = 2.5 * r;
  util::Rng rng(seed);

  EnvState s;
  s.rng_seed = seed;
  bool placed = false;
  for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
    s.blocks.clear();
    for (int i = 0; i < cfg.blocks; ++i) {
      BlockSpec b;
      b.color = cfg.combos[i].first;
      b.shape = cfg.combos[i].second;
      b.radius = r;
      b.x = rng.uniform(r, 1.0 - r);
      b.y = rng.uniform(r, 1.0 - r);
      s.blocks.push_back(b);
    }
    placed = true;
    for (int i = 0; i < cfg.blocks && placed; ++i)
      for (int j = i + 1; j < cfg.blocks; ++j)
        if (dist(s.blocks[i].x, s.blocks[i].y, s.blocks[j].x, s.blocks[j].y) < min_sep) {
          placed = false;
          break;
        }
  }
  if (!placed)
    throw ConfigError("reset: block placement failed after 1000 attempts (radius " +
                      std::to_string(r) + " too large for the table)");

  const double re = cfg.radius_effector;
  bool eff_ok = false;
  for (int attempt = 0; attempt < 1000 && !eff_ok; ++attempt) {
    s.effector.radius = re;
    s.effector.x = rng.uniform(re, 1.0 - re);
    s.effector.y = rng.uniform(re, 1.0 - re);
    eff_ok = true;
    for (const BlockSpec& b : s.blocks)
      if (dist(b.x, b.y, s.effector.x, s.effector.y) < b.radius + re) {
        eff_ok = false;
        break;
      }
  }
  if (!eff_ok) throw ConfigError("reset: effector placement failed after 1000 attempts");

  s.source_idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.blocks)));
  int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.blocks - 1)));
  s.target_idx = t >= s.source_idx ? t + 1 : t;
  s.step_count = 0;
  return s;
}

EnvState step(const EnvState& s, Action a, const EnvConfig& cfg) {
  EnvState n = s;
  double dx = clampd(a.dx, -cfg.a_max, cfg.a_max);
  double dy = clampd(a.dy, -cfg.a_max, cfg.a_max);
  const double re = n.effector.radius;
  n.effector.x = clampd(n.effector.x + dx, re, 1.0 - re);
  n.effector.y = clampd(n.effector.y + dy, re, 1.0 - re);

  for (BlockSpec& b : n.blocks) {
    double contact = b.radius + re;
    double d = dist(b.x, b.y, n.effector.x, n.effector.y);
    if (d >= contact) continue;
    double ux, uy;
    if (d > 1e-12) {
      ux = (b.x - n.effector.x) / d;
      uy = (b.y - n.effector.y) / d;
    } else {
      // degenerate: effector exactly on the block center; push along the
      // motion direction, or +x when the action was zero
      double m = std::hypot(dx, dy);
      ux = m > 1e-12 ? dx / m : 1.0;
      uy = m > 1e-12 ? dy / m : 0.0;
    }
    b.x = clampd(n.effector.x + ux * contact, b.radius, 1.0 - b.radius);
    b.y = clampd(n.effector.y + uy * contact, b.radius, 1.0 - b.radius);
  }
  n.step_count = s.step_count + 1;
  return n;
}

double goal_distance(const EnvState& s) {
  const BlockSpec& a = s.blocks[s.source_idx];
  const BlockSpec& b = s.blocks[s.target_idx];
  return std::max(0.0, dist(a.x, a.y, b.x, b.y) - a.radius - b.radius);
}

std::array<double, 2> expert_staging_point(const EnvState& s, const EnvConfig& cfg) {
  const BlockSpec& src = s.blocks[s.source_idx];
  const BlockSpec& tgt = s.blocks[s.target_idx];
  double vx = src.x - tgt.x, vy = src.y - tgt.y;
  double d = std::hypot(vx, vy);
  if (d < 1e-12) {
    vx = 1.0;
    vy = 0.0;
    d = 1.0;
  }
  double off = src.radius + cfg.radius_effector;
  double px = src.x + vx / d * off;
  double py = src.y + vy / d * off;
  const double re = cfg.radius_effector;
  return {clampd(px, re, 1.0 - re), clampd(py, re, 1.0 - re)};
}

Action expert_action(const EnvState& s, const EnvConfig& cfg) {
  const BlockSpec& src = s.blocks[s.source_idx];
  const BlockSpec& tgt = s.blocks[s.target_idx];
  auto staging = expert_staging_point(s, cfg);
  double ex = s.effector.x, ey = s.effector.y;
  double to_px = staging[0] - ex, to_py = staging[1] - ey;
  double pd = std::hypot(to_px, to_py);
  const double contact_tol = 0.02;

  Action a;
  if (pd > contact_tol) {
    // phase 1: approach the staging point, detouring around the source block
    // when the direct ray would plow it off course
    double dirx = to_px / pd, diry = to_py / pd;
    double relx = ex - src.x, rely = ey - src.y;
    double rd = std::hypot(relx, rely);
    double avoid = src.radius + cfg.radius_effector + 0.01;
    bool heading_in = dirx * (src.x - ex) + diry * (src.y - ey) > 0.0;
    if (rd < avoid + cfg.a_max && heading_in && pd > avoid) {
      // slide tangentially, choosing the turn direction that shortens the path
      double tx = -rely / std::max(rd, 1e-12), ty = relx / std::max(rd, 1e-12);
      if (tx * to_px + ty * to_py < 0.0) {
        tx = -tx;
        ty = -ty;
      }
      dirx = tx;
      diry = ty;
      pd = cfg.a_max * 2;  // keep full speed while orbiting
    }
    double speed = std::min(pd, cfg.a_max);
    a.dx = dirx * speed;
    a.dy = diry * speed;
  } else {
    // phase 2: push along source -> target at max speed
    double vx = tgt.x - src.x, vy = tgt.y - src.y;
    double d = std::hypot(vx, vy);
    if (d < 1e-12) {
      vx = 1.0;
      vy = 0.0;
      d = 1.0;
    }
    a.dx = cfg.a_max * vx / d;
    a.dy = cfg.a_max * vy / d;
  }

  if (cfg.expert_noise) {
    util::Rng noise(s.rng_seed ^ 0x5bf03635u);
    util::Rng stepr = noise.fork(static_cast<std::uint64_t>(s.step_count));
    double m = cfg.expert_noise_scale * cfg.a_max;
    a.dx += stepr.uniform(-m, m);
    a.dy += stepr.uniform(-m, m);
  }
  a.dx = clampd(a.dx, -cfg.a_max, cfg.a_max);
  a.dy = clampd(a.dy, -cfg.a_max, cfg.a_max);
  return a;
}

std::string make_instruction(const EnvState& s, std::uint64_t seed) {
  util::Rng rng(seed ^ 0x9d2c5680u);
  int tmpl = static_cast<int>(rng.below(2));
  auto ref = [&](const BlockSpec& b) -> std::string {
    switch (rng.below(3)) {
      case 0: return std::string(to_string(b.color)) + " " + to_string(b.shape);
      case 1: return std::string(to_string(b.color)) + " block";
      default: return to_string(b.shape);
    }
  };
  std::string src = ref(s.blocks[s.source_idx]);
  std::string tgt = ref(s.blocks[s.target_idx]);
  if (tmpl == 0) return "move the " + src + " to the " + tgt;
  return "put the " + src + " next to the " + tgt;
}

Episode generate_episode(const EnvConfig& cfg, std::uint64_t seed) {
  const int max_frames = cfg.max_expert_steps;  // frame budget incl. the reset frame
  for (int attempt = 0; attempt < 50; ++attempt) {
    std::uint64_t sub_seed = seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(attempt);
    EnvState st = reset(cfg, sub_seed);
    Episode ep;
    ep.seed = sub_seed;
    ep.resolution = cfg.resolution;
    ep.instruction = make_instruction(st, sub_seed);
    ep.states.push_back(st);
    bool success = goal_distance(st) <= 0.05;
    while (!success && static_cast<int>(ep.states.size()) < max_frames) {
      Action a = expert_action(st, cfg);
      st = step(st, a, cfg);
      ep.actions.push_back(a);
      ep.states.push_back(st);
      success = goal_distance(st) <= 0.05;
    }
    if (!success || static_cast<int>(ep.states.size()) < cfg.min_episode_length) continue;
    ep.frames.reserve(ep.states.size());
    for (const EnvState& x : ep.states) ep.frames.push_back(render(x, cfg.resolution));
    return ep;
  }
  throw ConfigError("generate_episode: 50 consecutive rejections for seed " +
                    std::to_string(seed));
}

}  // namespace ocwm::env
