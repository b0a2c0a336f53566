#include "disagree/envs.hpp"

#include <cstdlib>
#include <stdexcept>

namespace disagree {

namespace {

EnvDescriptor table_descriptor(const EnvOptions& o) {
  if (o.table_size < 2 || o.orientations < 1 || o.gripper_modes < 1 || o.objects < 1) {
    throw std::invalid_argument("touch-table: sizes must be positive (table >= 2)");
  }
  if (o.objects > o.table_size * o.table_size) {
    throw std::invalid_argument("touch-table: more objects than cells");
  }
  return {"touch-table", o.gripper_modes * o.table_size * o.table_size,
          o.table_size * o.table_size * o.orientations * o.gripper_modes,
          o.horizon > 0 ? o.horizon : 1, o.seed};
}

}  // namespace

TouchTable::TouchTable(const EnvOptions& options)
    : Env(table_descriptor(options)),
      size_(options.table_size),
      orientations_(options.orientations),
      modes_(options.gripper_modes) {
  CounterRng layout(options.layout_seed, "layout");
  while (static_cast<int>(layout_.size()) < options.objects) {
    const int x = static_cast<int>(layout.uniform_int(static_cast<std::uint64_t>(size_)));
    const int y = static_cast<int>(layout.uniform_int(static_cast<std::uint64_t>(size_)));
    const int type = static_cast<int>(layout.uniform_int(static_cast<std::uint64_t>(modes_)));
    objects_ = layout_;
    if (!occupied(x, y)) layout_.push_back(Object{x, y, type});
  }
  objects_ = layout_;
}

TouchTable::DecodedAction TouchTable::decode(int action) const {
  DecodedAction d{};
  d.mode = action % modes_;
  action /= modes_;
  d.orientation = action % orientations_;
  const int cell = action / orientations_;
  d.x = cell % size_;
  d.y = cell / size_;
  return d;
}

int TouchTable::encode(int x, int y, int orientation, int mode) const {
  return ((y * size_ + x) * orientations_ + orientation) * modes_ + mode;
}

bool TouchTable::occupied(int x, int y) const {
  for (const Object& o : objects_) {
    if (o.x == x && o.y == y) return true;
  }
  return false;
}

Observation TouchTable::render() const {
  Observation obs = Observation::Zero(descriptor().d_obs);
  for (const Object& o : objects_) obs(o.type * size_ * size_ + o.y * size_ + o.x) = 1.0;
  return obs;
}

Observation TouchTable::sample_initial() {
  objects_ = layout_;
  return render();
}

Env::Outcome TouchTable::advance(int action) {
  const DecodedAction a = decode(action);
  Outcome out;
  for (Object& o : objects_) {
    if (std::abs(o.x - a.x) > 1 || std::abs(o.y - a.y) > 1 || o.type != a.mode) continue;
    int free_x[8], free_y[8];
    int n = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = o.x + dx, ny = o.y + dy;
        if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= size_ || ny >= size_) continue;
        if (occupied(nx, ny)) continue;
        free_x[n] = nx;
        free_y[n] = ny;
        ++n;
      }
    }
    if (n > 0) {
      const auto pick = static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(n)));
      o.x = free_x[pick];
      o.y = free_y[pick];
    }
    out.info.add(std::string(kTouchedObject));
    out.extrinsic = 1.0;
    break;
  }
  out.next_obs = render();
  return out;
}

}  // namespace disagree
