#include "disagree/envs.hpp"

#include <algorithm>
#include <stdexcept>

namespace disagree {

namespace {

EnvDescriptor grid_descriptor(const EnvOptions& o) {
  if (o.grid_size < 2) throw std::invalid_argument("noisy-tv-grid: grid_size must be >= 2");
  return {"noisy-tv-grid", o.grid_size * o.grid_size + NoisyTvGrid::kTvDim, 5,
          o.horizon > 0 ? o.horizon : 128, o.seed};
}

}  // namespace

NoisyTvGrid::NoisyTvGrid(const EnvOptions& options)
    : Env(grid_descriptor(options)),
      size_(options.grid_size),
      has_tv_(options.tv),
      fixed_start_(options.fixed_start) {}

void NoisyTvGrid::set_position(int row, int col) {
  if (row < 0 || row >= size_ || col < 0 || col >= size_) {
    throw std::out_of_range("noisy-tv-grid: position outside the grid");
  }
  row_ = row;
  col_ = col;
}

Observation NoisyTvGrid::render() {
  Observation x = Observation::Zero(descriptor().d_obs);
  x(row_ * size_ + col_) = 1.0;
  if (tv_on_) {
    for (int j = 0; j < kTvDim; ++j) x(size_ * size_ + j) = rng_.uniform();
  }
  return x;
}

Observation NoisyTvGrid::sample_initial() {
  tv_on_ = false;
  if (fixed_start_) {
    row_ = 0;
    col_ = 0;
  } else {
    // Uniform over every cell except the goal.
    const int cell = static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(size_ * size_ - 1)));
    row_ = cell / size_;
    col_ = cell % size_;
  }
  return render();
}

Env::Outcome NoisyTvGrid::advance(int action) {
  switch (action) {
    case kUp: row_ = std::max(0, row_ - 1); break;
    case kDown: row_ = std::min(size_ - 1, row_ + 1); break;
    case kLeft: col_ = std::max(0, col_ - 1); break;
    case kRight: col_ = std::min(size_ - 1, col_ + 1); break;
    case kToggle:
      if (has_tv_) tv_on_ = !tv_on_;
      break;
  }
  Outcome out;
  out.terminal = row_ == goal_row() && col_ == goal_col();
  out.extrinsic = out.terminal ? 1.0 : 0.0;
  if (tv_on_) out.info.add("tv-on");
  out.next_obs = render();
  return out;
}

}  // namespace disagree
