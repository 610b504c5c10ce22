#pragma once

// Finite-difference gradient checking shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "milsurv/cohort.hpp"
#include "milsurv/model.hpp"
#include "milsurv/objective.hpp"
#include "milsurv/rng.hpp"

namespace milsurv::testing {

// A random batch that owns its tile matrices and clinical vectors.
struct OwnedBatch {
  std::vector<model::TileMatrix> tiles;
  std::vector<cohort::Standardized> clinical;
  model::Batch batch;
};

inline OwnedBatch random_batch(const model::Architecture& arch, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_int_distribution<int> n_tiles(1, 5);
  OwnedBatch b;
  b.tiles.resize(n);
  b.clinical.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (model::needs_image(arch.modality)) {
      b.tiles[i].resize(n_tiles(rng), arch.input_dim);
      for (Eigen::Index k = 0; k < b.tiles[i].size(); ++k) b.tiles[i].data()[k] = z(rng);
    }
    for (auto& v : b.clinical[i]) v = z(rng);
  }
  std::uniform_real_distribution<double> t(0.1, 10.0);
  std::bernoulli_distribution e(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    model::ModelInput in;
    if (model::needs_image(arch.modality)) in.tiles = &b.tiles[i];
    if (model::needs_clinical(arch.modality)) in.clinical = &b.clinical[i];
    b.batch.inputs.push_back(in);
    b.batch.outcomes.push_back({t(rng), e(rng)});
  }
  b.batch.outcomes[0].event = true;
  return b;
}

// Fan-in scaled uniform draws, widened so that units are not all saturated
// or silent.
inline model::RiskModel random_model(const model::Architecture& arch, std::uint64_t seed, double widen = 2.0) {
  auto m = model::RiskModel::initialize(arch, seed);
  auto& p = m.parameters();
  for (std::size_t k = 0; k < p.numel(); ++k) p.flat(k) *= widen;
  return m;
}

inline double batch_loss(const model::RiskModel& m, const model::Batch& b) {
  std::vector<double> s;
  for (const auto& in : b.inputs) s.push_back(m.predict(in));
  return model::cox_loss(s, b.outcomes);
}

struct GradCheckStats {
  std::size_t checked = 0;
  std::size_t failed = 0;
  // Coordinates whose h-step difference disagreed but whose h/100 difference
  // matched: a rectifier kink lay inside [theta - h, theta + h].
  std::size_t kinks = 0;
  double max_rel = 0.0;  // over passing coordinates
  double worst_rel = 0.0;  // over failing coordinates
  std::string worst;
};

inline double rel_error(double a, double n) {
  const double d = std::abs(a - n);
  const double scale = std::max(std::abs(a), std::abs(n));
  return scale == 0.0 ? 0.0 : d / scale;
}

// Compares analytic gradients with central differences on `per_tensor`
// random coordinates of every tensor. A coordinate passes when the relative
// error is <= rel_tol or the absolute error is <= abs_floor (gradients that
// are zero up to rounding).
inline void check_gradients(model::RiskModel m, const model::Batch& batch, std::uint64_t seed,
                            std::size_t per_tensor, GradCheckStats& stats, double h = 1e-4, double rel_tol = 1e-4,
                            double abs_floor = 1e-9) {
  const auto analytic = model::gradients(m, batch).grads;
  Rng rng(seed);
  std::size_t offset = 0;
  auto& p = m.parameters();
  for (std::size_t t = 0; t < p.size(); ++t) {
    const std::size_t len = static_cast<std::size_t>(p[t].size());
    std::uniform_int_distribution<std::size_t> pick(0, len - 1);
    for (std::size_t r = 0; r < std::min(per_tensor, len); ++r) {
      const std::size_t k = offset + pick(rng);
      const double a = analytic.flat(k);
      auto fd = [&](double step) {
        const double orig = p.flat(k);
        p.flat(k) = orig + step;
        const double up = batch_loss(m, batch);
        p.flat(k) = orig - step;
        const double down = batch_loss(m, batch);
        p.flat(k) = orig;
        return (up - down) / (2 * step);
      };
      const double n = fd(h);
      double err = rel_error(a, n);
      bool ok = err <= rel_tol || std::abs(a - n) <= abs_floor;
      if (!ok) {
        const double fine = fd(h / 100);
        if (rel_error(a, fine) <= rel_tol || std::abs(a - fine) <= abs_floor) {
          ++stats.kinks;
          ok = true;
          err = rel_error(a, fine);
        }
      }
      ++stats.checked;
      if (!ok) {
        ++stats.failed;
        if (err >= stats.worst_rel) {
          stats.worst_rel = err;
          stats.worst = p.describe(k) + " analytic " + std::to_string(a) + " fd " + std::to_string(n);
        }
      } else if (std::abs(a - n) > abs_floor) {
        stats.max_rel = std::max(stats.max_rel, err);
      }
    }
    offset += len;
  }
}

}  // namespace milsurv::testing
