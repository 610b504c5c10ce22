#include "milsurv/bootstrap.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "milsurv/errors.hpp"
#include "milsurv/rng.hpp"

namespace milsurv::survstats {

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw PreconditionError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

enum class Outcome { Ok, Degenerate, Failed };

struct Slot {
  Outcome outcome = Outcome::Failed;
  double value = 0.0;
  std::exception_ptr error;
};

Slot run_resample(const MetricFn& fn, const SurvivalDataset& ds, std::uint64_t seed, int r) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  std::vector<std::size_t> idx(ds.size());
  for (auto& i : idx) i = pick(rng);
  Slot s;
  try {
    s.value = fn(ds.subset(idx));
    s.outcome = std::isfinite(s.value) ? Outcome::Ok : Outcome::Degenerate;
  } catch (const EstimationError&) {
    s.outcome = Outcome::Degenerate;
  } catch (const ConvergenceError&) {
    s.outcome = Outcome::Degenerate;
  } catch (...) {
    s.error = std::current_exception();
  }
  return s;
}

}  // namespace

MetricReport bootstrap_ci(const std::string& metric, const MetricFn& fn, const SurvivalDataset& ds,
                          const BootstrapOptions& options) {
  if (options.n_resamples < 1) throw PreconditionError("bootstrap needs at least one resample");
  if (!(options.level > 0.0 && options.level < 1.0)) throw PreconditionError("confidence level must be in (0, 1)");
  if (ds.size() == 0) throw PreconditionError("bootstrap of an empty dataset");
  ds.validate();

  MetricReport rep;
  rep.metric = metric;
  rep.estimate = fn(ds);
  rep.n_boot = options.n_resamples;
  rep.horizon_years = options.horizon_years;
  rep.seed = options.seed;
  rep.level = options.level;

  std::vector<Slot> slots(static_cast<std::size_t>(options.n_resamples));
  const int threads = std::clamp(options.threads, 1, options.n_resamples);
  if (threads == 1) {
    for (int r = 0; r < options.n_resamples; ++r) slots[static_cast<std::size_t>(r)] = run_resample(fn, ds, options.seed, r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (int r = next++; r < options.n_resamples; r = next++)
          slots[static_cast<std::size_t>(r)] = run_resample(fn, ds, options.seed, r);
      });
    for (auto& t : pool) t.join();
  }

  for (const auto& s : slots) {
    if (s.error) std::rethrow_exception(s.error);
    if (s.outcome == Outcome::Ok)
      rep.replicates.push_back(s.value);
    else
      ++rep.n_degenerate;
  }
  if (2 * rep.n_degenerate > options.n_resamples)
    throw ReliabilityError(metric + ": " + std::to_string(rep.n_degenerate) + " of " +
                           std::to_string(options.n_resamples) + " bootstrap resamples were degenerate");
  const double alpha = (1.0 - options.level) / 2.0;
  rep.ci_low = quantile(rep.replicates, alpha);
  rep.ci_high = quantile(rep.replicates, 1.0 - alpha);
  return rep;
}

}  // namespace milsurv::survstats
