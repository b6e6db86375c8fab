#include "lfda/inference.hpp"

#include "lfda/error.hpp"
#include "lfda/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <thread>

namespace lfda {

namespace {

// Runs f(b, rng) for b = 0..B-1 on a worker pool; replicate b always sees the
// stream seeded by replicate_seed(seed, b).
template <typename T, typename F>
std::vector<std::optional<T>> replicate(int B, std::uint64_t seed, int threads, F f) {
  std::vector<std::optional<T>> out(B);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int b = next++; b < B; b = next++) {
      std::mt19937_64 rng(replicate_seed(seed, b));
      try {
        out[b] = f(rng);
      } catch (const Error&) {
        out[b].reset();
      }
    }
  };
  const int workers = std::min(resolve_threads(threads), B);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return out;
}

int check_drops(int dropped, int B) {
  if (20 * dropped > B)
    throw NumericalError(std::to_string(dropped) + " of " + std::to_string(B) + " bootstrap refits failed");
  return dropped;
}

// Type-7 sample quantile of sorted values.
double quantile(const std::vector<double>& sorted, double p) {
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

double slope_statistic(const VaryingCoefficientMean& mean) { return mean.grid.integrate(mean.beta_t.cwiseAbs2()); }

double slope_statistic(const LFDataset& data, int d_s) {
  return slope_statistic(fit_varying_coefficient_mean(data, d_s).varying_coefficient());
}

LFDataset resample_subjects(const LFDataset& data, std::mt19937_64& rng) {
  const auto& subjects = data.subjects();
  if (subjects.empty()) throw PreconditionError("cannot resample an empty data set");
  std::uniform_int_distribution<std::size_t> pick(0, subjects.size() - 1);
  std::vector<Subject> drawn;
  drawn.reserve(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    Subject s = subjects[pick(rng)];
    s.id += "#" + std::to_string(i);
    drawn.push_back(std::move(s));
  }
  return LFDataset(data.grid(), std::move(drawn));
}

SlopeTestResult bootstrap_slope_test(const LFDataset& data, int B, std::uint64_t seed, int threads, int d_s) {
  if (B < 1) throw PreconditionError("B must be at least 1");
  const MeanSurface fit = fit_varying_coefficient_mean(data, d_s);
  const VaryingCoefficientMean& vc = fit.varying_coefficient();

  std::vector<Subject> null_subjects = data.subjects();
  for (auto& s : null_subjects)
    for (auto& v : s.visits) v.values = v.mask.select(v.values - v.t * vc.beta_t, v.values);
  const LFDataset null_data(data.grid(), std::move(null_subjects));

  SlopeTestResult out;
  out.q_obs = slope_statistic(vc);
  const auto q = replicate<double>(B, seed, threads, [&](std::mt19937_64& rng) {
    return slope_statistic(resample_subjects(null_data, rng), d_s);
  });
  int exceed = 0;
  for (const auto& v : q) {
    if (!v) {
      ++out.dropped;
      continue;
    }
    out.q_null.push_back(*v);
    exceed += *v > out.q_obs;
  }
  check_drops(out.dropped, B);
  out.B = static_cast<int>(out.q_null.size());
  out.p_value = static_cast<double>(exceed) / static_cast<double>(out.B);
  return out;
}

PointwiseBand bootstrap_slope_band(const LFDataset& data, int B, double level, std::uint64_t seed, int threads,
                                   int d_s) {
  if (B < 20) throw PreconditionError("B must be at least 20 for a band");
  if (!(level > 0.0 && level < 1.0)) throw PreconditionError("level must lie in (0, 1)");
  PointwiseBand band;
  band.grid = data.grid();
  band.level = level;
  band.estimate = fit_varying_coefficient_mean(data, d_s).varying_coefficient().beta_t;

  const auto slopes = replicate<Eigen::VectorXd>(B, seed, threads, [&](std::mt19937_64& rng) {
    return fit_varying_coefficient_mean(resample_subjects(data, rng), d_s).varying_coefficient().beta_t;
  });
  std::vector<const Eigen::VectorXd*> ok;
  for (const auto& s : slopes) {
    if (s)
      ok.push_back(&*s);
    else
      ++band.dropped;
  }
  check_drops(band.dropped, B);
  band.B = static_cast<int>(ok.size());

  const Eigen::Index R = band.grid.size();
  band.lower.resize(R);
  band.upper.resize(R);
  std::vector<double> column(ok.size());
  for (Eigen::Index r = 0; r < R; ++r) {
    for (std::size_t b = 0; b < ok.size(); ++b) column[b] = (*ok[b])(r);
    std::sort(column.begin(), column.end());
    band.lower(r) = quantile(column, 0.5 * (1.0 - level));
    band.upper(r) = quantile(column, 0.5 * (1.0 + level));
  }
  return band;
}

}  // namespace lfda
