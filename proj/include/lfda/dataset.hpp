#pragma once

// Data model for longitudinal functional data: curves sampled on a common
// grid of the functional argument s, observed repeatedly per subject at
// sparse visit times t.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace lfda {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Trapezoid weights for a strictly increasing grid; they sum to the interval
/// length. Throws PreconditionError for fewer than two points.
Eigen::VectorXd quadrature_weights(const Eigen::VectorXd& points);

/// Ordered grid of the functional argument with its quadrature weights.
class GridSpec {
 public:
  GridSpec() = default;
  explicit GridSpec(Eigen::VectorXd points);

  static GridSpec equispaced(Eigen::Index size);

  const Eigen::VectorXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Eigen::Index size() const { return points_.size(); }
  double length() const { return points_(points_.size() - 1) - points_(0); }

  /// Quadrature of f sampled on the grid.
  double integrate(const Eigen::VectorXd& f) const { return weights_.dot(f); }
  /// Piecewise-linear interpolation of f sampled on the grid, constant beyond
  /// the end points.
  double interpolate(const Eigen::VectorXd& f, double x) const;

  bool operator==(const GridSpec& other) const { return points_ == other.points_; }

 private:
  Eigen::VectorXd points_;
  Eigen::VectorXd weights_;
};

struct Visit {
  double t = 0.0;
  Eigen::VectorXd values;
  Mask mask;  // true = observed

  static Visit observed(double t, Eigen::VectorXd values);
  bool fully_observed() const { return mask.all(); }
};

struct Subject {
  std::string id;
  std::vector<Visit> visits;  // sorted by t
};

/// Immutable, validated collection of subjects sharing one grid.
class LFDataset {
 public:
  LFDataset() = default;
  LFDataset(GridSpec grid, std::vector<Subject> subjects);

  const GridSpec& grid() const { return grid_; }
  const std::vector<Subject>& subjects() const { return subjects_; }
  std::size_t num_subjects() const { return subjects_.size(); }
  std::size_t total_visits() const;

  /// Throws PreconditionError for an unknown id.
  const Subject& subject(const std::string& id) const;
  const Subject* find(const std::string& id) const;

  /// Distinct visit times across all subjects.
  std::size_t distinct_times() const;

 private:
  GridSpec grid_;
  std::vector<Subject> subjects_;
};

struct HeldOutVisit {
  std::string subject_id;
  Visit visit;
};

struct TrainTestSplit {
  LFDataset train;
  std::vector<HeldOutVisit> test;
};

/// Mean curve on the data grid at visit time t.
using MeanCurveFn = std::function<Eigen::VectorXd(double t)>;

/// Residuals Y_ij(s_r) - mean(s_r, T_ij); masks are carried over unchanged and
/// masked cells are set to zero.
LFDataset demean(const LFDataset& data, const MeanCurveFn& mean);

/// Hold out the last visit of n_test randomly chosen subjects with at least two
/// visits. Deterministic given the seed.
TrainTestSplit split_last_visit(const LFDataset& data, std::size_t n_test, std::uint64_t seed);

/// Long-format CSV with header `subject,t,s,y`; an empty y is a missing cell.
LFDataset load_csv(const std::filesystem::path& path);
LFDataset read_csv(std::istream& in);
void write_csv(const LFDataset& data, const std::filesystem::path& path);
void write_csv(const LFDataset& data, std::ostream& out);

/// Shortest decimal representation that round-trips a double.
std::string format_double(double value);

}  // namespace lfda
