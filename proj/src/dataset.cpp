#include "lfda/dataset.hpp"

#include "lfda/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace lfda {

Eigen::VectorXd quadrature_weights(const Eigen::VectorXd& points) {
  const Eigen::Index R = points.size();
  if (R < 2) throw PreconditionError("quadrature needs at least two grid points");
  Eigen::VectorXd w(R);
  w(0) = 0.5 * (points(1) - points(0));
  w(R - 1) = 0.5 * (points(R - 1) - points(R - 2));
  for (Eigen::Index r = 1; r + 1 < R; ++r) w(r) = 0.5 * (points(r + 1) - points(r - 1));
  return w;
}

GridSpec::GridSpec(Eigen::VectorXd points) : points_(std::move(points)) {
  for (Eigen::Index r = 0; r < points_.size(); ++r) {
    if (!(points_(r) >= 0.0 && points_(r) <= 1.0))
      throw DomainError("grid point " + format_double(points_(r)) + " outside [0,1]");
    if (r > 0 && !(points_(r) > points_(r - 1)))
      throw SchemaError("grid points must be strictly increasing");
  }
  weights_ = quadrature_weights(points_);
}

GridSpec GridSpec::equispaced(Eigen::Index size) {
  return GridSpec(Eigen::VectorXd::LinSpaced(size, 0.0, 1.0));
}

double GridSpec::interpolate(const Eigen::VectorXd& f, double x) const {
  if (f.size() != points_.size()) throw PreconditionError("curve length does not match the grid");
  const Eigen::Index R = points_.size();
  if (x <= points_(0)) return f(0);
  if (x >= points_(R - 1)) return f(R - 1);
  const auto it = std::upper_bound(points_.data(), points_.data() + R, x);
  const Eigen::Index r = it - points_.data();
  const double u = (x - points_(r - 1)) / (points_(r) - points_(r - 1));
  return (1.0 - u) * f(r - 1) + u * f(r);
}

Visit Visit::observed(double t, Eigen::VectorXd values) {
  Visit v;
  v.t = t;
  v.mask = Mask::Constant(values.size(), true);
  v.values = std::move(values);
  return v;
}

LFDataset::LFDataset(GridSpec grid, std::vector<Subject> subjects)
    : grid_(std::move(grid)), subjects_(std::move(subjects)) {
  std::set<std::string> ids;
  for (auto& subject : subjects_) {
    if (!ids.insert(subject.id).second) throw SchemaError("duplicate subject id '" + subject.id + "'");
    if (subject.visits.empty()) throw SchemaError("subject '" + subject.id + "' has no visits");
    for (const auto& v : subject.visits) {
      if (!(v.t >= 0.0 && v.t <= 1.0))
        throw DomainError("visit time " + format_double(v.t) + " of subject '" + subject.id + "' outside [0,1]");
      if (v.values.size() != grid_.size() || v.mask.size() != grid_.size())
        throw SchemaError("visit of subject '" + subject.id + "' does not match the grid size");
      for (Eigen::Index r = 0; r < grid_.size(); ++r)
        if (v.mask(r) && !std::isfinite(v.values(r)))
          throw SchemaError("non-finite observed value for subject '" + subject.id + "'");
    }
    std::stable_sort(subject.visits.begin(), subject.visits.end(),
                     [](const Visit& a, const Visit& b) { return a.t < b.t; });
  }
}

std::size_t LFDataset::total_visits() const {
  return std::accumulate(subjects_.begin(), subjects_.end(), std::size_t{0},
                         [](std::size_t acc, const Subject& s) { return acc + s.visits.size(); });
}

const Subject* LFDataset::find(const std::string& id) const {
  auto it = std::find_if(subjects_.begin(), subjects_.end(), [&](const Subject& s) { return s.id == id; });
  return it == subjects_.end() ? nullptr : &*it;
}

const Subject& LFDataset::subject(const std::string& id) const {
  const Subject* s = find(id);
  if (s == nullptr) throw PreconditionError("unknown subject '" + id + "'");
  return *s;
}

std::size_t LFDataset::distinct_times() const {
  std::set<double> times;
  for (const auto& s : subjects_)
    for (const auto& v : s.visits) times.insert(v.t);
  return times.size();
}

LFDataset demean(const LFDataset& data, const MeanCurveFn& mean) {
  std::vector<Subject> out = data.subjects();
  for (auto& subject : out) {
    for (auto& v : subject.visits) {
      const Eigen::VectorXd mu = mean(v.t);
      v.values = (v.mask).select(v.values - mu, 0.0);
    }
  }
  return LFDataset(data.grid(), std::move(out));
}

TrainTestSplit split_last_visit(const LFDataset& data, std::size_t n_test, std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.num_subjects(); ++i)
    if (data.subjects()[i].visits.size() >= 2) eligible.push_back(i);
  if (eligible.size() < n_test)
    throw PreconditionError("only " + std::to_string(eligible.size()) +
                            " subjects have two or more visits; cannot hold out " + std::to_string(n_test));

  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  std::vector<bool> held(data.num_subjects(), false);
  for (std::size_t k = 0; k < n_test; ++k) held[eligible[k]] = true;

  TrainTestSplit split;
  std::vector<Subject> train = data.subjects();
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!held[i]) continue;
    split.test.push_back({train[i].id, train[i].visits.back()});
    train[i].visits.pop_back();
  }
  split.train = LFDataset(data.grid(), std::move(train));
  return split;
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_number(std::string_view field, const char* column, std::size_t line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value))
    throw ParseError(std::string("cannot parse ") + column + " value '" + std::string(field) + "'", line);
  return value;
}

}  // namespace

LFDataset read_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty input", 1);
  ++line_no;
  const auto header = split_fields(line);
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) column[std::string(header[c])] = c;
  for (const char* name : {"subject", "t", "s", "y"})
    if (!column.count(name)) throw ParseError(std::string("missing column '") + name + "'", 1);
  const std::size_t c_subject = column["subject"], c_t = column["t"], c_s = column["s"], c_y = column["y"];

  // subject -> visit time -> s -> value
  using Cells = std::map<double, std::optional<double>>;
  std::vector<std::string> order;
  std::unordered_map<std::string, std::map<double, Cells>> rows;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                       line_no);
    const std::string id(fields[c_subject]);
    if (id.empty()) throw ParseError("empty subject id", line_no);
    const double t = parse_number(fields[c_t], "t", line_no);
    const double s = parse_number(fields[c_s], "s", line_no);
    if (t < 0.0 || t > 1.0) throw DomainError("line " + std::to_string(line_no) + ": t outside [0,1]");
    std::optional<double> y;
    if (!fields[c_y].empty()) y = parse_number(fields[c_y], "y", line_no);

    auto it = rows.find(id);
    if (it == rows.end()) {
      order.push_back(id);
      it = rows.emplace(id, std::map<double, Cells>{}).first;
    }
    auto [cell, inserted] = it->second[t].emplace(s, y);
    if (!inserted) throw SchemaError("line " + std::to_string(line_no) + ": duplicate cell for subject '" + id + "'");
  }
  if (order.empty()) throw ParseError("no data rows", line_no);

  std::vector<double> grid_points;
  for (const auto& [s, y] : rows[order.front()].begin()->second) grid_points.push_back(s);
  GridSpec grid(Eigen::Map<const Eigen::VectorXd>(grid_points.data(), static_cast<Eigen::Index>(grid_points.size())));

  std::vector<Subject> subjects;
  subjects.reserve(order.size());
  for (const auto& id : order) {
    Subject subject{id, {}};
    for (const auto& [t, cells] : rows[id]) {
      if (cells.size() != grid_points.size())
        throw SchemaError("visit t=" + format_double(t) + " of subject '" + id + "' has a different s-grid");
      Visit v;
      v.t = t;
      v.values = Eigen::VectorXd::Zero(grid.size());
      v.mask = Mask::Constant(grid.size(), false);
      Eigen::Index r = 0;
      for (const auto& [s, y] : cells) {
        if (s != grid_points[r])
          throw SchemaError("visit t=" + format_double(t) + " of subject '" + id + "' has a different s-grid");
        if (y) {
          v.values(r) = *y;
          v.mask(r) = true;
        }
        ++r;
      }
      subject.visits.push_back(std::move(v));
    }
    subjects.push_back(std::move(subject));
  }
  return LFDataset(std::move(grid), std::move(subjects));
}

LFDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_csv(in);
}

void write_csv(const LFDataset& data, std::ostream& out) {
  out << "subject,t,s,y\n";
  const auto& s = data.grid().points();
  for (const auto& subject : data.subjects()) {
    for (const auto& v : subject.visits) {
      const std::string t = format_double(v.t);
      for (Eigen::Index r = 0; r < s.size(); ++r) {
        out << subject.id << ',' << t << ',' << format_double(s(r)) << ',';
        if (v.mask(r)) out << format_double(v.values(r));
        out << '\n';
      }
    }
  }
}

void write_csv(const LFDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  write_csv(data, out);
}

}  // namespace lfda
