#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "actta/binio.hpp"
#include "actta/errors.hpp"
#include "actta/rng.hpp"
#include "actta/tensor.hpp"

namespace actta {

struct DatasetSpec {
  std::size_t n_samples = 0;
  std::size_t dims = 0;
  std::size_t n_classes = 0;
  double class_separation = 10.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

struct LabeledBatch {
  Tensor x;  // [n x dims]
  std::vector<int> y;
  int n_classes = 0;

  std::size_t size() const { return y.size(); }
  std::size_t dims() const { return x.shape()[1]; }
};

struct Dataset {
  LabeledBatch train;
  LabeledBatch test;
  DatasetSpec spec;
};

inline void validate_dataset_spec(const DatasetSpec& spec) {
  if (spec.dims < 1) throw ValidationError("dataset.dims", "must be >= 1");
  if (spec.n_classes < 2) {
    throw ValidationError("dataset.n_classes", "must be >= 2");
  }
  if (spec.dims < spec.n_classes) {
    throw ValidationError(
        "dataset.dims",
        "must be >= n_classes (class means are scaled axis vectors)");
  }
  if (spec.n_samples < 5) {
    throw ValidationError("dataset.n_samples",
                          "must be >= 5 so the 80/20 split is non-empty");
  }
  if (!(spec.noise_sigma >= 0.0)) {
    throw ValidationError("dataset.noise_sigma", "must be >= 0");
  }
  if (!(spec.class_separation >= 0.0)) {
    throw ValidationError("dataset.class_separation", "must be >= 0");
  }
}

// Class k's mean is (class_separation / sqrt(2)) * e_k, which makes every
// pairwise distance between class means exactly class_separation.
inline std::vector<std::vector<double>> class_means(const DatasetSpec& spec) {
  std::vector<std::vector<double>> means(spec.n_classes,
                                         std::vector<double>(spec.dims, 0.0));
  const double scale = spec.class_separation / std::sqrt(2.0);
  for (std::size_t k = 0; k < spec.n_classes; ++k) means[k][k] = scale;
  return means;
}

// Gaussian mixture with balanced labels (counts differ by at most one),
// shuffled, then split 80/20 into train and test. Fully determined by the
// spec, including the seed.
inline Dataset generate(const DatasetSpec& spec) {
  validate_dataset_spec(spec);
  Rng rng(spec.seed);
  const auto means = class_means(spec);

  std::vector<int> labels(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    labels[i] = static_cast<int>(i % spec.n_classes);
  }
  rng.shuffle(labels);

  std::vector<double> xs(spec.n_samples * spec.dims);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const auto& mu = means[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < spec.dims; ++j) {
      xs[i * spec.dims + j] = mu[j] + spec.noise_sigma * rng.normal();
    }
  }

  const std::size_t n_train = spec.n_samples * 8 / 10;
  Dataset ds;
  ds.spec = spec;
  ds.train.x = Tensor({n_train, spec.dims},
                      {xs.begin(), xs.begin() +
                                       static_cast<std::ptrdiff_t>(
                                           n_train * spec.dims)});
  ds.train.y = {labels.begin(),
                labels.begin() + static_cast<std::ptrdiff_t>(n_train)};
  ds.train.n_classes = static_cast<int>(spec.n_classes);
  ds.test.x = Tensor({spec.n_samples - n_train, spec.dims},
                     {xs.begin() + static_cast<std::ptrdiff_t>(
                                       n_train * spec.dims),
                      xs.end()});
  ds.test.y = {labels.begin() + static_cast<std::ptrdiff_t>(n_train),
               labels.end()};
  ds.test.n_classes = static_cast<int>(spec.n_classes);
  return ds;
}

// Copies the given rows (in order) into a new batch.
inline LabeledBatch take_rows(const LabeledBatch& src,
                              const std::vector<std::size_t>& rows) {
  const std::size_t d = src.dims();
  LabeledBatch out;
  std::vector<double> xs(rows.size() * d);
  out.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= src.size()) {
      throw ShapeError("take_rows: row " + std::to_string(rows[i]) +
                       " out of range for batch of " +
                       std::to_string(src.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      xs[i * d + j] = src.x.values()[rows[i] * d + j];
    }
    out.y[i] = src.y[rows[i]];
  }
  out.x = Tensor({rows.size(), d}, std::move(xs));
  out.n_classes = src.n_classes;
  return out;
}

enum class CorruptionKind {
  kAdditiveGaussian,
  kMeanShift,
  kScale,
  kContrast,
  kImpulse
};

inline const std::array<CorruptionKind, 5>& all_corruption_kinds() {
  static const std::array<CorruptionKind, 5> k = {
      CorruptionKind::kAdditiveGaussian, CorruptionKind::kMeanShift,
      CorruptionKind::kScale, CorruptionKind::kContrast,
      CorruptionKind::kImpulse};
  return k;
}

inline std::string corruption_kind_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::kAdditiveGaussian: return "additive_gaussian";
    case CorruptionKind::kMeanShift: return "mean_shift";
    case CorruptionKind::kScale: return "scale";
    case CorruptionKind::kContrast: return "contrast";
    case CorruptionKind::kImpulse: return "impulse";
  }
  throw ContractError("corruption_kind_name: invalid enum value");
}

inline CorruptionKind parse_corruption_kind(const std::string& s) {
  for (auto k : all_corruption_kinds()) {
    if (corruption_kind_name(k) == s) return k;
  }
  throw ValidationError("corruption", "unknown kind '" + s + "'");
}

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kAdditiveGaussian;
  int severity = 1;  // 1..5
  std::uint64_t seed = 0;
};

// Severity tables. One entry per severity level 1..5; strictly harsher as
// the level rises. Calibrated against the reference task so each kind's
// error curve is monotone in severity.
namespace severity_table {
inline constexpr std::array<double, 5> kGaussianSigma = {0.2, 0.4, 0.6, 0.9,
                                                         1.3};
inline constexpr std::array<double, 5> kMeanShiftMagnitude = {1.0, 2.0, 3.0,
                                                              4.5, 6.5};
inline constexpr std::array<double, 5> kScaleFactor = {1.3, 1.7, 2.2, 3.0,
                                                       4.0};
inline constexpr std::array<double, 5> kContrastKeep = {0.75, 0.6, 0.45, 0.3,
                                                        0.2};
inline constexpr std::array<double, 5> kImpulseFraction = {0.02, 0.05, 0.10,
                                                           0.18, 0.30};
inline constexpr double kImpulseMagnitude = 15.0;
}  // namespace severity_table

inline void validate_corruption_spec(const CorruptionSpec& spec) {
  if (spec.severity < 1 || spec.severity > 5) {
    throw ValidationError("severity", "must be in 1..5, got " +
                                          std::to_string(spec.severity));
  }
}

// The exact additive vector mean_shift uses: a unit direction drawn from
// the seed alone, scaled by the severity's magnitude. Exposed so tests can
// invert the corruption.
inline std::vector<double> mean_shift_offset(std::size_t dims, int severity,
                                             std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> dir(dims);
  double norm_sq = 0.0;
  for (auto& d : dir) {
    d = rng.normal();
    norm_sq += d * d;
  }
  const double norm = std::sqrt(norm_sq);
  if (norm < 1e-12) {
    dir.assign(dims, 0.0);
    dir[0] = 1.0;
  } else {
    for (auto& d : dir) d /= norm;
  }
  const double mag =
      severity_table::kMeanShiftMagnitude[static_cast<std::size_t>(severity -
                                                                   1)];
  for (auto& d : dir) d *= mag;
  return dir;
}

// Applies a corruption to a copy of the batch; labels pass through
// untouched and the input batch is never modified. Deterministic in
// (batch, spec): the same seed always produces the same corruption.
inline LabeledBatch corrupt(const LabeledBatch& batch,
                            const CorruptionSpec& spec) {
  validate_corruption_spec(spec);
  const std::size_t sev = static_cast<std::size_t>(spec.severity - 1);
  LabeledBatch out;
  out.x = batch.x.clone();
  out.y = batch.y;
  out.n_classes = batch.n_classes;
  auto& xv = out.x.values();
  const std::size_t n = batch.size();
  const std::size_t d = batch.dims();
  Rng rng(spec.seed);

  switch (spec.kind) {
    case CorruptionKind::kAdditiveGaussian: {
      const double sigma = severity_table::kGaussianSigma[sev];
      for (auto& v : xv) v += sigma * rng.normal();
      break;
    }
    case CorruptionKind::kMeanShift: {
      const auto offset = mean_shift_offset(d, spec.severity, spec.seed);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) xv[i * d + j] += offset[j];
      }
      break;
    }
    case CorruptionKind::kScale: {
      const double f = severity_table::kScaleFactor[sev];
      for (auto& v : xv) v *= f;
      break;
    }
    case CorruptionKind::kContrast: {
      // Compress every feature toward its batch mean.
      const double keep = severity_table::kContrastKeep[sev];
      std::vector<double> mean(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += xv[i * d + j];
      }
      for (auto& m : mean) m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          xv[i * d + j] = mean[j] + keep * (xv[i * d + j] - mean[j]);
        }
      }
      break;
    }
    case CorruptionKind::kImpulse: {
      // Replace an exact count of entries with +/- an extreme value.
      const double frac = severity_table::kImpulseFraction[sev];
      const std::size_t count = static_cast<std::size_t>(
          frac * static_cast<double>(xv.size()));
      const auto idx = rng.sample_indices(xv.size(), count);
      for (std::size_t k : idx) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        xv[k] = sign * severity_table::kImpulseMagnitude;
      }
      break;
    }
  }
  return out;
}

// Binary labeled-batch format (magic "ACDS", version 1, little-endian):
//   magic, u32 version, u32 dims, u32 n_classes, u32 count,
//   count*dims f64 features (row-major), count u32 labels.
inline void save_batch(const LabeledBatch& batch, const std::string& path) {
  auto os = binio::open_out(path);
  os.write("ACDS", 4);
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<std::uint32_t>(batch.dims()));
  binio::write_u32(os, static_cast<std::uint32_t>(batch.n_classes));
  binio::write_u32(os, static_cast<std::uint32_t>(batch.size()));
  binio::write_f64_array(os, batch.x.values());
  for (int label : batch.y) {
    binio::write_u32(os, static_cast<std::uint32_t>(label));
  }
  if (!os) throw IoError("write failed: " + path);
}

inline LabeledBatch load_batch(const std::string& path) {
  auto is = binio::open_in(path);
  binio::expect_magic(is, "ACDS", "dataset");
  const auto version = binio::read_u32(is, "dataset version");
  if (version != 1) {
    throw FormatError(FormatError::Kind::kBadHeader,
                      "unsupported dataset version " +
                          std::to_string(version));
  }
  const auto dims = binio::read_u32(is, "dims");
  const auto n_classes = binio::read_u32(is, "n_classes");
  const auto count = binio::read_u32(is, "count");
  if (dims == 0 || n_classes < 2) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      "dataset header has dims " + std::to_string(dims) +
                          " and n_classes " + std::to_string(n_classes));
  }
  LabeledBatch batch;
  batch.x = Tensor({count, dims},
                   binio::read_f64_array(is, count * dims, "features"));
  batch.y.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto label = binio::read_u32(is, "label");
    if (label >= n_classes) {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "label " + std::to_string(label) +
                            " out of range for " + std::to_string(n_classes) +
                            " classes");
    }
    batch.y[i] = static_cast<int>(label);
  }
  batch.n_classes = static_cast<int>(n_classes);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      "trailing data after dataset payload");
  }
  return batch;
}

// Shortest round-trip decimal rendering (what all CSV output uses).
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double_field(const std::string& s, const char* what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      std::string("cannot parse ") + what + " from '" + s +
                          "'");
  }
  return v;
}

inline long parse_int_field(const std::string& s, const char* what) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(FormatError::Kind::kInconsistent,
                      std::string("cannot parse ") + what + " from '" + s +
                          "'");
  }
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

// CSV form: header "y,x0,...,x{D-1}", one row per sample, features rendered
// with shortest round-trip formatting so a load after save is lossless.
// The class count is recovered as max(label) + 1.
inline void save_batch_csv(const LabeledBatch& batch, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "y";
  for (std::size_t j = 0; j < batch.dims(); ++j) os << ",x" << j;
  os << "\n";
  const std::size_t d = batch.dims();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    os << batch.y[i];
    for (std::size_t j = 0; j < d; ++j) {
      os << "," << format_double(batch.x.values()[i * d + j]);
    }
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

inline LabeledBatch load_batch_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line)) {
    throw FormatError(FormatError::Kind::kTruncated, "empty CSV file");
  }
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "y") {
    throw FormatError(FormatError::Kind::kBadHeader,
                      "CSV header must start with 'y'");
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 1] != "x" + std::to_string(j)) {
      throw FormatError(FormatError::Kind::kBadHeader,
                        "CSV header column " + std::to_string(j + 1) +
                            " should be x" + std::to_string(j));
    }
  }
  if (d == 0) {
    throw FormatError(FormatError::Kind::kBadHeader,
                      "CSV header has no feature columns");
  }
  std::vector<double> xs;
  std::vector<int> ys;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != d + 1) {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "CSV row has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(d + 1));
    }
    const long label = parse_int_field(fields[0], "label");
    if (label < 0) {
      throw FormatError(FormatError::Kind::kInconsistent,
                        "negative label " + std::to_string(label));
    }
    ys.push_back(static_cast<int>(label));
    for (std::size_t j = 0; j < d; ++j) {
      xs.push_back(parse_double_field(fields[j + 1], "feature"));
    }
  }
  LabeledBatch batch;
  batch.x = Tensor({ys.size(), d}, std::move(xs));
  batch.y = std::move(ys);
  int max_label = -1;
  for (int y : batch.y) max_label = std::max(max_label, y);
  batch.n_classes = max_label + 1;
  return batch;
}

}  // namespace actta
