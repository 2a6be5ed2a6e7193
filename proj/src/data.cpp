#include "allmatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace allmatch {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> class_mean(int c, int num_classes, int dim,
                               double separation) {
  std::vector<double> mean(dim, 0.0);
  if (dim == 1) {
    mean[0] = separation * (c - 0.5 * (num_classes - 1));
  } else {
    const double angle = 2.0 * kPi * c / num_classes;
    mean[0] = separation * std::cos(angle);
    mean[1] = separation * std::sin(angle);
  }
  return mean;
}

std::vector<double> gaussian_point(const std::vector<double>& mean,
                                   std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> x(mean.size());
  for (std::size_t j = 0; j < mean.size(); ++j) x[j] = mean[j] + noise(rng);
  return x;
}

SslDataset generate_mixture(int num_classes, int dim, double separation,
                            const std::vector<int>& labeled_counts,
                            const std::vector<int>& unlabeled_counts,
                            int test_per_class, std::uint64_t seed) {
  SslDataset ds;
  ds.num_classes = num_classes;
  ds.input_dim = dim;
  std::mt19937_64 rng = make_rng(seed, RngStream::kDataset);
  for (int c = 0; c < num_classes; ++c) {
    const std::vector<double> mean = class_mean(c, num_classes, dim, separation);
    for (int i = 0; i < labeled_counts[c]; ++i)
      ds.labeled.push_back({gaussian_point(mean, rng), c});
    for (int i = 0; i < unlabeled_counts[c]; ++i)
      ds.unlabeled.push_back({gaussian_point(mean, rng), c});
    for (int i = 0; i < test_per_class; ++i)
      ds.test.push_back({gaussian_point(mean, rng), c});
  }
  return ds;
}

}  // namespace

void AugmentationSpec::validate() const {
  if (weak_noise_sigma < 0.0 || strong_noise_sigma < 0.0)
    throw std::invalid_argument("AugmentationSpec: negative sigma");
  if (weak_noise_sigma > strong_noise_sigma)
    throw std::invalid_argument(
        "AugmentationSpec: weak sigma must not exceed strong sigma");
  if (feature_dropout_prob < 0.0 || feature_dropout_prob > 0.5)
    throw std::invalid_argument(
        "AugmentationSpec: dropout_prob outside [0, 0.5]");
}

std::vector<double> augment(std::span<const double> x,
                            const AugmentationSpec& spec, AugmentView view,
                            std::mt19937_64& rng) {
  std::vector<double> out(x.begin(), x.end());
  const double sigma = view == AugmentView::kWeak ? spec.weak_noise_sigma
                                                  : spec.strong_noise_sigma;
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : out) v += noise(rng);
  }
  if (view == AugmentView::kStrong && spec.feature_dropout_prob > 0.0) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (double& v : out)
      if (unif(rng) < spec.feature_dropout_prob) v = 0.0;
  }
  return out;
}

std::vector<double> augment_seeded(std::span<const double> x,
                                   const AugmentationSpec& spec,
                                   AugmentView view, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return augment(x, spec, view, rng);
}

SslDataset make_gaussian_mixture(int num_classes, int per_class_labeled,
                                 int per_class_unlabeled, int dim,
                                 double separation, std::uint64_t seed,
                                 int test_per_class) {
  if (num_classes < 1 || per_class_labeled < 1 || per_class_unlabeled < 0 ||
      dim < 1 || test_per_class < 1)
    throw std::invalid_argument("make_gaussian_mixture: bad counts");
  if (separation <= 0.0)
    throw std::invalid_argument("make_gaussian_mixture: separation <= 0");
  return generate_mixture(num_classes, dim, separation,
                          std::vector<int>(num_classes, per_class_labeled),
                          std::vector<int>(num_classes, per_class_unlabeled),
                          test_per_class, seed);
}

void LongTailSpec::validate() const {
  if (head_labeled < 1 || head_unlabeled < 1)
    throw std::invalid_argument("LongTailSpec: head counts must be >= 1");
  if (gamma < 1.0) throw std::invalid_argument("LongTailSpec: gamma < 1");
  if (num_classes < 2) throw std::invalid_argument("LongTailSpec: C < 2");
}

int long_tail_count(int head, double gamma, int num_classes, int class_index,
                    bool* clamped) {
  const double exponent = -static_cast<double>(class_index - 1) /
                          static_cast<double>(num_classes - 1);
  const double raw = head * std::pow(gamma, exponent);
  int count = static_cast<int>(std::floor(raw + 0.5));  // round half up
  if (clamped) *clamped = count < 1;
  return std::max(count, 1);
}

SslDataset make_long_tailed(const LongTailSpec& spec, int dim,
                            double separation, std::uint64_t seed,
                            int test_per_class) {
  spec.validate();
  if (dim < 1 || test_per_class < 1 || separation <= 0.0)
    throw std::invalid_argument("make_long_tailed: bad generator params");
  std::vector<int> labeled_counts(spec.num_classes);
  std::vector<int> unlabeled_counts(spec.num_classes);
  std::vector<std::string> warnings;
  for (int c = 1; c <= spec.num_classes; ++c) {
    bool clamped = false;
    labeled_counts[c - 1] =
        long_tail_count(spec.head_labeled, spec.gamma, spec.num_classes, c,
                        &clamped);
    if (clamped)
      warnings.push_back("labeled count for class " + std::to_string(c - 1) +
                         " clamped to 1");
    unlabeled_counts[c - 1] =
        long_tail_count(spec.head_unlabeled, spec.gamma, spec.num_classes, c,
                        &clamped);
    if (clamped)
      warnings.push_back("unlabeled count for class " + std::to_string(c - 1) +
                         " clamped to 1");
  }
  SslDataset ds = generate_mixture(spec.num_classes, dim, separation,
                                   labeled_counts, unlabeled_counts,
                                   test_per_class, seed);
  ds.warnings = std::move(warnings);
  return ds;
}

BatchIterator::BatchIterator(const SslDataset& dataset, int batch_labeled,
                             int batch_unlabeled,
                             AugmentationSpec augmentation, std::uint64_t seed)
    : dataset_(&dataset),
      batch_labeled_(batch_labeled),
      batch_unlabeled_(batch_unlabeled),
      augmentation_(augmentation),
      seed_(seed) {
  augmentation_.validate();
  if (batch_labeled < 1)
    throw std::invalid_argument("BatchIterator: batch_labeled < 1");
  if (batch_unlabeled < 0)
    throw std::invalid_argument("BatchIterator: batch_unlabeled < 0");
  if (dataset.labeled.empty())
    throw std::invalid_argument("BatchIterator: no labeled data");
}

const std::vector<std::size_t>& BatchIterator::epoch_permutation(
    std::int64_t epoch) const {
  const int slot = static_cast<int>(epoch & 1);
  if (cached_epoch_[slot] != epoch) {
    std::vector<std::size_t>& perm = cached_perm_[slot];
    perm.resize(dataset_->unlabeled.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng = make_rng(seed_, RngStream::kUnlabeledShuffle,
                                   static_cast<std::uint64_t>(epoch));
    std::shuffle(perm.begin(), perm.end(), rng);
    cached_epoch_[slot] = epoch;
  }
  return cached_perm_[slot];
}

TrainingBatch BatchIterator::at(std::int64_t iteration) const {
  if (iteration < 1)
    throw std::invalid_argument("BatchIterator::at: iteration < 1");
  const std::uint64_t t = static_cast<std::uint64_t>(iteration);
  TrainingBatch batch;

  // Labeled: uniform with replacement, weak augmentation.
  {
    std::mt19937_64 pick = make_rng(seed_, RngStream::kLabeledSampling, t);
    std::mt19937_64 aug = make_rng(seed_, RngStream::kLabeledAugment, t);
    std::uniform_int_distribution<std::size_t> dist(
        0, dataset_->labeled.size() - 1);
    batch.labeled.inputs = Matrix(batch_labeled_, dataset_->input_dim);
    batch.labeled.labels.resize(batch_labeled_);
    for (int i = 0; i < batch_labeled_; ++i) {
      const LabeledExample& ex = dataset_->labeled[dist(pick)];
      std::vector<double> view =
          augment(ex.features, augmentation_, AugmentView::kWeak, aug);
      for (int j = 0; j < dataset_->input_dim; ++j)
        batch.labeled.inputs(i, j) = view[j];
      batch.labeled.labels[i] = ex.label;
    }
  }

  // Unlabeled: per-epoch shuffles, consumed in order; both views.
  const std::size_t n_unlabeled = dataset_->unlabeled.size();
  const int take = n_unlabeled == 0 ? 0 : batch_unlabeled_;
  batch.unlabeled.weak = Matrix(take, dataset_->input_dim);
  batch.unlabeled.strong = Matrix(take, dataset_->input_dim);
  batch.unlabeled.hidden_truth.resize(take);
  batch.unlabeled.indices.resize(take);
  if (take > 0) {
    std::mt19937_64 weak_rng = make_rng(seed_, RngStream::kWeakAugment, t);
    std::mt19937_64 strong_rng = make_rng(seed_, RngStream::kStrongAugment, t);
    const std::int64_t start = (iteration - 1) * batch_unlabeled_;
    for (int i = 0; i < take; ++i) {
      const std::int64_t pos = start + i;
      const std::int64_t epoch = pos / static_cast<std::int64_t>(n_unlabeled);
      const std::size_t offset =
          static_cast<std::size_t>(pos % static_cast<std::int64_t>(n_unlabeled));
      const std::size_t idx = epoch_permutation(epoch)[offset];
      const UnlabeledExample& ex = dataset_->unlabeled[idx];
      std::vector<double> weak =
          augment(ex.features, augmentation_, AugmentView::kWeak, weak_rng);
      std::vector<double> strong =
          augment(ex.features, augmentation_, AugmentView::kStrong, strong_rng);
      for (int j = 0; j < dataset_->input_dim; ++j) {
        batch.unlabeled.weak(i, j) = weak[j];
        batch.unlabeled.strong(i, j) = strong[j];
      }
      batch.unlabeled.hidden_truth[i] = ex.hidden_truth;
      batch.unlabeled.indices[i] = idx;
    }
  }
  return batch;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

[[noreturn]] void row_error(std::size_t line_no, const std::string& what) {
  throw std::runtime_error("csv line " + std::to_string(line_no) + ": " + what);
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) row_error(line_no, "malformed number '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    row_error(line_no, "malformed number '" + s + "'");
  } catch (const std::out_of_range&) {
    row_error(line_no, "number out of range '" + s + "'");
  }
}

int parse_label(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used != s.size() || v < 0)
      row_error(line_no, "unknown label '" + s + "'");
    return v;
  } catch (const std::exception&) {
    row_error(line_no, "unknown label '" + s + "'");
  }
}

}  // namespace

SslDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("csv schema error: empty file " + path);
  std::vector<std::string> cols = split_line(header);
  if (cols.size() < 3)
    throw std::runtime_error("csv schema error: missing column 'f0'");
  const int dim = static_cast<int>(cols.size()) - 2;
  for (int j = 0; j < dim; ++j) {
    const std::string expected = "f" + std::to_string(j);
    if (cols[j] != expected)
      throw std::runtime_error("csv schema error: missing column '" +
                               expected + "'");
  }
  if (cols[dim] != "label")
    throw std::runtime_error("csv schema error: missing column 'label'");
  if (cols[dim + 1] != "split")
    throw std::runtime_error("csv schema error: missing column 'split'");

  SslDataset ds;
  ds.input_dim = dim;
  std::string line;
  std::size_t line_no = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = split_line(line);
    if (fields.size() != cols.size())
      row_error(line_no, "expected " + std::to_string(cols.size()) +
                             " fields, got " + std::to_string(fields.size()));
    std::vector<double> features(dim);
    for (int j = 0; j < dim; ++j) features[j] = parse_double(fields[j], line_no);
    const int label = parse_label(fields[dim], line_no);
    max_label = std::max(max_label, label);
    const std::string& split = fields[dim + 1];
    if (split == "labeled")
      ds.labeled.push_back({std::move(features), label});
    else if (split == "unlabeled")
      ds.unlabeled.push_back({std::move(features), label});
    else if (split == "test")
      ds.test.push_back({std::move(features), label});
    else
      row_error(line_no, "unknown split '" + split + "'");
  }
  if (max_label < 0)
    throw std::runtime_error("csv schema error: no data rows in " + path);
  ds.num_classes = max_label + 1;
  return ds;
}

void save_csv(const SslDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  for (int j = 0; j < dataset.input_dim; ++j) out << "f" << j << ",";
  out << "label,split\n";
  auto write_row = [&](const std::vector<double>& features, int label,
                       const char* split) {
    for (double v : features) out << format_double(v) << ",";
    out << label << "," << split << "\n";
  };
  for (const LabeledExample& ex : dataset.labeled)
    write_row(ex.features, ex.label, "labeled");
  for (const UnlabeledExample& ex : dataset.unlabeled)
    write_row(ex.features, ex.hidden_truth, "unlabeled");
  for (const LabeledExample& ex : dataset.test)
    write_row(ex.features, ex.label, "test");
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace allmatch
