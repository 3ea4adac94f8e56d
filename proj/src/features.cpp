#include "xsmap/features.hpp"

namespace xsmap::pinsker {

void FeatureMatrix::validate() const {
  if (rows.rows() != static_cast<Eigen::Index>(labels.size()))
    throw DataError("FeatureMatrix: " + std::to_string(rows.rows()) + " rows but " +
                    std::to_string(labels.size()) + " labels");
  if (n_classes < 1) throw DataError("FeatureMatrix: n_classes must be positive");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 1 || labels[i] > n_classes)
      throw DataError("FeatureMatrix: label " + std::to_string(labels[i]) + " of row " +
                      std::to_string(i) + " outside 1.." + std::to_string(n_classes));
}

FeatureMatrix FeatureMatrix::select(const std::vector<int>& indices) const {
  FeatureMatrix out;
  out.n_classes = n_classes;
  out.rows.resize(static_cast<Eigen::Index>(indices.size()), rows.cols());
  out.labels.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= rows.rows())
      throw DataError("FeatureMatrix::select: index " + std::to_string(idx) + " out of range");
    out.rows.row(static_cast<Eigen::Index>(i)) = rows.row(idx);
    out.labels.push_back(labels[idx]);
  }
  return out;
}

namespace {
constexpr char kFeatureMagic[4] = {'X', 'S', 'F', 'M'};
constexpr uint32_t kFeatureVersion = 1;
}  // namespace

void write_features(const std::string& path, const FeatureMatrix& fm) {
  fm.validate();
  BinaryWriter w(path);
  w.magic(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u64(static_cast<uint64_t>(fm.rows.rows()));
  w.u32(static_cast<uint32_t>(fm.rows.cols()));
  w.u32(static_cast<uint32_t>(fm.n_classes));
  for (int label : fm.labels) w.u32(static_cast<uint32_t>(label));
  std::vector<double> row(static_cast<size_t>(fm.rows.cols()));
  for (Eigen::Index i = 0; i < fm.rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < fm.rows.cols(); ++j) row[static_cast<size_t>(j)] = fm.rows(i, j);
    w.f64_array(row.data(), row.size());
  }
  w.close();
}

FeatureMatrix read_features(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kFeatureMagic, "feature");
  const uint32_t version = r.u32("version");
  if (version != kFeatureVersion)
    throw DataError("unsupported feature file version " + std::to_string(version));
  const uint64_t n_rows = r.u64("rows");
  const uint32_t dim = r.u32("dim");
  const uint32_t n_classes = r.u32("n_classes");
  if (dim < 1) throw DataError("feature file: field 'dim' must be positive");
  if (n_classes < 1) throw DataError("feature file: field 'n_classes' must be positive");
  FeatureMatrix fm;
  fm.n_classes = static_cast<int>(n_classes);
  fm.labels.reserve(n_rows);
  for (uint64_t i = 0; i < n_rows; ++i) {
    const uint32_t label = r.u32("label");
    if (label < 1 || label > n_classes)
      throw DataError("feature file: field 'label' of row " + std::to_string(i) + " is " +
                      std::to_string(label) + ", outside 1.." + std::to_string(n_classes));
    fm.labels.push_back(static_cast<int>(label));
  }
  fm.rows.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(dim));
  std::vector<double> row(dim);
  for (uint64_t i = 0; i < n_rows; ++i) {
    r.f64_array(row.data(), row.size(), "row data");
    for (uint32_t j = 0; j < dim; ++j) fm.rows(static_cast<Eigen::Index>(i), j) = row[j];
  }
  if (!r.at_eof()) throw DataError("feature file: trailing bytes after last row");
  return fm;
}

}  // namespace xsmap::pinsker

namespace xsmap::data {

Eigen::MatrixXd class_conditional_means(const pinsker::FeatureMatrix& fm) {
  fm.validate();
  const int K = fm.n_classes;
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(K, fm.rows.cols());
  std::vector<int> counts(K, 0);
  for (Eigen::Index i = 0; i < fm.rows.rows(); ++i) {
    const int k = fm.labels[static_cast<size_t>(i)] - 1;
    means.row(k) += fm.rows.row(i);
    ++counts[k];
  }
  for (int k = 0; k < K; ++k) {
    if (counts[k] == 0)
      throw DataError("class_conditional_means: class " + std::to_string(k + 1) + " has no rows");
    means.row(k) /= counts[k];
  }
  return means;
}

}  // namespace xsmap::data
