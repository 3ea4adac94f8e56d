#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "xsmap/common.hpp"

namespace xsmap::pinsker {

// Rows of Pinsker features with task labels; D = N * (2L - 1).
struct FeatureMatrix {
  Eigen::MatrixXd rows;     // n_trials x D
  std::vector<int> labels;  // 1..K
  int n_classes = 0;

  Eigen::Index dim() const { return rows.cols(); }
  Eigen::Index count() const { return rows.rows(); }
  void validate() const;

  FeatureMatrix select(const std::vector<int>& indices) const;
};

// Feature file format, little-endian:
//   magic "XSFM" | u32 version | u64 rows | u32 D | u32 K
//   | u32 label per row | row-major float64 data.
void write_features(const std::string& path, const FeatureMatrix& fm);
FeatureMatrix read_features(const std::string& path);

}  // namespace xsmap::pinsker

namespace xsmap::data {

// Row k-1 is the mean of feature rows labelled k. Every class must occur.
Eigen::MatrixXd class_conditional_means(const pinsker::FeatureMatrix& fm);

}  // namespace xsmap::data
