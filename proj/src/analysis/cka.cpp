// SPDX-License-Identifier: Apache-2.0
#include "tagfex/analysis/cka.hpp"

#include <cstdio>
#include <fstream>

namespace tagfex::analysis {

CkaReport cka_report(const std::vector<Matrix>& features) {
  require(features.size() >= 2, "cka_report: need at least two extractors");
  const int n = static_cast<int>(features.size());
  CkaReport report;
  report.values = Matrix::Zero(n, n);
  Scalar sum = 0;
  for (int i = 0; i < n; ++i) {
    report.values(i, i) = linear_cka(features[static_cast<size_t>(i)],
                                     features[static_cast<size_t>(i)]);
    for (int j = i + 1; j < n; ++j) {
      const Scalar v = linear_cka(features[static_cast<size_t>(i)],
                                  features[static_cast<size_t>(j)]);
      report.values(i, j) = v;
      report.values(j, i) = v;
      sum += v;
    }
  }
  report.mean_off_diagonal = sum / (static_cast<Scalar>(n) * (n - 1) / 2);
  return report;
}

void save_cka_report(const CkaReport& report, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "save_cka_report: cannot open " + path);
  out << report.values.rows() << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < report.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < report.values.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", report.values(i, j));
      out << buf << (j + 1 == report.values.cols() ? "\n" : " ");
    }
  }
  std::snprintf(buf, sizeof(buf), "%.17g", report.mean_off_diagonal);
  out << "mean_off_diagonal " << buf << "\n";
}

}  // namespace tagfex::analysis
