#pragma once

#include "knowfuse/kg.hpp"
#include "knowfuse/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing {

using knowfuse::Matrix;

inline knowfuse::KnowledgeGraph kg_from_tsv(const std::string& triples, const std::string& types = "") {
  std::istringstream t(triples), ty(types);
  return knowfuse::load_kg(t, ty);
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = d(rng);
  }
  return m;
}

inline knowfuse::FrequencyTable frequencies(const knowfuse::KnowledgeGraph& kg, std::vector<std::int64_t> counts,
                                            std::int64_t samples) {
  knowfuse::FrequencyTable f;
  f.counts = std::move(counts);
  for (std::size_t e = 0; e < f.counts.size(); ++e) {
    f.total += f.counts[e];
    f.type_totals[kg.entity(static_cast<knowfuse::EntityId>(e)).type] += f.counts[e];
  }
  f.sample_count = samples;
  return f;
}

struct GradReport {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
};

// Central differences on every entry of every named tensor. The relative error of a tensor is
// ||analytic - numeric|| / max(||analytic||, ||numeric||), or the absolute gap when both are tiny.
inline std::vector<GradReport> gradient_check(knowfuse::ParameterSet& params,
                                              const std::function<knowfuse::Tensor()>& loss,
                                              const std::function<bool(const std::string&)>& include,
                                              double step = 1e-5) {
  params.zero_grad();
  loss().backward();
  std::vector<GradReport> out;
  for (const auto& item : params.items()) {
    if (!include(item.first)) continue;
    knowfuse::Tensor p = item.second;
    const Matrix analytic = p.has_grad() ? Matrix(p.grad()) : Matrix::Zero(p.rows(), p.cols());
    Matrix numeric(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.value().size(); ++i) {
      double& w = p.mutable_value().data()[i];
      const double keep = w;
      w = keep + step;
      const double up = loss().item();
      w = keep - step;
      const double down = loss().item();
      w = keep;
      numeric.data()[i] = (up - down) / (2.0 * step);
    }
    const double scale = std::max(analytic.norm(), numeric.norm());
    const double gap = (analytic - numeric).norm();
    out.push_back({item.first, scale < 1e-7 ? gap : gap / scale, analytic.norm()});
  }
  params.zero_grad();
  return out;
}

}  // namespace testing
