#include "cmr/dataset.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/QR>

#include "cmr/errors.hpp"

namespace cmr {

namespace {

std::vector<std::string> split_product(const std::string& term) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = term.find(':', start);
    parts.push_back(term.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

bool Dataset::has_covariate(std::string_view name) const {
  return std::find(covariate_names.begin(), covariate_names.end(), name) != covariate_names.end();
}

Eigen::VectorXd Dataset::covariate(std::string_view name) const {
  const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it == covariate_names.end()) throw DataError("unknown column '" + std::string(name) + "'");
  return covariates.col(std::distance(covariate_names.begin(), it));
}

void Dataset::add_covariate(std::string name, const Eigen::VectorXd& values) {
  if (values.size() != size()) throw DataError("column '" + name + "' has the wrong length");
  if (has_covariate(name)) {
    covariates.col(std::distance(covariate_names.begin(),
                                 std::find(covariate_names.begin(), covariate_names.end(), name))) = values;
    return;
  }
  covariates.conservativeResize(size(), covariates.cols() + 1);
  covariates.col(covariates.cols() - 1) = values;
  covariate_names.push_back(std::move(name));
}

Dataset Dataset::rows(const std::vector<Eigen::Index>& index) const {
  Dataset out;
  out.exposure_name = exposure_name;
  out.outcome_name = outcome_name;
  out.covariate_names = covariate_names;
  const auto m = static_cast<Eigen::Index>(index.size());
  out.exposure.resize(m);
  out.outcome.resize(m);
  out.covariates.resize(m, covariates.cols());
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index i = index[static_cast<std::size_t>(r)];
    out.exposure(r) = exposure(i);
    out.outcome(r) = outcome(i);
    out.covariates.row(r) = covariates.row(i);
  }
  return out;
}

void Dataset::validate() const {
  const Eigen::Index n = size();
  if (n == 0) throw DataError("dataset is empty");
  if (outcome.size() != n) throw DataError("outcome length differs from exposure length");
  if (covariates.rows() != n && covariates.cols() > 0) throw DataError("covariate rows differ from exposure length");
  if (static_cast<Eigen::Index>(covariate_names.size()) != covariates.cols())
    throw DataError("covariate names do not match covariate columns");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (exposure(i) != 0.0 && exposure(i) != 1.0)
      throw DataError("row " + std::to_string(i + 1) + ": exposure must be 0 or 1");
    if (outcome(i) < 0) throw DataError("row " + std::to_string(i + 1) + ": outcome must be non-negative");
  }
  if (!covariates.allFinite()) throw DataError("covariates contain non-finite values");
}

Eigen::MatrixXd term_matrix(const Dataset& data, const std::vector<std::string>& terms,
                            const std::map<std::string, Eigen::VectorXd>& extra,
                            std::optional<double> exposure_override, bool append_exposure,
                            std::vector<std::string>* names) {
  const Eigen::Index n = data.size();
  const Eigen::VectorXd exposure =
      exposure_override ? Eigen::VectorXd::Constant(n, *exposure_override) : data.exposure;

  auto factor = [&](const std::string& name) -> Eigen::VectorXd {
    if (name == data.exposure_name) return exposure;
    if (const auto it = extra.find(name); it != extra.end()) {
      if (it->second.size() != n) throw DataError("extra column '" + name + "' has the wrong length");
      return it->second;
    }
    if (name == data.outcome_name) throw DataError("the outcome '" + name + "' cannot be a model term");
    return data.covariate(name);
  };

  const Eigen::Index cols = 1 + static_cast<Eigen::Index>(terms.size()) + (append_exposure ? 1 : 0);
  Eigen::MatrixXd x(n, cols);
  x.col(0).setOnes();
  if (names) {
    names->clear();
    names->push_back("(Intercept)");
  }
  Eigen::Index c = 1;
  for (const auto& term : terms) {
    Eigen::VectorXd col = Eigen::VectorXd::Ones(n);
    for (const auto& part : split_product(term)) col.array() *= factor(part).array();
    x.col(c++) = col;
    if (names) names->push_back(term);
  }
  if (append_exposure) {
    x.col(c) = exposure;
    if (names) names->push_back(data.exposure_name);
  }
  return x;
}

DesignMatrices build_design(const Dataset& data, const DesignSpec& spec, bool zero_inflated,
                            std::optional<double> exposure_override) {
  DesignMatrices out;
  out.mean = term_matrix(data, spec.mean_covariates, spec.extra_columns, exposure_override, spec.include_exposure,
                         &out.mean_names);
  if (zero_inflated) {
    out.zero = term_matrix(data, spec.susceptibility_covariates, spec.extra_columns, exposure_override, false,
                           &out.zero_names);
  } else {
    out.zero.resize(data.size(), 0);
  }
  return out;
}

Eigen::MatrixXd propensity_design(const Dataset& data, const DesignSpec& spec, std::vector<std::string>* names) {
  for (const auto& term : spec.mean_covariates) {
    for (const auto& part : split_product(term)) {
      if (part == data.exposure_name) throw ConfigError("the exposure cannot be a term of its own propensity model");
    }
  }
  return term_matrix(data, spec.mean_covariates, spec.extra_columns, std::nullopt, false, names);
}

Eigen::Index column_rank(const Eigen::MatrixXd& x) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  return qr.rank();
}

}  // namespace cmr
