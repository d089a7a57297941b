#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace cmr {

using CountVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

/// n observations of (binary exposure, count outcome, numeric covariates).
struct Dataset {
  std::string exposure_name = "A";
  std::string outcome_name = "Y";
  Eigen::VectorXd exposure;
  CountVector outcome;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;

  Eigen::Index size() const noexcept { return exposure.size(); }
  bool has_covariate(std::string_view name) const;
  Eigen::VectorXd covariate(std::string_view name) const;
  Eigen::VectorXd outcome_values() const { return outcome.cast<double>(); }
  void add_covariate(std::string name, const Eigen::VectorXd& values);

  /// Rows whose indices are listed (bootstrap resamples, subsets).
  Dataset rows(const std::vector<Eigen::Index>& index) const;

  /// Checks shapes, binary exposure and non-negative outcome; throws DataError.
  void validate() const;
};

/// Model terms for the count part (`mean_covariates`, the g / g2 function)
/// and, for zero-inflated families, the susceptibility part (g1).
///
/// A term is a column name or a product `x:z` of column names. The exposure
/// column may appear inside a product; it is then re-evaluated at the
/// counterfactual exposure level for predictions. When `include_exposure` is
/// set the exposure main effect is appended as the last mean-part column.
/// The intercept is always the first column of every part.
struct DesignSpec {
  std::vector<std::string> mean_covariates;
  std::vector<std::string> susceptibility_covariates;
  bool include_exposure = true;
  std::map<std::string, Eigen::VectorXd> extra_columns;
};

struct DesignMatrices {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd zero;
  std::vector<std::string> mean_names;
  std::vector<std::string> zero_names;
};

/// Builds intercept + terms. `exposure_override` replaces the exposure column
/// by a constant everywhere it enters (main effect and products).
Eigen::MatrixXd term_matrix(const Dataset& data, const std::vector<std::string>& terms,
                            const std::map<std::string, Eigen::VectorXd>& extra,
                            std::optional<double> exposure_override, bool append_exposure,
                            std::vector<std::string>* names = nullptr);

DesignMatrices build_design(const Dataset& data, const DesignSpec& spec, bool zero_inflated,
                            std::optional<double> exposure_override = std::nullopt);

/// Design matrix of a propensity model (intercept + `spec.mean_covariates`);
/// rejects specs that reference the exposure.
Eigen::MatrixXd propensity_design(const Dataset& data, const DesignSpec& spec,
                                  std::vector<std::string>* names = nullptr);

/// Column rank of `x` via column-pivoted QR.
Eigen::Index column_rank(const Eigen::MatrixXd& x);

}  // namespace cmr
