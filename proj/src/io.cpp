#include "cmr/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cmr/errors.hpp"

namespace cmr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string where(long row, const std::string& column) {
  return "row " + std::to_string(row) + ", column '" + column + "'";
}

double parse_number(const std::string& text, long row, const std::string& column) {
  if (text.empty() || text == "NA") throw DataError("missing value at " + where(row, column));
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
    throw DataError("malformed number '" + text + "' at " + where(row, column));
  return v;
}

}  // namespace

Dataset read_csv(std::istream& in, const CsvColumns& columns) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw DataError("empty CSV file: no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const std::vector<std::string> header = split(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw DataError("empty column name in header at position " + std::to_string(j + 1));
    if (!index.emplace(header[j], j).second) throw DataError("duplicate column '" + header[j] + "' in header");
  }
  const auto column = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError("unknown column '" + name + "': not in the CSV header");
    return it->second;
  };
  const std::size_t a_col = column(columns.exposure);
  const std::size_t y_col = column(columns.outcome);
  std::vector<std::string> cov_names = columns.covariates;
  if (cov_names.empty())
    for (const auto& h : header)
      if (h != columns.exposure && h != columns.outcome) cov_names.push_back(h);
  std::vector<std::size_t> cov_cols;
  for (const auto& c : cov_names) cov_cols.push_back(column(c));

  std::vector<double> a, x;
  std::vector<std::int64_t> y;
  long row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split(line);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(header.size()));
    const double av = parse_number(fields[a_col], row, columns.exposure);
    if (av != 0.0 && av != 1.0)
      throw DataError("exposure value '" + fields[a_col] + "' at " + where(row, columns.exposure) + " is not 0 or 1");
    const double yv = parse_number(fields[y_col], row, columns.outcome);
    if (yv < 0.0 || yv != std::floor(yv) || yv > 9.0e15)
      throw DataError("outcome value '" + fields[y_col] + "' at " + where(row, columns.outcome) +
                      " is not a non-negative integer count");
    a.push_back(av);
    y.push_back(static_cast<std::int64_t>(yv));
    for (std::size_t k = 0; k < cov_cols.size(); ++k) x.push_back(parse_number(fields[cov_cols[k]], row, cov_names[k]));
  }
  if (row == 0) throw DataError("empty CSV file: header but no data rows");

  Dataset d;
  d.exposure_name = columns.exposure;
  d.outcome_name = columns.outcome;
  d.exposure = Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
  d.outcome = Eigen::Map<CountVector>(y.data(), static_cast<Eigen::Index>(y.size()));
  d.covariate_names = cov_names;
  d.covariates = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      x.data(), row, static_cast<Eigen::Index>(cov_names.size()));
  d.validate();
  return d;
}

Dataset ingest_csv(const std::string& path, const CsvColumns& columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file '" + path + "'");
  return read_csv(in, columns);
}

void write_csv(std::ostream& out, const Dataset& data, const std::vector<std::pair<std::string, Eigen::VectorXd>>& extra) {
  char buf[40];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << data.exposure_name << ',' << data.outcome_name;
  for (const auto& c : data.covariate_names) out << ',' << c;
  for (const auto& [name, _] : extra) out << ',' << name;
  out << '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out << (data.exposure(i) == 1.0 ? "1" : "0") << ',' << data.outcome(i);
    for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) out << ',' << num(data.covariates(i, j));
    for (const auto& [_, v] : extra) out << ',' << num(v(i));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Configuration

void RunConfig::validate() const {
  if (command != "estimate" && command != "simulate")
    throw ConfigError("command must be 'estimate' or 'simulate', got '" + command + "'");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie strictly between 0 and 1");
  if (!heaping && eta && command == "estimate") throw ConfigError("eta was given but heaping is off; enable heaping or drop eta");
  if (eta && *eta < 1) throw ConfigError("eta must be a positive integer");
  if (truncation && !(truncation->first >= 0.0 && truncation->first < truncation->second && truncation->second <= 1.0))
    throw ConfigError("truncation must be [lo, hi] with 0 <= lo < hi <= 1");
  if (weight_treatments.empty()) throw ConfigError("at least one weight treatment is required");
  if (command == "estimate") {
    if (input.empty()) throw ConfigError("estimate needs an input CSV");
    if (methods.empty()) throw ConfigError("at least one method is required");
    if (family != "auto") {
      try {
        (void)parse_family(family);
      } catch (const DomainError& e) {
        throw ConfigError(e.what());
      }
    }
    for (Method m : methods)
      if (is_heaped(m) && !heaping)
        throw ConfigError(std::string(method_name(m)) + " needs heaping to be enabled (with eta)");
    if (heaping && !eta) throw ConfigError("heaping is on but eta is missing");
  } else {
    if (n <= 0) throw ConfigError("n must be positive");
    if (reps <= 0) throw ConfigError("reps must be positive");
    if (design == SimDesign::Partners && sim_families.empty()) throw ConfigError("at least one family is required");
    if (misspecs.empty()) throw ConfigError("at least one misspecification regime is required");
  }
}

namespace {

std::vector<std::string> string_list(const json& v, const char* key) {
  if (v.is_string()) {
    std::vector<std::string> out;
    std::stringstream ss(v.get<std::string>());
    for (std::string item; std::getline(ss, item, ',');)
      if (!trim(item).empty()) out.push_back(trim(item));
    return out;
  }
  if (!v.is_array()) throw ConfigError(std::string("'") + key + "' must be a string or a list of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError(std::string("'") + key + "' must contain strings only");
    out.push_back(e.get<std::string>());
  }
  return out;
}

template <class T>
T get_as(const json& v, const char* key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("'") + key + "' has the wrong type");
  }
}

Family parse_family_config(const std::string& s) {
  try {
    return parse_family(s);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

RunConfig parse_config(const json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{
      "command",   "input",   "exposure",           "outcome",      "covariates", "methods",
      "weight_treatment",     "family",             "marginal_family", "weight_covariates",
      "outcome_covariates",   "susceptibility_covariates",          "heaping",    "truncation",
      "ci_level",  "output",  "seed",               "design",       "misspec",    "n",
      "reps",      "threads", "figure",             "histogram"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");

  if (j.contains("command")) c.command = get_as<std::string>(j["command"], "command");
  if (j.contains("input")) c.input = get_as<std::string>(j["input"], "input");
  if (j.contains("exposure")) c.columns.exposure = get_as<std::string>(j["exposure"], "exposure");
  if (j.contains("outcome")) c.columns.outcome = get_as<std::string>(j["outcome"], "outcome");
  if (j.contains("covariates")) c.columns.covariates = string_list(j["covariates"], "covariates");
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : string_list(j["methods"], "methods")) c.methods.push_back(parse_method(m));
    c.methods_given = true;
  }
  if (j.contains("weight_treatment")) {
    c.weight_treatments.clear();
    for (const auto& t : string_list(j["weight_treatment"], "weight_treatment")) {
      const auto wt = parse_weight_treatment(t);
      if (wt == WeightTreatment::NotApplicable) throw ConfigError("weight_treatment must be fixed or estimated");
      c.weight_treatments.push_back(wt);
    }
  }
  if (j.contains("family")) {
    const auto fams = string_list(j["family"], "family");
    if (fams.empty()) throw ConfigError("'family' is empty");
    c.family = fams.size() == 1 ? fams.front() : "";
    c.sim_families.clear();
    for (const auto& f : fams)
      if (f != "auto") c.sim_families.push_back(parse_family_config(f));
  }
  if (j.contains("marginal_family"))
    c.marginal_family = parse_family_config(get_as<std::string>(j["marginal_family"], "marginal_family"));
  if (j.contains("weight_covariates")) c.weight_covariates = string_list(j["weight_covariates"], "weight_covariates");
  if (j.contains("outcome_covariates")) c.outcome_covariates = string_list(j["outcome_covariates"], "outcome_covariates");
  if (j.contains("susceptibility_covariates"))
    c.susceptibility_covariates = string_list(j["susceptibility_covariates"], "susceptibility_covariates");
  if (j.contains("heaping")) {
    const json& h = j["heaping"];
    if (!h.is_object()) throw ConfigError("'heaping' must be an object with keys enabled, eta");
    for (const auto& [key, _] : h.items())
      if (key != "enabled" && key != "eta") throw ConfigError("unknown config key 'heaping." + key + "'");
    if (h.contains("enabled")) c.heaping = get_as<bool>(h["enabled"], "heaping.enabled");
    if (h.contains("eta"))
      c.eta = h["eta"].is_null() ? std::nullopt : std::optional(get_as<std::int64_t>(h["eta"], "heaping.eta"));
  }
  if (j.contains("truncation") && j["truncation"].is_null()) {
    c.truncation.reset();
  } else if (j.contains("truncation")) {
    const auto t = get_as<std::vector<double>>(j["truncation"], "truncation");
    if (t.size() != 2) throw ConfigError("'truncation' must be [lo, hi]");
    c.truncation = std::make_pair(t[0], t[1]);
  }
  if (j.contains("ci_level")) c.ci_level = get_as<double>(j["ci_level"], "ci_level");
  if (j.contains("output")) c.output = get_as<std::string>(j["output"], "output");
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("design")) c.design = parse_design(get_as<std::string>(j["design"], "design"));
  if (j.contains("misspec")) {
    c.misspecs.clear();
    for (const auto& m : string_list(j["misspec"], "misspec")) c.misspecs.push_back(parse_misspec(m));
  }
  if (j.contains("n")) c.n = get_as<Eigen::Index>(j["n"], "n");
  if (j.contains("reps")) c.reps = get_as<int>(j["reps"], "reps");
  if (j.contains("threads")) c.threads = get_as<unsigned>(j["threads"], "threads");
  if (j.contains("figure")) c.figure = get_as<std::string>(j["figure"], "figure");
  if (j.contains("histogram")) c.histogram = get_as<std::string>(j["histogram"], "histogram");
  return c;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j, std::move(base));
}

json config_to_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["ci_level"] = c.ci_level;
  j["weight_treatment"] = json::array();
  for (auto t : c.weight_treatments) j["weight_treatment"].push_back(weight_treatment_name(t));
  j["methods"] = json::array();
  for (auto m : c.methods) j["methods"].push_back(method_name(m));
  j["heaping"] = {{"enabled", c.heaping}, {"eta", c.eta ? json(*c.eta) : json(nullptr)}};
  j["truncation"] = c.truncation ? json::array({c.truncation->first, c.truncation->second}) : json(nullptr);
  if (c.command == "estimate") {
    j["input"] = c.input;
    j["exposure"] = c.columns.exposure;
    j["outcome"] = c.columns.outcome;
    j["family"] = c.family;
    j["marginal_family"] = family_name(c.marginal_family);
    j["weight_covariates"] = c.weight_covariates;
    j["outcome_covariates"] = c.outcome_covariates;
    j["susceptibility_covariates"] = c.susceptibility_covariates;
  } else {
    j["seed"] = c.seed;
    j["design"] = design_name(c.design);
    j["family"] = json::array();
    for (auto f : c.sim_families) j["family"].push_back(family_name(f));
    j["misspec"] = json::array();
    for (auto m : c.misspecs) j["misspec"].push_back(misspec_name(m));
    j["n"] = c.n;
    j["reps"] = c.reps;
  }
  return j;
}

AnalysisSpec analysis_spec(const RunConfig& c, Family outcome_family) {
  AnalysisSpec spec;
  spec.requests = expand_requests(c.methods, c.weight_treatments);
  spec.outcome_family = outcome_family;
  spec.marginal_family = c.marginal_family;
  spec.weight_design.mean_covariates = c.weight_covariates;
  spec.weight_design.include_exposure = false;
  spec.outcome_design.mean_covariates = c.outcome_covariates;
  if (is_zero_inflated(outcome_family)) {
    spec.outcome_design.susceptibility_covariates = c.susceptibility_covariates;
  }
  if (c.heaping) spec.heaping = HeapingModel{*c.eta, std::nullopt};
  spec.truncation = c.truncation;
  spec.ci_level = c.ci_level;
  return spec;
}

// ---------------------------------------------------------------------------
// Estimate report

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
json number(const std::optional<double>& v) { return v ? number(*v) : json(nullptr); }

std::string fingerprint(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json model_json(const ModelSummary& m) {
  return {{"role", m.role},
          {"family", m.family},
          {"converged", m.fit.converged},
          {"loglik", number(m.fit.loglik)},
          {"aic", number(m.aic)},
          {"n_params", m.fit.n_params()},
          {"iterations", m.fit.iterations},
          {"gradient_norm", number(m.fit.gradient_norm)},
          {"dispersion", number(m.fit.dispersion)},
          {"pi", number(m.fit.pi)},
          {"message", m.fit.message},
          {"warnings", m.fit.warnings}};
}

void require_columns(const Dataset& data, const std::vector<std::string>& terms, const char* role) {
  for (const auto& term : terms) {
    std::stringstream ss(term);
    for (std::string part; std::getline(ss, part, ':');) {
      if (part != data.exposure_name && !data.has_covariate(part))
        throw ConfigError(std::string(role) + " covariate '" + part + "' is not a column of the input");
    }
  }
}

}  // namespace

EstimateRun run_estimate(const RunConfig& requested, const Dataset& data) {
  requested.validate();
  RunConfig config = requested;
  if (config.weight_covariates.empty()) config.weight_covariates = data.covariate_names;
  if (config.outcome_covariates.empty()) config.outcome_covariates = data.covariate_names;
  require_columns(data, config.weight_covariates, "weight");
  require_columns(data, config.outcome_covariates, "outcome");
  require_columns(data, config.susceptibility_covariates, "susceptibility");

  json selection = nullptr;
  Family family = Family::Poisson;
  if (config.family == "auto") {
    DesignSpec design;
    design.mean_covariates = config.outcome_covariates;
    design.susceptibility_covariates = config.susceptibility_covariates;
    const FamilyComparison cmp = compare_families(data, design);
    family = cmp.best;
    selection = {{"selected", family_name(cmp.best)}, {"aic", json::object()}};
    for (std::size_t k = 0; k < cmp.fits.size(); ++k)
      selection["aic"][std::string(family_name(cmp.fits[k].first))] = number(cmp.aic[k]);
  } else {
    family = parse_family(config.family);
  }

  const AnalysisResult res = run_analysis(data, analysis_spec(config, family));

  EstimateRun run;
  json estimates = json::array();
  for (const auto& m : res.methods) {
    run.all_ok = run.all_ok && m.ok;
    json e{{"method", method_name(m.request.method)},
           {"weight_treatment", weight_treatment_name(m.request.treatment)},
           {"status", m.ok ? "ok" : "failed"},
           {"cmr", m.ok ? number(m.estimate.cmr) : json(nullptr)},
           {"lambda1", m.ok ? number(m.estimate.lambda1) : json(nullptr)},
           {"lambda0", m.ok ? number(m.estimate.lambda0) : json(nullptr)},
           {"se", m.ok ? number(m.estimate.se) : json(nullptr)},
           {"ci_low", m.ok ? number(m.estimate.ci_low) : json(nullptr)},
           {"ci_high", m.ok ? number(m.estimate.ci_high) : json(nullptr)},
           {"ci_level", config.ci_level},
           {"warnings", m.ok ? m.estimate.warnings : std::vector<std::string>{}},
           {"error", m.ok ? json(nullptr) : json(m.error)}};
    estimates.push_back(std::move(e));
  }
  json models = json::array();
  for (const auto& m : res.models) models.push_back(model_json(m));

  const json cfg = config_to_json(config);
  run.report = {{"schema", "cmr-estimate-report/1"},
                {"software", {{"name", "cmr"}, {"version", kVersion}}},
                {"config", cfg},
                {"config_fingerprint", fingerprint(cfg)},
                {"n", data.size()},
                {"outcome_family", family_name(family)},
                {"family_selection", selection},
                {"estimates", estimates},
                {"models", models}};
  return run;
}

// ---------------------------------------------------------------------------
// Simulation

std::vector<StudyResult> run_simulate(const RunConfig& config, const std::function<void(const std::string&)>& log) {
  config.validate();
  std::vector<StudyResult> out;
  const std::vector<Family> families =
      config.design == SimDesign::Partners ? config.sim_families : std::vector<Family>{Family::Poisson};
  for (Family f : families) {
    for (Misspec m : config.misspecs) {
      SimScenario s;
      s.design = config.design;
      s.family = f;
      s.n = config.n;
      s.reps = config.reps;
      s.misspec = m;
      s.base_seed = config.seed;
      s.ci_level = config.ci_level;
      s.threads = config.threads;
      if (config.eta) s.heaping.eta = *config.eta;
      if (config.methods_given) s.requests = expand_requests(config.methods, config.weight_treatments);
      if (log)
        log(std::string(design_name(s.design)) + " " + std::string(family_name(f)) + " " +
            std::string(misspec_name(m)) + ": " + std::to_string(s.reps) + " replications of n=" + std::to_string(s.n));
      out.push_back(run_study(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Figures

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string metrics_svg(const std::vector<StudyResult>& studies, const std::vector<std::string>& metrics) {
  struct Row {
    std::string label;
    std::map<std::string, double> value;
  };
  std::vector<Row> rows;
  for (const auto& s : studies) {
    for (const auto& m : s.metrics) {
      Row r;
      r.label = std::string(design_name(s.scenario.design)) + " " +
                (s.scenario.design == SimDesign::Partners ? std::string(family_name(s.scenario.family)) + " " : "") +
                std::string(misspec_name(s.scenario.misspec)) + " | " + std::string(method_name(m.request.method)) +
                (m.request.treatment == WeightTreatment::NotApplicable
                     ? ""
                     : ", " + std::string(weight_treatment_name(m.request.treatment)));
      r.value["bias_pct"] = m.bias_pct;
      r.value["coverage_pct"] = m.coverage_pct;
      r.value["mse"] = m.mse;
      r.value["ese"] = m.ese.value_or(std::nan(""));
      r.value["ser"] = m.ser.value_or(std::nan(""));
      r.value["nonconv_pct"] = m.nonconv_pct;
      rows.push_back(std::move(r));
    }
  }
  for (const auto& metric : metrics)
    if (!std::set<std::string>{"bias_pct", "coverage_pct", "mse", "ese", "ser", "nonconv_pct"}.contains(metric))
      throw ConfigError("unknown figure metric '" + metric + "'");

  const double label_w = 330, panel_w = 260, gap = 30, row_h = 18, top = 50, bottom = 40;
  const double width = label_w + metrics.size() * (panel_w + gap) + 20;
  const double height = top + rows.size() * row_h + bottom;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    svg << "<text x=\"" << label_w - 8 << "\" y=\"" << top + (i + 0.5) * row_h + 4 << "\" text-anchor=\"end\">"
        << esc(rows[i].label) << "</text>\n";

  for (std::size_t k = 0; k < metrics.size(); ++k) {
    const std::string& metric = metrics[k];
    double lo = metric == "coverage_pct" ? 0.0 : 0.0, hi = metric == "coverage_pct" ? 100.0 : 0.0;
    for (const auto& r : rows) {
      const double v = r.value.at(metric);
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (hi - lo < 1e-9) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const double x0 = label_w + k * (panel_w + gap);
    const auto sx = [&](double v) { return x0 + (v - lo) / (hi - lo) * panel_w; };
    svg << "<g class=\"panel\" id=\"panel-" << esc(metric) << "\">\n";
    svg << "<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << panel_w << "\" height=\"" << rows.size() * row_h
        << "\" fill=\"none\" stroke=\"#888\"/>\n";
    svg << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << top - 14 << "\" text-anchor=\"middle\" font-weight=\"bold\">"
        << esc(metric) << "</text>\n";
    const double ref = metric == "coverage_pct" ? 95.0 : metric == "ser" ? 1.0 : 0.0;
    if (ref >= lo && ref <= hi)
      svg << "<line x1=\"" << sx(ref) << "\" y1=\"" << top << "\" x2=\"" << sx(ref) << "\" y2=\""
          << top + rows.size() * row_h << "\" stroke=\"#c33\" stroke-dasharray=\"4 3\"/>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = rows[i].value.at(metric);
      if (!std::isfinite(v)) continue;
      svg << "<circle cx=\"" << sx(v) << "\" cy=\"" << top + (i + 0.5) * row_h << "\" r=\"4\" fill=\"#235\"><title>"
          << esc(rows[i].label) << ": " << fmt(v) << "</title></circle>\n";
    }
    svg << "<text x=\"" << x0 << "\" y=\"" << height - bottom + 16 << "\">" << fmt(lo) << "</text>\n";
    svg << "<text x=\"" << x0 + panel_w << "\" y=\"" << height - bottom + 16 << "\" text-anchor=\"end\">" << fmt(hi)
        << "</text>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string heaping_histogram_svg(const CountVector& true_counts, const CountVector& reported) {
  if (true_counts.size() != reported.size() || true_counts.size() == 0)
    throw DataError("histogram needs two non-empty count vectors of equal length");
  const std::int64_t max_count = std::max(true_counts.maxCoeff(), reported.maxCoeff());
  std::vector<int> f_true(static_cast<std::size_t>(max_count + 1)), f_rep(f_true.size());
  for (Eigen::Index i = 0; i < true_counts.size(); ++i) {
    ++f_true[static_cast<std::size_t>(true_counts(i))];
    ++f_rep[static_cast<std::size_t>(reported(i))];
  }
  const int peak = std::max(*std::max_element(f_true.begin(), f_true.end()), *std::max_element(f_rep.begin(), f_rep.end()));
  const double left = 50, top = 40, plot_w = 720, plot_h = 300;
  const double bin_w = plot_w / static_cast<double>(f_true.size());
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + plot_w + 30 << "\" height=\""
      << top + plot_h + 60 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"20\" font-weight=\"bold\">True (grey) and reported (blue) counts</text>\n";
  const auto bars = [&](const std::vector<int>& f, double offset, const char* colour, const char* cls) {
    svg << "<g class=\"" << cls << "\">\n";
    for (std::size_t v = 0; v < f.size(); ++v) {
      if (f[v] == 0) continue;
      const double h = plot_h * f[v] / peak;
      svg << "<rect x=\"" << left + v * bin_w + offset << "\" y=\"" << top + plot_h - h << "\" width=\"" << bin_w / 2
          << "\" height=\"" << h << "\" fill=\"" << colour << "\"><title>" << v << ": " << f[v] << "</title></rect>\n";
    }
    svg << "</g>\n";
  };
  bars(f_true, 0.0, "#999", "true");
  bars(f_rep, bin_w / 2, "#2a6fb0", "reported");
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  for (std::int64_t v = 0; v <= max_count; v += 10)
    svg << "<text x=\"" << left + (v + 0.5) * bin_w << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">" << v
        << "</text>\n";
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << top + plot_h + 40 << "\" text-anchor=\"middle\">count</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace cmr
