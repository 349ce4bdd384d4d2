// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fbo/driver.hpp"
#include "fbo/serialize.hpp"

namespace fbo {

/// A parsed run description: the resolved run configuration plus what is
/// needed to rebuild it.
///
/// Config keys (all optional except `problem`):
///   problem      "quadratic" | "hyperrep" | object with "type"
///                ("quadratic", "hyperrep" or "quadratic_file" + "path")
///                and generator fields
///   estimator    "aggitd" | "aid" | "local"
///   K, N, T, lambda, alpha, beta
///   tau          integer or one integer per client
///   participation, hetero, seed, eval_every, out_dir
///   noise        number (gaussian std for both levels) or object
///                {mode, std, std_lower, std_upper, spread, batch}
///   variant      "svrg" | "sgd"
///   alpha_scale  alpha_bar used when alpha is unset
/// Unset N defaults to ceil(kappa_g), T to N, stepsizes to default_stepsizes.
struct Experiment {
  Json problem;  // canonical problem description (an object)
  RunConfig run;
  std::string out_dir = "out";
  std::optional<double> alpha_scale;
};

/// Builds an experiment from a parsed document. Relative quadratic_file
/// paths resolve against `base_dir`. Throws ConfigError on unknown keys and
/// type errors, ParameterError on invalid values.
Experiment parse_config_json(const Json& doc, const std::string& base_dir = ".");
/// Reads and parses a file; syntax errors report line and column.
Experiment parse_config(const std::string& path);
/// Fully resolved document: parsing it again yields the same experiment.
Json serialize_config(const Experiment& e);

/// Parses text as JSON and maps syntax errors to "where:line:col: ...".
Json parse_json_text(const std::string& text, const std::string& where);

/// Sets a dotted key ("noise.std") to a value; the value is read as JSON
/// when it parses, as a string otherwise.
void apply_override(Json& doc, const std::string& key, const std::string& value);
/// Splits "key=value"; throws ConfigError without '='.
std::pair<std::string, std::string> split_override(const std::string& kv);

/// Shortest decimal that reads back to the same double; locale independent.
std::string format_double(double v);

inline constexpr const char* kCsvSchemaLine = "# schema: v1";
inline constexpr const char* kCsvHeader = "k,rounds_cum,grad_norm_sq,lower_gap,est_err,objective,test_metric";

std::string metrics_csv(const RunReport& report);
/// Writes metrics_csv(report); throws IoError if the file cannot be written.
void export_csv(const RunReport& report, const std::string& path);

struct PlotSeries {
  std::string label;
  const RunReport* report = nullptr;
};

struct SvgOptions {
  bool log_y = true;
  double floor = 1e-16;  // log-scale clamp
  int width = 720;
  int height = 440;
  std::string title;
};

/// Returns the value of a MetricsRecord column; throws ParameterError for
/// unknown names.
double metric_value(const MetricsRecord& r, const std::string& name);

/// Line chart with one polyline per series and a legend. Returns the
/// warnings (clamped values).
std::vector<std::string> render_svg(const std::vector<PlotSeries>& series, const std::string& x_axis,
                                    const std::string& y_axis, const std::string& path, const SvgOptions& opt = {});
/// Same, returning the document instead of writing it.
std::string svg_document(const std::vector<PlotSeries>& series, const std::string& x_axis, const std::string& y_axis,
                         const SvgOptions& opt, std::vector<std::string>& warnings);

struct SweepCell {
  std::string name;  // e.g. "tau-5"
  std::string csv;   // file name inside the output directory
  Json overrides;
};

/// Runs the Cartesian product of `grid` (key -> list of values) on top of
/// `base` (a config document with overrides already applied). Writes one CSV
/// per cell, a plot of grad_norm_sq against rounds, and index.json last.
/// `fixed_keys` are the keys set from the command line; a grid key equal
/// to, or nested in, one of them is a ParameterError.
std::vector<SweepCell> sweep(const Json& base, const Json& grid, const std::string& out_dir,
                             const std::vector<std::string>& fixed_keys = {}, const std::string& base_dir = ".");

}  // namespace fbo
