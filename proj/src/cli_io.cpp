// SPDX-License-Identifier: Apache-2.0
#include "fbo/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fbo/errors.hpp"
#include "fbo/hyperrep.hpp"
#include "fbo/quadratic.hpp"

namespace fbo {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kTopKeys = {"problem",       "estimator", "K",    "N",        "T",
                                        "lambda",        "alpha",     "beta", "tau",      "participation",
                                        "hetero",        "noise",     "seed", "eval_every", "out_dir",
                                        "variant",       "alpha_scale"};
const std::set<std::string> kQuadraticKeys = {"type",   "d1",       "d2",           "m",      "n_per_client",
                                              "mu",     "L_g",      "rho_x",        "coupling", "offset_scale",
                                              "spread", "hetero",   "noise",        "seed"};
const std::set<std::string> kHyperRepKeys = {"type",         "embed_dim",  "feature_dim", "classes",
                                             "ridge",        "m",          "n_points",    "test_points",
                                             "val_fraction", "separation", "batch",       "partition",
                                             "shards_per_client", "num_shards", "seed"};
const std::set<std::string> kFileKeys = {"type", "path"};
const std::set<std::string> kNoiseKeys = {"mode", "std", "std_lower", "std_upper", "spread", "batch"};

void reject_unknown(const Json& obj, const std::set<std::string>& known, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.count(it.key()) == 0) throw ConfigError("unknown key '" + where + it.key() + "'");
  }
}

template <typename T>
T get_as(const Json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("key '" + where + key + "' has the wrong type: " + obj.at(key).dump());
  }
}

template <typename T>
T get_or(const Json& obj, const std::string& key, T fallback, const std::string& where = "") {
  return obj.contains(key) ? get_as<T>(obj, key, where) : fallback;
}

template <typename T>
std::optional<T> get_opt(const Json& obj, const std::string& key) {
  if (!obj.contains(key)) return std::nullopt;
  return get_as<T>(obj, key, "");
}

/// Merges the top-level "hetero" and "noise" shorthands into a canonical
/// problem object with every generator field explicit.
Json canonical_problem(const Json& doc) {
  if (!doc.contains("problem")) throw ConfigError("missing key 'problem'");
  Json pr = doc.at("problem");
  if (pr.is_string()) pr = Json{{"type", pr.get<std::string>()}};
  if (!pr.is_object()) throw ConfigError("key 'problem' must be a string or an object");
  const std::string type = get_or<std::string>(pr, "type", "quadratic", "problem.");
  pr["type"] = type;
  const auto seed = get_or<std::uint64_t>(doc, "seed", 0);

  if (type == "quadratic_file") {
    reject_unknown(pr, kFileKeys, "problem.");
    if (doc.contains("hetero") || doc.contains("noise")) {
      throw ConfigError("'hetero' and 'noise' cannot modify an instance loaded from a file");
    }
    get_as<std::string>(pr, "path", "problem.");
    return pr;
  }
  if (type == "hyperrep") {
    reject_unknown(pr, kHyperRepKeys, "problem.");
    if (doc.contains("hetero") || doc.contains("noise")) {
      throw ConfigError("'hetero' and 'noise' apply to quadratic problems; use problem.partition");
    }
    const HyperRepSpec d;
    Json out = {{"type", type},
                {"embed_dim", get_or(pr, "embed_dim", d.embed_dim, "problem.")},
                {"feature_dim", get_or(pr, "feature_dim", d.feature_dim, "problem.")},
                {"classes", get_or(pr, "classes", d.classes, "problem.")},
                {"ridge", get_or(pr, "ridge", d.ridge, "problem.")},
                {"m", get_or(pr, "m", d.m, "problem.")},
                {"n_points", get_or(pr, "n_points", d.n_points, "problem.")},
                {"test_points", get_or(pr, "test_points", d.test_points, "problem.")},
                {"val_fraction", get_or(pr, "val_fraction", d.val_fraction, "problem.")},
                {"separation", get_or(pr, "separation", d.separation, "problem.")},
                {"batch", get_or(pr, "batch", d.batch, "problem.")},
                {"partition", get_or<std::string>(pr, "partition", "iid", "problem.")},
                {"shards_per_client", get_or(pr, "shards_per_client", d.partition.shards_per_client, "problem.")},
                {"num_shards", get_or(pr, "num_shards", d.partition.num_shards, "problem.")},
                {"seed", get_or(pr, "seed", seed, "problem.")}};
    return out;
  }
  if (type != "quadratic") throw ParameterError("problem", "unknown problem type '" + type + "'");

  reject_unknown(pr, kQuadraticKeys, "problem.");
  if (doc.contains("hetero") && pr.contains("hetero")) throw ConfigError("'hetero' given twice");
  if (doc.contains("noise") && pr.contains("noise")) throw ConfigError("'noise' given twice");
  const QuadraticSpec d;
  const double hetero = doc.contains("hetero") ? get_as<double>(doc, "hetero", "") : get_or(pr, "hetero", 0.5, "problem.");
  double spread = get_or(pr, "spread", 0.2, "problem.");

  Json noise_in = doc.contains("noise") ? doc.at("noise") : (pr.contains("noise") ? pr.at("noise") : Json::object());
  Json noise = {{"mode", "finite-sum"}, {"std_lower", 0.0}, {"std_upper", 0.0}, {"batch", 1}};
  if (noise_in.is_number()) {
    noise["mode"] = "gaussian";
    noise["std_lower"] = noise["std_upper"] = noise_in.get<double>();
  } else if (noise_in.is_object()) {
    reject_unknown(noise_in, kNoiseKeys, "noise.");
    noise["mode"] = get_or<std::string>(noise_in, "mode", "finite-sum", "noise.");
    const double std_both = get_or(noise_in, "std", 0.0, "noise.");
    noise["std_lower"] = get_or(noise_in, "std_lower", std_both, "noise.");
    noise["std_upper"] = get_or(noise_in, "std_upper", std_both, "noise.");
    noise["batch"] = get_or(noise_in, "batch", 1, "noise.");
    if (noise_in.contains("spread")) {
      if (pr.contains("spread")) throw ConfigError("'spread' given twice");
      spread = get_as<double>(noise_in, "spread", "noise.");
    }
  } else {
    throw ConfigError("key 'noise' must be a number or an object");
  }
  const std::string mode = noise["mode"].get<std::string>();
  if (mode != "finite-sum" && mode != "gaussian") throw ParameterError("noise.mode", "unknown mode '" + mode + "'");

  return {{"type", type},
          {"d1", get_or(pr, "d1", d.d1, "problem.")},
          {"d2", get_or(pr, "d2", d.d2, "problem.")},
          {"m", get_or(pr, "m", d.m, "problem.")},
          {"n_per_client", get_or(pr, "n_per_client", d.n_per_client, "problem.")},
          {"mu", get_or(pr, "mu", d.mu, "problem.")},
          {"L_g", get_or(pr, "L_g", d.L_g, "problem.")},
          {"rho_x", get_or(pr, "rho_x", d.rho_x, "problem.")},
          {"coupling", get_or(pr, "coupling", d.coupling, "problem.")},
          {"offset_scale", get_or(pr, "offset_scale", d.offset_scale, "problem.")},
          {"spread", spread},
          {"hetero", hetero},
          {"noise", noise},
          {"seed", get_or(pr, "seed", seed, "problem.")}};
}

std::shared_ptr<const BilevelProblem> build_problem(const Json& pr, const std::string& base_dir) {
  const std::string type = pr.at("type").get<std::string>();
  if (type == "quadratic_file") {
    fs::path p(pr.at("path").get<std::string>());
    if (p.is_relative()) p = fs::path(base_dir) / p;
    return std::make_shared<QuadraticProblem>(load_instance(p.string()));
  }
  if (type == "hyperrep") {
    HyperRepSpec s;
    s.embed_dim = pr.at("embed_dim").get<int>();
    s.feature_dim = pr.at("feature_dim").get<int>();
    s.classes = pr.at("classes").get<int>();
    s.ridge = pr.at("ridge").get<double>();
    s.m = pr.at("m").get<int>();
    s.n_points = pr.at("n_points").get<int>();
    s.test_points = pr.at("test_points").get<int>();
    s.val_fraction = pr.at("val_fraction").get<double>();
    s.separation = pr.at("separation").get<double>();
    s.batch = pr.at("batch").get<int>();
    const std::string part = pr.at("partition").get<std::string>();
    if (part == "iid") {
      s.partition.mode = PartitionMode::kIid;
    } else if (part == "label-skew") {
      s.partition.mode = PartitionMode::kLabelSkew;
    } else {
      throw ParameterError("partition", "unknown partition '" + part + "' (iid, label-skew)");
    }
    s.partition.shards_per_client = pr.at("shards_per_client").get<int>();
    s.partition.num_shards = pr.at("num_shards").get<int>();
    return make_hyperrep(s, pr.at("seed").get<std::uint64_t>());
  }
  QuadraticSpec s;
  s.d1 = pr.at("d1").get<int>();
  s.d2 = pr.at("d2").get<int>();
  s.m = pr.at("m").get<int>();
  s.n_per_client = pr.at("n_per_client").get<int>();
  s.mu = pr.at("mu").get<double>();
  s.L_g = pr.at("L_g").get<double>();
  s.rho_x = pr.at("rho_x").get<double>();
  s.coupling = pr.at("coupling").get<double>();
  s.offset_scale = pr.at("offset_scale").get<double>();
  s.spread = pr.at("spread").get<double>();
  s.hetero = pr.at("hetero").get<double>();
  const Json& n = pr.at("noise");
  s.noise.mode = n.at("mode").get<std::string>() == "gaussian" ? NoiseMode::kGaussian : NoiseMode::kFiniteSum;
  s.noise.std_lower = n.at("std_lower").get<double>();
  s.noise.std_upper = n.at("std_upper").get<double>();
  s.noise.batch = n.at("batch").get<int>();
  s.seed = pr.at("seed").get<std::uint64_t>();
  return std::make_shared<QuadraticProblem>(make_quadratic(s));
}

void set_dotted(Json& doc, const std::string& key, Json value) {
  if (key.empty()) throw ConfigError("empty override key");
  if (key.rfind("problem.", 0) == 0 && doc.contains("problem") && doc["problem"].is_string()) {
    doc["problem"] = Json{{"type", doc["problem"].get<std::string>()}};
  }
  Json* cur = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key '" + key + "'");
    if (!cur->is_object()) {
      if (cur->is_null()) {
        *cur = Json::object();
      } else {
        throw ConfigError("override '" + key + "' descends into a non-object value");
      }
    }
    if (dot == std::string::npos) {
      (*cur)[part] = std::move(value);
      return;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
}

}  // namespace

Experiment parse_config_json(const Json& doc, const std::string& base_dir) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(doc, kTopKeys, "");
  Experiment e;
  e.problem = canonical_problem(doc);
  RunConfig& r = e.run;
  r.problem = build_problem(e.problem, base_dir);
  r.estimator = parse_estimator(get_or<std::string>(doc, "estimator", "aggitd"));
  r.K = get_or(doc, "K", 100);
  if (r.K < 0) throw ParameterError("K", "must be nonnegative");
  const std::string variant = get_or<std::string>(doc, "variant", "svrg");
  if (variant == "svrg") {
    r.variant = LowerVariant::kSvrg;
  } else if (variant == "sgd") {
    r.variant = LowerVariant::kSgd;
  } else {
    throw ParameterError("variant", "unknown variant '" + variant + "' (svrg, sgd)");
  }
  if (doc.contains("tau")) {
    const Json& t = doc.at("tau");
    r.tau = t.is_array() ? get_as<std::vector<int>>(doc, "tau", "") : std::vector<int>{get_as<int>(doc, "tau", "")};
  }
  r.participation.ratio = get_or(doc, "participation", 1.0);
  r.seed = get_or<std::uint64_t>(doc, "seed", 0);
  r.eval_every = get_or(doc, "eval_every", 1);
  e.out_dir = get_or<std::string>(doc, "out_dir", "out");
  e.alpha_scale = get_opt<double>(doc, "alpha_scale");
  if (e.alpha_scale && !(*e.alpha_scale > 0.0)) throw ParameterError("alpha_scale", "must be positive");

  const ProblemConstants& c = r.problem->constants();
  const StepSizes s = default_stepsizes(c, r.K, get_opt<int>(doc, "N"), e.alpha_scale);
  r.N = s.N;
  r.T = get_or(doc, "T", r.N);
  r.lambda = get_or(doc, "lambda", s.lambda);
  r.beta = get_or(doc, "beta", std::min({1.0, r.lambda, 1.0 / (6.0 * c.L_g)}));
  r.alpha = get_or(doc, "alpha", s.alpha);
  r.validate();
  return e;
}

Json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& err) {
    const std::size_t upto = std::min<std::size_t>(err.byte > 0 ? err.byte - 1 : 0, text.size());
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t k = 0; k < upto; ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(where + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + err.what());
  }
}

Experiment parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path base = fs::path(path).parent_path();
  return parse_config_json(parse_json_text(ss.str(), path), base.empty() ? "." : base.string());
}

Json serialize_config(const Experiment& e) {
  const RunConfig& r = e.run;
  Json doc = {{"problem", e.problem},
              {"estimator", to_string(r.estimator)},
              {"K", r.K},
              {"N", r.N},
              {"T", r.T},
              {"lambda", r.lambda},
              {"alpha", r.alpha},
              {"beta", r.beta},
              {"participation", r.participation.ratio},
              {"seed", r.seed},
              {"eval_every", r.eval_every},
              {"out_dir", e.out_dir},
              {"variant", r.variant == LowerVariant::kSvrg ? "svrg" : "sgd"}};
  if (r.tau.size() == 1) {
    doc["tau"] = r.tau.front();
  } else {
    doc["tau"] = r.tau;
  }
  if (e.alpha_scale) doc["alpha_scale"] = *e.alpha_scale;
  return doc;
}

std::pair<std::string, std::string> split_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
  return {kv.substr(0, eq), kv.substr(eq + 1)};
}

void apply_override(Json& doc, const std::string& key, const std::string& value) {
  Json v;
  try {
    v = Json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    v = value;
  }
  set_dotted(doc, key, std::move(v));
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string metrics_csv(const RunReport& report) {
  if (report.rows.empty()) throw ContractError("report has no rows");
  std::string out = std::string(kCsvSchemaLine) + "\n" + kCsvHeader + "\n";
  for (const MetricsRecord& r : report.rows) {
    out += std::to_string(r.k) + "," + std::to_string(r.rounds_cum) + "," + format_double(r.grad_norm_sq) + "," +
           format_double(r.lower_gap) + "," + format_double(r.est_err) + "," + format_double(r.objective) + "," +
           format_double(r.test_metric) + "\n";
  }
  return out;
}

void export_csv(const RunReport& report, const std::string& path) {
  const std::string text = metrics_csv(report);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

double metric_value(const MetricsRecord& r, const std::string& name) {
  if (name == "k") return r.k;
  if (name == "rounds_cum") return static_cast<double>(r.rounds_cum);
  if (name == "grad_norm_sq") return r.grad_norm_sq;
  if (name == "lower_gap") return r.lower_gap;
  if (name == "est_err") return r.est_err;
  if (name == "objective") return r.objective;
  if (name == "test_metric") return r.test_metric;
  throw ParameterError("metric", "unknown metric '" + name + "'");
}

namespace {

std::string fixed2(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
  return std::string(buf, res.ptr);
}

std::string short_num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 4);
  return std::string(buf, res.ptr);
}

std::string xml_escape(const std::string& s) {
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

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string svg_document(const std::vector<PlotSeries>& series, const std::string& x_axis, const std::string& y_axis,
                         const SvgOptions& opt, std::vector<std::string>& warnings) {
  if (x_axis != "rounds_cum" && x_axis != "k") throw ParameterError("x_axis", "must be rounds_cum or k");
  metric_value(MetricsRecord{}, y_axis);
  if (series.empty()) throw ParameterError("series", "nothing to plot");
  if (opt.log_y && !(opt.floor > 0.0)) throw ParameterError("floor", "must be positive on a log scale");

  std::vector<std::vector<std::pair<double, double>>> pts(series.size());
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (series[s].report == nullptr) throw ContractError("series without a report");
    for (const MetricsRecord& r : series[s].report->rows) {
      double y = metric_value(r, y_axis);
      if (!std::isfinite(y)) {
        warnings.push_back("series '" + series[s].label + "' row k=" + std::to_string(r.k) + ": non-finite value skipped");
        continue;
      }
      if (opt.log_y) {
        if (y < opt.floor) {
          warnings.push_back("series '" + series[s].label + "' row k=" + std::to_string(r.k) + ": value " +
                             format_double(y) + " clamped to " + format_double(opt.floor));
          y = opt.floor;
        }
        y = std::log10(y);
      }
      const double x = metric_value(r, x_axis);
      pts[s].emplace_back(x, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = 0.0;
    x1 = 1.0;
    y0 = 0.0;
    y1 = 1.0;
  }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }

  const double left = 80, right = 190, top = 40, bottom = 55;
  const double pw = opt.width - left - right;
  const double ph = opt.height - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
     << "\" viewBox=\"0 0 " << opt.width << " " << opt.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opt.title.empty()) {
    os << "<text x=\"" << fixed2(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
       << xml_escape(opt.title) << "</text>\n";
  }
  os << "<rect class=\"frame\" x=\"" << fixed2(left) << "\" y=\"" << fixed2(top) << "\" width=\"" << fixed2(pw)
     << "\" height=\"" << fixed2(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int t = 0; t <= 5; ++t) {
    const double xv = x0 + (x1 - x0) * t / 5.0;
    os << "<text x=\"" << fixed2(sx(xv)) << "\" y=\"" << fixed2(top + ph + 18) << "\" text-anchor=\"middle\">"
       << short_num(xv) << "</text>\n";
  }
  std::vector<std::pair<double, std::string>> yticks;
  if (opt.log_y) {
    const int lo = static_cast<int>(std::ceil(y0 - 1e-9));
    const int hi = static_cast<int>(std::floor(y1 + 1e-9));
    const int stride = std::max(1, (hi - lo) / 8 + 1);
    for (int e = lo; e <= hi; e += stride) yticks.emplace_back(e, "1e" + std::to_string(e));
    if (yticks.empty()) yticks.emplace_back(y0, short_num(std::pow(10.0, y0)));
  } else {
    for (int t = 0; t <= 5; ++t) {
      const double yv = y0 + (y1 - y0) * t / 5.0;
      yticks.emplace_back(yv, short_num(yv));
    }
  }
  for (const auto& [yv, label] : yticks) {
    os << "<line x1=\"" << fixed2(left - 4) << "\" y1=\"" << fixed2(sy(yv)) << "\" x2=\"" << fixed2(left)
       << "\" y2=\"" << fixed2(sy(yv)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fixed2(left - 8) << "\" y=\"" << fixed2(sy(yv) + 4) << "\" text-anchor=\"end\">" << label
       << "</text>\n";
  }
  os << "<text x=\"" << fixed2(left + pw / 2) << "\" y=\"" << fixed2(opt.height - 12.0)
     << "\" text-anchor=\"middle\">" << x_axis << "</text>\n";
  os << "<text transform=\"translate(18," << fixed2(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << y_axis << (opt.log_y ? " (log)" : "") << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof kPalette / sizeof kPalette[0])];
    os << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < pts[s].size(); ++k) {
      os << (k ? " " : "") << fixed2(sx(pts[s][k].first)) << "," << fixed2(sy(pts[s][k].second));
    }
    os << "\"/>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof kPalette / sizeof kPalette[0])];
    const double ly = top + 10 + 18.0 * static_cast<double>(s);
    const double lx = left + pw + 14;
    os << "<g class=\"legend-entry\"><line x1=\"" << fixed2(lx) << "\" y1=\"" << fixed2(ly) << "\" x2=\""
       << fixed2(lx + 22) << "\" y2=\"" << fixed2(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>"
       << "<text x=\"" << fixed2(lx + 28) << "\" y=\"" << fixed2(ly + 4) << "\">" << xml_escape(series[s].label)
       << "</text></g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> render_svg(const std::vector<PlotSeries>& series, const std::string& x_axis,
                                    const std::string& y_axis, const std::string& path, const SvgOptions& opt) {
  std::vector<std::string> warnings;
  const std::string doc = svg_document(series, x_axis, y_axis, opt, warnings);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << doc;
  if (!out) throw IoError("write failed: " + path);
  return warnings;
}

namespace {

bool nested_or_equal(const std::string& a, const std::string& b) {
  return a == b || a.rfind(b + ".", 0) == 0 || b.rfind(a + ".", 0) == 0;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) {
    const bool keep = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' || ch == '_';
    out += keep ? ch : '_';
  }
  return out;
}

}  // namespace

std::vector<SweepCell> sweep(const Json& base, const Json& grid, const std::string& out_dir,
                             const std::vector<std::string>& fixed_keys, const std::string& base_dir) {
  if (!grid.is_object() || grid.empty()) throw ParameterError("grid", "must be a nonempty object");
  std::vector<std::string> keys;
  std::vector<std::vector<Json>> values;
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    if (!it.value().is_array() || it.value().empty()) {
      throw ParameterError("grid", "values of '" + it.key() + "' must be a nonempty list");
    }
    for (const std::string& f : fixed_keys) {
      if (nested_or_equal(it.key(), f)) throw ParameterError(it.key(), "conflicts with the override '" + f + "'");
    }
    for (const std::string& k : keys) {
      if (nested_or_equal(it.key(), k)) throw ParameterError(it.key(), "conflicts with the grid key '" + k + "'");
    }
    keys.push_back(it.key());
    values.emplace_back(it.value().begin(), it.value().end());
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  std::vector<SweepCell> cells;
  std::vector<RunReport> reports;
  std::vector<std::size_t> odo(keys.size(), 0);
  while (true) {
    Json doc = base;
    SweepCell cell;
    cell.overrides = Json::object();
    std::string name;
    for (std::size_t k = 0; k < keys.size(); ++k) {
      const Json& v = values[k][odo[k]];
      set_dotted(doc, keys[k], v);
      cell.overrides[keys[k]] = v;
      name += (k ? "_" : "") + keys[k] + "-" + (v.is_string() ? v.get<std::string>() : v.dump());
    }
    cell.name = sanitize(name);
    cell.csv = "cell_" + cell.name + ".csv";
    const Experiment e = parse_config_json(doc, base_dir);
    reports.push_back(run(e.run));
    export_csv(reports.back(), (fs::path(out_dir) / cell.csv).string());
    cells.push_back(std::move(cell));

    bool done = true;
    for (std::size_t k = keys.size(); k-- > 0;) {
      if (++odo[k] < values[k].size()) {
        done = false;
        break;
      }
      odo[k] = 0;
    }
    if (done) break;
  }

  std::vector<PlotSeries> series;
  for (std::size_t c = 0; c < cells.size(); ++c) series.push_back({cells[c].name, &reports[c]});
  SvgOptions opt;
  opt.title = "sweep";
  render_svg(series, "rounds_cum", "grad_norm_sq", (fs::path(out_dir) / "sweep.svg").string(), opt);

  Json index = {{"cells", Json::array()}};
  for (const SweepCell& c : cells) index["cells"].push_back({{"name", c.name}, {"csv", c.csv}, {"overrides", c.overrides}});
  std::ofstream out(fs::path(out_dir) / "index.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write index.json in " + out_dir);
  out << index.dump(2) << '\n';
  return cells;
}

}  // namespace fbo
