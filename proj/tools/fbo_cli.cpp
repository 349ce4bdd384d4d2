// SPDX-License-Identifier: Apache-2.0
// Command-line front end: run | estimate | verify | sweep | compare.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fbo/cli_io.hpp"
#include "fbo/driver.hpp"
#include "fbo/errors.hpp"
#include "fbo/hypergrad.hpp"
#include "fbo/serialize.hpp"
#include "fbo/verify.hpp"

namespace fs = std::filesystem;
using namespace fbo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitIo = 4;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Loaded {
  Json doc;
  std::string base_dir;
  std::vector<std::string> set_keys;
};

Loaded load(const std::string& path, const std::vector<std::string>& sets) {
  Loaded l;
  l.doc = parse_json_text(read_file(path), path);
  const fs::path parent = fs::path(path).parent_path();
  l.base_dir = parent.empty() ? "." : parent.string();
  for (const std::string& kv : sets) {
    auto [k, v] = split_override(kv);
    apply_override(l.doc, k, v);
    l.set_keys.push_back(k);
  }
  return l;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

void print_warnings(const std::vector<std::string>& ws) {
  for (const std::string& w : ws) std::cerr << "warning: " << w << '\n';
}

void summarize(const std::string& label, const RunReport& rep) {
  const MetricsRecord& last = rep.rows.back();
  double best = last.grad_norm_sq;
  for (const MetricsRecord& r : rep.rows) best = std::min(best, r.grad_norm_sq);
  std::cout << label << ": K=" << last.k << " rounds=" << rep.ledger.rounds_total
            << " grad_norm_sq=" << format_double(last.grad_norm_sq) << " min=" << format_double(best)
            << " lower_gap=" << format_double(last.lower_gap) << " test_metric=" << format_double(last.test_metric)
            << '\n';
}

int cmd_run(const std::string& config, const std::vector<std::string>& sets, const std::string& out_opt,
            const std::string& metric, const std::string& x_axis, bool linear) {
  const Loaded l = load(config, sets);
  const Experiment e = parse_config_json(l.doc, l.base_dir);
  const std::string out = out_opt.empty() ? e.out_dir : out_opt;
  ensure_dir(out);
  write_text((fs::path(out) / "config.resolved.json").string(), serialize_config(e).dump(2) + "\n");
  const RunReport rep = run(e.run);
  export_csv(rep, (fs::path(out) / "metrics.csv").string());
  SvgOptions opt;
  opt.log_y = !linear;
  opt.title = to_string(e.run.estimator);
  print_warnings(render_svg({{to_string(e.run.estimator), &rep}}, x_axis, metric,
                            (fs::path(out) / "metrics.svg").string(), opt));
  summarize(to_string(e.run.estimator), rep);
  std::cout << "wrote " << (fs::path(out) / "metrics.csv").string() << '\n';
  return kExitOk;
}

int cmd_compare(const std::string& config, const std::vector<std::string>& sets, const std::string& out_opt,
                const std::string& metric, const std::string& x_axis) {
  const Loaded l = load(config, sets);
  const Experiment e = parse_config_json(l.doc, l.base_dir);
  const std::string out = out_opt.empty() ? e.out_dir : out_opt;
  ensure_dir(out);
  const RunReport a = run_fbo_aggitd(e.run);
  const RunReport b = run_fednest_baseline(e.run);
  export_csv(a, (fs::path(out) / "aggitd.csv").string());
  export_csv(b, (fs::path(out) / "aid.csv").string());
  SvgOptions opt;
  opt.title = "FBO-AggITD vs AID baseline";
  print_warnings(render_svg({{"FBO-AggITD", &a}, {"AID baseline", &b}}, x_axis, metric,
                            (fs::path(out) / "compare.svg").string(), opt));
  summarize("aggitd", a);
  summarize("aid", b);
  return kExitOk;
}

int cmd_estimate(const std::string& config, const std::vector<std::string>& sets, const std::string& trace_path) {
  const Loaded l = load(config, sets);
  const Experiment e = parse_config_json(l.doc, l.base_dir);
  const RunConfig& r = e.run;
  const BilevelProblem& pb = *r.problem;
  Point start = pb.initial_point();
  if (r.x0) start.x = *r.x0;
  if (r.y0) start.y = *r.y0;
  const StreamFactory streams(r.seed, 0);
  const auto participants =
      select_participants(r.participation, pb.num_clients(), streams(-1, Purpose::kParticipants, 0));
  CommLedger ledger;
  Json doc = {{"estimator", to_string(r.estimator)}};
  Vec h;
  if (r.estimator == EstimatorKind::kAggItd) {
    const AggItdResult res = aggitd(pb, start.x, start.y, {r.lambda, r.N, r.lower()}, participants, streams, ledger);
    h = res.h;
    doc["trace"] = trace_to_json(res.trace);
  } else {
    const Vec yN = run_lower_loop(pb, start.x, start.y, r.N, r.lower(), participants, streams, ledger).back();
    const AidConfig aid{r.lambda, r.N, r.T, r.lower(), r.resample_hessiv, r.participation};
    h = r.estimator == EstimatorKind::kAid ? aid_fhe(pb, start.x, yN, aid, participants, streams, ledger).h
                                           : local_fhe(pb, start.x, yN, aid, participants, streams, ledger);
  }
  Evaluator ev(r.problem);
  const Vec truth = ev.hypergradient(start.x);
  doc["h"] = vec_to_json(h);
  doc["hypergradient"] = vec_to_json(truth);
  doc["error"] = (h - truth).norm();
  doc["rounds"] = ledger.rounds_total;
  const std::string text = doc.dump(2) + "\n";
  if (trace_path.empty() || trace_path == "-") {
    std::cout << text;
  } else {
    write_text(trace_path, text);
    std::cout << "error=" << format_double((h - truth).norm()) << " rounds=" << ledger.rounds_total << " wrote "
              << trace_path << '\n';
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config, const std::vector<std::string>& sets, const std::string& grid_arg,
              const std::string& out_opt) {
  const Loaded l = load(config, sets);
  const std::string text = (!grid_arg.empty() && grid_arg.front() == '{') ? grid_arg : read_file(grid_arg);
  const Json grid = parse_json_text(text, grid_arg.front() == '{' ? "--grid" : grid_arg);
  const Experiment base = parse_config_json(l.doc, l.base_dir);
  const std::string out = out_opt.empty() ? base.out_dir : out_opt;
  const auto cells = sweep(l.doc, grid, out, l.set_keys, l.base_dir);
  for (const SweepCell& c : cells) std::cout << c.name << " -> " << (fs::path(out) / c.csv).string() << '\n';
  std::cout << "wrote " << (fs::path(out) / "index.json").string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated bilevel optimization simulator"};
  app.require_subcommand(1, 1);

  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string metric = "grad_norm_sq";
  std::string x_axis = "rounds_cum";
  bool linear = false;
  std::string trace;
  std::string grid;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file")->required();
    sub->add_option("--set", sets, "override key=value (dotted keys allowed), repeatable");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "run one configured solver; writes metrics.csv and metrics.svg");
  add_common(run_cmd);
  run_cmd->add_option("--out", out, "output directory (default: out_dir from the config)");
  run_cmd->add_option("--metric", metric, "plotted column");
  run_cmd->add_option("--x-axis", x_axis, "rounds_cum or k");
  run_cmd->add_flag("--linear", linear, "linear y axis");

  CLI::App* est_cmd = app.add_subcommand("estimate", "one hypergradient estimate at the initial point, with trace");
  add_common(est_cmd);
  est_cmd->add_option("--trace", trace, "where to write the JSON trace ('-' for stdout)");

  CLI::App* ver_cmd = app.add_subcommand("verify", "run the oracle cross-checks");
  ver_cmd->add_option("--seed", seed, "instance seed");

  CLI::App* sw_cmd = app.add_subcommand("sweep", "Cartesian grid of overrides; one CSV per cell plus index.json");
  add_common(sw_cmd);
  sw_cmd->add_option("--grid", grid, "grid JSON file or inline object, e.g. {\"tau\":[1,5]}")->required();
  sw_cmd->add_option("--out", out, "output directory");

  CLI::App* cmp_cmd = app.add_subcommand("compare", "FBO-AggITD and the AID baseline on one config, one plot");
  add_common(cmp_cmd);
  cmp_cmd->add_option("--out", out, "output directory");
  cmp_cmd->add_option("--metric", metric, "plotted column");
  cmp_cmd->add_option("--x-axis", x_axis, "rounds_cum or k");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(config, sets, out, metric, x_axis, linear);
    if (*est_cmd) return cmd_estimate(config, sets, trace);
    if (*ver_cmd) return run_verification_suite(std::cout, seed) ? kExitOk : kExitFail;
    if (*sw_cmd) return cmd_sweep(config, sets, grid, out);
    if (*cmp_cmd) return cmd_compare(config, sets, out, metric, x_axis);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFail;
  }
  return kExitFail;
}
