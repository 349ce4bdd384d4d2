// SPDX-License-Identifier: Apache-2.0
#include "fbo/serialize.hpp"

#include <fstream>

#include "fbo/errors.hpp"

namespace fbo {

Json vec_to_json(const Vec& v) {
  Json j = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v(k));
  return j;
}

Vec vec_from_json(const Json& j) {
  if (!j.is_array()) throw ConfigError("expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  return v;
}

Json mat_to_json(const Mat& m) {
  Json j = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(vec_to_json(m.row(r).transpose()));
  return j;
}

Mat mat_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("expected a nonempty array of rows");
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Mat m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vec row = vec_from_json(j[r]);
    if (row.size() != cols) throw ConfigError("ragged matrix rows");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

namespace {

Json sample_to_json(const QuadraticSample& s) {
  return {{"A", mat_to_json(s.A)}, {"B", mat_to_json(s.B)}, {"c", vec_to_json(s.c)},
          {"d", vec_to_json(s.d)}, {"e", vec_to_json(s.e)}};
}

QuadraticSample sample_from_json(const Json& j) {
  return {mat_from_json(j.at("A")), mat_from_json(j.at("B")), vec_from_json(j.at("c")), vec_from_json(j.at("d")),
          vec_from_json(j.at("e"))};
}

Json constants_to_json(const ProblemConstants& c) {
  return {{"mu", c.mu},   {"L_g", c.L_g},         {"L_f", c.L_f},         {"M", c.M},
          {"rho", c.rho}, {"sigma_f", c.sigma_f}, {"sigma_g", c.sigma_g}};
}

ProblemConstants constants_from_json(const Json& j) {
  return ProblemConstants::make(j.at("mu").get<double>(), j.at("L_g").get<double>(), j.at("L_f").get<double>(),
                                j.at("M").get<double>(), j.at("rho").get<double>(), j.at("sigma_f").get<double>(),
                                j.at("sigma_g").get<double>());
}

constexpr const char* kInstanceSchema = "fbo-quadratic/1";

}  // namespace

Json instance_to_json(const QuadraticInstance& inst) {
  Json clients = Json::array();
  for (const QuadraticClient& cl : inst.clients()) {
    Json samples = Json::array();
    for (const QuadraticSample& s : cl.samples) samples.push_back(sample_to_json(s));
    clients.push_back({{"mean", sample_to_json(cl.mean)}, {"samples", std::move(samples)}});
  }
  const NoiseModel& n = inst.noise();
  return {{"schema", kInstanceSchema},
          {"d1", inst.d1()},
          {"d2", inst.d2()},
          {"rho_x", inst.rho_x()},
          {"seed", inst.seed()},
          {"noise",
           {{"mode", n.mode == NoiseMode::kGaussian ? "gaussian" : "finite-sum"},
            {"std_lower", n.std_lower},
            {"std_upper", n.std_upper},
            {"batch", n.batch}}},
          {"constants", constants_to_json(inst.constants())},
          {"clients", std::move(clients)}};
}

QuadraticInstance instance_from_json(const Json& j) {
  try {
    if (j.value("schema", std::string()) != kInstanceSchema) throw ConfigError("not a quadratic instance document");
    NoiseModel noise;
    const Json& n = j.at("noise");
    const std::string mode = n.at("mode").get<std::string>();
    if (mode == "gaussian") {
      noise.mode = NoiseMode::kGaussian;
    } else if (mode != "finite-sum") {
      throw ConfigError("unknown noise mode '" + mode + "'");
    }
    noise.std_lower = n.at("std_lower").get<double>();
    noise.std_upper = n.at("std_upper").get<double>();
    noise.batch = n.at("batch").get<int>();
    std::vector<QuadraticClient> clients;
    for (const Json& c : j.at("clients")) {
      QuadraticClient cl;
      cl.mean = sample_from_json(c.at("mean"));
      for (const Json& s : c.at("samples")) cl.samples.push_back(sample_from_json(s));
      clients.push_back(std::move(cl));
    }
    QuadraticInstance inst(j.at("d1").get<int>(), j.at("d2").get<int>(), j.at("rho_x").get<double>(),
                           std::move(clients), noise, j.at("seed").get<std::uint64_t>());
    if (j.contains("constants")) inst.set_constants(constants_from_json(j.at("constants")));
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("instance document: ") + e.what());
  }
}

void save_instance(const QuadraticInstance& inst, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << instance_to_json(inst).dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

QuadraticInstance load_instance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return instance_from_json(j);
}

Json trace_to_json(const EstimatorTrace& t) {
  Json ys = Json::array();
  for (const Vec& y : t.y_iterates) ys.push_back(vec_to_json(y));
  Json parts = Json::array();
  for (const Vec& v : t.client_indirect) parts.push_back(vec_to_json(v));
  return {{"Q", t.Q},
          {"y_iterates", std::move(ys)},
          {"z_final", vec_to_json(t.z_final)},
          {"p", vec_to_json(t.p)},
          {"h_direct", vec_to_json(t.h_direct)},
          {"h_indirect", vec_to_json(t.h_indirect)},
          {"participants", t.participants},
          {"client_indirect", std::move(parts)}};
}

}  // namespace fbo
