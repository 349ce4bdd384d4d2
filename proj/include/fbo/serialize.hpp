// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "json.hpp"

#include "fbo/hypergrad.hpp"
#include "fbo/quadratic.hpp"

namespace fbo {

using Json = nlohmann::json;

Json vec_to_json(const Vec& v);
Vec vec_from_json(const Json& j);
/// Row-major nested arrays.
Json mat_to_json(const Mat& m);
Mat mat_from_json(const Json& j);

/// {"schema": "fbo-quadratic/1", "d1", "d2", "rho_x", "seed", "noise",
///  "constants", "clients": [{"mean": sample, "samples": [sample, ...]}]}
/// with sample = {"A", "B", "c", "d", "e"}. Doubles are written in
/// shortest round-trip form, so save/load is exact.
Json instance_to_json(const QuadraticInstance& inst);
QuadraticInstance instance_from_json(const Json& j);

void save_instance(const QuadraticInstance& inst, const std::string& path);
QuadraticInstance load_instance(const std::string& path);

Json trace_to_json(const EstimatorTrace& t);

}  // namespace fbo
