#pragma once

#include <Eigen/Dense>
#include <string>

#include <json.hpp>

#include "rnddpc/setcalc.hpp"

namespace rnddpc::serialize {

using json = nlohmann::json;

/// Row-major nested-array encoding for matrices; plain array for vectors.
json matrix_to_json(const Eigen::MatrixXd& m);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::MatrixXd matrix_from_json(const json& j);
Eigen::VectorXd vector_from_json(const json& j);

/// Zonotope as {"dim", "center", "generators"} with generators column by column.
json to_json(const setcalc::Zonotope& z);
setcalc::Zonotope zonotope_from_json(const json& j);

/// Matrix zonotope as {"shape", "center", "generators"} with row-major matrices.
json to_json(const setcalc::MatrixZonotope& m);
setcalc::MatrixZonotope matzono_from_json(const json& j);

json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const json& j);

/// FNV-1a fingerprint of a file's bytes, hex-encoded.
std::string file_hash(const std::string& path);

}  // namespace rnddpc::serialize
