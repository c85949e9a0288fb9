#include "rnddpc/serialize.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "rnddpc/rng.hpp"

namespace rnddpc::serialize {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw std::invalid_argument("matrix_from_json: expected array");
  const auto rows = j.size();
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const auto cols = j.at(0).size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (j.at(r).size() != cols) throw std::invalid_argument("matrix_from_json: ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j.at(r).at(c).get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j.at(i).get<double>();
  return v;
}

json to_json(const setcalc::Zonotope& z) {
  json gens = json::array();
  for (Eigen::Index i = 0; i < z.num_generators(); ++i) {
    gens.push_back(vector_to_json(z.generators.col(i)));
  }
  return json{{"dim", z.dim()}, {"center", vector_to_json(z.center)}, {"generators", gens}};
}

setcalc::Zonotope zonotope_from_json(const json& j) {
  Eigen::VectorXd c = vector_from_json(j.at("center"));
  const auto& g = j.at("generators");
  Eigen::MatrixXd G(c.size(), static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    G.col(static_cast<Eigen::Index>(i)) = vector_from_json(g.at(i));
  }
  return setcalc::Zonotope(std::move(c), std::move(G));
}

json to_json(const setcalc::MatrixZonotope& m) {
  json gens = json::array();
  for (const auto& g : m.generators) gens.push_back(matrix_to_json(g));
  return json{{"shape", {m.rows(), m.cols()}},
              {"center", matrix_to_json(m.center)},
              {"generators", gens}};
}

setcalc::MatrixZonotope matzono_from_json(const json& j) {
  Eigen::MatrixXd c = matrix_from_json(j.at("center"));
  std::vector<Eigen::MatrixXd> gens;
  for (const auto& g : j.at("generators")) gens.push_back(matrix_from_json(g));
  return setcalc::MatrixZonotope(std::move(c), std::move(gens));
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void save_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(bytes);
  return hex.str();
}

}  // namespace rnddpc::serialize
