#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "ncca/linalg.hpp"

namespace ncca {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto flat = j.at("data").get<std::vector<double>>();
  return Eigen::Map<const Matrix>(flat.data(), j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace ncca
