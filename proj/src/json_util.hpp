#pragma once

#include <Eigen/Dense>
#include <initializer_list>
#include <json.hpp>
#include <optional>
#include <string>

namespace ssvi::detail {

using nlohmann::json;

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

/// Rejects keys outside `allowed`.
void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path);
const json& require(const json& j, const char* key, const std::string& path);

double get_double(const json& j, const char* key, const std::string& path);
std::optional<double> get_optional_double(const json& j, const char* key, const std::string& path);
long long get_int(const json& j, const char* key, const std::string& path);
std::string get_string(const json& j, const char* key, const std::string& path);
bool get_bool(const json& j, const char* key, const std::string& path, bool fallback);

Eigen::VectorXd to_vector(const json& j, const std::string& path);
Eigen::MatrixXd to_matrix(const json& j, const std::string& path);
json from_vector(const Eigen::VectorXd& v);
json from_matrix(const Eigen::MatrixXd& m);

}  // namespace ssvi::detail
