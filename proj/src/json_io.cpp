#include "coordsim/json_io.hpp"

#include <fstream>
#include <sstream>

namespace coordsim {

namespace {

Json vars_to_json(const std::vector<VarDecl>& vars) {
  Json a = Json::array();
  for (const auto& v : vars) a.push_back({{"name", v.name}, {"size", v.size}});
  return a;
}

std::vector<VarDecl> vars_from_json(const Json& j, const std::string& field) {
  if (!j.is_array()) throw FormatError("field '" + field + "' must be an array");
  std::vector<VarDecl> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    std::string where = field + "[" + std::to_string(i) + "]";
    if (!e.is_object() || !e.contains("name") || !e.contains("size"))
      throw FormatError("field '" + where + "' needs 'name' and 'size'");
    if (!e["name"].is_string() || !e["size"].is_number_integer())
      throw FormatError("field '" + where + "' has wrong types");
    out.push_back({e["name"].get<std::string>(), e["size"].get<int>()});
  }
  return out;
}

std::vector<double> numbers(const Json& j, const std::string& field) {
  if (!j.is_array()) throw FormatError("field '" + field + "' must be an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw FormatError("field '" + field + "[" + std::to_string(i) + "]' is not a number");
    out.push_back(j[i].get<double>());
  }
  return out;
}

const Json& require(const Json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError("missing field '" + key + "'");
  return j[key];
}

}  // namespace

Json pmf_to_json(const JointPmf& p) { return {{"vars", vars_to_json(p.vars())}, {"probs", p.probs()}}; }

JointPmf pmf_from_json(const Json& j) {
  auto vars = vars_from_json(require(j, "vars"), "vars");
  auto probs = numbers(require(j, "probs"), "probs");
  try {
    return JointPmf(std::move(vars), std::move(probs));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("field 'probs': ") + e.what());
  }
}

Json kernel_to_json(const ConditionalKernel& k) {
  Json j = {{"from", vars_to_json(k.from)}, {"to", vars_to_json(k.to)}, {"probs", k.table}};
  if (!k.all_defined()) {
    Json d = Json::array();
    for (char c : k.defined) d.push_back(c != 0);
    j["defined"] = d;
  }
  return j;
}

ConditionalKernel kernel_from_json(const Json& j) {
  ConditionalKernel k;
  k.from = vars_from_json(require(j, "from"), "from");
  k.to = vars_from_json(require(j, "to"), "to");
  k.table = numbers(require(j, "probs"), "probs");
  k.defined.assign(k.rows(), 1);
  if (j.contains("defined")) {
    const auto& d = j["defined"];
    if (!d.is_array() || d.size() != k.rows()) throw FormatError("field 'defined' has wrong length");
    for (std::size_t i = 0; i < d.size(); ++i) k.defined[i] = d[i].get<bool>() ? 1 : 0;
  }
  try {
    k.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("field 'probs': ") + e.what());
  }
  return k;
}

Json dec_to_json(const AuxDecomposition& d) {
  Json j = {{"tPmf", d.tPmf}, {"y", kernel_to_json(d.yKernel)}};
  if (d.u0Kernel) j["u0"] = kernel_to_json(*d.u0Kernel);
  if (d.u1Kernel) j["u1"] = kernel_to_json(*d.u1Kernel);
  if (d.u2Kernel) j["u2"] = kernel_to_json(*d.u2Kernel);
  if (d.uJointKernel) j["u12"] = kernel_to_json(*d.uJointKernel);
  return j;
}

AuxDecomposition dec_from_json(const Json& j) {
  AuxDecomposition d;
  if (j.contains("tPmf")) d.tPmf = numbers(j["tPmf"], "tPmf");
  auto sub = [&](const char* key) -> std::optional<ConditionalKernel> {
    if (!j.contains(key)) return std::nullopt;
    try {
      return kernel_from_json(j[key]);
    } catch (const FormatError& e) {
      throw FormatError(std::string(key) + ": " + e.what());
    }
  };
  d.u0Kernel = sub("u0");
  d.u1Kernel = sub("u1");
  d.u2Kernel = sub("u2");
  d.uJointKernel = sub("u12");
  auto y = sub("y");
  if (!y) throw FormatError("missing field 'y'");
  d.yKernel = *y;
  return d;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace coordsim
