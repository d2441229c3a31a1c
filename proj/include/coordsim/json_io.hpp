// JSON readers and writers for pmfs, kernels and decompositions.
#pragma once

#include <string>

#include "coordsim/compose.hpp"
#include "json.hpp"

namespace coordsim {

using Json = nlohmann::json;

// Malformed input; the message names the offending field.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Json pmf_to_json(const JointPmf& p);
JointPmf pmf_from_json(const Json& j);
Json kernel_to_json(const ConditionalKernel& k);
ConditionalKernel kernel_from_json(const Json& j);
Json dec_to_json(const AuxDecomposition& d);
AuxDecomposition dec_from_json(const Json& j);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace coordsim
