#pragma once

#include "bdtwine/core.hpp"
#include "bdtwine/coupling.hpp"
#include "bdtwine/intertwine.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace bdtwine {

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using json = nlohmann::ordered_json;

/// {"N": int, "b": [N floats], "d": [N floats]}. A missing "d" means all
/// zeros. Schema problems throw SpecError.
BirthDeathSpec<double> spec_from_json(const json& j);
json spec_to_json(const BirthDeathSpec<double>& spec);

/// Parses the file; unreadable files throw IoError, bad JSON SpecError.
BirthDeathSpec<double> read_spec_file(const std::filesystem::path& path);

/// Stopped chain with rates log-uniform on [0.1, 10] and d_N = 0.
BirthDeathSpec<double> random_spec(int N, std::uint64_t seed);

json vector_to_json(const Vec& v);
/// Row-major array of arrays.
json matrix_to_json(const Mat& m);
/// Inverse of matrix_to_json; ragged or non-numeric input throws SpecError.
Mat matrix_from_json(const json& j);

json chain_to_json(const IntertwiningChain<double>& chain);
json path_to_json(const CoupledPath& path);
json report_to_json(const EnsembleReport& report);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace bdtwine
