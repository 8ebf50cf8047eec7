#include "bdtwine/io.hpp"

#include "bdtwine/rng.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace bdtwine {

namespace {

Vec rate_vector(const json& j, const char* key, int N) {
  const json& a = j.at(key);
  if (!a.is_array()) throw SpecError(std::string("\"") + key + "\" must be an array");
  if (static_cast<int>(a.size()) != N)
    throw SpecError(std::string("\"") + key + "\" must have length N = " + std::to_string(N) +
                    ", got " + std::to_string(a.size()));
  Vec v(N);
  for (int i = 0; i < N; ++i) {
    if (!a[i].is_number())
      throw SpecError(std::string("\"") + key + "\"[" + std::to_string(i) + "] is not a number");
    v[i] = a[i].get<double>();
  }
  return v;
}

}  // namespace

BirthDeathSpec<double> spec_from_json(const json& j) {
  if (!j.is_object()) throw SpecError("spec must be a JSON object");
  if (!j.contains("N") || !j["N"].is_number_integer())
    throw SpecError("spec needs an integer \"N\"");
  const auto N = j["N"].get<std::int64_t>();
  if (N < 1 || N > 100000) throw SpecError("\"N\" must be between 1 and 100000");
  if (!j.contains("b")) throw SpecError("spec needs \"b\"");
  const int n = static_cast<int>(N);
  Vec b = rate_vector(j, "b", n);
  Vec d = j.contains("d") ? rate_vector(j, "d", n) : Vec::Zero(n);
  return BirthDeathSpec<double>(std::move(b), std::move(d));
}

json spec_to_json(const BirthDeathSpec<double>& spec) {
  json j;
  j["N"] = spec.top();
  j["b"] = vector_to_json(spec.births());
  j["d"] = vector_to_json(spec.deaths());
  return j;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("cannot write " + path.string());
}

BirthDeathSpec<double> read_spec_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
  return spec_from_json(j);
}

BirthDeathSpec<double> random_spec(int N, std::uint64_t seed) {
  if (N < 1) throw SpecError("N must be at least 1");
  auto engine = path_stream(seed, 0);
  const auto draw = [&] { return 0.1 * std::pow(100.0, uniform01(engine)); };
  Vec b(N);
  Vec d(N);
  for (int i = 0; i < N; ++i) b[i] = draw();
  for (int i = 0; i < N; ++i) d[i] = i + 1 < N ? draw() : 0.0;
  return BirthDeathSpec<double>(std::move(b), std::move(d));
}

json vector_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json matrix_to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_to_json(m.row(i).transpose()));
  return a;
}

Mat matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw SpecError("matrix must be a nonempty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Mat m(j.size(), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw SpecError("matrix row " + std::to_string(i) + " has the wrong length");
    for (std::size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number())
        throw SpecError("matrix entry (" + std::to_string(i) + ", " + std::to_string(k) +
                        ") is not a number");
      m(i, k) = j[i][k].get<double>();
    }
  }
  return m;
}

json chain_to_json(const IntertwiningChain<double>& chain) {
  json j;
  j["side"] = to_string(chain.side);
  json stages = json::array();
  for (const auto& s : chain.stages) {
    json st;
    st["M"] = s.M;
    st["lambda"] = s.lambda;
    st["residual"] = s.residual;
    st["kernel"] = matrix_to_json(s.kernel.matrix());
    st["source"] = spec_to_json(s.source);
    st["target"] = spec_to_json(s.target);
    stages.push_back(std::move(st));
  }
  j["stages"] = std::move(stages);
  j["composed"] = matrix_to_json(chain.composed.matrix());
  j["pure_birth_rates"] = vector_to_json(chain.pure_birth.births());
  j["residual"] = chain.residual;
  return j;
}

json path_to_json(const CoupledPath& path) {
  json events = json::array();
  for (const auto& e : path.events)
    events.push_back({e.time, e.state.minus, e.state.middle, e.state.plus});
  json j;
  j["arrival"] = path.arrival;
  j["events"] = std::move(events);
  return j;
}

json report_to_json(const EnsembleReport& r) {
  json j;
  j["paths"] = r.paths;
  j["arrival"] = {{"mean", r.mean},
                  {"mean_expected", r.mean_expected},
                  {"mean_standard_error", r.mean_standard_error},
                  {"mean_ok", r.mean_ok()},
                  {"variance", r.variance},
                  {"variance_expected", r.variance_expected},
                  {"variance_standard_error", r.variance_standard_error},
                  {"variance_ok", r.variance_ok()}};
  j["ks"] = {{"statistic", r.ks_statistic},
             {"threshold", r.ks_threshold},
             {"p_value", r.ks_p_value},
             {"ok", r.ks_ok()}};
  j["violations"] = {{"sandwich", r.violations.sandwich},
                     {"arrival", r.violations.arrival},
                     {"monotonicity", r.violations.monotonicity},
                     {"unfinished", r.violations.unfinished}};
  json tests = json::array();
  for (const auto& c : r.conditional)
    tests.push_back({{"level", c.level},
                     {"given", c.given},
                     {"observations", c.observations},
                     {"statistic", c.chi_square.statistic},
                     {"dof", c.chi_square.dof},
                     {"p_value", c.chi_square.p_value}});
  j["snapshot_time"] = r.snapshot_time;
  j["conditional"] = {{"alpha_per_test", r.conditional_alpha},
                      {"ok", r.conditional_ok()},
                      {"tests", std::move(tests)}};
  j["marginal"] = {{"statistic", r.marginal.statistic},
                   {"dof", r.marginal.dof},
                   {"p_value", r.marginal.p_value},
                   {"ok", r.marginal_ok()}};
  return j;
}

}  // namespace bdtwine
