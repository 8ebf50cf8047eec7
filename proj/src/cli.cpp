#include "bdtwine/cli.hpp"

#include "bdtwine/coupling.hpp"
#include "bdtwine/intertwine.hpp"
#include "bdtwine/io.hpp"
#include "bdtwine/passage.hpp"
#include "bdtwine/spectral.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>

namespace bdtwine {

namespace {

struct SpecSource {
  std::string path;
  std::vector<std::uint64_t> random;  // {N, seed}
  double tolerance = 1e-10;

  void attach(CLI::App* app) {
    auto* spec = app->add_option("--spec", path, "Spec JSON file {\"N\", \"b\", \"d\"}");
    auto* rnd = app->add_option("--random-spec", random, "Random stopped chain: N SEED")
                    ->expected(2);
    spec->excludes(rnd);
    app->add_option("--tol", tolerance, "Residual tolerance")
        ->envname("BDTWINE_TOLERANCE")
        ->capture_default_str();
  }

  bool given() const { return !path.empty() || !random.empty(); }

  BirthDeathSpec<double> load() const {
    if (!(tolerance > 0)) throw SpecError("tolerance must be positive");
    if (!path.empty()) return read_spec_file(path);
    if (random.size() == 2) {
      if (random[0] < 1 || random[0] > 1000) throw SpecError("random spec N must be in 1..1000");
      return random_spec(static_cast<int>(random[0]), random[1]);
    }
    throw SpecError("one of --spec or --random-spec is required");
  }
};

std::string number(double v) { return json(v).dump(); }

struct Check {
  std::string name;
  double value = 0;
  double tolerance = 0;
  bool pass = false;
};

struct LoadedStage {
  MarkovKernel<double> kernel;
  BirthDeathSpec<double> source;
  BirthDeathSpec<double> target;
};

struct LoadedChain {
  Side side = Side::plus;
  std::vector<LoadedStage> stages;
  MarkovKernel<double> composed;
  BirthDeathSpec<double> pure_birth;
};

LoadedChain load_chain(const json& j, Side side) {
  LoadedChain c;
  c.side = side;
  try {
    for (const auto& st : j.at("stages"))
      c.stages.push_back({MarkovKernel<double>(matrix_from_json(st.at("kernel"))),
                          spec_from_json(st.at("source")), spec_from_json(st.at("target"))});
    c.composed = MarkovKernel<double>(matrix_from_json(j.at("composed")));
    const json& rates = j.at("pure_birth_rates");
    c.pure_birth = spec_from_json(json{{"N", rates.size()}, {"b", rates}});
  } catch (const json::exception& e) {
    throw SpecError(std::string("kernels file: ") + e.what());
  }
  return c;
}

double relative_spectrum_error(Vec rates, const Vec& oracle) {
  std::sort(rates.data(), rates.data() + rates.size());
  return ((rates - oracle).cwiseAbs().array() / oracle.array()).maxCoeff();
}

void check_chain(const BirthDeathSpec<double>& spec, const LoadedChain& c, const Vec& oracle,
                 double tol, std::vector<Check>& checks) {
  const std::string side = to_string(c.side);
  const int N = spec.top();
  const auto orientation = c.side == Side::plus ? Orientation::left : Orientation::right;
  if (c.composed.size() != N + 1 || c.pure_birth.top() != N)
    throw SpecError("kernels file: " + side + " chain does not match N = " + std::to_string(N));

  double structure = validate_kernel(c.composed, true, true).worst();
  for (const auto& st : c.stages) {
    if (st.kernel.size() != N + 1) throw SpecError("kernels file: stage kernel has wrong size");
    structure = std::max(structure, validate_kernel(st.kernel, true, true).worst());
  }
  checks.push_back({side + ".kernel_structure", structure, 1e-12, structure <= 1e-12});

  const auto same = [](const BirthDeathSpec<double>& a, const BirthDeathSpec<double>& b) {
    return a.top() == b.top() && a.births() == b.births() && a.deaths() == b.deaths();
  };
  bool linked = c.stages.empty() ? same(spec, c.pure_birth)
                                 : same(c.stages.front().source, spec) &&
                                       same(c.stages.back().target, c.pure_birth);
  for (std::size_t i = 1; i < c.stages.size(); ++i)
    linked = linked && same(c.stages[i - 1].target, c.stages[i].source);
  checks.push_back({side + ".stage_linkage", linked ? 0.0 : 1.0, 0.0, linked});

  double stage_residual = 0;
  for (const auto& st : c.stages) {
    const double t = scaled_tolerance(tol, N, std::max(st.source.max_rate(), st.target.max_rate()));
    stage_residual = std::max(
        stage_residual,
        verify_intertwining(st.source, st.kernel, st.target, orientation).max_residual / t * tol);
  }
  checks.push_back({side + ".stage_residual", stage_residual, tol, stage_residual <= tol});

  const double composed_tol =
      scaled_tolerance(tol, N, std::max(spec.max_rate(), c.pure_birth.max_rate()));
  const double residual =
      verify_intertwining(spec, c.composed, c.pure_birth, orientation).max_residual;
  checks.push_back({side + ".composed_residual", residual, composed_tol, residual <= composed_tol});

  Mat product = Mat::Identity(N + 1, N + 1);
  if (c.side == Side::plus)
    for (auto it = c.stages.rbegin(); it != c.stages.rend(); ++it) product = product * it->kernel.matrix();
  else
    for (const auto& st : c.stages) product = product * st.kernel.matrix();
  const double composition = (product - c.composed.matrix()).cwiseAbs().maxCoeff();
  checks.push_back({side + ".composition", composition, 1e-12, composition <= 1e-12});

  double worst_order = 0;  // largest violation of strict monotonicity
  bool ordered = c.pure_birth.is_pure_birth();
  for (int x = 1; x < N; ++x) {
    const double a = c.pure_birth.birth(x);
    const double b = c.pure_birth.birth(x + 1);
    const bool ok = c.side == Side::plus ? a > b : a < b;
    if (!ok) worst_order = std::max(worst_order, std::abs(a - b) / std::max(a, b));
    ordered = ordered && ok;
  }
  checks.push_back({side + ".ordering", worst_order, 0.0, ordered});

  const double spectral = relative_spectrum_error(c.pure_birth.births(), oracle);
  checks.push_back({side + ".spectrum", spectral, 1e-8, spectral <= 1e-8});

  const auto ids = spectrum_identities(spec, c.pure_birth.births());
  const double id = std::max(ids.trace_relative, ids.determinant_relative);
  checks.push_back({side + ".identities", id, 1e-10, id <= 1e-10});
}

json kernels_document(const BirthDeathSpec<double>& spec, const std::string& side) {
  json doc;
  doc["spec"] = spec_to_json(spec);
  if (side == "plus" || side == "both") doc["plus"] = chain_to_json(build_plus_chain(spec));
  if (side == "minus" || side == "both") doc["minus"] = chain_to_json(build_minus_chain(spec));
  return doc;
}

int cmd_spectrum(const SpecSource& src, bool identities, std::ostream& out) {
  const auto spec = src.load();
  const Vec lambdas = spectrum_oracle(spec).lambdas;
  json j;
  j["lambdas"] = vector_to_json(lambdas);
  if (!identities) {
    out << j.dump() << '\n';
    return kExitOk;
  }
  const auto ids = spectrum_identities(spec, lambdas);
  Vec sorted = lambdas;
  double gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 1; i < sorted.size(); ++i)
    gap = std::min(gap, (sorted[i] - sorted[i - 1]) / sorted[i]);
  const bool ok = ids.trace_relative <= 1e-10 && ids.determinant_relative <= 1e-10 &&
                  (sorted.size() < 2 || gap > 1e-10);
  j["identities"] = {{"trace_relative", ids.trace_relative},
                     {"determinant_relative", ids.determinant_relative},
                     {"min_relative_gap", sorted.size() < 2 ? json(nullptr) : json(gap)},
                     {"pass", ok}};
  out << j.dump() << '\n';
  return ok ? kExitOk : kExitInvariant;
}

int cmd_verify(const SpecSource& src, const std::string& kernels_path, std::ostream& out,
               std::ostream& err) {
  json doc;
  std::optional<BirthDeathSpec<double>> spec;
  if (src.given()) spec = src.load();
  if (!(src.tolerance > 0)) throw SpecError("tolerance must be positive");
  if (kernels_path.empty()) {
    if (!spec) throw SpecError("one of --spec, --random-spec or --kernels is required");
    doc = kernels_document(*spec, "both");
  } else {
    try {
      doc = json::parse(read_text_file(kernels_path));
    } catch (const json::parse_error& e) {
      throw SpecError(kernels_path + ": " + e.what());
    }
    if (!doc.is_object()) throw SpecError("kernels file must hold a JSON object");
    if (!spec) {
      if (!doc.contains("spec")) throw SpecError("kernels file has no \"spec\"; pass --spec");
      spec = spec_from_json(doc["spec"]);
    }
  }
  require_stopped(*spec);
  const Vec oracle = spectrum_oracle(*spec).lambdas;

  std::vector<Check> checks;
  double gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 1; i < oracle.size(); ++i)
    gap = std::min(gap, (oracle[i] - oracle[i - 1]) / oracle[i]);
  if (oracle.size() < 2) gap = 1;
  checks.push_back({"spectrum.distinct", gap, 1e-10, gap > 1e-10});
  std::optional<LoadedChain> plus;
  std::optional<LoadedChain> minus;
  if (doc.contains("plus")) plus = load_chain(doc["plus"], Side::plus);
  if (doc.contains("minus")) minus = load_chain(doc["minus"], Side::minus);
  if (!plus && !minus) throw SpecError("kernels file holds neither a plus nor a minus chain");
  if (plus) check_chain(*spec, *plus, oracle, src.tolerance, checks);
  if (minus) check_chain(*spec, *minus, oracle, src.tolerance, checks);
  if (plus && minus) {
    Vec reversed = plus->pure_birth.births().reverse();
    const double d = ((reversed - minus->pure_birth.births()).cwiseAbs().array() /
                      minus->pure_birth.births().array())
                         .maxCoeff();
    checks.push_back({"plus_minus.agreement", d, 1e-8, d <= 1e-8});
  }

  bool all = true;
  json list = json::array();
  for (const auto& c : checks) {
    all = all && c.pass;
    list.push_back(
        {{"name", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"pass", c.pass}});
    if (!c.pass)
      err << "check failed: " << c.name << " = " << number(c.value) << " (tolerance "
          << number(c.tolerance) << ")\n";
  }
  out << json{{"N", spec->top()}, {"checks", std::move(list)}, {"pass", all}}.dump() << '\n';
  return all ? kExitOk : kExitInvariant;
}

struct Grid {
  double start = 0;
  double stop = 0;
  int count = 0;
};

Grid parse_grid(const std::string& text) {
  Grid g;
  std::istringstream in(text);
  char c1 = 0;
  char c2 = 0;
  std::string rest;
  if (!(in >> g.start >> c1 >> g.stop >> c2 >> g.count) || c1 != ':' || c2 != ':' ||
      (in >> rest))
    throw SpecError("--t-grid must look like a:b:n, got \"" + text + "\"");
  if (g.count < 2) throw SpecError("--t-grid count must be at least 2");
  if (!(g.start >= 0) || !(g.stop >= g.start) || !std::isfinite(g.stop))
    throw SpecError("--t-grid needs 0 <= a <= b");
  return g;
}

int cmd_passage(const SpecSource& src, int start, const std::string& grid_text,
                const std::string& csv_path, std::ostream& out) {
  const auto spec = src.load();
  const Grid grid = parse_grid(grid_text);
  const int N = spec.top();
  if (start < 0 || start > N)
    throw SpecError("--start " + std::to_string(start) + " outside 0.." + std::to_string(N));
  const auto minus = build_minus_chain(spec);
  const auto law = mixture_passage_law(spec, minus.composed, start);
  const Mat g = build_generator(spec).dense();

  json rows = json::array();
  std::string csv = "t,closed_form,oracle,diff\r\n";
  double worst = 0;
  for (int i = 0; i < grid.count; ++i) {
    const double t =
        i + 1 == grid.count ? grid.stop
                            : grid.start + (grid.stop - grid.start) * i / (grid.count - 1);
    const double closed = mixture_cdf(law, t);
    const double oracle = uniformize(g, start, t).distribution[N];
    const double diff = std::abs(closed - oracle);
    worst = std::max(worst, diff);
    rows.push_back({t, closed, oracle, diff});
    csv += number(t) + "," + number(closed) + "," + number(oracle) + "," + number(diff) + "\r\n";
  }
  if (!csv_path.empty()) write_text_file(csv_path, csv);
  const bool ok = worst <= 1e-8;
  out << json{{"start", start},
              {"columns", {"t", "closed_form", "oracle", "diff"}},
              {"rows", std::move(rows)},
              {"max_abs_diff", worst},
              {"pass", ok}}
             .dump()
      << '\n';
  return ok ? kExitOk : kExitInvariant;
}

int cmd_simulate(const SpecSource& src, int paths, std::uint64_t seed, unsigned threads,
                 const std::string& record_path, std::optional<double> snapshot,
                 std::ostream& out) {
  const auto spec = src.load();
  if (paths < 1) throw SpecError("--paths must be at least 1");
  const auto plus = build_plus_chain(spec);
  const auto minus = build_minus_chain(spec);
  const auto coupling = build_triple_coupling(spec, plus, minus, src.tolerance);
  const Vec lambdas = spectrum_oracle(spec).lambdas;

  SimulationOptions options;
  options.keep_paths = !record_path.empty();
  options.threads = threads;
  const double t = snapshot ? *snapshot : 0.5 * lambdas.cwiseInverse().sum();
  if (!(t >= 0)) throw SpecError("--snapshot must be nonnegative");
  options.snapshot_times = {t};
  const Ensemble e = simulate_triple(coupling, seed, paths, options);
  const EnsembleReport r = ensemble_report(e, coupling, lambdas);

  if (!record_path.empty()) {
    std::string lines;
    for (const auto& p : e.paths) lines += path_to_json(p).dump() + "\n";
    write_text_file(record_path, lines);
  }
  json j;
  j["spec"] = spec_to_json(spec);
  j["seed"] = seed;
  j["theta"] = e.theta;
  j["total_steps"] = e.total_steps;
  j["lambdas"] = vector_to_json(lambdas);
  j["report"] = report_to_json(r);
  out << j.dump() << '\n';
  return r.violations.total() == 0 ? kExitOk : kExitInvariant;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Intertwinings of birth-and-death chains: spectra, kernels, passage laws, couplings",
               "bdtwine"};
  app.require_subcommand(1);

  SpecSource source;
  bool identities = false;
  auto* spectrum = app.add_subcommand("spectrum", "Eigenvalues of the stopped chain");
  source.attach(spectrum);
  spectrum->add_flag("--check-identities", identities, "Check trace and determinant identities");

  std::string side = "both";
  std::string kernels_out;
  auto* kernels = app.add_subcommand("kernels", "Stage and composed intertwining kernels");
  source.attach(kernels);
  kernels->add_option("--side", side)->check(CLI::IsMember({"plus", "minus", "both"}))
      ->capture_default_str();
  kernels->add_option("--out", kernels_out, "Write the JSON here instead of stdout");

  std::string kernels_in;
  auto* verify = app.add_subcommand("verify", "Check every invariant; exit 1 on failure");
  source.attach(verify);
  verify->add_option("--kernels", kernels_in, "Re-check a kernels document");

  int start = 0;
  std::string grid;
  std::string csv;
  auto* passage = app.add_subcommand("passage", "Passage-time CDF, closed form vs oracle");
  source.attach(passage);
  passage->add_option("--start", start)->capture_default_str();
  passage->add_option("--t-grid", grid, "a:b:n")->required();
  passage->add_option("--csv", csv, "Also write an RFC 4180 table");

  int paths = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string record;
  std::optional<double> snapshot;
  auto* simulate = app.add_subcommand("simulate", "Simulate the sandwich coupling");
  source.attach(simulate);
  simulate->add_option("--paths", paths)->capture_default_str();
  simulate->add_option("--seed", seed)->capture_default_str();
  simulate->add_option("--threads", threads)->check(CLI::Range(1u, 256u))->capture_default_str();
  simulate->add_option("--record-paths", record, "JSON lines, one path per line");
  simulate->add_option("--snapshot", snapshot, "Time of the marginal and conditional tests");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitSpec;
  }

  try {
    if (spectrum->parsed()) return cmd_spectrum(source, identities, out);
    if (kernels->parsed()) {
      const auto spec = source.load();
      const std::string text = kernels_document(spec, side).dump() + "\n";
      if (kernels_out.empty())
        out << text;
      else
        write_text_file(kernels_out, text);
      return kExitOk;
    }
    if (verify->parsed()) return cmd_verify(source, kernels_in, out, err);
    if (passage->parsed()) return cmd_passage(source, start, grid, csv, out);
    if (simulate->parsed())
      return cmd_simulate(source, paths, seed, threads, record, snapshot, out);
  } catch (const SpecError& e) {
    err << "spec error: " << e.what() << '\n';
    return kExitSpec;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const InvariantError& e) {
    err << "invariant failure: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvariant;
  }
  return kExitSpec;
}

}  // namespace bdtwine
