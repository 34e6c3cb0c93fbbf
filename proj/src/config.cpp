#include "covsteer/config.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "covsteer/errors.hpp"

namespace covsteer {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

const json& member(const json& j, const std::string& where, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) fail(where, std::string("missing key \"") + key + "\"");
  return *it;
}

// Every object accepts a free-form "notes" string in addition to its schema.
void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(where, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "notes") continue;
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) fail(where, "unknown key \"" + it.key() + "\"");
  }
}

double get_double(const json& j, const std::string& where, const char* key) {
  const json& v = member(j, where, key);
  if (!v.is_number()) fail(where, std::string("\"") + key + "\" must be a number");
  return v.get<double>();
}

double get_double_or(const json& j, const std::string& where, const char* key,
                     double fallback) {
  if (!j.contains(key)) return fallback;
  return get_double(j, where, key);
}

int get_int(const json& j, const std::string& where, const char* key) {
  const json& v = member(j, where, key);
  if (!v.is_number_integer()) fail(where, std::string("\"") + key + "\" must be an integer");
  return v.get<int>();
}

int get_int_or(const json& j, const std::string& where, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  return get_int(j, where, key);
}

bool get_bool_or(const json& j, const std::string& where, const char* key,
                 bool fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_boolean()) fail(where, std::string("\"") + key + "\" must be a boolean");
  return v.get<bool>();
}

std::string get_string(const json& j, const std::string& where, const char* key) {
  const json& v = member(j, where, key);
  if (!v.is_string()) fail(where, std::string("\"") + key + "\" must be a string");
  return v.get<std::string>();
}

std::string get_string_or(const json& j, const std::string& where, const char* key,
                          const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  return get_string(j, where, key);
}

Vector as_vector(const json& v, const std::string& where) {
  if (!v.is_array()) fail(where, "expected an array of numbers");
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) fail(where, "expected an array of numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

Vector get_vector(const json& j, const std::string& where, const char* key,
                  int expected_size = -1) {
  Vector out = as_vector(member(j, where, key), where + "." + key);
  if (expected_size >= 0 && out.size() != expected_size) {
    fail(where + "." + key,
         "expected " + std::to_string(expected_size) + " entries, got " +
             std::to_string(out.size()));
  }
  return out;
}

Matrix as_matrix(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) fail(where, "expected an array of rows");
  const Vector first = as_vector(v[0], where);
  Matrix out(v.size(), first.size());
  out.row(0) = first;
  for (std::size_t i = 1; i < v.size(); ++i) {
    const Vector row = as_vector(v[i], where);
    if (row.size() != out.cols()) fail(where, "rows have inconsistent lengths");
    out.row(i) = row;
  }
  return out;
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json matrix_to_json(const Matrix& a) {
  json out = json::array();
  for (int i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    out.push_back(row);
  }
  return out;
}

// Covariance blocks accept either a full matrix under `covariance` or just the
// diagonal under `covariance_diagonal`.
Matrix parse_covariance(const json& j, const std::string& where, int n) {
  const bool full = j.contains("covariance");
  const bool diag = j.contains("covariance_diagonal");
  if (full == diag) {
    fail(where, "give exactly one of \"covariance\" and \"covariance_diagonal\"");
  }
  if (full) {
    Matrix cov = as_matrix(j.at("covariance"), where + ".covariance");
    if (cov.rows() != n || cov.cols() != n) {
      fail(where + ".covariance", "expected a " + std::to_string(n) + "x" +
                                      std::to_string(n) + " matrix");
    }
    return cov;
  }
  const Vector d = get_vector(j, where, "covariance_diagonal", n);
  if ((d.array() < 0.0).any()) {
    fail(where + ".covariance_diagonal", "entries must be nonnegative");
  }
  return Matrix(d.asDiagonal());
}

std::shared_ptr<const DensityProfile> parse_density(const json& j,
                                                     const std::string& where,
                                                     const std::string& base_dir) {
  check_keys(j, where, {"kind", "surface_density", "scale_height", "path"});
  const std::string kind = get_string(j, where, "kind");
  if (kind == "exponential") {
    const double rho0 = get_double(j, where, "surface_density");
    const double hs = get_double(j, where, "scale_height");
    if (!(rho0 > 0.0) || !(hs > 0.0)) {
      fail(where, "surface_density and scale_height must be positive");
    }
    return std::make_shared<ExponentialDensity>(rho0, hs);
  }
  if (kind == "table") {
    std::filesystem::path p = get_string(j, where, "path");
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    std::ifstream in(p);
    if (!in) throw IoError("cannot open density table " + p.string());
    std::vector<double> hs, rhos;
    std::string line;
    while (std::getline(in, line)) {
      std::size_t start = line.find_first_not_of(" \t\r");
      if (start == std::string::npos) continue;
      if (line[start] == '#' || std::isalpha(static_cast<unsigned char>(line[start]))) {
        continue;  // header or comment
      }
      std::istringstream row(line);
      std::string cell;
      double vals[2];
      for (int c = 0; c < 2; ++c) {
        if (!std::getline(row, cell, ',')) fail(where, "density table row needs two columns");
        try {
          vals[c] = std::stod(cell);
        } catch (const std::exception&) {
          fail(where, "bad number in density table: \"" + cell + "\"");
        }
      }
      hs.push_back(vals[0]);
      rhos.push_back(vals[1]);
    }
    if (hs.size() < 2) fail(where, "density table needs at least two rows");
    return std::make_shared<TabulatedDensity>(std::move(hs), std::move(rhos));
  }
  fail(where, "unknown density kind \"" + kind + "\"");
}

std::shared_ptr<SystemModel> parse_model(const json& j, const std::string& where,
                                         const std::string& base_dir) {
  const std::string kind = get_string(j, where, "kind");
  if (kind == "double_integrator") {
    check_keys(j, where, {"kind"});
    return std::make_shared<DoubleIntegratorModel>();
  }
  if (kind == "aerocapture") {
    check_keys(j, where,
               {"kind", "ballistic_coefficient", "lift_to_drag",
                "gravitational_parameter", "planet_radius", "target_apoapsis_radius",
                "target_periapsis_radius", "density"});
    AerocaptureParams params;
    params.ballistic_coefficient =
        get_double_or(j, where, "ballistic_coefficient", params.ballistic_coefficient);
    params.lift_to_drag = get_double_or(j, where, "lift_to_drag", params.lift_to_drag);
    params.mu = get_double_or(j, where, "gravitational_parameter", params.mu);
    params.planet_radius =
        get_double_or(j, where, "planet_radius", params.planet_radius);
    params.target_apoapsis =
        get_double_or(j, where, "target_apoapsis_radius", 5.0 * params.planet_radius);
    params.target_periapsis =
        get_double_or(j, where, "target_periapsis_radius", 2.0 * params.planet_radius);
    params.density = parse_density(member(j, where, "density"), where + ".density", base_dir);
    if (!(params.ballistic_coefficient > 0.0) || !(params.mu > 0.0) ||
        !(params.planet_radius > 0.0)) {
      fail(where, "physical parameters must be positive");
    }
    return std::make_shared<AerocaptureModel>(params);
  }
  fail(where, "unknown model kind \"" + kind + "\"");
}

KernelSpec parse_kernel(const json& j, const std::string& where) {
  const std::string kind = get_string(j, where, "kind");
  KernelSpec spec;
  if (kind == "squared_exponential") {
    check_keys(j, where, {"kind", "variance", "length"});
    spec.kind = KernelKind::SquaredExponential;
    spec.variance = get_double(j, where, "variance");
    spec.length = get_double(j, where, "length");
  } else if (kind == "constant") {
    check_keys(j, where, {"kind", "variance"});
    spec.kind = KernelKind::Constant;
    spec.variance = get_double(j, where, "variance");
  } else if (kind == "locally_periodic") {
    check_keys(j, where,
               {"kind", "variance", "period", "periodic_length", "envelope_length"});
    spec.kind = KernelKind::LocallyPeriodic;
    spec.variance = get_double(j, where, "variance");
    spec.period = get_double(j, where, "period");
    spec.periodic_length = get_double(j, where, "periodic_length");
    spec.envelope_length = get_double(j, where, "envelope_length");
  } else if (kind == "mars_density") {
    check_keys(j, where,
               {"kind", "variance_percent_sq", "correlation_height",
                "transition_altitude", "growth_height"});
    spec.kind = KernelKind::MarsDensity;
    // Config carries the variance in percent^2; the field works in fractional
    // density variation, so (1 percent)^2 = 1e-4.
    spec.variance = get_double(j, where, "variance_percent_sq") * 1e-4;
    spec.correlation_height =
        get_double_or(j, where, "correlation_height", spec.correlation_height);
    spec.transition_altitude =
        get_double_or(j, where, "transition_altitude", spec.transition_altitude);
    spec.growth_height = get_double_or(j, where, "growth_height", spec.growth_height);
  } else {
    fail(where, "unknown kernel kind \"" + kind + "\"");
  }
  try {
    spec.validate();
  } catch (const std::exception& e) {
    fail(where, e.what());
  }
  return spec;
}

std::shared_ptr<GaussianRandomField> parse_field(const json& j,
                                                 const std::string& where) {
  check_keys(j, where, {"kernel", "mean"});
  KernelSpec kernel = parse_kernel(member(j, where, "kernel"), where + ".kernel");
  std::function<double(double)> mean = [](double) { return 0.0; };
  if (j.contains("mean")) {
    const json& jm = j.at("mean");
    check_keys(jm, where + ".mean", {"kind", "value"});
    const std::string kind = get_string(jm, where + ".mean", "kind");
    if (kind == "constant") {
      const double value = get_double(jm, where + ".mean", "value");
      mean = [value](double) { return value; };
    } else if (kind != "zero") {
      fail(where + ".mean", "unknown mean kind \"" + kind + "\"");
    }
  }
  return std::make_shared<GaussianRandomField>(std::move(kernel), std::move(mean));
}

void parse_objective(const json& j, const std::string& where, ScpProblem& prob,
                     int n) {
  check_keys(j, where,
             {"control_weight", "feedforward_weight", "state_weight", "desired_mean",
              "percentile"});
  prob.control_weight = get_double_or(j, where, "control_weight", 1.0);
  prob.feedforward_weight = get_double_or(j, where, "feedforward_weight", 1.0);
  if (prob.control_weight < 0.0 || prob.feedforward_weight < 0.0) {
    fail(where, "weights must be nonnegative");
  }

  if (j.contains("state_weight")) {
    const json& jw = j.at("state_weight");
    check_keys(jw, where + ".state_weight", {"kind", "diagonal"});
    const std::string kind = get_string(jw, where + ".state_weight", "kind");
    if (kind == "zero") {
      prob.state_weight_kind = StateWeightKind::Zero;
    } else if (kind == "diagonal") {
      prob.state_weight_kind = StateWeightKind::Diagonal;
      prob.state_weight_diag = get_vector(jw, where + ".state_weight", "diagonal", n);
      if ((prob.state_weight_diag.array() < 0.0).any()) {
        fail(where + ".state_weight.diagonal", "entries must be nonnegative");
      }
    } else if (kind == "dynamic_pressure") {
      prob.state_weight_kind = StateWeightKind::DynamicPressure;
    } else {
      fail(where + ".state_weight", "unknown kind \"" + kind + "\"");
    }
  }

  if (j.contains("desired_mean")) {
    const json& jd = j.at("desired_mean");
    check_keys(jd, where + ".desired_mean", {"kind", "states"});
    const std::string kind = get_string(jd, where + ".desired_mean", "kind");
    if (kind == "nominal") {
      prob.desired_kind = DesiredMeanKind::Nominal;
    } else if (kind == "path") {
      prob.desired_kind = DesiredMeanKind::Path;
      const Matrix path = as_matrix(member(jd, where + ".desired_mean", "states"),
                                    where + ".desired_mean.states");
      if (path.cols() != n) {
        fail(where + ".desired_mean.states", "rows must have the state dimension");
      }
      prob.desired_path.clear();
      for (int k = 0; k < path.rows(); ++k) {
        prob.desired_path.push_back(path.row(k).transpose());
      }
    } else {
      fail(where + ".desired_mean", "unknown kind \"" + kind + "\"");
    }
  }

  if (j.contains("percentile")) {
    const json& jp = j.at("percentile");
    check_keys(jp, where + ".percentile", {"weight", "tail_probability", "direction"});
    prob.percentile_weight = get_double(jp, where + ".percentile", "weight");
    prob.tail_probability =
        get_double_or(jp, where + ".percentile", "tail_probability", 0.1);
    if (!(prob.tail_probability > 0.0 && prob.tail_probability < 0.5)) {
      fail(where + ".percentile", "tail_probability must lie in (0, 0.5)");
    }
    const json& jd = member(jp, where + ".percentile", "direction");
    check_keys(jd, where + ".percentile.direction", {"kind", "vector"});
    const std::string kind = get_string(jd, where + ".percentile.direction", "kind");
    if (kind == "transfer_cost_gradient") {
      prob.percentile_kind = PercentileDirectionKind::TransferCostGradient;
    } else if (kind == "fixed") {
      prob.percentile_kind = PercentileDirectionKind::Fixed;
      prob.percentile_fixed =
          get_vector(jd, where + ".percentile.direction", "vector", n);
    } else {
      fail(where + ".percentile.direction", "unknown kind \"" + kind + "\"");
    }
  }
}

void parse_chance(const json& j, const std::string& where, ScpProblem& prob, int n,
                  int m) {
  check_keys(j, where, {"state", "control"});
  if (j.contains("state")) {
    const json& arr = j.at("state");
    if (!arr.is_array()) fail(where + ".state", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string rw = where + ".state[" + std::to_string(i) + "]";
      check_keys(arr[i], rw, {"direction", "bound", "tail_probability"});
      StateChanceConstraint c;
      c.a = get_vector(arr[i], rw, "direction", n);
      c.alpha = get_double(arr[i], rw, "bound");
      c.p = get_double(arr[i], rw, "tail_probability");
      if (!(c.p > 0.0 && c.p < 0.5)) fail(rw, "tail_probability must lie in (0, 0.5)");
      prob.chance.state.push_back(std::move(c));
    }
  }
  if (j.contains("control")) {
    const json& arr = j.at("control");
    if (!arr.is_array()) fail(where + ".control", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string rw = where + ".control[" + std::to_string(i) + "]";
      check_keys(arr[i], rw, {"direction", "bound", "tail_probability"});
      ControlChanceConstraint c;
      c.b = get_vector(arr[i], rw, "direction", m);
      c.beta = get_double(arr[i], rw, "bound");
      c.p = get_double(arr[i], rw, "tail_probability");
      if (!(c.p > 0.0 && c.p < 0.5)) fail(rw, "tail_probability must lie in (0, 0.5)");
      prob.chance.control.push_back(std::move(c));
    }
  }
}

void parse_trust(const json& j, const std::string& where, ScpProblem& prob, int n) {
  check_keys(j, where, {"control", "state"});
  prob.trust_enabled = true;
  if (j.contains("control")) {
    const json& jc = j.at("control");
    check_keys(jc, where + ".control", {"radius"});
    prob.control_trust_radius = get_double(jc, where + ".control", "radius");
    if (!(prob.control_trust_radius > 0.0)) {
      fail(where + ".control", "radius must be positive");
    }
  }
  if (j.contains("state")) {
    const json& js = j.at("state");
    check_keys(js, where + ".state", {"radius", "metric"});
    prob.state_trust_radius = get_double(js, where + ".state", "radius");
    if (!(prob.state_trust_radius > 0.0)) {
      fail(where + ".state", "radius must be positive");
    }
    const json& jm = member(js, where + ".state", "metric");
    check_keys(jm, where + ".state.metric", {"kind", "diagonal"});
    const std::string kind = get_string(jm, where + ".state.metric", "kind");
    if (kind == "terminal_apoapsis_gradient") {
      prob.state_trust_kind = StateTrustMetricKind::TerminalApoapsisGradient;
    } else if (kind == "diagonal") {
      prob.state_trust_kind = StateTrustMetricKind::Diagonal;
      prob.state_trust_diag = get_vector(jm, where + ".state.metric", "diagonal", n);
    } else {
      fail(where + ".state.metric", "unknown kind \"" + kind + "\"");
    }
  }
}

}  // namespace

ScenarioConfig parse_scenario(const json& j, const std::string& base_dir) {
  const std::string where = "scenario";
  check_keys(j, where,
             {"schema_version", "model", "field", "partition", "initial", "terminal",
              "initial_controls", "objective", "chance_constraints", "trust_region",
              "scp", "monte_carlo", "outputs"});
  if (get_int(j, where, "schema_version") != 1) {
    fail(where, "unsupported schema_version (expected 1)");
  }

  ScenarioConfig cfg;
  cfg.model = parse_model(member(j, where, "model"), "model", base_dir);
  cfg.field = parse_field(member(j, where, "field"), "field");
  const int n = cfg.model->state_dim();
  const int m = cfg.model->control_dim();

  ScpProblem& prob = cfg.problem;
  prob.model = cfg.model.get();
  prob.field = cfg.field.get();

  {
    const json& jp = member(j, where, "partition");
    check_keys(jp, "partition", {"knots", "substeps_per_segment"});
    const Vector knots = get_vector(jp, "partition", "knots");
    prob.partition.knots.assign(knots.data(), knots.data() + knots.size());
    prob.partition.substeps_per_segment =
        get_int_or(jp, "partition", "substeps_per_segment", 10);
    try {
      prob.partition.validate();
    } catch (const std::exception& e) {
      fail("partition", e.what());
    }
  }
  const int N = prob.partition.segments();

  {
    const json& ji = member(j, where, "initial");
    check_keys(ji, "initial", {"mean", "covariance", "covariance_diagonal"});
    prob.x0_mean = get_vector(ji, "initial", "mean", n);
    prob.x0_cov = parse_covariance(ji, "initial", n);
  }

  if (j.contains("terminal")) {
    const json& jt = j.at("terminal");
    check_keys(jt, "terminal", {"mean", "covariance", "covariance_diagonal"});
    if (jt.contains("mean")) {
      prob.terminal_mean = get_vector(jt, "terminal", "mean", n);
    }
    if (jt.contains("covariance") || jt.contains("covariance_diagonal")) {
      prob.terminal_cov = parse_covariance(jt, "terminal", n);
    }
  }

  prob.initial_controls.assign(N, Vector::Zero(m));
  if (j.contains("initial_controls")) {
    const Matrix u = as_matrix(j.at("initial_controls"), "initial_controls");
    if (u.rows() != N || u.cols() != m) {
      fail("initial_controls", "expected " + std::to_string(N) + " rows of length " +
                                   std::to_string(m));
    }
    for (int k = 0; k < N; ++k) prob.initial_controls[k] = u.row(k).transpose();
  }

  if (j.contains("objective")) {
    parse_objective(j.at("objective"), "objective", prob, n);
  }
  if (j.contains("chance_constraints")) {
    parse_chance(j.at("chance_constraints"), "chance_constraints", prob, n, m);
  }
  if (j.contains("trust_region")) {
    parse_trust(j.at("trust_region"), "trust_region", prob, n);
  }

  if (j.contains("scp")) {
    const json& js = j.at("scp");
    check_keys(js, "scp", {"iterations", "objective_tolerance", "quadrature_order"});
    prob.scp.max_iterations = get_int_or(js, "scp", "iterations", 3);
    prob.scp.objective_tolerance =
        get_double_or(js, "scp", "objective_tolerance", 1e-3);
    prob.scp.quad_order = get_int_or(js, "scp", "quadrature_order", 8);
    if (prob.scp.max_iterations < 1) fail("scp", "iterations must be at least 1");
    if (!(prob.scp.objective_tolerance > 0.0)) {
      fail("scp", "objective_tolerance must be positive");
    }
    if (prob.scp.quad_order < 2) fail("scp", "quadrature_order must be at least 2");
  }

  if (j.contains("monte_carlo")) {
    const json& jm = j.at("monte_carlo");
    check_keys(jm, "monte_carlo",
               {"trials", "seed", "substeps_per_segment", "saturation",
                "thinning_scale"});
    cfg.mc.trials = get_int_or(jm, "monte_carlo", "trials", cfg.mc.trials);
    if (cfg.mc.trials < 1) fail("monte_carlo", "trials must be at least 1");
    if (jm.contains("seed")) {
      const json& js = jm.at("seed");
      if (!js.is_number_integer() && !js.is_number_unsigned()) {
        fail("monte_carlo", "\"seed\" must be an integer");
      }
      cfg.mc.seed = js.get<std::uint64_t>();
    }
    cfg.mc.substeps_per_segment =
        get_int_or(jm, "monte_carlo", "substeps_per_segment",
                   prob.partition.substeps_per_segment);
    if (cfg.mc.substeps_per_segment < 1) {
      fail("monte_carlo", "substeps_per_segment must be at least 1");
    }
    if (jm.contains("saturation")) {
      const Vector s = get_vector(jm, "monte_carlo", "saturation", 2);
      if (!(s[0] < s[1])) fail("monte_carlo.saturation", "need [lo, hi] with lo < hi");
      cfg.mc.saturation = std::make_pair(s[0], s[1]);
    }
    cfg.mc.thinning_scale =
        get_double_or(jm, "monte_carlo", "thinning_scale", cfg.mc.thinning_scale);
    if (cfg.mc.thinning_scale < 0.0) {
      fail("monte_carlo", "thinning_scale must be nonnegative");
    }
  } else {
    cfg.mc.substeps_per_segment = prob.partition.substeps_per_segment;
  }

  if (j.contains("outputs")) {
    const json& jo = j.at("outputs");
    check_keys(jo, "outputs", {"policy", "iterations", "report", "trajectories"});
    cfg.outputs.policy = get_string_or(jo, "outputs", "policy", cfg.outputs.policy);
    cfg.outputs.iterations =
        get_string_or(jo, "outputs", "iterations", cfg.outputs.iterations);
    cfg.outputs.report = get_string_or(jo, "outputs", "report", cfg.outputs.report);
    cfg.outputs.trajectories =
        get_bool_or(jo, "outputs", "trajectories", cfg.outputs.trajectories);
  }
  cfg.mc.store_trajectories = cfg.outputs.trajectories;

  return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
  const json j = load_json_file(path);
  return parse_scenario(j, std::filesystem::path(path).parent_path().string());
}

// ---- Policy files --------------------------------------------------------

nlohmann::json policy_to_json(const FeedbackPolicy& policy,
                              const std::string& model_name) {
  policy.validate();
  json j;
  j["schema_version"] = 1;
  j["model"] = model_name;
  j["state_dim"] = policy.n;
  j["control_dim"] = policy.m;
  j["knots"] = policy.knots;
  json means = json::array();
  for (const Vector& x : policy.xbar) means.push_back(vector_to_json(x));
  j["reference_means"] = means;
  json ff = json::array();
  for (const Vector& v : policy.v) ff.push_back(vector_to_json(v));
  j["feedforward"] = ff;
  json gains = json::array();
  for (int k = 0; k < policy.N; ++k) {
    for (int l = 0; l <= k; ++l) {
      json g;
      g["step"] = k;
      g["knot"] = l;
      g["block"] = matrix_to_json(policy.gains[k][l]);
      gains.push_back(std::move(g));
    }
  }
  j["gains"] = gains;
  json dyn = json::array();
  for (int k = 0; k < policy.N; ++k) {
    json d;
    d["step"] = k;
    d["a"] = matrix_to_json(policy.step_a[k]);
    d["b"] = matrix_to_json(policy.step_b[k]);
    dyn.push_back(std::move(d));
  }
  j["step_dynamics"] = dyn;
  return j;
}

FeedbackPolicy policy_from_json(const nlohmann::json& j, std::string* model_name) {
  const std::string where = "policy";
  check_keys(j, where,
             {"schema_version", "model", "state_dim", "control_dim", "knots",
              "reference_means", "feedforward", "gains", "step_dynamics"});
  if (get_int(j, where, "schema_version") != 1) {
    fail(where, "unsupported schema_version (expected 1)");
  }
  if (model_name) *model_name = get_string(j, where, "model");

  FeedbackPolicy p;
  p.n = get_int(j, where, "state_dim");
  p.m = get_int(j, where, "control_dim");
  const Vector knots = get_vector(j, where, "knots");
  if (knots.size() < 2) fail(where, "need at least two knots");
  p.knots.assign(knots.data(), knots.data() + knots.size());
  p.N = static_cast<int>(p.knots.size()) - 1;

  const json& means = member(j, where, "reference_means");
  if (!means.is_array() || static_cast<int>(means.size()) != p.N + 1) {
    fail(where, "reference_means must have one entry per knot");
  }
  for (const json& row : means) {
    Vector x = as_vector(row, where + ".reference_means");
    if (x.size() != p.n) fail(where, "reference mean has wrong dimension");
    p.xbar.push_back(std::move(x));
  }
  const json& ff = member(j, where, "feedforward");
  if (!ff.is_array() || static_cast<int>(ff.size()) != p.N) {
    fail(where, "feedforward must have one entry per step");
  }
  for (const json& row : ff) {
    Vector u = as_vector(row, where + ".feedforward");
    if (u.size() != p.m) fail(where, "feedforward entry has wrong dimension");
    p.v.push_back(std::move(u));
  }

  p.gains.resize(p.N);
  for (int k = 0; k < p.N; ++k) {
    p.gains[k].assign(k + 1, Matrix::Zero(p.m, p.n));
  }
  const json& gains = member(j, where, "gains");
  if (!gains.is_array()) fail(where, "gains must be an array");
  for (std::size_t i = 0; i < gains.size(); ++i) {
    const std::string rw = where + ".gains[" + std::to_string(i) + "]";
    check_keys(gains[i], rw, {"step", "knot", "block"});
    const int k = get_int(gains[i], rw, "step");
    const int l = get_int(gains[i], rw, "knot");
    if (k < 0 || k >= p.N || l < 0 || l > k) fail(rw, "step/knot out of range");
    const Matrix block = as_matrix(gains[i].at("block"), rw + ".block");
    if (block.rows() != p.m || block.cols() != p.n) fail(rw, "block has wrong shape");
    p.gains[k][l] = block;
  }

  p.step_a.assign(p.N, Matrix::Zero(p.n, p.n));
  p.step_b.assign(p.N, Matrix::Zero(p.n, p.m));
  const json& dyn = member(j, where, "step_dynamics");
  if (!dyn.is_array() || static_cast<int>(dyn.size()) != p.N) {
    fail(where, "step_dynamics must have one entry per step");
  }
  for (std::size_t i = 0; i < dyn.size(); ++i) {
    const std::string rw = where + ".step_dynamics[" + std::to_string(i) + "]";
    check_keys(dyn[i], rw, {"step", "a", "b"});
    const int k = get_int(dyn[i], rw, "step");
    if (k < 0 || k >= p.N) fail(rw, "step out of range");
    const Matrix a = as_matrix(dyn[i].at("a"), rw + ".a");
    const Matrix b = as_matrix(dyn[i].at("b"), rw + ".b");
    if (a.rows() != p.n || a.cols() != p.n) fail(rw, "a has wrong shape");
    if (b.rows() != p.n || b.cols() != p.m) fail(rw, "b has wrong shape");
    p.step_a[k] = a;
    p.step_b[k] = b;
  }
  p.validate();
  return p;
}

void save_policy(const std::string& path, const FeedbackPolicy& policy,
                 const std::string& model_name) {
  save_json_file(path, policy_to_json(policy, model_name));
}

FeedbackPolicy load_policy(const std::string& path, std::string* model_name) {
  return policy_from_json(load_json_file(path), model_name);
}

// ---- Simulation reports --------------------------------------------------

nlohmann::json report_to_json(const McReport& mc, const LinearPrediction* pred,
                              const FeedbackPolicy* policy,
                              const std::string& model_name) {
  json j;
  j["schema_version"] = 1;
  j["model"] = model_name;
  j["open_loop"] = mc.open_loop;
  j["seed"] = mc.seed;
  j["trials"] = {{"requested", mc.trials_requested},
                 {"completed", mc.trials_completed},
                 {"failed", mc.trials_failed}};
  j["knot_times"] = mc.knot_times;

  json sm = json::array(), sc = json::array();
  for (const Vector& x : mc.state_mean) sm.push_back(vector_to_json(x));
  for (const Matrix& c : mc.state_cov) sc.push_back(matrix_to_json(c));
  j["state_mean"] = sm;
  j["state_cov"] = sc;

  json cm = json::array(), cs = json::array();
  for (const Vector& u : mc.control_mean) cm.push_back(vector_to_json(u));
  for (const Vector& s : mc.control_sigma) cs.push_back(vector_to_json(s));
  j["control_mean"] = cm;
  j["control_sigma"] = cs;
  j["field_mean"] = mc.field_mean;
  j["field_sigma"] = mc.field_sigma;

  auto violations_to_json = [](const std::vector<McReport::ViolationRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows) {
      arr.push_back({{"knot", r.knot},
                     {"constraint", r.constraint},
                     {"count", r.count},
                     {"rate", r.rate},
                     {"wilson_upper", r.wilson_upper}});
    }
    return arr;
  };
  j["state_violations"] = violations_to_json(mc.state_violations);
  j["control_violations"] = violations_to_json(mc.control_violations);

  if (mc.has_terminal_cost) {
    j["terminal_cost"] = {{"p50", mc.terminal_cost_p50},
                          {"p90", mc.terminal_cost_p90},
                          {"p99", mc.terminal_cost_p99},
                          {"samples", mc.terminal_cost_samples}};
  }

  if (pred) {
    json pm = json::array(), ps = json::array(), pc = json::array();
    for (const Vector& x : pred->state_mean) pm.push_back(vector_to_json(x));
    for (const Matrix& c : pred->state_cov) {
      ps.push_back(vector_to_json(c.diagonal().cwiseMax(0.0).cwiseSqrt()));
    }
    for (const Vector& s : pred->control_sigma) pc.push_back(vector_to_json(s));
    j["prediction"] = {{"state_mean", pm},
                       {"state_sigma", ps},
                       {"control_sigma", pc},
                       {"field_sigma", pred->field_sigma}};
  }

  if (policy) {
    json ff = json::array();
    for (const Vector& v : policy->v) ff.push_back(vector_to_json(v));
    j["feedforward"] = ff;
  }

  if (!mc.trajectories.empty()) {
    json arr = json::array();
    for (const auto& row : mc.trajectories) {
      json r;
      r["trial"] = row.trial;
      r["t"] = row.t;
      r["x"] = vector_to_json(row.x);
      if (row.u.size() > 0) r["u"] = vector_to_json(row.u);
      r["psi"] = row.psi;
      arr.push_back(std::move(r));
    }
    j["trajectories"] = arr;
  }
  return j;
}

// ---- Iteration log -------------------------------------------------------

void write_iterations_jsonl(const std::string& path,
                            const std::vector<ScpIterationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& rec : records) {
    json j;
    j["iteration"] = rec.iteration;
    j["objective"] = rec.objective;
    j["tail_estimate"] = rec.tail_estimate;
    j["worst_cone_violation"] = rec.worst_cone_violation;
    j["control_change"] = rec.control_change;
    j["status"] = to_string(rec.status);
    j["solver_iterations"] = rec.solver_iterations;
    j["wall_time_s"] = rec.wall_time_s;
    if (!rec.note.empty()) j["note"] = rec.note;
    out << j.dump() << "\n";
  }
}

// ---- Small JSON file helpers ---------------------------------------------

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void save_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace covsteer
